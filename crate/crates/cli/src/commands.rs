use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde_json::json;

use spinforge::analyze::{decompose, enhancement_factor, press_baseline, press_state, StateDecomposition};
use spinforge::detect::{
    acquire_fid, peak_height, simulate_spectrum, spectrum_from_fid, AcquisitionParams, SpectralRegion, Spectrum,
};
use spinforge::grad::FdReport;
use spinforge::objective::{Objective, ObjectiveSpec, Task, TaskKind};
use spinforge::optimize::{run_optimization_with, Checkpoint, EpochRecord, OptResult, RunOptions, Snapshot};
use spinforge::prop::{random_program, run_program, PulseProgram};
use spinforge::spinsys::{equilibrium_state, OperatorExpr, SpinSystem};

use crate::config::{read_config, resolve, Baseline, ResolvedRun};
use crate::error::{CliError, CliResult};
use crate::manifest::{prepare_out_dir, write_text, RunManifest};

pub const DEFAULT_OUT: &str = "spinforge-out";

/// Large enough that loss roundoff (~1e-14) stays below 1e-6 of the smallest
/// probed gradient components, small enough that the O(h²) truncation term
/// is negligible.
pub const DEFAULT_FD_STEP_HZ: f64 = 1e-2;

#[derive(Clone, Debug, Default)]
pub struct Global {
    pub out: Option<PathBuf>,
    pub threads: usize,
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Global {
    fn say(&self, text: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", text.as_ref());
        }
    }

    fn out_dir(&self, fallback: impl Into<PathBuf>) -> PathBuf {
        self.out.clone().unwrap_or_else(|| fallback.into())
    }
}

/// Runs `body` between the manifest's first write and its finalization,
/// recording the outcome either way.
fn with_manifest<T>(
    dir: &Path,
    mut manifest: RunManifest,
    body: impl FnOnce(&mut Vec<String>) -> CliResult<T>,
) -> CliResult<T> {
    manifest.write(dir)?;
    let mut outputs = Vec::new();
    let result = body(&mut outputs);
    manifest.outputs = outputs;
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("failed: {}", e.messages.join("; ")),
    };
    manifest.finish(dir, &status)?;
    result
}

fn save(dir: &Path, name: &str, text: &str, outputs: &mut Vec<String>) -> CliResult<()> {
    write_text(&dir.join(name), text)?;
    outputs.push(name.to_string());
    Ok(())
}

fn load_system(path: &Path, carrier: Option<f64>) -> CliResult<SpinSystem> {
    let sys = SpinSystem::load(path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(match carrier {
        Some(c) => sys.with_carrier(c),
        None => sys,
    })
}

fn load_program(path: &Path) -> CliResult<PulseProgram> {
    PulseProgram::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn canonical(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug)]
pub enum Source {
    Pulse(PathBuf),
    State(String),
    PressTe(f64),
}

#[derive(Clone, Debug)]
pub struct SimulateArgs {
    pub system: PathBuf,
    pub source: Source,
    pub lb_hz: Option<f64>,
    pub points: Option<usize>,
    pub carrier_ppm: Option<f64>,
}

pub fn acquisition(sys: &SpinSystem, lb_hz: Option<f64>, points: Option<usize>) -> CliResult<AcquisitionParams> {
    let lb = lb_hz.unwrap_or_else(|| AcquisitionParams::default_lb(sys.spectrometer_mhz()));
    let mut p = AcquisitionParams::for_linewidth(sys, lb.max(0.0));
    p.lb_hz = lb;
    if let Some(n) = points {
        p.n_points = n;
    }
    p.validate()?;
    Ok(p)
}

pub fn simulate(g: &Global, a: &SimulateArgs) -> CliResult<()> {
    let sys = load_system(&a.system, a.carrier_ppm)?;
    let params = acquisition(&sys, a.lb_hz, a.points)?;
    let n = sys.n_spins();
    let mut inputs = vec![canonical(&a.system)];
    enum Prepared {
        State(spinforge::prop::DensityState),
        Pulse(PulseProgram),
        Press(f64),
    }
    let prepared = match &a.source {
        Source::State(expr) => Prepared::State(OperatorExpr::parse(expr)?.to_operator(n)?),
        Source::Pulse(p) => {
            inputs.push(canonical(p));
            Prepared::Pulse(load_program(p)?)
        }
        Source::PressTe(te) => {
            if !(te.is_finite() && *te > 0.0) {
                return Err(CliError::validation(format!("--press-te must be > 0, got {te}")));
            }
            Prepared::Press(*te)
        }
    };
    let dir = g.out_dir(DEFAULT_OUT);
    prepare_out_dir(&dir, "simulate", false)?;
    let source = match &a.source {
        Source::State(s) => json!({ "state": s }),
        Source::Pulse(p) => json!({ "pulse": canonical(p) }),
        Source::PressTe(te) => json!({ "press_te_s": te }),
    };
    let config = json!({
        "system": canonical(&a.system),
        "source": source,
        "carrier_ppm": sys.carrier_ppm(),
        "acquisition": params,
    });
    let manifest = RunManifest::new("simulate", config, &inputs, g.seed, g.threads)?;
    with_manifest(&dir, manifest, |outputs| {
        let (rho, receiver) = match prepared {
            Prepared::State(rho) => (rho, Complex64::new(1.0, 0.0)),
            Prepared::Pulse(prog) => (
                spinforge::par::with_threads(g.threads, || run_program(&sys, &prog, &equilibrium_state(n), false))?
                    .final_state,
                Complex64::new(1.0, 0.0),
            ),
            // Receiver phased to the 90°x excitation.
            Prepared::Press(te) => (press_state(&sys, te)?, Complex64::new(0.0, -1.0)),
        };
        let mut fid = acquire_fid(&sys, &rho, &params)?;
        fid.samples.iter_mut().for_each(|z| *z *= receiver);
        let spec = spectrum_from_fid(&fid, params.zerofill)?;
        fid.write_csv(dir.join("fid.csv"))?;
        outputs.push("fid.csv".into());
        spec.write_csv(dir.join("spectrum.csv"))?;
        outputs.push("spectrum.csv".into());
        g.say(format!(
            "{}: {} bins, max |Re| = {:.6e}, wrote {}",
            sys.name,
            spec.len(),
            spec.max_abs_real(),
            dir.join("spectrum.csv").display()
        ));
        Ok(())
    })
}

// ---------------------------------------------------------------- analyze

#[derive(Clone, Debug)]
pub struct AnalyzeArgs {
    pub system: PathBuf,
    pub pulse: PathBuf,
    pub top: usize,
    pub carrier_ppm: Option<f64>,
}

pub fn render_decomposition(d: &StateDecomposition) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<24} {:>14}", "rank", "operator", "coefficient");
    for (k, t) in d.terms.iter().enumerate() {
        let _ = writeln!(out, "{:>4}  {:<24} {:>14.6}", k + 1, t.label.to_expression(), t.coefficient);
    }
    let _ = writeln!(out, "residual norm {:.3e}", d.residual_norm);
    out
}

pub fn analyze(g: &Global, a: &AnalyzeArgs) -> CliResult<StateDecomposition> {
    if a.top == 0 {
        return Err(CliError::validation("top must be ≥ 1"));
    }
    let sys = load_system(&a.system, a.carrier_ppm)?;
    let prog = load_program(&a.pulse)?;
    let n = sys.n_spins();
    let dir = g.out_dir(DEFAULT_OUT);
    prepare_out_dir(&dir, "analyze", false)?;
    let config = json!({
        "system": canonical(&a.system),
        "pulse": canonical(&a.pulse),
        "top": a.top,
        "carrier_ppm": sys.carrier_ppm(),
    });
    let manifest = RunManifest::new("analyze", config, &[canonical(&a.system), canonical(&a.pulse)], g.seed, g.threads)?;
    with_manifest(&dir, manifest, |outputs| {
        let rho = spinforge::par::with_threads(g.threads, || run_program(&sys, &prog, &equilibrium_state(n), false))?
            .final_state;
        let d = decompose(&rho, a.top)?;
        save(&dir, "decomposition.csv", &d.to_csv(), outputs)?;
        g.say(render_decomposition(&d));
        Ok(d)
    })
}

// ---------------------------------------------------------------- gradcheck

#[derive(Clone, Debug)]
pub struct GradcheckArgs {
    pub system: PathBuf,
    pub segments: usize,
    pub segment_s: f64,
    pub amplitude_hz: f64,
    pub target: String,
    pub step: f64,
    pub probes: usize,
    pub tolerance: f64,
    pub corrupt: bool,
}

/// State-fidelity plus peak-enhancement objective over the whole shift range
/// of `sys`, used for the gradient self-test.
pub fn gradcheck_objective(sys: &SpinSystem, target: &str) -> CliResult<Objective> {
    let lo = sys.shifts_ppm().iter().cloned().fold(f64::INFINITY, f64::min) - 0.15;
    let hi = sys.shifts_ppm().iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.15;
    let tasks = vec![
        Task {
            system: sys.name.clone(),
            kind: TaskKind::StateFidelity,
            region_ppm: None,
            target: Some(target.to_string()),
            reference: None,
            weight: 1.0,
        },
        Task {
            system: sys.name.clone(),
            kind: TaskKind::EnhancePeak,
            region_ppm: Some([lo, hi]),
            target: None,
            reference: None,
            weight: 0.01,
        },
    ];
    let mut spec = ObjectiveSpec::new(tasks);
    spec.power_weight = Some(1e-6);
    let mut systems = BTreeMap::new();
    systems.insert(sys.name.clone(), sys.clone());
    Ok(Objective::new(spec, &systems)?)
}

pub fn render_report(r: &FdReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>10} {:>22} {:>22} {:>12}", "coordinate", "analytic", "numeric", "rel_error");
    for p in &r.probes {
        let _ = writeln!(out, "{:>10} {:>22.14e} {:>22.14e} {:>12.3e}", p.coordinate, p.analytic, p.numeric, p.rel_error);
    }
    let _ = writeln!(out, "max relative error {:.3e} (step {:e})", r.max_rel_error, r.step);
    out
}

pub fn gradcheck(g: &Global, a: &GradcheckArgs) -> CliResult<FdReport> {
    let sys = load_system(&a.system, None)?;
    if a.segments == 0 {
        return Err(CliError::validation("--segments must be ≥ 1"));
    }
    let seed = g.seed.unwrap_or(0);
    let objective = gradcheck_objective(&sys, &a.target)?;
    let prog = random_program(a.segments, a.segment_s, a.amplitude_hz, seed)?;
    let n_probes = if a.probes == 0 { 2 * a.segments } else { a.probes };
    let compute = || -> CliResult<FdReport> {
        let r = spinforge::par::with_threads(g.threads, || {
            objective.gradient_check_with(&prog, a.step, n_probes, seed, a.corrupt)
        })?;
        g.say(render_report(&r));
        Ok(r)
    };
    let report = match &g.out {
        None => compute()?,
        Some(dir) => {
            prepare_out_dir(dir, "gradcheck", false)?;
            let config = json!({
                "system": canonical(&a.system),
                "segments": a.segments,
                "segment_s": a.segment_s,
                "amplitude_hz": a.amplitude_hz,
                "target": a.target,
                "step": a.step,
                "probes": n_probes,
                "tolerance": a.tolerance,
                "corrupt": a.corrupt,
            });
            let manifest = RunManifest::new("gradcheck", config, &[canonical(&a.system)], Some(seed), g.threads)?;
            with_manifest(dir, manifest, |outputs| {
                let r = compute()?;
                let mut csv = String::from("coordinate,analytic,numeric,rel_error\n");
                for p in &r.probes {
                    let _ = writeln!(csv, "{},{},{},{}", p.coordinate, p.analytic, p.numeric, p.rel_error);
                }
                save(dir, "gradcheck.csv", &csv, outputs)?;
                gate(&r, a.tolerance).map(|_| r)
            })?
        }
    };
    gate(&report, a.tolerance)?;
    g.say("PASS");
    Ok(report)
}

fn gate(r: &FdReport, tol: f64) -> CliResult<()> {
    if r.passes(tol) {
        Ok(())
    } else {
        Err(CliError::numerical(format!(
            "gradient check failed: max relative error {:.3e} exceeds {tol:e}",
            r.max_rel_error
        )))
    }
}

// ---------------------------------------------------------------- export

#[derive(Clone, Debug)]
pub struct ExportArgs {
    pub pulse: PathBuf,
}

pub fn export(g: &Global, a: &ExportArgs) -> CliResult<()> {
    let prog = load_program(&a.pulse)?;
    let table = prog.to_shape_table()?;
    let stem = a.pulse.file_stem().and_then(|s| s.to_str()).unwrap_or("pulse").to_string();
    let dir = g.out_dir(DEFAULT_OUT);
    prepare_out_dir(&dir, "export", false)?;
    let config = json!({ "pulse": canonical(&a.pulse) });
    let manifest = RunManifest::new("export", config, &[canonical(&a.pulse)], g.seed, g.threads)?;
    with_manifest(&dir, manifest, |outputs| {
        save(&dir, &format!("{stem}_shape.csv"), &table, outputs)?;
        save(&dir, &format!("{stem}.toml"), &prog.to_toml_string(), outputs)?;
        g.say(format!(
            "{} elements, {:.3} ms, peak {:.1} Hz",
            prog.elements().len(),
            prog.total_duration() * 1e3,
            prog.max_amplitude()
        ));
        Ok(())
    })
}

// ---------------------------------------------------------------- optimize

#[derive(Clone, Debug, Default)]
pub struct OptimizeArgs {
    pub config: PathBuf,
    pub dry_run: bool,
    pub resume: bool,
    /// Progress line every this many epochs (0 = never).
    pub report_every: usize,
}

pub fn history_csv(spec: &ObjectiveSpec, history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss");
    for (i, t) in spec.tasks.iter().enumerate() {
        let _ = write!(out, ",task{}_{}", i + 1, t.kind);
    }
    for (i, t) in spec.tasks.iter().enumerate() {
        if t.kind == TaskKind::StateFidelity {
            let _ = write!(out, ",fidelity{}", i + 1);
        }
    }
    out.push_str(",power,max_amplitude_hz\n");
    for r in history {
        let _ = write!(out, "{},{}", r.epoch, r.loss);
        for c in &r.components {
            let _ = write!(out, ",{c}");
        }
        for f in r.fidelities.iter().flatten() {
            let _ = write!(out, ",{f}");
        }
        let _ = writeln!(out, ",{},{}", r.power, r.max_amplitude_hz);
    }
    out
}

pub fn spectra_csv(spectra: &[(String, Spectrum)]) -> String {
    let mut out = String::from("system,freq_hz,ppm,real,imag\n");
    for (name, s) in spectra {
        for k in 0..s.len() {
            let z = s.intensities[k];
            let _ = writeln!(out, "{name},{},{},{},{}", s.freq_hz[k], s.ppm[k], z.re, z.im);
        }
    }
    out
}

/// Peak heights of the best program against each configured baseline.
pub fn baseline_report(
    objective: &Objective,
    best: &[(String, Spectrum)],
    baselines: &[Baseline],
) -> CliResult<Vec<serde_json::Value>> {
    let mut out = Vec::new();
    for b in baselines {
        let sys = objective
            .system(&b.system)
            .ok_or_else(|| CliError::validation(format!("baseline `{}`: system `{}` is not in the objective", b.label, b.system)))?;
        let params = objective.acquisition(&b.system).expect("known system");
        let region = SpectralRegion::new(b.region_ppm[0], b.region_ppm[1])?;
        let base = if let Some(expr) = &b.state {
            simulate_spectrum(sys, &OperatorExpr::parse(expr)?.to_operator(sys.n_spins())?, params)?
        } else if let Some(te) = b.press_te_s {
            press_baseline(sys, te, params)?
        } else {
            spinforge::analyze::plain_excitation(sys, params)?
        };
        let cand = &best.iter().find(|(n, _)| n == &b.system).expect("spectrum per system").1;
        let factor = enhancement_factor(cand, &base, &region);
        out.push(json!({
            "label": b.label,
            "system": b.system,
            "region_ppm": b.region_ppm,
            "baseline_peak": peak_height(&base, &region)?,
            "optimized_peak": peak_height(cand, &region)?,
            "factor": factor.as_ref().ok(),
            "error": factor.as_ref().err().map(|e| e.to_string()),
        }));
    }
    Ok(out)
}

fn snapshot_name(s: &Snapshot) -> String {
    format!("snapshot_epoch{}.csv", s.epoch)
}

pub struct OptimizeOutcome {
    pub result: OptResult,
    pub summary: serde_json::Value,
    pub out_dir: PathBuf,
}

pub fn optimize(g: &Global, a: &OptimizeArgs) -> CliResult<Option<OptimizeOutcome>> {
    let mut cfg = read_config(&a.config)?;
    let from_manifest = a.config.extension().is_some_and(|e| e == "json");
    if from_manifest {
        RunManifest::load(&a.config)?.verify_inputs()?;
    }
    if let Some(seed) = g.seed {
        cfg.optimizer.seed = seed;
    }
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let run: ResolvedRun = resolve(&cfg, &base)?;
    let stem = a.config.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
    let dir = g.out.clone().or_else(|| run.config.outputs.directory.clone()).unwrap_or_else(|| Path::new(DEFAULT_OUT).join(&stem));

    let mut objective = Objective::new(run.objective.clone(), &run.systems)?;
    if a.dry_run {
        println!("# materialized run configuration");
        print!("{}", run.config.to_toml_string());
        println!(
            "# plan: {} system(s), {} task(s), {} ensemble member(s), {} trainable segment(s), {} epoch(s), output {}",
            run.systems.len(),
            run.objective.tasks.len(),
            objective.ensemble_size(),
            run.template.n_trainable(),
            run.config.optimizer.epochs,
            dir.display()
        );
        return Ok(None);
    }

    let checkpoint_path = dir.join("checkpoint.json");
    let resume = if a.resume {
        Some(Checkpoint::load(&checkpoint_path).map_err(CliError::from)?)
    } else {
        None
    };
    prepare_out_dir(&dir, "optimize", a.resume)?;
    let config = serde_json::to_value(&run.config).map_err(|e| CliError::validation(e.to_string()))?;
    let manifest = RunManifest::new("optimize", config, &run.inputs, Some(run.config.optimizer.seed), g.threads)?;
    let opt = run.config.optimizer.clone();
    let outputs_cfg = run.config.outputs.clone();
    let outcome = with_manifest(&dir, manifest, |outputs| {
        let mut progress = |r: &EpochRecord| {
            if !g.quiet && a.report_every > 0 && (r.epoch % a.report_every == 0 || r.epoch == 1) {
                let fid: Vec<String> = r.fidelities.iter().flatten().map(|f| format!("{f:.5}")).collect();
                println!("epoch {:>5}  loss {:.6e}  fidelity [{}]", r.epoch, r.loss, fid.join(", "));
            }
        };
        let opts = RunOptions {
            checkpoint_path: outputs_cfg.checkpoint.then(|| checkpoint_path.clone()),
            resume,
            on_epoch: Some(&mut progress),
            no_snapshots: !outputs_cfg.snapshots,
        };
        let result = spinforge::par::with_threads(g.threads, || {
            run_optimization_with(&mut objective, &run.template, &opt, opts)
        })?;
        if outputs_cfg.checkpoint {
            outputs.push("checkpoint.json".into());
        }
        save(&dir, "history.csv", &history_csv(&run.objective, &result.history), outputs)?;
        for s in &result.snapshots {
            save(&dir, &snapshot_name(s), &spectra_csv(&s.spectra), outputs)?;
        }
        save(&dir, "best_pulse.toml", &result.best_program.to_toml_string(), outputs)?;
        save(&dir, "best_pulse_shape.csv", &result.best_program.to_shape_table()?, outputs)?;
        let best_spectra = objective.spectra(&result.best_program)?;
        save(&dir, "best_spectra.csv", &spectra_csv(&best_spectra), outputs)?;
        let eval = objective.evaluate(&result.best_program)?;
        let baselines = baseline_report(&objective, &best_spectra, &run.config.baselines)?;
        let summary = json!({
            "epochs": result.history.len(),
            "best_epoch": result.best_epoch,
            "best_loss": result.best_loss,
            "components": eval.components,
            "fidelities": eval.fidelities,
            "power_hz2_s": eval.power,
            "power_weight": eval.power_weight,
            "max_amplitude_hz": result.best_program.max_amplitude(),
            "wall_seconds": result.wall_seconds,
            "seconds_per_epoch": result.seconds_per_epoch,
            "baselines": baselines,
        });
        save(&dir, "summary.json", &(serde_json::to_string_pretty(&summary).expect("json") + "\n"), outputs)?;
        g.say(format!(
            "best loss {:.6e} at epoch {} of {}; {:.3} s/epoch; outputs in {}",
            result.best_loss,
            result.best_epoch,
            result.history.len(),
            result.seconds_per_epoch,
            dir.display()
        ));
        for b in &baselines {
            if let Some(f) = b["factor"].as_f64() {
                g.say(format!("{}: enhancement {:.3}", b["label"].as_str().unwrap_or(""), f));
            }
        }
        Ok((result, summary))
    })?;
    Ok(Some(OptimizeOutcome { result: outcome.0, summary: outcome.1, out_dir: dir }))
}
