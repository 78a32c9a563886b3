//! Adaptive-moment optimization of the trainable pulse controls.
//!
//! Each segment's `(u_x, u_y)` is the image of an unbounded parameter pair
//! `θ` under the radial saturation `u = A·tanh(|θ|)·θ/|θ|`, so the amplitude
//! never exceeds `A` and the gradient chain stays exact.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::Spectrum;
use crate::error::{Error, Result};
use crate::objective::{rf_power_penalty, Objective};
use crate::prop::{PulseProgram, DEFAULT_AMP_MAX_HZ};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub amp_max_hz: f64,
    pub snapshot_every: usize,
    pub init_scale_hz: f64,
    /// Start from the program's own controls instead of a random draw.
    pub warm_start: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            step_size: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            amp_max_hz: DEFAULT_AMP_MAX_HZ,
            snapshot_every: 50,
            init_scale_hz: 10.0,
            warm_start: false,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step_size must be > 0, got {}", self.step_size));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.amp_max_hz.is_finite() && self.amp_max_hz > 0.0) {
            return bad(format!("amp_max_hz must be > 0, got {}", self.amp_max_hz));
        }
        if !(self.init_scale_hz.is_finite() && self.init_scale_hz >= 0.0) {
            return bad(format!("init_scale_hz must be >= 0, got {}", self.init_scale_hz));
        }
        if self.init_scale_hz >= self.amp_max_hz / 2f64.sqrt() {
            return bad("init_scale_hz must keep initial amplitudes below amp_max_hz".into());
        }
        Ok(())
    }
}

/// `tanh(r)/r` and `(d/dr)(tanh(r)/r)/r`.
fn saturation(r: f64) -> (f64, f64) {
    if r < 1e-3 {
        let r2 = r * r;
        (1.0 - r2 / 3.0 + 2.0 * r2 * r2 / 15.0, -2.0 / 3.0 + 8.0 * r2 / 15.0)
    } else {
        let t = r.tanh();
        let sech2 = 1.0 - t * t;
        (t / r, (r * sech2 - t) / (r * r * r))
    }
}

/// Controls `[u_x0, u_y0, …]` from parameters.
pub fn controls_from_params(theta: &[f64], amp_max: f64) -> Vec<f64> {
    theta
        .chunks_exact(2)
        .flat_map(|p| {
            let (f, _) = saturation(p[0].hypot(p[1]));
            [amp_max * f * p[0], amp_max * f * p[1]]
        })
        .collect()
}

/// Inverse of [`controls_from_params`]; amplitudes must be below `amp_max`.
pub fn params_from_controls(u: &[f64], amp_max: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(u.len());
    for p in u.chunks_exact(2) {
        let a = p[0].hypot(p[1]) / amp_max;
        if a >= 1.0 {
            return Err(Error::Config(format!(
                "initial amplitude {:.3} Hz is not below amp_max_hz {amp_max}",
                a * amp_max
            )));
        }
        let s = if a == 0.0 { 1.0 / amp_max } else { a.atanh() / (a * amp_max) };
        out.push(p[0] * s);
        out.push(p[1] * s);
    }
    Ok(out)
}

/// `∂L/∂θ` from `∂L/∂u` through the saturation map.
pub fn pull_back(theta: &[f64], grad_u: &[f64], amp_max: f64) -> Vec<f64> {
    theta
        .chunks_exact(2)
        .zip(grad_u.chunks_exact(2))
        .flat_map(|(p, g)| {
            let (f, df_over_r) = saturation(p[0].hypot(p[1]));
            let dot = p[0] * g[0] + p[1] * g[1];
            [amp_max * (f * g[0] + df_over_r * p[0] * dot), amp_max * (f * g[1] + df_over_r * p[1] * dot)]
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected adaptive-moment update of `theta`.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &OptConfig) -> Result<()> {
    if grad.len() != theta.len() || state.m.len() != theta.len() || state.v.len() != theta.len() {
        return Err(Error::Dimension { expected: theta.len(), found: grad.len() });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powf(state.t as f64);
    let c2 = 1.0 - cfg.beta2.powf(state.t as f64);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Trainable controls drawn uniformly from `[−init_scale, init_scale]`.
pub fn initialize_controls(prog: &PulseProgram, seed: u64, init_scale: f64) -> Result<PulseProgram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_controls(prog, &mut rng, init_scale)
}

fn draw_controls(prog: &PulseProgram, rng: &mut ChaCha8Rng, init_scale: f64) -> Result<PulseProgram> {
    let n = prog.n_trainable();
    if n == 0 {
        return Err(Error::Program("no trainable segments to initialize".into()));
    }
    if !(init_scale.is_finite() && init_scale >= 0.0) {
        return Err(Error::Config(format!("init_scale_hz must be >= 0, got {init_scale}")));
    }
    let u: Vec<f64> = (0..2 * n)
        .map(|_| if init_scale == 0.0 { 0.0 } else { rng.gen_range(-init_scale..=init_scale) })
        .collect();
    prog.with_trainable_controls(&u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub components: Vec<f64>,
    pub fidelities: Vec<Option<f64>>,
    pub power: f64,
    pub max_amplitude_hz: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    pub spectra: Vec<(String, Spectrum)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub loss: f64,
    pub theta: Vec<f64>,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    /// Position of the seeded stream after initialization, as a decimal string.
    pub rng_word_pos: String,
    /// Completed epochs.
    pub epoch: usize,
    pub theta: Vec<f64>,
    pub adam: AdamState,
    pub best: Option<BestRecord>,
    pub history: Vec<EpochRecord>,
    pub power_weight: f64,
    pub amp_max_hz: f64,
}

impl Checkpoint {
    pub fn initial(prog: &PulseProgram, cfg: &OptConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let start = if cfg.warm_start {
            prog.clone()
        } else {
            draw_controls(prog, &mut rng, cfg.init_scale_hz)?
        };
        if start.n_trainable() == 0 {
            return Err(Error::Program("no trainable segments".into()));
        }
        let theta = params_from_controls(&start.trainable_controls(), cfg.amp_max_hz)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            seed: cfg.seed,
            rng_word_pos: rng.get_word_pos().to_string(),
            epoch: 0,
            adam: AdamState::new(theta.len()),
            theta,
            best: None,
            history: Vec::new(),
            power_weight: 0.0,
            amp_max_hz: cfg.amp_max_hz,
        })
    }

    /// The seeded stream, positioned where the run left it.
    pub fn rng(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self.rng_word_pos.parse().map_err(|_| self.corrupt("rng_word_pos"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }

    fn corrupt(&self, what: &str) -> Error {
        Error::Checkpoint { path: PathBuf::new(), message: format!("invalid {what}") }
    }

    pub fn controls(&self) -> Vec<f64> {
        controls_from_params(&self.theta, self.amp_max_hz)
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let err = |m: String| Error::Checkpoint { path: path.to_path_buf(), message: m };
        let json = serde_json::to_vec(self).map_err(|e| err(e.to_string()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        std::io::Write::write_all(&mut tmp, &json).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| err(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let err = |m: String| Error::Checkpoint { path: path.to_path_buf(), message: m };
        let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return Err(err(format!("version {v}, expected {CHECKPOINT_VERSION}"))),
            None => return Err(err("missing version".into())),
        }
        let cp: Self = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        if cp.theta.len() % 2 != 0 || cp.adam.m.len() != cp.theta.len() || cp.adam.v.len() != cp.theta.len() {
            return Err(err("inconsistent parameter lengths".into()));
        }
        cp.rng().map_err(|_| err("invalid rng_word_pos".into()))?;
        Ok(cp)
    }
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub best_program: PulseProgram,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub final_program: PulseProgram,
    pub history: Vec<EpochRecord>,
    pub snapshots: Vec<Snapshot>,
    pub checkpoint: Checkpoint,
    pub wall_seconds: f64,
    pub seconds_per_epoch: f64,
}

impl OptResult {
    /// Fidelity of the first state task per epoch.
    pub fn fidelity_history(&self) -> Vec<f64> {
        self.history.iter().filter_map(|r| r.fidelities.iter().flatten().next().copied()).collect()
    }

    pub fn loss_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Saved every `snapshot_every` epochs, at the end, and on failure.
    pub checkpoint_path: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    pub on_epoch: Option<&'a mut (dyn FnMut(&EpochRecord) + Send)>,
    /// Skip spectrum snapshots.
    pub no_snapshots: bool,
}

pub fn run_optimization(objective: &mut Objective, template: &PulseProgram, cfg: &OptConfig) -> Result<OptResult> {
    run_optimization_with(objective, template, cfg, RunOptions::default())
}

pub fn run_optimization_with(
    objective: &mut Objective,
    template: &PulseProgram,
    cfg: &OptConfig,
    mut opts: RunOptions<'_>,
) -> Result<OptResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut state = match opts.resume.take() {
        Some(cp) => {
            if cp.theta.len() != 2 * template.n_trainable() {
                return Err(Error::Checkpoint {
                    path: PathBuf::new(),
                    message: format!(
                        "checkpoint has {} controls, program has {}",
                        cp.theta.len(),
                        2 * template.n_trainable()
                    ),
                });
            }
            objective.set_power_weight(cp.power_weight)?;
            cp
        }
        None => {
            let mut cp = Checkpoint::initial(template, cfg)?;
            let init = template.with_trainable_controls(&cp.controls())?;
            cp.power_weight = objective.calibrate_power_weight(&init)?;
            cp
        }
    };
    if state.amp_max_hz != cfg.amp_max_hz {
        return Err(Error::Config("amp_max_hz differs from the checkpoint".into()));
    }
    let save = |cp: &Checkpoint| -> Result<()> {
        match &opts.checkpoint_path {
            Some(p) => cp.save(p),
            None => Ok(()),
        }
    };
    let mut snapshots = Vec::new();
    let first = state.epoch + 1;
    for epoch in first..=cfg.epochs {
        let prog = template.with_trainable_controls(&state.controls())?;
        let (eval, grad_u) = match objective.evaluate_with_gradient(&prog) {
            Ok(r) => r,
            Err(e) => {
                save(&state)?;
                return Err(e);
            }
        };
        let max_amp = prog.max_amplitude();
        if max_amp > cfg.amp_max_hz * (1.0 + 1e-12) {
            return Err(Error::Program(format!("amplitude cap violated at epoch {epoch}: {max_amp} Hz")));
        }
        let record = EpochRecord {
            epoch,
            loss: eval.loss,
            components: eval.components,
            fidelities: eval.fidelities,
            power: rf_power_penalty(&prog),
            max_amplitude_hz: max_amp,
        };
        if state.best.as_ref().is_none_or(|b| record.loss < b.loss) {
            state.best = Some(BestRecord { epoch, loss: record.loss, theta: state.theta.clone() });
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&record);
        }
        state.history.push(record);
        let snap = cfg.snapshot_every > 0 && (epoch % cfg.snapshot_every == 0 || epoch == cfg.epochs);
        if snap && !opts.no_snapshots {
            snapshots.push(Snapshot { epoch, spectra: objective.spectra(&prog)? });
        }
        let grad_theta = pull_back(&state.theta, &grad_u, cfg.amp_max_hz);
        let mut theta = state.theta.clone();
        let mut adam = state.adam.clone();
        if let Err(e) = adam_step(&mut theta, &grad_theta, &mut adam, cfg) {
            save(&state)?;
            return Err(e);
        }
        state.theta = theta;
        state.adam = adam;
        state.epoch = epoch;
        if snap || epoch == cfg.epochs {
            save(&state)?;
        }
    }
    if first > cfg.epochs {
        save(&state)?;
    }
    let best = state
        .best
        .clone()
        .ok_or_else(|| Error::Config(format!("no epochs left to run: checkpoint is at epoch {}", state.epoch)))?;
    let best_program = template.with_trainable_controls(&controls_from_params(&best.theta, cfg.amp_max_hz))?;
    let final_program = template.with_trainable_controls(&state.controls())?;
    let wall = start.elapsed().as_secs_f64();
    let ran = (cfg.epochs + 1).saturating_sub(first).max(1);
    Ok(OptResult {
        best_program,
        best_loss: best.loss,
        best_epoch: best.epoch,
        final_program,
        history: state.history.clone(),
        snapshots,
        wall_seconds: wall,
        seconds_per_epoch: wall / ran as f64,
        checkpoint: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{zero_program, ObjectiveSpec, Task, TaskKind};
    use crate::spinsys::SpinSystem;
    use std::collections::BTreeMap;

    fn citrate_objective(target: &str) -> Objective {
        let sys = SpinSystem::new("citrate", vec![2.66, 2.53], &[(1, 2, -17.23)], 500.0, Some(2.595)).unwrap();
        let spec = ObjectiveSpec::new(vec![Task {
            system: "citrate".into(),
            kind: TaskKind::StateFidelity,
            region_ppm: None,
            target: Some(target.into()),
            reference: None,
            weight: 1.0,
        }]);
        let table: BTreeMap<_, _> = [("citrate".to_string(), sys)].into_iter().collect();
        Objective::new(spec, &table).unwrap()
    }

    #[test]
    fn saturation_roundtrip_and_bound() {
        let u = [0.0, 0.0, 10.0, -3.0, 4999.0, 0.0, -2000.0, 3000.0];
        let th = params_from_controls(&u, 5000.0).unwrap();
        let back = controls_from_params(&th, 5000.0);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
        assert!(params_from_controls(&[5000.0, 1.0], 5000.0).is_err());
        let big = controls_from_params(&[1e6, -3e5, 40.0, 40.0], 5000.0);
        for p in big.chunks(2) {
            assert!(p[0].hypot(p[1]) <= 5000.0 * (1.0 + 1e-15));
        }
    }

    #[test]
    fn pull_back_matches_difference() {
        let theta = [0.3, -0.7, 1e-5, 2e-5, 2.5, 0.1];
        let g_u = [1.0, -2.0, 0.5, 0.25, -1.5, 3.0];
        let g = pull_back(&theta, &g_u, 5000.0);
        let h = 1e-7;
        for i in 0..theta.len() {
            let (mut p, mut m) = (theta.to_vec(), theta.to_vec());
            p[i] += h;
            m[i] -= h;
            let up = controls_from_params(&p, 5000.0);
            let um = controls_from_params(&m, 5000.0);
            let fd: f64 = (0..6).map(|k| g_u[k] * (up[k] - um[k]) / (2.0 * h)).sum();
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn adam_fixed_points() {
        let cfg = OptConfig::default();
        let mut theta = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut theta, &[0.0, 0.0], &mut st, &cfg).unwrap();
        assert_eq!(theta, vec![1.0, -2.0]);
        let mut prev = theta.clone();
        for _ in 0..3000 {
            adam_step(&mut theta, &[3.0, -0.01], &mut st, &cfg).unwrap();
        }
        let step: Vec<f64> = theta.iter().zip(&prev).map(|(a, b)| a - b).collect();
        prev.clone_from(&theta);
        adam_step(&mut theta, &[3.0, -0.01], &mut st, &cfg).unwrap();
        let last = [theta[0] - prev[0], theta[1] - prev[1]];
        assert!((last[0] + cfg.step_size).abs() < 1e-3 * cfg.step_size);
        assert!((last[1] - cfg.step_size).abs() < 2e-3 * cfg.step_size);
        assert!(step[0] < 0.0);
        assert!(matches!(adam_step(&mut theta, &[f64::NAN, 0.0], &mut st, &cfg), Err(Error::NonFiniteGradient(0))));
    }

    #[test]
    fn initialization() {
        let prog = zero_program(50, 2e-5).unwrap();
        let z = initialize_controls(&prog, 3, 0.0).unwrap();
        assert!(z.trainable_controls().iter().all(|u| *u == 0.0));
        let a = initialize_controls(&prog, 3, 10.0).unwrap();
        assert_eq!(a, initialize_controls(&prog, 3, 10.0).unwrap());
        assert!(a.trainable_controls().iter().all(|u| u.abs() <= 10.0));
        for s in 0..5 {
            assert_ne!(initialize_controls(&prog, s, 10.0).unwrap(), initialize_controls(&prog, s + 100, 10.0).unwrap());
        }
        let frozen = crate::prop::PulseProgram::new(vec![crate::prop::Element::Delay { duration: 1e-3 }]).unwrap();
        assert!(initialize_controls(&frozen, 0, 10.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptConfig::default().validate().is_ok());
        for cfg in [
            OptConfig { epochs: 0, ..Default::default() },
            OptConfig { beta1: 1.0, ..Default::default() },
            OptConfig { beta2: 0.0, ..Default::default() },
            OptConfig { step_size: -1.0, ..Default::default() },
            OptConfig { amp_max_hz: 0.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn single_epoch_and_checkpoint_at_zero() {
        let dir = tempfile::tempdir().unwrap();
        let mut obj = citrate_objective("I1x - 2*I1x.I2z");
        let prog = zero_program(20, 1e-4).unwrap();
        let cfg = OptConfig { epochs: 1, seed: 7, ..Default::default() };
        let path = dir.path().join("run.ckpt");
        let res = run_optimization_with(
            &mut obj,
            &prog,
            &cfg,
            RunOptions { checkpoint_path: Some(path.clone()), ..Default::default() },
        )
        .unwrap();
        assert_eq!(res.history.len(), 1);
        let cp = Checkpoint::load(&path).unwrap();
        assert_eq!(cp.epoch, 1);
        assert_eq!(cp, res.checkpoint);

        let c0 = Checkpoint::initial(&prog, &cfg).unwrap();
        let init = initialize_controls(&prog, 7, 10.0).unwrap().trainable_controls();
        for (a, b) in c0.controls().iter().zip(&init) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
        let mut rng = c0.rng().unwrap();
        let mut fresh = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let _: f64 = fresh.gen_range(-10.0..=10.0);
        }
        assert_eq!(rng.gen::<u64>(), fresh.gen::<u64>());
    }

    #[test]
    fn resume_is_bit_exact_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let prog = zero_program(30, 1e-4).unwrap();
        let cfg = OptConfig { epochs: 8, seed: 11, snapshot_every: 0, ..Default::default() };
        let full = run_optimization(&mut citrate_objective("I1x"), &prog, &cfg).unwrap();
        let again = run_optimization(&mut citrate_objective("I1x"), &prog, &cfg).unwrap();
        let bits = |r: &OptResult| r.loss_history().iter().map(|l| l.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&full), bits(&again));

        let path = dir.path().join("half.ckpt");
        let half_cfg = OptConfig { epochs: 4, ..cfg.clone() };
        run_optimization_with(
            &mut citrate_objective("I1x"),
            &prog,
            &half_cfg,
            RunOptions { checkpoint_path: Some(path.clone()), ..Default::default() },
        )
        .unwrap();
        let cp = Checkpoint::load(&path).unwrap();
        let resumed = run_optimization_with(
            &mut citrate_objective("I1x"),
            &prog,
            &cfg,
            RunOptions { resume: Some(cp), ..Default::default() },
        )
        .unwrap();
        assert_eq!(bits(&resumed), bits(&full));
        assert_eq!(resumed.final_program, full.final_program);
        let best = full.loss_history().into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(full.best_loss, best);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let prog = zero_program(4, 1e-4).unwrap();
        let cp = Checkpoint::initial(&prog, &OptConfig::default()).unwrap();
        let path = dir.path().join("c.json");
        cp.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), cp);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
        std::fs::write(&path, text.replace("\"version\":1", "\"version\":99")).unwrap();
        let e = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(e.contains("version 99"), "{e}");
    }
}
