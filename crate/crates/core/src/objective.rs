//! Multi-task losses over one or more spin systems.
//!
//! A loss is `Σ_t w_t·ℓ_t + λ_P·P`, each `ℓ_t` averaged over the robustness
//! ensemble. Every ensemble member of every system referenced by a task is
//! one evaluation context: one forward pass, one reverse pass. Contexts run
//! through [`crate::par::par_map`] and are reduced in a fixed order.
//!
//! ```toml
//! power_weight = 0.0            # omitted: calibrated at the start of a run
//! carrier_ppm = 3.0             # optional common transmitter frequency
//! lb_hz = 4.0                   # optional, default depends on the field
//! peak_mode = "argmax"          # or "softmax" (softmax_temperature)
//!
//! [ensemble]
//! b1_scales = [0.9, 1.0, 1.1]
//! b0_offsets_hz = [-5.0, 0.0, 5.0]
//!
//! [[tasks]]
//! system = "glutamine"
//! kind = "enhance_peak"         # suppress_region | match_template | state_fidelity
//! region_ppm = [3.6, 3.9]
//! weight = 1.0
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::detect::{AcquisitionParams, RegionKernel, SpectralRegion, Spectrum};
use crate::error::{Error, Result};
use crate::grad::{finite_difference_check, select_probes, ChainWorkspace, FdReport};
use crate::linalg::{frobenius, hermitian_part, identity, matmul3, trace_product, CMatrix, HermitianEigen, ZERO};
use crate::par::par_map;
use crate::prop::{DensityState, Element, PulseProgram};
use crate::spinsys::{equilibrium_state, free_hamiltonian, OperatorExpr, SpinSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    EnhancePeak,
    SuppressRegion,
    MatchTemplate,
    StateFidelity,
}

impl TaskKind {
    pub fn is_spectral(self) -> bool {
        !matches!(self, TaskKind::StateFidelity)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::EnhancePeak => "enhance_peak",
            TaskKind::SuppressRegion => "suppress_region",
            TaskKind::MatchTemplate => "match_template",
            TaskKind::StateFidelity => "state_fidelity",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakMode {
    /// Subgradient at the tallest bin, lowest index on ties.
    #[default]
    Argmax,
    /// Smooth maximum `τ·log Σ exp(x/τ)`.
    Softmax,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub system: String,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_ppm: Option<[f64; 2]>,
    /// Target operator of a state task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// State whose spectrum is the template of a `match_template` task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

impl Task {
    pub fn region(&self) -> Result<SpectralRegion> {
        match self.region_ppm {
            Some([lo, hi]) => SpectralRegion::new(lo, hi),
            None => Err(Error::Objective(format!("{} task on `{}` needs region_ppm", self.kind, self.system))),
        }
    }
}

fn default_b1() -> Vec<f64> {
    vec![1.0]
}

fn default_b0() -> Vec<f64> {
    vec![0.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSpec {
    #[serde(default = "default_b1")]
    pub b1_scales: Vec<f64>,
    #[serde(default = "default_b0")]
    pub b0_offsets_hz: Vec<f64>,
}

impl Default for RobustnessSpec {
    fn default() -> Self {
        Self { b1_scales: default_b1(), b0_offsets_hz: default_b0() }
    }
}

impl RobustnessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.b1_scales.is_empty() || self.b0_offsets_hz.is_empty() {
            return Err(Error::Objective("ensemble lists must be non-empty".into()));
        }
        if let Some(s) = self.b1_scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Objective(format!("b1 scale {s} must be positive")));
        }
        if let Some(s) = self.b0_offsets_hz.iter().find(|s| !s.is_finite()) {
            return Err(Error::Objective(format!("b0 offset {s} must be finite")));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.b1_scales.len() * self.b0_offsets_hz.len()
    }
}

/// One perturbed copy of a system.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMember {
    pub b1_scale: f64,
    pub b0_offset_hz: f64,
    pub system: SpinSystem,
}

/// Cartesian product of B1 scales and B0 offsets, B1 outermost.
pub fn expand_ensemble(spec: &RobustnessSpec, base: &SpinSystem) -> Result<Vec<EnsembleMember>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.size());
    for &b1 in &spec.b1_scales {
        for &b0 in &spec.b0_offsets_hz {
            let system = if b0 == 0.0 { base.clone() } else { base.with_carrier_offset_hz(b0) };
            out.push(EnsembleMember { b1_scale: b1, b0_offset_hz: b0, system });
        }
    }
    Ok(out)
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub tasks: Vec<Task>,
    /// `None` means calibrate from the initial program.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_weight: Option<f64>,
    #[serde(default)]
    pub ensemble: RobustnessSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lb_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier_ppm: Option<f64>,
    #[serde(default)]
    pub peak_mode: PeakMode,
    #[serde(default = "default_temperature")]
    pub softmax_temperature: f64,
}

impl ObjectiveSpec {
    pub fn new(tasks: Vec<Task>) -> Self {
        Self {
            tasks,
            power_weight: Some(0.0),
            ensemble: RobustnessSpec::default(),
            lb_hz: None,
            carrier_ppm: None,
            peak_mode: PeakMode::Argmax,
            softmax_temperature: default_temperature(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::schema("objective", e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("objective spec serializes")
    }

    /// Checks everything that does not need the spin systems.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Objective("at least one task is required".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            let ctx = |m: String| Error::Objective(format!("task {} ({}): {m}", i + 1, t.kind));
            if !t.weight.is_finite() {
                return Err(ctx(format!("weight {} is not finite", t.weight)));
            }
            if t.kind == TaskKind::SuppressRegion && t.weight < 0.0 {
                return Err(ctx("suppression weight must be >= 0".into()));
            }
            if t.kind.is_spectral() {
                t.region().map_err(|e| ctx(e.to_string()))?;
            }
            match (t.kind, &t.target, &t.reference) {
                (TaskKind::StateFidelity, None, _) => return Err(ctx("needs target".into())),
                (TaskKind::MatchTemplate, _, None) => return Err(ctx("needs reference".into())),
                _ => {}
            }
            for e in [&t.target, &t.reference].into_iter().flatten() {
                OperatorExpr::parse(e).map_err(|e| ctx(e.to_string()))?;
            }
        }
        if let Some(w) = self.power_weight {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Objective(format!("power_weight must be >= 0, got {w}")));
            }
        }
        if let Some(lb) = self.lb_hz {
            if !(lb.is_finite() && lb >= 0.0) {
                return Err(Error::Objective(format!("lb_hz must be >= 0, got {lb}")));
            }
        }
        if !(self.softmax_temperature.is_finite() && self.softmax_temperature > 0.0) {
            return Err(Error::Objective("softmax_temperature must be > 0".into()));
        }
        self.ensemble.validate()
    }

    pub fn with_weights_scaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        for t in &mut s.tasks {
            t.weight *= c;
        }
        s
    }
}

/// `P = Σ (u_x² + u_y²)·duration` over trainable segments, Hz²·s.
pub fn rf_power_penalty(prog: &PulseProgram) -> f64 {
    prog.trainable_segments().map(|s| (s.u_x * s.u_x + s.u_y * s.u_y) * s.duration).sum()
}

fn rf_power_gradient(prog: &PulseProgram) -> Vec<f64> {
    prog.trainable_segments().flat_map(|s| [2.0 * s.u_x * s.duration, 2.0 * s.u_y * s.duration]).collect()
}

fn remove_trace(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let tr = a.trace() / n as f64;
    a - identity(n) * tr
}

/// Normalized Frobenius overlap of the traceless parts.
pub fn state_fidelity(rho: &DensityState, target: &CMatrix) -> Result<f64> {
    if rho.nrows() != target.nrows() {
        return Err(Error::Dimension { expected: target.nrows(), found: rho.nrows() });
    }
    let (r, t) = (remove_trace(rho), remove_trace(target));
    let (nr, nt) = (frobenius(&r), frobenius(&t));
    if nr == 0.0 || nt == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(trace_product(&r, &t).re / (nr * nt))
}

/// `1 − F` and its adjoint `−∂F/∂ρ` for a traceless target.
fn fidelity_loss(rho: &DensityState, target: &CMatrix, target_norm: f64) -> Result<(f64, f64, CMatrix)> {
    let r = remove_trace(rho);
    let nr = frobenius(&r);
    if nr == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let f = trace_product(&r, target).re / (nr * target_norm);
    let adj = r * Complex64::new(f / (nr * nr), 0.0) - target * Complex64::new(1.0 / (nr * target_norm), 0.0);
    Ok((1.0 - f, f, adj))
}

enum Compiled {
    Spectral { kind: TaskKind, kernel: Arc<RegionKernel>, template: Option<Arc<Vec<f64>>> },
    Fidelity { target: CMatrix, norm: f64 },
}

struct Context {
    b1_scale: f64,
    sys: SpinSystem,
    eig: Arc<HermitianEigen>,
    /// `(task index, compiled task)`.
    tasks: Vec<(usize, Compiled)>,
}

/// Per-task result of one evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    /// Ensemble-mean unweighted `ℓ_t`, in task order.
    pub components: Vec<f64>,
    /// Ensemble-mean fidelity for state tasks, `None` for spectral tasks.
    pub fidelities: Vec<Option<f64>>,
    pub power: f64,
    pub power_weight: f64,
}

struct ContextOutput {
    losses: Vec<(usize, f64, Option<f64>)>,
    grad: Vec<f64>,
}

/// An [`ObjectiveSpec`] bound to its spin systems.
pub struct Objective {
    spec: ObjectiveSpec,
    systems: Vec<SpinSystem>,
    acquisitions: Vec<AcquisitionParams>,
    contexts: Vec<Context>,
    power_weight: f64,
}

impl Objective {
    /// `systems` is keyed by the names used in the tasks.
    pub fn new(spec: ObjectiveSpec, systems: &BTreeMap<String, SpinSystem>) -> Result<Self> {
        spec.validate()?;
        let mut used: Vec<SpinSystem> = Vec::new();
        let mut sys_index = Vec::with_capacity(spec.tasks.len());
        for t in &spec.tasks {
            let sys = systems.get(&t.system).ok_or_else(|| Error::UnknownSystem(t.system.clone()))?;
            let k = match used.iter().position(|s| s.name == t.system) {
                Some(k) => k,
                None => {
                    let mut s = match spec.carrier_ppm {
                        Some(c) => sys.with_carrier(c),
                        None => sys.clone(),
                    };
                    s.name = t.system.clone();
                    used.push(s);
                    used.len() - 1
                }
            };
            sys_index.push(k);
        }
        let acquisitions: Vec<AcquisitionParams> = used
            .iter()
            .map(|s| {
                let lb = spec.lb_hz.unwrap_or_else(|| AcquisitionParams::default_lb(s.spectrometer_mhz()));
                AcquisitionParams::for_linewidth(s, lb)
            })
            .collect();

        // Templates live on the nominal axis of the unperturbed system.
        let mut templates: Vec<Option<Arc<Vec<f64>>>> = vec![None; spec.tasks.len()];
        for (i, t) in spec.tasks.iter().enumerate() {
            if t.kind != TaskKind::MatchTemplate {
                continue;
            }
            let sys = &used[sys_index[i]];
            let reference = OperatorExpr::parse(t.reference.as_deref().unwrap_or_default())?.to_operator(sys.n_spins())?;
            let eig = Arc::new(HermitianEigen::new(&free_hamiltonian(sys))?);
            let kernel = RegionKernel::new(
                eig,
                sys.n_spins(),
                sys.spectrometer_mhz(),
                sys.carrier_ppm(),
                &acquisitions[sys_index[i]],
                &t.region()?,
            )?;
            templates[i] = Some(Arc::new(kernel.values(&reference).iter().map(|z| z.re).collect()));
        }

        let mut contexts = Vec::new();
        for (k, sys) in used.iter().enumerate() {
            for member in expand_ensemble(&spec.ensemble, sys)? {
                let eig = Arc::new(HermitianEigen::new(&free_hamiltonian(&member.system))?);
                let mut tasks = Vec::new();
                for (i, t) in spec.tasks.iter().enumerate().filter(|(i, _)| sys_index[*i] == k) {
                    let compiled = if t.kind.is_spectral() {
                        let kernel = RegionKernel::new(
                            eig.clone(),
                            sys.n_spins(),
                            sys.spectrometer_mhz(),
                            sys.carrier_ppm(),
                            &acquisitions[k],
                            &t.region()?,
                        )?;
                        Compiled::Spectral { kind: t.kind, kernel: Arc::new(kernel), template: templates[i].clone() }
                    } else {
                        let target = OperatorExpr::parse(t.target.as_deref().unwrap_or_default())?
                            .to_operator(sys.n_spins())?;
                        let target = remove_trace(&target);
                        let norm = frobenius(&target);
                        if norm == 0.0 {
                            return Err(Error::ZeroNorm);
                        }
                        Compiled::Fidelity { target, norm }
                    };
                    tasks.push((i, compiled));
                }
                contexts.push(Context { b1_scale: member.b1_scale, sys: member.system, eig, tasks });
            }
        }
        let power_weight = spec.power_weight.unwrap_or(0.0);
        Ok(Self { spec, systems: used, acquisitions, contexts, power_weight })
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    /// Systems in order of first use, with any common carrier applied.
    pub fn systems(&self) -> &[SpinSystem] {
        &self.systems
    }

    pub fn system(&self, name: &str) -> Option<&SpinSystem> {
        self.systems.iter().find(|s| s.name == name)
    }

    pub fn acquisition(&self, name: &str) -> Option<&AcquisitionParams> {
        self.systems.iter().position(|s| s.name == name).map(|k| &self.acquisitions[k])
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn ensemble_size(&self) -> usize {
        self.spec.ensemble.size()
    }

    pub fn power_weight(&self) -> f64 {
        self.power_weight
    }

    pub fn set_power_weight(&mut self, w: f64) -> Result<()> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Objective(format!("power_weight must be >= 0, got {w}")));
        }
        self.power_weight = w;
        Ok(())
    }

    /// Resolves an omitted `power_weight` so that the penalty of `prog` is
    /// 1% of its task loss. Returns the weight in use.
    pub fn calibrate_power_weight(&mut self, prog: &PulseProgram) -> Result<f64> {
        if self.spec.power_weight.is_none() {
            self.power_weight = 0.0;
            let task_loss = self.evaluate(prog)?.loss;
            let p = rf_power_penalty(prog);
            self.power_weight = if p > 0.0 && task_loss != 0.0 { 0.01 * task_loss.abs() / p } else { 0.0 };
        }
        Ok(self.power_weight)
    }

    pub fn has_state_task(&self) -> bool {
        self.spec.tasks.iter().any(|t| t.kind == TaskKind::StateFidelity)
    }

    pub fn evaluate(&self, prog: &PulseProgram) -> Result<Evaluation> {
        Ok(self.run(prog, false)?.0)
    }

    pub fn evaluate_with_gradient(&self, prog: &PulseProgram) -> Result<(Evaluation, Vec<f64>)> {
        self.run(prog, true)
    }

    fn run(&self, prog: &PulseProgram, want_grad: bool) -> Result<(Evaluation, Vec<f64>)> {
        let n_ens = self.ensemble_size() as f64;
        let outputs = par_map(&self.contexts, |ctx| self.run_context(ctx, prog, want_grad, n_ens));
        let n_tasks = self.spec.tasks.len();
        let mut components = vec![0.0; n_tasks];
        let mut fid: Vec<Option<f64>> = vec![None; n_tasks];
        let n_coords = 2 * prog.n_trainable();
        let mut grad = vec![0.0; if want_grad { n_coords } else { 0 }];
        for out in outputs {
            let out = out?;
            for (i, l, f) in out.losses {
                components[i] += l / n_ens;
                if let Some(f) = f {
                    *fid[i].get_or_insert(0.0) += f / n_ens;
                }
            }
            for (g, d) in grad.iter_mut().zip(&out.grad) {
                *g += d;
            }
        }
        let power = rf_power_penalty(prog);
        let mut loss = self.power_weight * power;
        for (t, c) in self.spec.tasks.iter().zip(&components) {
            loss += t.weight * c;
        }
        if want_grad && self.power_weight != 0.0 {
            for (g, d) in grad.iter_mut().zip(rf_power_gradient(prog)) {
                *g += self.power_weight * d;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { task: 0, kind: "total".into() });
        }
        let eval = Evaluation { loss, components, fidelities: fid, power, power_weight: self.power_weight };
        Ok((eval, grad))
    }

    fn run_context(&self, ctx: &Context, prog: &PulseProgram, want_grad: bool, n_ens: f64) -> Result<ContextOutput> {
        let rho0 = equilibrium_state(ctx.sys.n_spins());
        let ws = ChainWorkspace::forward(&ctx.sys, prog, &rho0, ctx.b1_scale)?;
        let rho = ws.final_state();
        let rho_eig = ctx.eig.to_eigenbasis(rho);
        let dim = rho.nrows();
        let mut x_eig = CMatrix::from_element(dim, dim, ZERO);
        let mut adj_lab = CMatrix::from_element(dim, dim, ZERO);
        let mut losses = Vec::with_capacity(ctx.tasks.len());
        for (i, task) in &ctx.tasks {
            let w = self.spec.tasks[*i].weight / n_ens;
            let (l, f) = match task {
                Compiled::Spectral { kind, kernel, template } => {
                    let s = kernel.values_eigenbasis(&rho_eig);
                    let (l, g) = self.spectral_loss(*kind, &s, template.as_deref().map(|v| &v[..]));
                    if want_grad && w != 0.0 {
                        let g: Vec<Complex64> = g.into_iter().map(|z| z * w).collect();
                        kernel.accumulate_adjoint_eigenbasis(&g, &mut x_eig);
                    }
                    (l, None)
                }
                Compiled::Fidelity { target, norm } => {
                    let (l, f, a) = fidelity_loss(rho, target, *norm)?;
                    if want_grad && w != 0.0 {
                        adj_lab += a * Complex64::new(w, 0.0);
                    }
                    (l, Some(f))
                }
            };
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { task: i + 1, kind: self.spec.tasks[*i].kind.to_string() });
            }
            losses.push((*i, l, f));
        }
        let grad = if want_grad {
            let v = &ctx.eig.vectors;
            adj_lab += hermitian_part(&matmul3(v, &x_eig, &v.adjoint()));
            ws.backward(&adj_lab)?
        } else {
            Vec::new()
        };
        Ok(ContextOutput { losses, grad })
    }

    /// `ℓ` and `g_j = ∂ℓ/∂Re S_j − i ∂ℓ/∂Im S_j` over the region bins.
    fn spectral_loss(&self, kind: TaskKind, s: &[Complex64], template: Option<&[f64]>) -> (f64, Vec<Complex64>) {
        let n = s.len() as f64;
        match kind {
            TaskKind::EnhancePeak => match self.spec.peak_mode {
                PeakMode::Argmax => {
                    let mut best = 0;
                    for (j, z) in s.iter().enumerate() {
                        if z.re > s[best].re {
                            best = j;
                        }
                    }
                    let mut g = vec![ZERO; s.len()];
                    g[best] = Complex64::new(-1.0, 0.0);
                    (-s[best].re, g)
                }
                PeakMode::Softmax => {
                    let tau = self.spec.softmax_temperature;
                    let m = s.iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.re));
                    let e: Vec<f64> = s.iter().map(|z| ((z.re - m) / tau).exp()).collect();
                    let z: f64 = e.iter().sum();
                    let smooth = m + tau * z.ln();
                    (-smooth, e.iter().map(|w| Complex64::new(-w / z, 0.0)).collect())
                }
            },
            TaskKind::SuppressRegion => {
                let l = s.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
                (l, s.iter().map(|z| z.conj() * (2.0 / n)).collect())
            }
            TaskKind::MatchTemplate => {
                let t = template.expect("template compiled");
                let l = s.iter().zip(t).map(|(z, r)| (z.re - r).powi(2)).sum::<f64>() / n;
                (l, s.iter().zip(t).map(|(z, r)| Complex64::new(2.0 * (z.re - r) / n, 0.0)).collect())
            }
            TaskKind::StateFidelity => unreachable!("not a spectral task"),
        }
    }

    /// Final states of the unperturbed contexts, one per system.
    pub fn final_states(&self, prog: &PulseProgram) -> Result<Vec<(String, DensityState)>> {
        self.systems
            .iter()
            .map(|s| {
                let rho0 = equilibrium_state(s.n_spins());
                Ok((s.name.clone(), ChainWorkspace::forward(s, prog, &rho0, 1.0)?.final_state().clone()))
            })
            .collect()
    }

    /// Full spectra of the unperturbed final states.
    pub fn spectra(&self, prog: &PulseProgram) -> Result<Vec<(String, Spectrum)>> {
        self.final_states(prog)?
            .into_iter()
            .zip(&self.acquisitions)
            .map(|((name, rho), acq)| {
                let sys = self.system(&name).expect("known system");
                Ok((name, crate::detect::simulate_spectrum(sys, &rho, acq)?))
            })
            .collect()
    }

    /// Analytic gradient against central differences on `n_probes` random
    /// coordinates of `prog`'s trainable controls.
    pub fn gradient_check(&self, prog: &PulseProgram, step: f64, n_probes: usize, seed: u64) -> Result<FdReport> {
        self.gradient_check_with(prog, step, n_probes, seed, false)
    }

    /// As [`Objective::gradient_check`]; `corrupt` flips the analytic sign to
    /// exercise the checker itself.
    pub fn gradient_check_with(
        &self,
        prog: &PulseProgram,
        step: f64,
        n_probes: usize,
        seed: u64,
        corrupt: bool,
    ) -> Result<FdReport> {
        let (_, mut g) = self.evaluate_with_gradient(prog)?;
        if corrupt {
            g.iter_mut().for_each(|v| *v = -*v);
        }
        let probes = select_probes(&g, n_probes, seed);
        let x = prog.trainable_controls();
        let f = |x: &[f64]| -> Result<f64> { Ok(self.evaluate(&prog.with_trainable_controls(x)?)?.loss) };
        finite_difference_check(f, &x, &g, step, &probes)
    }
}

/// A program of `segments` trainable segments with the given per-segment
/// duration and zero amplitude.
pub fn zero_program(segments: usize, segment_s: f64) -> Result<PulseProgram> {
    PulseProgram::new(
        (0..segments).map(|_| Element::Shaped(crate::prop::PulseSegment::new(0.0, 0.0, segment_s, true))).collect(),
    )
}
