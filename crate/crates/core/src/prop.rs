//! Unitary propagation of density matrices through pulse programs made of
//! piecewise-constant shaped segments, ideal hard pulses and free delays.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::linalg::{kron, matmul3, CMatrix, HermitianEigen};
use crate::spinsys::{free_hamiltonian, rf_hamiltonian, Operator, SpinSystem};

/// Density matrix (traceless deviation part) on the `2^n` spin space.
pub type DensityState = CMatrix;
/// Propagator `exp(−iHt)`.
pub type Unitary = CMatrix;

pub const DEFAULT_AMP_MAX_HZ: f64 = 5000.0;
/// Default optimisation template: 500 segments of 20 µs.
pub const DEFAULT_SEGMENTS: usize = 500;
pub const DEFAULT_SEGMENT_S: f64 = 20e-6;

/// Piecewise-constant RF segment, amplitudes in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub u_x: f64,
    pub u_y: f64,
    pub duration: f64,
    pub trainable: bool,
}

impl PulseSegment {
    pub fn new(u_x: f64, u_y: f64, duration: f64, trainable: bool) -> Self {
        Self { u_x, u_y, duration, trainable }
    }

    pub fn amplitude(&self) -> f64 {
        self.u_x.hypot(self.u_y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Element {
    Shaped(PulseSegment),
    /// Instantaneous rotation by `angle` (rad) about an in-plane axis at `phase` (rad).
    Hard { angle: f64, phase: f64 },
    Delay { duration: f64 },
}

impl Element {
    pub fn duration(&self) -> f64 {
        match self {
            Element::Shaped(s) => s.duration,
            Element::Hard { .. } => 0.0,
            Element::Delay { duration } => *duration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseProgram {
    elements: Vec<Element>,
}

impl PulseProgram {
    pub fn new(elements: Vec<Element>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Program("a program needs at least one element".into()));
        }
        for (k, e) in elements.iter().enumerate() {
            match e {
                Element::Shaped(s) => {
                    if !(s.duration.is_finite() && s.duration > 0.0) {
                        return Err(Error::Program(format!("element {k}: segment duration must be > 0")));
                    }
                    if !(s.u_x.is_finite() && s.u_y.is_finite()) {
                        return Err(Error::Program(format!("element {k}: non-finite amplitude")));
                    }
                }
                Element::Hard { angle, phase } => {
                    if !(angle.is_finite() && phase.is_finite()) {
                        return Err(Error::Program(format!("element {k}: non-finite hard pulse")));
                    }
                }
                Element::Delay { duration } => {
                    if !(duration.is_finite() && *duration >= 0.0) {
                        return Err(Error::Program(format!("element {k}: delay must be >= 0")));
                    }
                }
            }
        }
        Ok(Self { elements })
    }

    /// `segments` trainable zero-amplitude segments spanning `total_s`.
    pub fn shaped_template(segments: usize, total_s: f64) -> Result<Self> {
        if segments == 0 {
            return Err(Error::Program("segment count must be >= 1".into()));
        }
        let dt = total_s / segments as f64;
        Self::new(vec![Element::Shaped(PulseSegment::new(0.0, 0.0, dt, true)); segments])
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn total_duration(&self) -> f64 {
        self.elements.iter().map(Element::duration).sum()
    }

    pub fn n_trainable(&self) -> usize {
        self.elements.iter().filter(|e| matches!(e, Element::Shaped(s) if s.trainable)).count()
    }

    /// Trainable controls flattened as `[u_x0, u_y0, u_x1, u_y1, ...]`.
    pub fn trainable_controls(&self) -> Vec<f64> {
        self.trainable_segments().flat_map(|s| [s.u_x, s.u_y]).collect()
    }

    pub fn set_trainable_controls(&mut self, controls: &[f64]) -> Result<()> {
        if controls.len() != 2 * self.n_trainable() {
            return Err(Error::Dimension { expected: 2 * self.n_trainable(), found: controls.len() });
        }
        let mut it = controls.chunks_exact(2);
        for e in &mut self.elements {
            if let Element::Shaped(s) = e {
                if s.trainable {
                    let c = it.next().expect("length checked");
                    s.u_x = c[0];
                    s.u_y = c[1];
                }
            }
        }
        Ok(())
    }

    pub fn with_trainable_controls(&self, controls: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_trainable_controls(controls)?;
        Ok(p)
    }

    pub fn trainable_segments(&self) -> impl Iterator<Item = &PulseSegment> {
        self.elements.iter().filter_map(|e| match e {
            Element::Shaped(s) if s.trainable => Some(s),
            _ => None,
        })
    }

    pub fn max_amplitude(&self) -> f64 {
        self.elements
            .iter()
            .filter_map(|e| match e {
                Element::Shaped(s) => Some(s.amplitude()),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn check_amplitude(&self, amp_max: f64) -> Result<()> {
        let m = self.max_amplitude();
        if m > amp_max * (1.0 + 1e-12) {
            return Err(Error::Program(format!("amplitude {m:.3} Hz exceeds cap {amp_max} Hz")));
        }
        Ok(())
    }
}

/// `exp(−i(H0 + H_rf)t)` for one segment.
pub fn segment_propagator(h0: &Operator, seg: &PulseSegment) -> Result<Unitary> {
    Ok(segment_eigen(h0, seg.u_x, seg.u_y)?.propagator(seg.duration))
}

pub(crate) fn segment_eigen(h0: &Operator, u_x: f64, u_y: f64) -> Result<HermitianEigen> {
    let n = h0.nrows().trailing_zeros() as usize;
    let h = h0 + rf_hamiltonian(n, u_x, u_y);
    HermitianEigen::new(&h)
}

/// Free precession `exp(−i H0 t)`.
pub fn delay_propagator(h0: &Operator, duration: f64) -> Result<Unitary> {
    if !(duration >= 0.0) {
        return Err(Error::Program(format!("negative delay {duration}")));
    }
    if duration == 0.0 {
        return Ok(CMatrix::identity(h0.nrows(), h0.ncols()));
    }
    Ok(HermitianEigen::new(h0)?.propagator(duration))
}

/// `exp(−i·angle·(cos φ F_x + sin φ F_y))` as a tensor product of
/// single-spin rotations.
pub fn hard_pulse_rotation(n: usize, angle: f64, phase: f64) -> Unitary {
    let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
    // cos(θ/2)·1 − i sin(θ/2)(cos φ σx + sin φ σy)
    let off = Complex64::new(0.0, -s) * Complex64::from_polar(1.0, -phase);
    let r = CMatrix::from_row_slice(
        2,
        2,
        &[Complex64::new(c, 0.0), off, -off.conj(), Complex64::new(c, 0.0)],
    );
    let mut acc = CMatrix::identity(1, 1);
    for _ in 0..n {
        acc = kron(&acc, &r);
    }
    acc
}

/// Applies an ideal instantaneous hard pulse.
pub fn hard_pulse(rho: &DensityState, angle: f64, phase: f64, n: usize) -> DensityState {
    let r = hard_pulse_rotation(n, angle, phase);
    conjugate(&r, rho)
}

/// `segments` trainable segments of `segment_s` each with both control
/// components drawn uniformly from `[-amp_hz, amp_hz)`.
pub fn random_program(segments: usize, segment_s: f64, amp_hz: f64, seed: u64) -> Result<PulseProgram> {
    use rand::{Rng, SeedableRng};
    if !(amp_hz.is_finite() && amp_hz > 0.0) {
        return Err(Error::Program(format!("amplitude must be > 0, got {amp_hz}")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    PulseProgram::new(
        (0..segments)
            .map(|_| {
                let ux = rng.gen_range(-amp_hz..amp_hz);
                let uy = rng.gen_range(-amp_hz..amp_hz);
                Element::Shaped(PulseSegment::new(ux, uy, segment_s, true))
            })
            .collect(),
    )
}

/// `U ρ U†`
pub fn conjugate(u: &Unitary, rho: &DensityState) -> DensityState {
    matmul3(u, rho, &u.adjoint())
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub final_state: DensityState,
    /// State after each element, when requested.
    pub trajectory: Option<Vec<DensityState>>,
}

/// Propagates `rho0` through every element of `prog`.
pub fn run_program(
    sys: &SpinSystem,
    prog: &PulseProgram,
    rho0: &DensityState,
    keep_trajectory: bool,
) -> Result<Propagation> {
    let dim = sys.dim();
    if rho0.nrows() != dim || rho0.ncols() != dim {
        return Err(Error::Dimension { expected: dim, found: rho0.nrows() });
    }
    let n = sys.n_spins();
    let h0 = free_hamiltonian(sys);
    let mut h0_eig: Option<HermitianEigen> = None;
    let mut rho = rho0.clone();
    let mut trajectory = keep_trajectory.then(|| Vec::with_capacity(prog.elements().len()));
    for e in prog.elements() {
        rho = match e {
            Element::Shaped(s) => conjugate(&segment_propagator(&h0, s)?, &rho),
            Element::Hard { angle, phase } => hard_pulse(&rho, *angle, *phase, n),
            Element::Delay { duration } if *duration == 0.0 => rho,
            Element::Delay { duration } => {
                if h0_eig.is_none() {
                    h0_eig = Some(HermitianEigen::new(&h0)?);
                }
                let u = h0_eig.as_ref().expect("initialized").propagator(*duration);
                conjugate(&u, &rho)
            }
        };
        if let Some(t) = trajectory.as_mut() {
            t.push(rho.clone());
        }
    }
    Ok(Propagation { final_state: rho, trajectory })
}

// ---------------------------------------------------------------------------
// Pulse program files.
//
// [[elements]]
// type = "shaped"   # u_x_hz, u_y_hz, duration_s, trainable
// type = "hard"     # angle_deg, phase_deg
// type = "delay"    # duration_s

fn get_num(t: &Table, key: &str, ctx: &str) -> Result<f64> {
    match t.get(key) {
        Some(v) => crate::spinsys::load_number(v, &format!("{ctx}.{key}")),
        None => Err(Error::schema(format!("{ctx}.{key}"), "missing")),
    }
}

impl PulseProgram {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::schema("document", e.message().to_string()))?;
        let items = match doc.get("elements") {
            Some(Value::Array(a)) => a,
            _ => return Err(Error::schema("elements", "expected an array of element tables")),
        };
        let mut elements = Vec::with_capacity(items.len());
        for (k, item) in items.iter().enumerate() {
            let ctx = format!("elements[{k}]");
            let t = item.as_table().ok_or_else(|| Error::schema(&ctx, "expected a table"))?;
            let kind = t.get("type").and_then(Value::as_str).unwrap_or("");
            let e = match kind {
                "shaped" => {
                    let trainable = match t.get("trainable") {
                        None => true,
                        Some(Value::Boolean(b)) => *b,
                        Some(_) => return Err(Error::schema(format!("{ctx}.trainable"), "expected a boolean")),
                    };
                    Element::Shaped(PulseSegment::new(
                        get_num(t, "u_x_hz", &ctx)?,
                        get_num(t, "u_y_hz", &ctx)?,
                        get_num(t, "duration_s", &ctx)?,
                        trainable,
                    ))
                }
                "hard" => Element::Hard {
                    angle: get_num(t, "angle_deg", &ctx)?.to_radians(),
                    phase: t
                        .get("phase_deg")
                        .map(|v| crate::spinsys::load_number(v, &format!("{ctx}.phase_deg")))
                        .transpose()?
                        .unwrap_or(0.0)
                        .to_radians(),
                },
                "delay" => Element::Delay { duration: get_num(t, "duration_s", &ctx)? },
                other => {
                    return Err(Error::schema(format!("{ctx}.type"), format!("unknown element type `{other}`")))
                }
            };
            elements.push(e);
        }
        Self::new(elements)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        for e in &self.elements {
            out.push_str("[[elements]]\n");
            match e {
                Element::Shaped(s) => {
                    let _ = writeln!(
                        out,
                        "type = \"shaped\"\nu_x_hz = {:?}\nu_y_hz = {:?}\nduration_s = {:?}\ntrainable = {}",
                        s.u_x, s.u_y, s.duration, s.trainable
                    );
                }
                Element::Hard { angle, phase } => {
                    let _ = writeln!(
                        out,
                        "type = \"hard\"\nangle_deg = {:?}\nphase_deg = {:?}",
                        angle.to_degrees(),
                        phase.to_degrees()
                    );
                }
                Element::Delay { duration } => {
                    let _ = writeln!(out, "type = \"delay\"\nduration_s = {duration:?}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Vendor-neutral shape table: one row per shaped segment or delay with
    /// `duration_us,amplitude_hz,phase_deg`. Hard pulses have no finite
    /// duration and are rejected.
    pub fn to_shape_table(&self) -> Result<String> {
        let mut out = String::from("duration_us,amplitude_hz,phase_deg\n");
        for (k, e) in self.elements.iter().enumerate() {
            let (d, a, p) = match e {
                Element::Shaped(s) => {
                    let mut phase = s.u_y.atan2(s.u_x).to_degrees();
                    if phase < 0.0 {
                        phase += 360.0;
                    }
                    (s.duration, s.amplitude(), phase)
                }
                Element::Delay { duration } => (*duration, 0.0, 0.0),
                Element::Hard { .. } => {
                    return Err(Error::Program(format!(
                        "element {k}: hard pulses cannot be written to a shape table"
                    )))
                }
            };
            let _ = writeln!(out, "{},{},{}", d * 1e6, a, p);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::linalg::{matmul, max_abs_diff, unitarity_error};
    use crate::spinsys::{equilibrium_state, single_spin_operator, total_operator, Axis, OperatorExpr};

    fn one_spin() -> SpinSystem {
        SpinSystem::new("h", vec![1.0], &[], 100.0, Some(1.0)).unwrap()
    }

    fn weak_pair() -> SpinSystem {
        SpinSystem::new("ab", vec![1.0, 1.0], &[], 100.0, Some(1.0)).unwrap()
    }

    #[test]
    fn ninety_degree_nutation() {
        let sys = one_spin();
        let h0 = free_hamiltonian(&sys);
        let u = segment_propagator(&h0, &PulseSegment::new(250.0, 0.0, 1e-3, true)).unwrap();
        let iz = single_spin_operator(1, 1, Axis::Z).unwrap();
        let iy = single_spin_operator(1, 1, Axis::Y).unwrap();
        assert!(max_abs_diff(&conjugate(&u, &iz), &(-iy)) < 1e-10);
    }

    #[test]
    fn tiny_segment_is_identity() {
        let sys = SpinSystem::new("c", vec![2.66, 2.53], &[(1, 2, -17.23)], 500.0, None).unwrap();
        let h0 = free_hamiltonian(&sys);
        let u = segment_propagator(&h0, &PulseSegment::new(50.0, -20.0, 1e-15, true)).unwrap();
        assert!(max_abs_diff(&u, &CMatrix::identity(4, 4)) < 1e-12);
    }

    #[test]
    fn semigroup() {
        let sys = SpinSystem::new("c", vec![2.66, 2.53], &[(1, 2, -17.23)], 500.0, None).unwrap();
        let h0 = free_hamiltonian(&sys);
        let a = segment_propagator(&h0, &PulseSegment::new(120.0, 40.0, 3e-4, true)).unwrap();
        let b = segment_propagator(&h0, &PulseSegment::new(120.0, 40.0, 7e-4, true)).unwrap();
        let ab = segment_propagator(&h0, &PulseSegment::new(120.0, 40.0, 1e-3, true)).unwrap();
        assert!(max_abs_diff(&matmul(&a, &b), &ab) < 1e-10);
        assert!(unitarity_error(&ab) < 1e-10);
    }

    #[test]
    fn j_evolution_antiphase() {
        // Weak coupling, Ω = 0, J = 10 Hz: I1x → cos(πJt) I1x + sin(πJt) 2 I1y I2z.
        let h0 = OperatorExpr::parse("I1z.I2z").unwrap().to_operator(2).unwrap()
            * Complex64::new(std::f64::consts::TAU * 10.0, 0.0);
        let i1x = single_spin_operator(2, 1, Axis::X).unwrap();
        let anti = OperatorExpr::parse("2*I1y.I2z").unwrap().to_operator(2).unwrap();
        let u = delay_propagator(&h0, 0.05).unwrap();
        assert!(max_abs_diff(&conjugate(&u, &i1x), &anti) < 1e-9);
        let u = delay_propagator(&h0, 0.1).unwrap();
        assert!(max_abs_diff(&conjugate(&u, &i1x), &(-&i1x)) < 1e-9);
        assert_eq!(delay_propagator(&h0, 0.0).unwrap(), CMatrix::identity(4, 4));
        assert!(delay_propagator(&h0, -1.0).is_err());
    }

    #[test]
    fn hard_pulses() {
        let n = 3;
        let fz = equilibrium_state(n);
        let fy = total_operator(n, Axis::Y);
        assert!(max_abs_diff(&hard_pulse(&fz, PI / 2.0, 0.0, n), &(-&fy)) < 1e-12);
        let i1y = single_spin_operator(n, 1, Axis::Y).unwrap();
        assert!(max_abs_diff(&hard_pulse(&i1y, PI, 0.0, n), &(-&i1y)) < 1e-12);
        for phase in [0.0, 0.3, 2.0] {
            let r = hard_pulse(&fz, 2.0 * PI, phase, n);
            assert!(max_abs_diff(&r, &fz) < 1e-10);
        }
        // Phase π/2 rotates about y: Iz → Ix.
        let fx = total_operator(n, Axis::X);
        assert!(max_abs_diff(&hard_pulse(&fz, PI / 2.0, PI / 2.0, n), &fx) < 1e-12);
    }

    #[test]
    fn hard_pulse_matches_generator_exponential() {
        let n = 2;
        let (angle, phase): (f64, f64) = (1.1, 0.7);
        let g = total_operator(n, Axis::X) * Complex64::new(phase.cos(), 0.0)
            + total_operator(n, Axis::Y) * Complex64::new(phase.sin(), 0.0);
        let expect = HermitianEigen::new(&g).unwrap().propagator(angle);
        assert!(max_abs_diff(&hard_pulse_rotation(n, angle, phase), &expect) < 1e-12);
    }

    #[test]
    fn run_program_basics() {
        let sys = SpinSystem::new("c", vec![2.66, 2.53], &[(1, 2, -17.23)], 500.0, None).unwrap();
        let rho0 = equilibrium_state(2);
        let p = PulseProgram::new(vec![Element::Delay { duration: 0.0 }]).unwrap();
        assert_eq!(run_program(&sys, &p, &rho0, false).unwrap().final_state, rho0);
        let p = PulseProgram::new(vec![Element::Hard { angle: PI / 2.0, phase: 0.0 }]).unwrap();
        let out = run_program(&sys, &p, &rho0, true).unwrap();
        assert!(max_abs_diff(&out.final_state, &(-total_operator(2, Axis::Y))) < 1e-12);
        assert_eq!(out.trajectory.unwrap().len(), 1);
        let bad = CMatrix::zeros(8, 8);
        assert!(matches!(run_program(&sys, &p, &bad, false), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_controls_equal_delay() {
        let sys = SpinSystem::new("c", vec![2.66, 2.53], &[(1, 2, -17.23)], 500.0, None).unwrap();
        let prog = PulseProgram::shaped_template(10, 2e-3).unwrap();
        let rho0 = single_spin_operator(2, 1, Axis::X).unwrap();
        let a = run_program(&sys, &prog, &rho0, false).unwrap().final_state;
        let u = delay_propagator(&free_hamiltonian(&sys), 2e-3).unwrap();
        assert!(max_abs_diff(&a, &conjugate(&u, &rho0)) < 1e-12);
        let _ = weak_pair();
    }

    #[test]
    fn program_validation() {
        assert!(PulseProgram::new(vec![]).is_err());
        assert!(PulseProgram::new(vec![Element::Shaped(PulseSegment::new(0.0, 0.0, 0.0, true))]).is_err());
        assert!(PulseProgram::new(vec![Element::Delay { duration: -1e-3 }]).is_err());
        let mut p = PulseProgram::shaped_template(3, 3e-3).unwrap();
        assert!(p.set_trainable_controls(&[1.0; 5]).is_err());
        p.set_trainable_controls(&[3000.0, 4000.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(p.check_amplitude(5000.0).is_ok());
        assert!(p.check_amplitude(4999.0).is_err());
    }

    #[test]
    fn program_file_roundtrip() {
        let p = PulseProgram::new(vec![
            Element::Shaped(PulseSegment::new(12.5, -3.25, 2e-5, true)),
            Element::Hard { angle: PI, phase: PI / 2.0 },
            Element::Delay { duration: 0.017 },
            Element::Shaped(PulseSegment::new(0.1, 0.2, 1e-4, false)),
        ])
        .unwrap();
        let q = PulseProgram::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(p.elements().len(), q.elements().len());
        assert_eq!(p.elements()[0], q.elements()[0]);
        assert_eq!(p.elements()[3], q.elements()[3]);
        match q.elements()[1] {
            Element::Hard { angle, phase } => {
                assert!((angle - PI).abs() < 1e-12 && (phase - PI / 2.0).abs() < 1e-12)
            }
            _ => panic!("expected hard pulse"),
        }
        let bad = "[[elements]]\ntype = \"shaped\"\nu_x_hz = 1.0\nduration_s = 1e-3\n";
        assert!(PulseProgram::from_toml_str(bad).unwrap_err().to_string().contains("u_y_hz"));
    }

    #[test]
    fn shape_table() {
        let p = PulseProgram::new(vec![
            Element::Shaped(PulseSegment::new(0.0, 100.0, 2e-5, true)),
            Element::Delay { duration: 1e-3 },
        ])
        .unwrap();
        let t = p.to_shape_table().unwrap();
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines[0], "duration_us,amplitude_hz,phase_deg");
        let row: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert!((row[0] - 20.0).abs() < 1e-9 && (row[1] - 100.0).abs() < 1e-12 && (row[2] - 90.0).abs() < 1e-12);
        let hard = PulseProgram::new(vec![Element::Hard { angle: 1.0, phase: 0.0 }]).unwrap();
        assert!(hard.to_shape_table().is_err());
    }
}
