//! Exact gradients of scalar losses of the final density matrix with respect
//! to the trainable segment amplitudes.
//!
//! Each segment propagator `U = exp(−iHt)` is differentiated in the
//! eigenbasis of `H` (Daleckii–Krein), and the loss adjoint is pulled back
//! along the chain `A_{k−1} = U_k† A_k U_k`. A loss enters through its
//! Hermitian adjoint `A = ∂L/∂ρ`, meaning `dL = Tr(A dρ)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{hermiticity_error, matmul, matmul_into, CMatrix, HermitianEigen, ZERO};
use crate::par::par_map;
use crate::prop::{conjugate, hard_pulse_rotation, DensityState, Element, PulseProgram, Unitary};
use crate::spinsys::{free_hamiltonian, rf_hamiltonian, spin_up, Operator, SpinSystem};

/// Pairs closer than this fraction of the spectral radius use the diagonal
/// (coincident-eigenvalue) form of the derivative.
pub const DEGENERACY_REL_TOL: f64 = 1e-9;

/// `Γ_ab` of the divided-difference kernel for `exp(−iΛt)`, row-major.
///
/// Off-degenerate pairs are written as `−it·e^{−iλ̄t}·sinc(δt/2)`, which
/// equals `(e^{−iλ_a t} − e^{−iλ_b t})/(λ_a − λ_b)` without the cancellation.
pub(crate) fn gamma(values: &[f64], t: f64) -> Vec<Complex64> {
    let n = values.len();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = DEGENERACY_REL_TOL * scale;
    let mut out = Vec::with_capacity(n * n);
    for &la in values {
        for &lb in values {
            let d = la - lb;
            let g = if d.abs() <= tol {
                Complex64::new(0.0, -t) * Complex64::from_polar(1.0, -la * t)
            } else {
                let x = 0.5 * d * t;
                let mean = 0.5 * (la + lb);
                Complex64::new(0.0, -t * x.sin() / x) * Complex64::from_polar(1.0, -mean * t)
            };
            out.push(g);
        }
    }
    out
}

/// Exact derivative of `exp(−i(H + εD)t)` with respect to `ε` at `ε = 0`.
pub fn propagator_directional_derivative(h: &Operator, t: f64, d: &Operator) -> Result<Unitary> {
    if d.nrows() != h.nrows() {
        return Err(Error::Dimension { expected: h.nrows(), found: d.nrows() });
    }
    let scale = crate::linalg::max_abs(d).max(1.0);
    let err = hermiticity_error(d);
    if err > HermitianEigen::HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian(err));
    }
    let eig = HermitianEigen::new(h)?;
    let dt = eig.to_eigenbasis(d);
    let g = gamma(&eig.values, t);
    let n = eig.dim();
    let du = CMatrix::from_fn(n, n, |a, b| dt[(a, b)] * g[a * n + b]);
    Ok(eig.from_eigenbasis(&du))
}

/// `F₊ V` using the sparsity of the total raising operator.
fn raise_columns(n_spins: usize, v: &CMatrix) -> CMatrix {
    let dim = v.nrows();
    let mut out = CMatrix::from_element(dim, dim, ZERO);
    for t in 0..dim {
        for spin in 0..n_spins {
            let bit = 1usize << (n_spins - 1 - spin);
            if spin_up(t, n_spins, spin) {
                let s = t | bit;
                for c in 0..dim {
                    out[(t, c)] += v[(s, c)];
                }
            }
        }
    }
    out
}

enum Step {
    Segment {
        eig: HermitianEigen,
        duration: f64,
        /// Index among trainable segments, if trainable.
        trainable: Option<usize>,
        /// State entering the segment, in the segment eigenbasis.
        rho_in: CMatrix,
    },
    Fixed(Unitary),
}

/// Forward pass over a pulse program with everything the reverse pass needs.
pub struct ChainWorkspace {
    n_spins: usize,
    b1_scale: f64,
    n_trainable: usize,
    steps: Vec<Step>,
    final_state: DensityState,
}

impl ChainWorkspace {
    /// Propagates `rho0` through `prog`, with trainable amplitudes multiplied
    /// by `b1_scale`.
    pub fn forward(sys: &SpinSystem, prog: &PulseProgram, rho0: &DensityState, b1_scale: f64) -> Result<Self> {
        let dim = sys.dim();
        if rho0.nrows() != dim || rho0.ncols() != dim {
            return Err(Error::Dimension { expected: dim, found: rho0.nrows() });
        }
        let n = sys.n_spins();
        let h0 = free_hamiltonian(sys);
        let mut h0_eig: Option<HermitianEigen> = None;
        let mut steps = Vec::with_capacity(prog.elements().len());
        let mut rho = rho0.clone();
        let mut tmp = CMatrix::from_element(dim, dim, ZERO);
        let mut k_train = 0;
        for e in prog.elements() {
            match e {
                Element::Shaped(seg) => {
                    let (s, trainable) = if seg.trainable {
                        k_train += 1;
                        (b1_scale, Some(k_train - 1))
                    } else {
                        (1.0, None)
                    };
                    let eig = HermitianEigen::new(&(&h0 + rf_hamiltonian(n, s * seg.u_x, s * seg.u_y)))?;
                    let v = &eig.vectors;
                    // ρ̃ = V†ρV, then ρ' = V Φ ρ̃ Φ* V†.
                    let vh = v.adjoint();
                    matmul_into(&vh, &rho, &mut tmp);
                    let rho_in = matmul(&tmp, v);
                    let ph = eig.phases(seg.duration);
                    let evolved = crate::linalg::conjugate_by_diagonal(&rho_in, &ph);
                    matmul_into(v, &evolved, &mut tmp);
                    matmul_into(&tmp, &vh, &mut rho);
                    steps.push(Step::Segment { eig, duration: seg.duration, trainable, rho_in });
                }
                Element::Hard { angle, phase } => {
                    let u = hard_pulse_rotation(n, *angle, *phase);
                    rho = conjugate(&u, &rho);
                    steps.push(Step::Fixed(u));
                }
                Element::Delay { duration } => {
                    if *duration == 0.0 {
                        continue;
                    }
                    if h0_eig.is_none() {
                        h0_eig = Some(HermitianEigen::new(&h0)?);
                    }
                    let u = h0_eig.as_ref().expect("initialized").propagator(*duration);
                    rho = conjugate(&u, &rho);
                    steps.push(Step::Fixed(u));
                }
            }
        }
        Ok(Self { n_spins: n, b1_scale, n_trainable: k_train, steps, final_state: rho })
    }

    pub fn final_state(&self) -> &DensityState {
        &self.final_state
    }

    pub fn n_trainable(&self) -> usize {
        self.n_trainable
    }

    /// Gradient `[∂L/∂u_x[0], ∂L/∂u_y[0], …]` for a loss whose adjoint at the
    /// final state is `adjoint`. Only the Hermitian part of `adjoint` is used.
    pub fn backward(&self, adjoint: &CMatrix) -> Result<Vec<f64>> {
        let dim = self.final_state.nrows();
        if adjoint.nrows() != dim {
            return Err(Error::Dimension { expected: dim, found: adjoint.nrows() });
        }
        let mut grad = vec![0.0; 2 * self.n_trainable];
        let mut a = crate::linalg::hermitian_part(adjoint);
        let mut tmp = CMatrix::from_element(dim, dim, ZERO);
        let mut a_eig = CMatrix::from_element(dim, dim, ZERO);
        for step in self.steps.iter().rev() {
            match step {
                Step::Fixed(u) => {
                    // A ← U† A U
                    matmul_into(&u.adjoint(), &a, &mut tmp);
                    matmul_into(&tmp, u, &mut a);
                }
                Step::Segment { eig, duration, trainable, rho_in } => {
                    let v = &eig.vectors;
                    let vh = v.adjoint();
                    matmul_into(&vh, &a, &mut tmp);
                    matmul_into(&tmp, v, &mut a_eig);
                    let ph = eig.phases(*duration);
                    if let Some(k) = trainable {
                        // M = ρ̃ · diag(e^{+iλt}) · Ã
                        let mut scaled = rho_in.clone();
                        for (j, p) in ph.iter().enumerate() {
                            let pc = p.conj();
                            for z in scaled.column_mut(j).iter_mut() {
                                *z *= pc;
                            }
                        }
                        let m = matmul(&scaled, &a_eig);
                        let dp = matmul(&vh, &raise_columns(self.n_spins, v));
                        let g = gamma(&eig.values, *duration);
                        let (mut gx, mut gy) = (0.0, 0.0);
                        for ai in 0..dim {
                            for bi in 0..dim {
                                let s = m[(bi, ai)] * g[ai * dim + bi];
                                let p_ab = dp[(ai, bi)];
                                let p_ba = dp[(bi, ai)].conj();
                                // D̃x = π(D̃₊ + D̃₊†), D̃y = −iπ(D̃₊ − D̃₊†)
                                gx += (s * (p_ab + p_ba)).re;
                                gy += (s * Complex64::new(0.0, -1.0) * (p_ab - p_ba)).re;
                            }
                        }
                        let c = 2.0 * PI * self.b1_scale;
                        grad[2 * k] = c * gx;
                        grad[2 * k + 1] = c * gy;
                    }
                    // A ← V Φ* Ã Φ V†
                    let conj_ph: Vec<Complex64> = ph.iter().map(|p| p.conj()).collect();
                    let back = crate::linalg::conjugate_by_diagonal(&a_eig, &conj_ph);
                    matmul_into(v, &back, &mut tmp);
                    matmul_into(&tmp, &vh, &mut a);
                }
            }
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        Ok(grad)
    }
}

/// Loss and gradient for a loss of the final state. `loss_adjoint` returns
/// `(L(ρ), ∂L/∂ρ)`.
pub fn loss_gradient<F>(
    sys: &SpinSystem,
    prog: &PulseProgram,
    rho0: &DensityState,
    loss_adjoint: F,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&DensityState) -> Result<(f64, CMatrix)>,
{
    let ws = ChainWorkspace::forward(sys, prog, rho0, 1.0)?;
    let (loss, adj) = loss_adjoint(ws.final_state())?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { task: 0, kind: "loss".into() });
    }
    Ok((loss, ws.backward(&adj)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdProbe {
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub step: f64,
    pub probes: Vec<FdProbe>,
    pub max_rel_error: f64,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

/// Up to `n_probes` coordinates chosen uniformly among those whose gradient
/// magnitude is at least `1e-10` of the gradient norm, in ascending order.
pub fn select_probes(grad: &[f64], n_probes: usize, seed: u64) -> Vec<usize> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let eligible: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() >= 1e-10 * norm && grad[i] != 0.0).collect();
    let take = n_probes.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, eligible.len(), take).into_iter().map(|i| eligible[i]).collect();
    picked.sort_unstable();
    picked
}

/// Compares `analytic` against central differences of `f` at `x` on the
/// `probes` coordinates.
pub fn finite_difference_check<F>(f: F, x: &[f64], analytic: &[f64], step: f64, probes: &[usize]) -> Result<FdReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    if analytic.len() != x.len() {
        return Err(Error::Dimension { expected: x.len(), found: analytic.len() });
    }
    let results = par_map(probes, |&i| -> Result<FdProbe> {
        let mut xp = x.to_vec();
        xp[i] = x[i] + step;
        let fp = f(&xp)?;
        xp[i] = x[i] - step;
        let fm = f(&xp)?;
        let numeric = (fp - fm) / (2.0 * step);
        Ok(FdProbe { coordinate: i, analytic: analytic[i], numeric, rel_error: relative_error(analytic[i], numeric) })
    });
    let probes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let max_rel_error = probes.iter().fold(0.0f64, |m, p| m.max(p.rel_error));
    Ok(FdReport { step, probes, max_rel_error })
}
