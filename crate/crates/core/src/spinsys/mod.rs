//! Spin-system model: chemical shifts, scalar couplings, Hamiltonians and
//! product-operator algebra for up to eight coupled spin-1/2 nuclei.
//!
//! Basis convention: Zeeman product states with spin 1 as the most
//! significant tensor factor, so `I_{nz}` of the last spin alternates
//! `+½, −½` along the diagonal. Bit `n − i` of a state index is 0 when spin
//! `i` is up (`m = +½`).

mod load;
mod operators;

pub(crate) use load::number as load_number;

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermiticity_error, CMatrix, ZERO};

pub use operators::{
    basis_labels, equilibrium_state, product_operator, single_spin_operator, total_operator, Axis,
    Cartesian, OperatorExpr, ProductOperatorLabel,
};

/// Dense Hermitian operator on the `2^n` dimensional spin space.
pub type Operator = CMatrix;

/// Largest supported spin count (Hilbert dimension 256).
pub const MAX_SPINS: usize = 8;

/// Proton gyromagnetic ratio used for `field_tesla` documents, MHz/T.
pub const PROTON_MHZ_PER_TESLA: f64 = 42.577;

/// Coupled spin-1/2 network: shifts in ppm, couplings in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub name: String,
    shifts_ppm: Vec<f64>,
    j_hz: Vec<Vec<f64>>,
    spectrometer_mhz: f64,
    carrier_ppm: f64,
}

impl SpinSystem {
    /// Builds a validated system. `couplings` use 1-based spin indices; each
    /// unordered pair may appear in either order, and if it appears in both
    /// the values must agree. Unlisted pairs are uncoupled. Without an
    /// explicit carrier the midpoint of the shift range is used.
    pub fn new(
        name: impl Into<String>,
        shifts_ppm: Vec<f64>,
        couplings: &[(usize, usize, f64)],
        spectrometer_mhz: f64,
        carrier_ppm: Option<f64>,
    ) -> Result<Self> {
        let n = shifts_ppm.len();
        if n == 0 {
            return Err(Error::schema("shifts_ppm", "at least one spin is required"));
        }
        if n > MAX_SPINS {
            return Err(Error::schema(
                "shifts_ppm",
                format!("{n} spins exceeds the maximum of {MAX_SPINS}"),
            ));
        }
        if let Some(k) = shifts_ppm.iter().position(|v| !v.is_finite()) {
            return Err(Error::schema("shifts_ppm", format!("entry {} is not finite", k + 1)));
        }
        if !(spectrometer_mhz.is_finite() && spectrometer_mhz > 0.0) {
            return Err(Error::schema(
                "spectrometer_mhz",
                format!("must be a positive frequency, got {spectrometer_mhz}"),
            ));
        }
        let mut j = vec![vec![0.0; n]; n];
        let mut seen = vec![vec![false; n]; n];
        for &(a, b, v) in couplings {
            for idx in [a, b] {
                if idx == 0 || idx > n {
                    return Err(Error::schema(
                        "j_hz",
                        format!("spin index {idx} out of range 1..={n}"),
                    ));
                }
            }
            if a == b {
                return Err(Error::schema("j_hz", format!("self-coupling J{a}{a} is not allowed")));
            }
            if !v.is_finite() {
                return Err(Error::schema("j_hz", format!("J{a}{b} is not finite")));
            }
            let (i, k) = (a - 1, b - 1);
            if seen[i][k] && j[i][k] != v {
                return Err(Error::schema("j_hz", format!("J{a}{b} listed twice with different values")));
            }
            if seen[k][i] && j[k][i] != v {
                return Err(Error::AsymmetricCoupling { i: b, j: a, a: j[k][i], b: v });
            }
            seen[i][k] = true;
            j[i][k] = v;
            j[k][i] = v;
        }
        let carrier_ppm = match carrier_ppm {
            Some(c) if c.is_finite() => c,
            Some(c) => return Err(Error::schema("carrier_ppm", format!("not finite: {c}"))),
            None => {
                let lo = shifts_ppm.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = shifts_ppm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                0.5 * (lo + hi)
            }
        };
        Ok(Self { name: name.into(), shifts_ppm, j_hz: j, spectrometer_mhz, carrier_ppm })
    }

    pub fn n_spins(&self) -> usize {
        self.shifts_ppm.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins()
    }

    pub fn shifts_ppm(&self) -> &[f64] {
        &self.shifts_ppm
    }

    /// Coupling in Hz between 1-based spins `i` and `j`.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.j_hz[i - 1][j - 1]
    }

    pub fn j_matrix(&self) -> &[Vec<f64>] {
        &self.j_hz
    }

    pub fn spectrometer_mhz(&self) -> f64 {
        self.spectrometer_mhz
    }

    pub fn carrier_ppm(&self) -> f64 {
        self.carrier_ppm
    }

    /// Rotating-frame offsets `(δ_i − carrier) · ν₀` in Hz.
    pub fn offsets_hz(&self) -> Vec<f64> {
        self.shifts_ppm.iter().map(|d| (d - self.carrier_ppm) * self.spectrometer_mhz).collect()
    }

    pub fn with_carrier(&self, carrier_ppm: f64) -> Self {
        Self { carrier_ppm, ..self.clone() }
    }

    /// Moves the carrier by `offset_hz`, which shifts every rotating-frame
    /// offset by `−offset_hz`.
    pub fn with_carrier_offset_hz(&self, offset_hz: f64) -> Self {
        self.with_carrier(self.carrier_ppm + offset_hz / self.spectrometer_mhz)
    }

    /// Relabels spins: new spin `k` is old spin `perm[k]` (0-based).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_spins();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(Error::schema("perm", "not a permutation of the spin indices"));
        }
        let shifts = perm.iter().map(|&p| self.shifts_ppm[p]).collect();
        let j = (0..n).map(|a| (0..n).map(|b| self.j_hz[perm[a]][perm[b]]).collect()).collect();
        Ok(Self { shifts_ppm: shifts, j_hz: j, ..self.clone() })
    }
}

#[inline]
pub(crate) fn spin_up(state: usize, n: usize, spin: usize) -> bool {
    (state >> (n - 1 - spin)) & 1 == 0
}

#[inline]
pub(crate) fn m_value(state: usize, n: usize, spin: usize) -> f64 {
    if spin_up(state, n, spin) {
        0.5
    } else {
        -0.5
    }
}

/// Isotropic free Hamiltonian in rad/s:
/// `Σ 2πΩ_i I_iz + Σ_{i<j} 2πJ_ij I_i·I_j`.
pub fn free_hamiltonian(sys: &SpinSystem) -> Operator {
    let n = sys.n_spins();
    let dim = sys.dim();
    let offsets = sys.offsets_hz();
    let mut h = CMatrix::zeros(dim, dim);
    for s in 0..dim {
        let mut diag = 0.0;
        for i in 0..n {
            diag += offsets[i] * m_value(s, n, i);
            for k in (i + 1)..n {
                diag += sys.j_hz[i][k] * m_value(s, n, i) * m_value(s, n, k);
            }
        }
        h[(s, s)] = Complex64::new(TAU * diag, 0.0);
        // Flip-flop part ½J(I+I− + I−I+) connects states differing by an
        // exchange of opposite spins i and k.
        for i in 0..n {
            for k in (i + 1)..n {
                let jik = sys.j_hz[i][k];
                if jik == 0.0 || spin_up(s, n, i) == spin_up(s, n, k) {
                    continue;
                }
                let t = s ^ (1 << (n - 1 - i)) ^ (1 << (n - 1 - k));
                h[(t, s)] += Complex64::new(TAU * 0.5 * jik, 0.0);
            }
        }
    }
    debug_assert!(hermiticity_error(&h) < 1e-12);
    h
}

/// RF Hamiltonian `2π(u_x F_x + u_y F_y)` in rad/s for amplitudes in Hz.
pub fn rf_hamiltonian(n: usize, u_x: f64, u_y: f64) -> Operator {
    let dim = 1usize << n;
    let mut h = CMatrix::from_element(dim, dim, ZERO);
    // F_x = (F+ + F−)/2, F_y = (F+ − F−)/(2i); <up|I+|down> = 1.
    let plus = Complex64::new(TAU * 0.5 * u_x, -TAU * 0.5 * u_y);
    for s in 0..dim {
        for i in 0..n {
            if !spin_up(s, n, i) {
                let t = s ^ (1 << (n - 1 - i));
                h[(t, s)] += plus;
                h[(s, t)] += plus.conj();
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, matmul, max_abs_diff};

    fn citrate() -> SpinSystem {
        SpinSystem::new("citrate", vec![2.66, 2.53], &[(1, 2, -17.23)], 500.0, Some(2.595)).unwrap()
    }

    #[test]
    fn single_spin_on_carrier_has_zero_hamiltonian() {
        let sys = SpinSystem::new("s", vec![3.0], &[], 100.0, Some(3.0)).unwrap();
        assert!(crate::linalg::max_abs(&free_hamiltonian(&sys)) == 0.0);
    }

    #[test]
    fn citrate_offsets() {
        let off = citrate().offsets_hz();
        assert!((off[0] - 32.5).abs() < 1e-9);
        assert!((off[1] + 32.5).abs() < 1e-9);
    }

    #[test]
    fn hamiltonian_matches_kronecker_construction() {
        let sys = SpinSystem::new(
            "t",
            vec![1.0, 1.3, 2.0],
            &[(1, 2, 7.0), (1, 3, -3.0), (2, 3, 12.5)],
            400.0,
            Some(1.4),
        )
        .unwrap();
        let n = 3;
        let mut expect = CMatrix::zeros(8, 8);
        let off = sys.offsets_hz();
        for i in 1..=n {
            expect += single_spin_operator(n, i, Axis::Z).unwrap() * Complex64::new(TAU * off[i - 1], 0.0);
            for k in (i + 1)..=n {
                for ax in [Axis::X, Axis::Y, Axis::Z] {
                    let a = single_spin_operator(n, i, ax).unwrap();
                    let b = single_spin_operator(n, k, ax).unwrap();
                    expect += matmul(&a, &b) * Complex64::new(TAU * sys.coupling(i, k), 0.0);
                }
            }
        }
        assert!(max_abs_diff(&free_hamiltonian(&sys), &expect) < 1e-10);
    }

    #[test]
    fn rf_hamiltonian_explicit() {
        let h = rf_hamiltonian(2, 100.0, 0.0);
        let fx = single_spin_operator(2, 1, Axis::X).unwrap() + single_spin_operator(2, 2, Axis::X).unwrap();
        assert!(max_abs_diff(&h, &(fx * Complex64::new(TAU * 100.0, 0.0))) < 1e-12);
        let hy = rf_hamiltonian(3, 0.0, 40.0);
        let fy = total_operator(3, Axis::Y);
        assert!(max_abs_diff(&hy, &(fy * Complex64::new(TAU * 40.0, 0.0))) < 1e-12);
        assert!(crate::linalg::max_abs(&rf_hamiltonian(3, 0.0, 0.0)) == 0.0);
    }

    #[test]
    fn two_spin_triplet_singlet_split() {
        let sys = SpinSystem::new("t", vec![1.0, 1.0], &[(1, 2, 10.0)], 100.0, Some(1.0)).unwrap();
        let eig = crate::linalg::HermitianEigen::new(&free_hamiltonian(&sys)).unwrap();
        let mut vals = eig.values.clone();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [-7.5 * TAU, 2.5 * TAU, 2.5 * TAU, 2.5 * TAU];
        for (v, e) in vals.iter().zip(expect) {
            assert!((v - e).abs() < 1e-9, "{v} vs {e}");
        }
    }

    #[test]
    fn swapping_spins_conjugates_by_swap() {
        let sys = citrate();
        let swapped = sys.permuted(&[1, 0]).unwrap();
        // SWAP on two qubits.
        let mut p = CMatrix::zeros(4, 4);
        for s in 0..4usize {
            let t = ((s & 1) << 1) | (s >> 1);
            p[(t, s)] = Complex64::new(1.0, 0.0);
        }
        let lhs = free_hamiltonian(&swapped);
        let rhs = matmul(&matmul(&p, &free_hamiltonian(&sys)), &p.adjoint());
        assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
        let _ = kron(&p, &p);
    }

    #[test]
    fn validation_errors() {
        assert!(SpinSystem::new("x", vec![], &[], 100.0, None).is_err());
        assert!(SpinSystem::new("x", vec![1.0; 9], &[], 100.0, None).is_err());
        assert!(SpinSystem::new("x", vec![1.0], &[], 0.0, None).is_err());
        assert!(SpinSystem::new("x", vec![1.0, 2.0], &[(1, 3, 1.0)], 100.0, None).is_err());
        let err = SpinSystem::new("x", vec![1.0, 2.0], &[(1, 2, 1.0), (2, 1, 2.0)], 100.0, None).unwrap_err();
        assert!(err.to_string().contains("asymmetric coupling"));
        let ok = SpinSystem::new("x", vec![1.0, 2.0], &[(1, 2, 1.0), (2, 1, 1.0)], 100.0, None).unwrap();
        assert_eq!(ok.carrier_ppm(), 1.5);
    }
}
