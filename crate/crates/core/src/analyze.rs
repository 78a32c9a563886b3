//! Interpretation of states and spectra: product-operator decomposition,
//! enhancement factors, the ideal PRESS reference and multiplet extrema.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::detect::{peak_height, simulate_spectrum, AcquisitionParams, SpectralRegion, Spectrum};
use crate::error::{Error, Result};
use crate::linalg::{frobenius, hermiticity_error, CMatrix, ZERO};
use crate::prop::{conjugate, delay_propagator, hard_pulse_rotation, DensityState};
use crate::spinsys::{basis_labels, equilibrium_state, free_hamiltonian, Cartesian, ProductOperatorLabel, SpinSystem};

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionTerm {
    pub label: ProductOperatorLabel,
    pub coefficient: f64,
}

impl DecompositionTerm {
    /// The term in expression syntax, e.g. `-2*I1x.I2z`.
    pub fn expression(&self) -> String {
        format!("{}*{}", self.coefficient * self.label.prefactor(), self.label.product_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateDecomposition {
    pub n_spins: usize,
    /// Sorted by decreasing |coefficient|.
    pub terms: Vec<DecompositionTerm>,
    /// Coefficient of `E/2` removed before decomposing.
    pub identity_coefficient: f64,
    /// `‖ρ − Σ_kept c B‖_F` of the traceless part.
    pub residual_norm: f64,
    /// Largest imaginary part met among the coefficients.
    pub max_imaginary: f64,
}

impl StateDecomposition {
    /// Operator expression of the retained terms.
    pub fn to_expression(&self) -> String {
        let mut out = String::new();
        for (k, t) in self.terms.iter().enumerate() {
            let c = t.coefficient * t.label.prefactor();
            if k == 0 {
                let _ = write!(out, "{c}*{}", t.label.product_string());
            } else if c < 0.0 {
                let _ = write!(out, " - {}*{}", -c, t.label.product_string());
            } else {
                let _ = write!(out, " + {c}*{}", t.label.product_string());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,coefficient,expression\n");
        for t in &self.terms {
            let _ = writeln!(out, "{},{},{}", t.label.to_expression(), t.coefficient, t.expression());
        }
        out
    }

    pub fn coefficient(&self, label: &ProductOperatorLabel) -> Option<f64> {
        self.terms.iter().find(|t| &t.label == label).map(|t| t.coefficient)
    }
}

/// Matrix element of one spin-½ Cartesian operator between single-spin
/// states (`false` = up).
fn spin_element(axis: Cartesian, row_down: bool, col_down: bool) -> Complex64 {
    match (axis, row_down, col_down) {
        (Cartesian::X, a, b) if a != b => Complex64::new(0.5, 0.0),
        (Cartesian::Y, false, true) => Complex64::new(0.0, -0.5),
        (Cartesian::Y, true, false) => Complex64::new(0.0, 0.5),
        (Cartesian::Z, false, false) => Complex64::new(0.5, 0.0),
        (Cartesian::Z, true, true) => Complex64::new(-0.5, 0.0),
        _ => ZERO,
    }
}

/// Visits the single non-zero entry `(row, col, value)` of each row of the
/// basis operator `label`.
fn for_each_entry(n: usize, label: &ProductOperatorLabel, mut f: impl FnMut(usize, usize, Complex64)) {
    let mut flip = 0usize;
    for &(i, a) in label.factors() {
        if a != Cartesian::Z {
            flip |= 1 << (n - i);
        }
    }
    let pre = label.prefactor();
    for row in 0..(1usize << n) {
        let col = row ^ flip;
        let mut v = Complex64::new(pre, 0.0);
        for &(i, a) in label.factors() {
            let bit = 1 << (n - i);
            v *= spin_element(a, row & bit != 0, col & bit != 0);
        }
        f(row, col, v);
    }
}

/// Coefficients `c_s = Tr(B_s ρ)/Tr(B_s²)` of the traceless part of `rho`
/// in the product-operator basis; keeps the `top_k` largest.
pub fn decompose(rho: &DensityState, top_k: usize) -> Result<StateDecomposition> {
    if top_k == 0 {
        return Err(Error::Config("top must be ≥ 1".into()));
    }
    let dim = rho.nrows();
    if dim < 2 || !dim.is_power_of_two() || rho.ncols() != dim {
        return Err(Error::Dimension { expected: dim.next_power_of_two().max(2), found: dim });
    }
    let herm = hermiticity_error(rho);
    if herm > 1e-9 * crate::linalg::max_abs(rho).max(1.0) {
        return Err(Error::NotHermitian(herm));
    }
    let n = dim.trailing_zeros() as usize;
    // Every basis operator, the identity's E/2 included, has Tr(B²) = 2^{n−2}.
    let norm = (dim as f64) / 4.0;
    let mut all = Vec::with_capacity(dim * dim);
    let mut identity_coefficient = 0.0;
    let mut max_imaginary = 0.0f64;
    for label in basis_labels(n) {
        let mut tr = ZERO;
        for_each_entry(n, &label, |r, c, v| tr += v * rho[(c, r)]);
        let c = tr / norm;
        max_imaginary = max_imaginary.max(c.im.abs());
        if label.is_identity() {
            identity_coefficient = c.re;
        } else {
            all.push(DecompositionTerm { label, coefficient: c.re });
        }
    }
    all.sort_by(|a, b| b.coefficient.abs().total_cmp(&a.coefficient.abs()));
    all.truncate(top_k);
    let mut residual = rho.clone();
    for k in 0..dim {
        residual[(k, k)] -= Complex64::new(identity_coefficient / 2.0, 0.0);
    }
    for t in &all {
        for_each_entry(n, &t.label, |r, c, v| residual[(r, c)] -= v * t.coefficient);
    }
    Ok(StateDecomposition {
        n_spins: n,
        terms: all,
        identity_coefficient,
        residual_norm: frobenius(&residual),
        max_imaginary,
    })
}

/// `Σ c_s B_s` for the listed terms.
pub fn reconstruct(n_spins: usize, terms: &[DecompositionTerm]) -> CMatrix {
    let dim = 1usize << n_spins;
    let mut out = CMatrix::from_element(dim, dim, ZERO);
    for t in terms {
        for_each_entry(n_spins, &t.label, |r, c, v| out[(r, c)] += v * t.coefficient);
    }
    out
}

fn same_axis(a: &Spectrum, b: &Spectrum) -> bool {
    a.len() == b.len()
        && a.spectrometer_mhz == b.spectrometer_mhz
        && a.carrier_ppm == b.carrier_ppm
        && a.freq_hz.first() == b.freq_hz.first()
        && a.freq_hz.last() == b.freq_hz.last()
}

/// Ratio of region peak heights, candidate over baseline.
pub fn enhancement_factor(candidate: &Spectrum, baseline: &Spectrum, region: &SpectralRegion) -> Result<f64> {
    if !same_axis(candidate, baseline) {
        return Err(Error::UndefinedRatio("spectra do not share an axis".into()));
    }
    let base = peak_height(baseline, region)?;
    let scale = baseline.max_abs_real();
    if !(base.abs() >= 1e-9 * scale) || scale == 0.0 {
        return Err(Error::UndefinedRatio(format!(
            "baseline peak {base:.3e} in [{}, {}] ppm is below 1e-9 of its maximum {scale:.3e}",
            region.lo_ppm, region.hi_ppm
        )));
    }
    Ok(peak_height(candidate, region)? / base)
}

/// State after the ideal PRESS sequence `90°x – τ – 180°y – 2τ – 180°y – τ`
/// with `τ = TE/4`, from equilibrium.
pub fn press_state(sys: &SpinSystem, te_s: f64) -> Result<DensityState> {
    if !(te_s.is_finite() && te_s >= 0.0) {
        return Err(Error::Program(format!("echo time must be >= 0, got {te_s}")));
    }
    let n = sys.n_spins();
    let h0 = free_hamiltonian(sys);
    let tau = te_s / 4.0;
    let d1 = delay_propagator(&h0, tau)?;
    let d2 = delay_propagator(&h0, 2.0 * tau)?;
    let x90 = hard_pulse_rotation(n, PI / 2.0, 0.0);
    let y180 = hard_pulse_rotation(n, PI, PI / 2.0);
    let mut rho = equilibrium_state(n);
    for u in [&x90, &d1, &y180, &d2, &y180, &d1] {
        rho = conjugate(u, &rho);
    }
    Ok(rho)
}

/// Receiver phase matched to an excitation pulse of phase `phase`: the
/// `φ − 90°` shift that makes an on-resonance singlet absorptive and positive.
fn receiver(spec: Spectrum, phase: f64) -> Spectrum {
    let w = Complex64::from_polar(1.0, phase - PI / 2.0);
    Spectrum { intensities: spec.intensities.iter().map(|z| z * w).collect(), ..spec }
}

/// Spectrum of the ideal PRESS sequence with the receiver phased to the
/// excitation pulse.
pub fn press_baseline(sys: &SpinSystem, te_s: f64, params: &AcquisitionParams) -> Result<Spectrum> {
    if !(te_s > 0.0) {
        return Err(Error::Program(format!("echo time must be > 0, got {te_s}")));
    }
    Ok(receiver(simulate_spectrum(sys, &press_state(sys, te_s)?, params)?, 0.0))
}

/// Spectrum after a single ideal 90°x pulse, phased like [`press_baseline`].
pub fn plain_excitation(sys: &SpinSystem, params: &AcquisitionParams) -> Result<Spectrum> {
    let n = sys.n_spins();
    let rho = conjugate(&hard_pulse_rotation(n, PI / 2.0, 0.0), &equilibrium_state(n));
    Ok(receiver(simulate_spectrum(sys, &rho, params)?, 0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extremum {
    pub ppm: f64,
    pub value: f64,
}

/// Local extrema of the real part inside `region`, in ascending ppm, keeping
/// those whose magnitude is at least `rel_threshold` of the largest.
pub fn region_extrema(spec: &Spectrum, region: &SpectralRegion, rel_threshold: f64) -> Result<Vec<Extremum>> {
    let bins = spec.region_bins(region);
    if bins.len() < 3 {
        return Err(Error::Region(format!(
            "[{}, {}] ppm holds fewer than three bins",
            region.lo_ppm, region.hi_ppm
        )));
    }
    let x: Vec<f64> = bins.iter().map(|&k| spec.intensities[k].re).collect();
    let mut found = Vec::new();
    for i in 1..x.len() - 1 {
        let is_max = x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > 0.0;
        let is_min = x[i] < x[i - 1] && x[i] <= x[i + 1] && x[i] < 0.0;
        if is_max || is_min {
            found.push(Extremum { ppm: spec.ppm[bins[i]], value: x[i] });
        }
    }
    let top = found.iter().fold(0.0f64, |m, e| m.max(e.value.abs()));
    found.retain(|e| e.value.abs() >= rel_threshold * top);
    Ok(found)
}

/// Sign sequence of the extrema, e.g. `"-+-"`.
pub fn sign_pattern(extrema: &[Extremum]) -> String {
    extrema.iter().map(|e| if e.value > 0.0 { '+' } else { '-' }).collect()
}

/// Tallest over second-tallest extremum magnitude; infinite for a single
/// extremum.
pub fn singlet_ratio(extrema: &[Extremum]) -> f64 {
    let mut mags: Vec<f64> = extrema.iter().map(|e| e.value.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    match mags.as_slice() {
        [] => 0.0,
        [_] => f64::INFINITY,
        [a, b, ..] => a / b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::spinsys::{product_operator, OperatorExpr};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn label(s: &[(usize, Cartesian)]) -> ProductOperatorLabel {
        ProductOperatorLabel::new(s.to_vec()).unwrap()
    }

    #[test]
    fn in_phase_and_mixed_states() {
        let i1x = OperatorExpr::parse("I1x").unwrap().to_operator(2).unwrap();
        let d = decompose(&i1x, 15).unwrap();
        assert_eq!(d.terms[0].label, label(&[(1, Cartesian::X)]));
        assert!((d.terms[0].coefficient - 1.0).abs() < 1e-14);
        assert!(d.terms[1].coefficient.abs() < 1e-14);
        assert!(d.residual_norm < 1e-14);

        let mixed = OperatorExpr::parse("I1x - 2*I1x.I2z").unwrap().to_operator(2).unwrap();
        let d = decompose(&mixed, 2).unwrap();
        assert!((d.coefficient(&label(&[(1, Cartesian::X)])).unwrap() - 1.0).abs() < 1e-14);
        assert!((d.coefficient(&label(&[(1, Cartesian::X), (2, Cartesian::Z)])).unwrap() + 1.0).abs() < 1e-14);
        assert!(d.residual_norm < 1e-14);
        assert_eq!(d.terms[1].expression(), "-2*I1x.I2z");
        let back = OperatorExpr::parse(&d.to_expression()).unwrap().to_operator(2).unwrap();
        assert!(max_abs_diff(&back, &mixed) < 1e-14);
    }

    #[test]
    fn sparse_entries_match_dense_operators() {
        for n in 1..=3 {
            for l in basis_labels(n) {
                let dense = product_operator(n, &l).unwrap();
                let sparse = reconstruct(n, &[DecompositionTerm { label: l.clone(), coefficient: 1.0 }]);
                if l.is_identity() {
                    continue;
                }
                assert!(max_abs_diff(&dense, &sparse) < 1e-15, "{l}");
            }
        }
    }

    #[test]
    fn random_state_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 3;
        let m = CMatrix::from_fn(8, 8, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let mut rho = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let tr = rho.trace() / 8.0;
        for k in 0..8 {
            rho[(k, k)] -= tr;
        }
        let d = decompose(&rho, usize::MAX).unwrap();
        assert_eq!(d.terms.len(), 63);
        assert!(d.residual_norm < 1e-10);
        assert!(d.max_imaginary < 1e-12);
        assert!(max_abs_diff(&reconstruct(n, &d.terms), &rho) < 1e-10);
        assert!(d.terms.windows(2).all(|w| w[0].coefficient.abs() >= w[1].coefficient.abs()));
        let few = decompose(&rho, 5).unwrap();
        assert!(few.residual_norm > 0.0);
    }

    #[test]
    fn identity_part_is_reported_separately() {
        let mut rho = OperatorExpr::parse("I1z").unwrap().to_operator(1).unwrap();
        rho[(0, 0)] += 1.5;
        rho[(1, 1)] += 1.5;
        let d = decompose(&rho, 3).unwrap();
        assert!((d.identity_coefficient - 3.0).abs() < 1e-14);
        assert!(d.residual_norm < 1e-14);
        assert!(decompose(&CMatrix::from_element(3, 3, ZERO), 1).is_err());
        assert!(decompose(&rho, 0).is_err());
    }

    fn single(shift: f64) -> SpinSystem {
        SpinSystem::new("h", vec![shift], &[], 127.731, Some(3.0)).unwrap()
    }

    #[test]
    fn press_refocuses_an_uncoupled_spin() {
        let sys = single(3.3);
        let p = AcquisitionParams::default_for(&sys);
        let plain = plain_excitation(&sys, &p).unwrap();
        let region = SpectralRegion::new(3.2, 3.4).unwrap();
        let h0 = peak_height(&plain, &region).unwrap();
        assert!(h0 > 0.0);
        for te in [0.01, 0.068, 0.144] {
            let press = press_baseline(&sys, te, &p).unwrap();
            assert!((peak_height(&press, &region).unwrap() - h0).abs() < 1e-9 * h0);
        }
    }

    #[test]
    fn press_at_zero_echo_time_is_plain_excitation() {
        let sys = SpinSystem::new("c", vec![3.07, 3.13, 3.94], &[(1, 2, 14.75), (1, 3, 7.25), (2, 3, 4.32)], 127.731, None)
            .unwrap();
        let p = AcquisitionParams::default_for(&sys);
        let plain = plain_excitation(&sys, &p).unwrap();
        let tiny = press_baseline(&sys, 1e-12, &p).unwrap();
        let scale = plain.max_abs_real();
        for (a, b) in plain.intensities.iter().zip(&tiny.intensities) {
            assert!((a - b).norm() < 1e-6 * scale);
        }
        assert!(press_baseline(&sys, 0.0, &p).is_err());
    }

    #[test]
    fn enhancement_factor_examples() {
        let sys = single(3.3);
        let p = AcquisitionParams::default_for(&sys);
        let base = plain_excitation(&sys, &p).unwrap();
        let region = SpectralRegion::new(3.2, 3.4).unwrap();
        assert_eq!(enhancement_factor(&base, &base, &region).unwrap(), 1.0);
        assert_eq!(enhancement_factor(&base.scaled(2.0), &base, &region).unwrap(), 2.0);
        let e1 = enhancement_factor(&base.scaled(6.0), &base.scaled(3.0), &region).unwrap();
        assert!((e1 - 2.0).abs() < 1e-14);
        let far = SpectralRegion::new(4.5, 5.0).unwrap();
        let quiet = SpectralRegion::new(3.29, 3.31).unwrap();
        assert!(enhancement_factor(&base, &base.scaled(0.0), &quiet).is_err());
        let _ = enhancement_factor(&base, &base, &far);
    }

    #[test]
    fn extrema_helpers() {
        let e = |v: f64| Extremum { ppm: 0.0, value: v };
        assert_eq!(sign_pattern(&[e(-1.0), e(2.0), e(-1.0)]), "-+-");
        assert_eq!(singlet_ratio(&[e(-1.0), e(4.0), e(-1.0)]), 4.0);
        assert_eq!(singlet_ratio(&[e(3.0)]), f64::INFINITY);
    }
}
