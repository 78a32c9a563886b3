//! Signal detection: free induction decay, apodization and Fourier
//! transform onto Hz/ppm axes.
//!
//! Conventions, pinned by the single-spin placement tests below:
//! * the FID is `s_k = Tr(F₋ ρ(kΔt)) / Tr(I_1x²) · e^{−π·lb·kΔt}` with the
//!   first point halved, so a unit `I_x` on resonance gives `s_k = 1`;
//! * under `H0 = 2πΩ I_z` a transverse state gives `s_k ∝ e^{−i2πΩkΔt}`, and
//!   the spectrum is `S_j = Σ_k s_k e^{+i2π f_j kΔt}`, which puts the
//!   absorptive real-part peak at `f = +Ω`, i.e. at `carrier + Ω/ν₀` ppm.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, HermitianEigen, ZERO};
use crate::prop::DensityState;
use crate::spinsys::{free_hamiltonian, total_operator, Axis, SpinSystem};

/// Spectral width of the default acquisition, ppm.
pub const DEFAULT_SPECTRAL_WIDTH_PPM: f64 = 10.0;
pub const DEFAULT_POINTS: usize = 4096;

/// Acquisition and processing settings shared by every spectrum that is
/// compared against another.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub n_points: usize,
    pub dwell_s: f64,
    pub lb_hz: f64,
    pub zerofill: usize,
}

impl AcquisitionParams {
    /// Default line broadening: 1 Hz at high field, 4 Hz below 300 MHz.
    pub fn default_lb(spectrometer_mhz: f64) -> f64 {
        if spectrometer_mhz >= 300.0 {
            1.0
        } else {
            4.0
        }
    }

    /// Default settings for `sys` with the field-dependent line broadening.
    pub fn default_for(sys: &SpinSystem) -> Self {
        Self::for_linewidth(sys, Self::default_lb(sys.spectrometer_mhz()))
    }

    /// 10 ppm spectral width; at least 4096 points and enough to let the FID
    /// decay to e^{-6} of its start; zero-fill until a bin is at most a
    /// sixth of the linewidth.
    pub fn for_linewidth(sys: &SpinSystem, lb_hz: f64) -> Self {
        let sw = DEFAULT_SPECTRAL_WIDTH_PPM * sys.spectrometer_mhz();
        let dwell = 1.0 / sw;
        let mut n = DEFAULT_POINTS;
        if lb_hz > 0.0 {
            let t_needed = 6.0 / (PI * lb_hz);
            while (n as f64) * dwell < t_needed && n < (1 << 20) {
                n *= 2;
            }
        }
        let mut zerofill = 1;
        if lb_hz > 0.0 {
            while zerofill < 4 && sw / (n * zerofill) as f64 > lb_hz / 6.0 {
                zerofill *= 2;
            }
        }
        Self { n_points: n, dwell_s: dwell, lb_hz, zerofill }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dwell_s.is_finite() && self.dwell_s > 0.0) {
            return Err(Error::Acquisition(format!("dwell must be > 0, got {}", self.dwell_s)));
        }
        if self.n_points < 64 || !self.n_points.is_power_of_two() {
            return Err(Error::Acquisition(format!(
                "n_points must be a power of two >= 64, got {}",
                self.n_points
            )));
        }
        if !(self.lb_hz.is_finite() && self.lb_hz >= 0.0) {
            return Err(Error::Acquisition(format!("lb_hz must be >= 0, got {}", self.lb_hz)));
        }
        if ![1, 2, 4].contains(&self.zerofill) {
            return Err(Error::Acquisition(format!("zerofill must be 1, 2 or 4, got {}", self.zerofill)));
        }
        Ok(())
    }

    pub fn spectrum_len(&self) -> usize {
        self.n_points * self.zerofill
    }

    /// Frequency of output bin `m` (0-based, ascending), Hz.
    pub fn bin_freq(&self, m: usize) -> f64 {
        let len = self.spectrum_len();
        (m as f64 - (len / 2) as f64) / (len as f64 * self.dwell_s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fid {
    pub samples: Vec<Complex64>,
    pub dwell_s: f64,
    pub spectrometer_mhz: f64,
    pub carrier_ppm: f64,
}

impl Fid {
    pub fn n_points(&self) -> usize {
        self.samples.len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("t_s,real,imag\n");
        for (k, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", k as f64 * self.dwell_s, s.re, s.im));
        }
        write_file(path.as_ref(), &out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub intensities: Vec<Complex64>,
    pub freq_hz: Vec<f64>,
    pub ppm: Vec<f64>,
    pub spectrometer_mhz: f64,
    pub carrier_ppm: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn real(&self) -> Vec<f64> {
        self.intensities.iter().map(|z| z.re).collect()
    }

    pub fn max_abs_real(&self) -> f64 {
        self.intensities.iter().fold(0.0, |m, z| m.max(z.re.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { intensities: self.intensities.iter().map(|z| z * c).collect(), ..self.clone() }
    }

    /// Indices of bins whose ppm lies inside `region` (inclusive).
    pub fn region_bins(&self, region: &SpectralRegion) -> Vec<usize> {
        self.ppm
            .iter()
            .enumerate()
            .filter(|(_, p)| **p >= region.lo_ppm && **p <= region.hi_ppm)
            .map(|(k, _)| k)
            .collect()
    }

    /// CSV with header `freq_hz,ppm,real,imag`, ascending ppm.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 64);
        out.push_str("freq_hz,ppm,real,imag\n");
        for k in 0..self.len() {
            let z = self.intensities[k];
            out.push_str(&format!("{},{},{},{}\n", self.freq_hz[k], self.ppm[k], z.re, z.im));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_csv())
    }

    /// Reads a spectrum written by [`Spectrum::to_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("freq_hz,ppm,real,imag") {
            return Err(Error::schema("spectrum csv", "expected header freq_hz,ppm,real,imag"));
        }
        let (mut f, mut p, mut z) = (Vec::new(), Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::schema("spectrum csv", format!("row {} is not numeric", k + 2)))?;
            if cols.len() != 4 {
                return Err(Error::schema("spectrum csv", format!("row {} needs 4 columns", k + 2)));
            }
            f.push(cols[0]);
            p.push(cols[1]);
            z.push(Complex64::new(cols[2], cols[3]));
        }
        if f.len() < 2 {
            return Err(Error::schema("spectrum csv", "needs at least two rows"));
        }
        let mhz = (f[1] - f[0]) / (p[1] - p[0]);
        let carrier = p[0] - f[0] / mhz;
        Ok(Self { intensities: z, freq_hz: f, ppm: p, spectrometer_mhz: mhz, carrier_ppm: carrier })
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralRegion {
    pub lo_ppm: f64,
    pub hi_ppm: f64,
}

impl SpectralRegion {
    pub fn new(lo_ppm: f64, hi_ppm: f64) -> Result<Self> {
        if !(lo_ppm.is_finite() && hi_ppm.is_finite() && lo_ppm < hi_ppm) {
            return Err(Error::Region(format!("need lo < hi, got [{lo_ppm}, {hi_ppm}]")));
        }
        Ok(Self { lo_ppm, hi_ppm })
    }

    pub fn contains(&self, ppm: f64) -> bool {
        ppm >= self.lo_ppm && ppm <= self.hi_ppm
    }
}

/// Normalization making a unit `I_1x` coherence produce unit signal.
pub(crate) fn signal_scale(n_spins: usize) -> f64 {
    2f64.powi(2 - n_spins as i32)
}

/// Transverse signal and free evolution of a state, expressed in the
/// eigenbasis of `H0`. Shared by the FID synthesis and the region kernels.
pub(crate) struct Transitions {
    /// `(ω_ab, F̃₋_ba)` for every pair with a non-negligible detection weight.
    pub pairs: Vec<(usize, usize, f64, Complex64)>,
}

impl Transitions {
    pub fn new(eig: &HermitianEigen, n_spins: usize) -> Self {
        let fm = eig.to_eigenbasis(&total_operator(n_spins, Axis::Minus));
        let dim = eig.dim();
        let scale = signal_scale(n_spins);
        let mut pairs = Vec::new();
        for a in 0..dim {
            for b in 0..dim {
                let w = fm[(b, a)];
                if w.norm() > 1e-13 {
                    pairs.push((a, b, eig.values[a] - eig.values[b], w * scale));
                }
            }
        }
        Self { pairs }
    }
}

/// Samples the FID of `rho` evolving freely under the system Hamiltonian.
pub fn acquire_fid(sys: &SpinSystem, rho: &DensityState, params: &AcquisitionParams) -> Result<Fid> {
    params.validate()?;
    if rho.nrows() != sys.dim() {
        return Err(Error::Dimension { expected: sys.dim(), found: rho.nrows() });
    }
    let eig = HermitianEigen::new(&free_hamiltonian(sys))?;
    let transitions = Transitions::new(&eig, sys.n_spins());
    Ok(fid_from_transitions(&eig, &transitions, rho, params, sys))
}

fn fid_from_transitions(
    eig: &HermitianEigen,
    tr: &Transitions,
    rho: &DensityState,
    params: &AcquisitionParams,
    sys: &SpinSystem,
) -> Fid {
    let rt = eig.to_eigenbasis(rho);
    // Amplitude of each transition and its single-dwell propagator phase.
    let mut amp: Vec<Complex64> = Vec::with_capacity(tr.pairs.len());
    let mut step: Vec<Complex64> = Vec::with_capacity(tr.pairs.len());
    for &(a, b, omega, w) in &tr.pairs {
        let c = w * rt[(a, b)];
        if c.norm() > 0.0 {
            amp.push(c);
            step.push(Complex64::from_polar(1.0, -omega * params.dwell_s));
        }
    }
    let decay = (-PI * params.lb_hz * params.dwell_s).exp();
    let mut samples = Vec::with_capacity(params.n_points);
    let mut apod = 1.0;
    for _ in 0..params.n_points {
        let s: Complex64 = amp.iter().sum();
        samples.push(s * apod);
        for (c, z) in amp.iter_mut().zip(&step) {
            *c *= z;
        }
        apod *= decay;
    }
    if let Some(first) = samples.first_mut() {
        *first *= 0.5;
    }
    Fid { samples, dwell_s: params.dwell_s, spectrometer_mhz: sys.spectrometer_mhz(), carrier_ppm: sys.carrier_ppm() }
}

/// Zero-fills by `zerofill` and transforms, with 0 Hz at the centre.
pub fn spectrum_from_fid(fid: &Fid, zerofill: usize) -> Result<Spectrum> {
    if ![1, 2, 4].contains(&zerofill) {
        return Err(Error::Acquisition(format!("zerofill must be 1, 2 or 4, got {zerofill}")));
    }
    let n = fid.n_points();
    if n < 64 || !n.is_power_of_two() {
        return Err(Error::Acquisition(format!("FID length {n} must be a power of two >= 64")));
    }
    let len = n * zerofill;
    let mut buf = vec![ZERO; len];
    buf[..n].copy_from_slice(&fid.samples);
    // Inverse direction: Σ s_k e^{+2πi jk/len}, unnormalized.
    FftPlanner::<f64>::new().plan_fft_inverse(len).process(&mut buf);
    let half = len / 2;
    let mut intensities = Vec::with_capacity(len);
    let mut freq_hz = Vec::with_capacity(len);
    let mut ppm = Vec::with_capacity(len);
    for m in 0..len {
        intensities.push(buf[(m + half) % len]);
        let f = (m as f64 - half as f64) / (len as f64 * fid.dwell_s);
        freq_hz.push(f);
        ppm.push(fid.carrier_ppm + f / fid.spectrometer_mhz);
    }
    Ok(Spectrum {
        intensities,
        freq_hz,
        ppm,
        spectrometer_mhz: fid.spectrometer_mhz,
        carrier_ppm: fid.carrier_ppm,
    })
}

/// FID followed by transform with the acquisition's zero-fill.
pub fn simulate_spectrum(sys: &SpinSystem, rho: &DensityState, params: &AcquisitionParams) -> Result<Spectrum> {
    spectrum_from_fid(&acquire_fid(sys, rho, params)?, params.zerofill)
}

/// Largest real-part intensity inside `region`.
pub fn peak_height(spec: &Spectrum, region: &SpectralRegion) -> Result<f64> {
    let bins = spec.region_bins(region);
    if bins.is_empty() {
        return Err(Error::Region(format!(
            "[{}, {}] ppm contains no spectrum bins",
            region.lo_ppm, region.hi_ppm
        )));
    }
    Ok(bins.iter().map(|&k| spec.intensities[k].re).fold(f64::NEG_INFINITY, f64::max))
}

/// Mean squared magnitude over the bins inside `region`.
pub fn region_power(spec: &Spectrum, region: &SpectralRegion) -> Result<f64> {
    let bins = spec.region_bins(region);
    if bins.is_empty() {
        return Err(Error::Region(format!(
            "[{}, {}] ppm contains no spectrum bins",
            region.lo_ppm, region.hi_ppm
        )));
    }
    Ok(bins.iter().map(|&k| spec.intensities[k].norm_sqr()).sum::<f64>() / bins.len() as f64)
}

/// Closed-form map from a density matrix to the complex spectrum on the bins
/// of one region. It evaluates the same transform as
/// `spectrum_from_fid(acquire_fid(..))` restricted to those bins, as
/// `S_j = Σ_p K_{jp} ρ̃_p` over the detectable transitions `p = (a, b)` of
/// the free Hamiltonian, using the geometric sum of each apodized phasor.
pub struct RegionKernel {
    eig: Arc<HermitianEigen>,
    pairs: Vec<(usize, usize)>,
    /// Row-major `bins × pairs`.
    coef: Vec<Complex64>,
    bins: Vec<usize>,
    freqs: Vec<f64>,
}

impl RegionKernel {
    /// `axis_carrier_ppm` places the ppm axis; it differs from the system
    /// carrier for off-resonance ensemble members, whose peaks then move on
    /// the nominal axis.
    pub fn new(
        eig: Arc<HermitianEigen>,
        n_spins: usize,
        spectrometer_mhz: f64,
        axis_carrier_ppm: f64,
        params: &AcquisitionParams,
        region: &SpectralRegion,
    ) -> Result<Self> {
        params.validate()?;
        let len = params.spectrum_len();
        let mut bins = Vec::new();
        let mut freqs = Vec::new();
        for m in 0..len {
            let f = params.bin_freq(m);
            if region.contains(axis_carrier_ppm + f / spectrometer_mhz) {
                bins.push(m);
                freqs.push(f);
            }
        }
        if bins.is_empty() {
            return Err(Error::Region(format!(
                "[{}, {}] ppm contains no spectrum bins",
                region.lo_ppm, region.hi_ppm
            )));
        }
        let tr = Transitions::new(&eig, n_spins);
        let n = params.n_points as f64;
        let dt = params.dwell_s;
        let mut coef = Vec::with_capacity(bins.len() * tr.pairs.len());
        for &f in &freqs {
            for &(_, _, omega, w) in &tr.pairs {
                // q = e^{(−iω − π lb + i2πf)Δt}; Σ_{k<N} q^k with the first term halved.
                let log_q = Complex64::new(-PI * params.lb_hz * dt, (TAU * f - omega) * dt);
                let q = log_q.exp();
                let one_minus_q = Complex64::new(1.0, 0.0) - q;
                let g = if one_minus_q.norm() < 1e-14 {
                    Complex64::new(n - 0.5, 0.0)
                } else {
                    (Complex64::new(1.0, 0.0) - (log_q * n).exp()) / one_minus_q - 0.5
                };
                coef.push(w * g);
            }
        }
        let pairs = tr.pairs.iter().map(|&(a, b, _, _)| (a, b)).collect();
        Ok(Self { eig, pairs, coef, bins, freqs })
    }

    pub fn eigen(&self) -> &HermitianEigen {
        &self.eig
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// Spectrum values on the region bins for `rho_eig = V† ρ V`.
    pub fn values_eigenbasis(&self, rho_eig: &CMatrix) -> Vec<Complex64> {
        let np = self.pairs.len();
        let r: Vec<Complex64> = self.pairs.iter().map(|&(a, b)| rho_eig[(a, b)]).collect();
        self.coef
            .chunks_exact(np)
            .map(|row| row.iter().zip(&r).map(|(k, x)| k * x).sum())
            .collect()
    }

    pub fn values(&self, rho: &DensityState) -> Vec<Complex64> {
        self.values_eigenbasis(&self.eig.to_eigenbasis(rho))
    }

    /// Accumulates into `out` (eigenbasis) the matrix `X` such that
    /// `Re Σ_j g_j dS_j = Re Tr(X dρ̃)`.
    pub fn accumulate_adjoint_eigenbasis(&self, g: &[Complex64], out: &mut CMatrix) {
        let np = self.pairs.len();
        assert_eq!(g.len(), self.bins.len());
        for (row, gj) in self.coef.chunks_exact(np).zip(g) {
            if gj.norm() == 0.0 {
                continue;
            }
            for (&(a, b), k) in self.pairs.iter().zip(row) {
                out[(b, a)] += gj * k;
            }
        }
    }
}
