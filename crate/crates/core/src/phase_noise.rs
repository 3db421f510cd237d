//! Wiener phase noise at APs and UEs, the per-symbol phase-drift spectrum,
//! and the correlation kernel `B_{i1,i2}^{(dtau)} = E{J_{i1}^{(t1)} J_{i2}^{*(t2)}}`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SimError};
use crate::rng::normal;

/// Per-sample increment variance of a free-running oscillator:
/// `4 pi^2 f_c^2 gamma T_s`.
pub fn pn_increment_variance(carrier_hz: f64, gamma: f64, sample_time: f64) -> f64 {
    4.0 * PI * PI * carrier_hz * carrier_hz * gamma * sample_time
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnParams {
    pub carrier_hz: f64,
    pub gamma_ap: f64,
    pub gamma_ue: f64,
    pub sample_time: f64,
}

impl PnParams {
    pub fn sigma2_ap(&self) -> f64 {
        pn_increment_variance(self.carrier_hz, self.gamma_ap, self.sample_time)
    }

    pub fn sigma2_ue(&self) -> f64 {
        pn_increment_variance(self.carrier_hz, self.gamma_ue, self.sample_time)
    }

    /// Increment variance of the combined phase `theta = phi_l + varphi_k`.
    pub fn sigma2_total(&self) -> f64 {
        self.sigma2_ap() + self.sigma2_ue()
    }

    pub fn is_disabled(&self) -> bool {
        self.sigma2_total() == 0.0
    }
}

/// Sample distance between the starts of consecutive OFDM symbols used by
/// the correlation kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StrideMode {
    /// `N` samples, i.e. the kernel as usually written without a CP.
    #[default]
    Symbol,
    /// `N + N_cp` samples, matching traces that include the CP jump.
    CpConsistent,
}

impl StrideMode {
    pub fn stride(self, n: usize, cp_length: usize) -> usize {
        match self {
            StrideMode::Symbol => n,
            StrideMode::CpConsistent => n + cp_length,
        }
    }
}

/// Parameters of the correlation kernel.
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub n: usize,
    pub sigma2_total: f64,
    pub stride: usize,
    roots: Arc<Vec<Complex64>>,
}

impl KernelParams {
    pub fn new(n: usize, sigma2_total: f64, stride: usize) -> Self {
        let roots = (0..n)
            .map(|r| Complex64::from_polar(1.0, -2.0 * PI * r as f64 / n as f64))
            .collect();
        KernelParams {
            n,
            sigma2_total,
            stride,
            roots: Arc::new(roots),
        }
    }

    /// `exp(-sigma2 * |lag| / 2)`.
    #[inline]
    pub fn weight(&self, lag: i64) -> f64 {
        (-0.5 * self.sigma2_total * lag.unsigned_abs() as f64).exp()
    }

    /// `exp(-j 2 pi x / N)` for integer `x`.
    #[inline]
    fn root(&self, x: i64) -> Complex64 {
        self.roots[x.rem_euclid(self.n as i64) as usize]
    }
}

/// Literal double sum over sample pairs; O(N^2).
pub fn correlation_b_oracle(i1: i64, i2: i64, dtau: i64, p: &KernelParams) -> Complex64 {
    let n = p.n as i64;
    let nf = p.n as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for n1 in 0..n {
        for n2 in 0..n {
            let w = (-0.5 * p.sigma2_total * ((dtau * p.stride as i64 + n1 - n2).abs() as f64)).exp();
            let phase = -2.0 * PI * ((n1 * i1 - n2 * i2) as f64) / nf;
            acc += Complex64::from_polar(w, phase);
        }
    }
    acc / (nf * nf)
}

/// O(N) evaluation of the kernel: the sum is regrouped by lag `d = n1 - n2`
/// and the remaining sum over `n2` is a geometric series.
pub fn correlation_b_fast(i1: i64, i2: i64, dtau: i64, p: &KernelParams) -> Complex64 {
    let n = p.n as i64;
    let di = (i1 - i2).rem_euclid(n);
    let base = dtau * p.stride as i64;
    let mut acc = Complex64::new(0.0, 0.0);
    for d in -(n - 1)..n {
        let count = n - d.abs();
        let start = (-d).max(0);
        let inner = if di == 0 {
            Complex64::new(count as f64, 0.0)
        } else {
            // q^start (1 - q^count) / (1 - q), q = exp(-j 2 pi di / N)
            let q = p.root(di);
            p.root(di * start) * (Complex64::new(1.0, 0.0) - p.root(di * count)) / (Complex64::new(1.0, 0.0) - q)
        };
        acc += p.root(d * i1) * inner * p.weight(base + d);
    }
    acc / (p.n as f64 * p.n as f64)
}

/// `A(m) = sum_j a_j exp(-j 2 pi m (target - j) / N)` for `m = 0..N`.
///
/// Used to collapse double sums of kernel values over subcarrier sets into
/// a single quadratic form, see [`kernel_quadratic_form`].
pub fn subcarrier_spectrum(target: usize, weights: &[(usize, Complex64)], p: &KernelParams) -> Vec<Complex64> {
    let n = p.n as i64;
    (0..n)
        .map(|m| {
            weights
                .iter()
                .map(|&(j, a)| a * p.root(m * (target as i64 - j as i64)))
                .sum()
        })
        .collect()
}

/// `sum_{j1, j2} a_{j1} conj(c_{j2}) B_{n1 - j1, n2 - j2}^{(dtau)}` given the
/// spectra of both weight sets (see [`subcarrier_spectrum`]).
pub fn kernel_quadratic_form(a: &[Complex64], c: &[Complex64], dtau: i64, p: &KernelParams) -> Complex64 {
    let n = p.n as i64;
    let base = dtau * p.stride as i64;
    let w: Vec<f64> = (-(n - 1)..n).map(|d| p.weight(base + d)).collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for (m1, &am) in a.iter().enumerate() {
        if am == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut inner = Complex64::new(0.0, 0.0);
        // w index of lag (m1 - m2) is m1 - m2 + n - 1
        let off = m1 + p.n - 1;
        for (m2, &cm) in c.iter().enumerate() {
            inner += cm.conj() * w[off - m2];
        }
        acc += am * inner;
    }
    acc / (p.n as f64 * p.n as f64)
}

/// Combined phase traces for every UE-AP pair.
///
/// Stored per node: `theta_{k,l} = phi_l + varphi_k` is formed on demand, so
/// two UEs seen by the same AP share its oscillator component.
#[derive(Debug, Clone)]
pub struct PhaseNoiseTrace {
    pub n: usize,
    pub n_symbols: usize,
    ap: Vec<f64>,
    ue: Vec<f64>,
}

impl PhaseNoiseTrace {
    fn span(&self) -> usize {
        self.n * self.n_symbols
    }

    /// AP oscillator phase over symbol `tau`.
    pub fn ap_symbol(&self, l: usize, tau: usize) -> &[f64] {
        let s = l * self.span() + tau * self.n;
        &self.ap[s..s + self.n]
    }

    pub fn ue_symbol(&self, k: usize, tau: usize) -> &[f64] {
        let s = k * self.span() + tau * self.n;
        &self.ue[s..s + self.n]
    }

    /// Combined phase of link (k, l) over OFDM symbol `tau`.
    pub fn theta(&self, k: usize, l: usize, tau: usize) -> Vec<f64> {
        self.ap_symbol(l, tau)
            .iter()
            .zip(self.ue_symbol(k, tau))
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn n_aps(&self) -> usize {
        self.ap.len() / self.span()
    }

    pub fn n_ues(&self) -> usize {
        self.ue.len() / self.span()
    }

    /// A trace with zero phase everywhere.
    pub fn zeros(n: usize, n_symbols: usize, n_aps: usize, n_ues: usize) -> Self {
        PhaseNoiseTrace {
            n,
            n_symbols,
            ap: vec![0.0; n_aps * n * n_symbols],
            ue: vec![0.0; n_ues * n * n_symbols],
        }
    }
}

/// Wiener walk of one oscillator across `n_symbols` OFDM symbols of `n`
/// samples each. The CP between symbols adds a jump of variance
/// `(cp_length + 1) * sigma2`. The walk starts at a uniform random phase.
pub fn gen_node_walk(sigma2: f64, n: usize, cp_length: usize, n_symbols: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let step = sigma2.sqrt();
    let jump = ((cp_length + 1) as f64 * sigma2).sqrt();
    let mut phase = rng.gen::<f64>() * 2.0 * PI;
    for tau in 0..n_symbols {
        for m in 0..n {
            if m > 0 {
                phase += normal(rng, step);
            } else if tau > 0 {
                phase += normal(rng, jump);
            }
            out.push(phase);
        }
    }
}

/// Independent walks for every AP and UE oscillator.
pub fn gen_pn_trace(
    sigma2_ap: f64,
    sigma2_ue: f64,
    n: usize,
    cp_length: usize,
    n_symbols: usize,
    n_aps: usize,
    n_ues: usize,
    rng: &mut ChaCha8Rng,
) -> PhaseNoiseTrace {
    let mut ap = Vec::with_capacity(n_aps * n * n_symbols);
    for _ in 0..n_aps {
        gen_node_walk(sigma2_ap, n, cp_length, n_symbols, rng, &mut ap);
    }
    let mut ue = Vec::with_capacity(n_ues * n * n_symbols);
    for _ in 0..n_ues {
        gen_node_walk(sigma2_ue, n, cp_length, n_symbols, rng, &mut ue);
    }
    PhaseNoiseTrace { n, n_symbols, ap, ue }
}

/// Unit phasors `exp(j phase)` of every oscillator sample.
#[derive(Debug, Clone)]
pub struct PhasorSet {
    pub n: usize,
    pub n_symbols: usize,
    ap: Vec<Complex64>,
    ue: Vec<Complex64>,
}

impl PhasorSet {
    pub fn from_trace(trace: &PhaseNoiseTrace) -> Self {
        let conv = |v: &[f64]| v.iter().map(|&x| Complex64::from_polar(1.0, x)).collect();
        PhasorSet {
            n: trace.n,
            n_symbols: trace.n_symbols,
            ap: conv(&trace.ap),
            ue: conv(&trace.ue),
        }
    }

    pub fn ap_symbol(&self, l: usize, tau: usize) -> &[Complex64] {
        let s = (l * self.n_symbols + tau) * self.n;
        &self.ap[s..s + self.n]
    }

    pub fn ue_symbol(&self, k: usize, tau: usize) -> &[Complex64] {
        let s = (k * self.n_symbols + tau) * self.n;
        &self.ue[s..s + self.n]
    }

    pub fn n_aps(&self) -> usize {
        self.ap.len() / (self.n * self.n_symbols)
    }

    pub fn n_ues(&self) -> usize {
        self.ue.len() / (self.n * self.n_symbols)
    }

    /// Common phase error `J_{k,l,0}^{(tau)}` for all links and symbols,
    /// laid out as `[k][l][tau]`.
    pub fn common_phase_errors(&self) -> CpeTable {
        let (nk, nl, nt) = (self.n_ues(), self.n_aps(), self.n_symbols);
        let mut v = vec![Complex64::new(0.0, 0.0); nk * nl * nt];
        let inv = 1.0 / self.n as f64;
        for l in 0..nl {
            for tau in 0..nt {
                let a = self.ap_symbol(l, tau);
                for k in 0..nk {
                    let b = self.ue_symbol(k, tau);
                    let s: Complex64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    v[(k * nl + l) * nt + tau] = s * inv;
                }
            }
        }
        CpeTable {
            n_aps: nl,
            n_symbols: nt,
            v,
        }
    }
}

/// `J_{k,l,0}^{(tau)}` for every link and symbol.
#[derive(Debug, Clone)]
pub struct CpeTable {
    n_aps: usize,
    n_symbols: usize,
    v: Vec<Complex64>,
}

impl CpeTable {
    /// All-ones table, i.e. no phase noise.
    pub fn unit(n_ues: usize, n_aps: usize, n_symbols: usize) -> Self {
        CpeTable {
            n_aps,
            n_symbols,
            v: vec![Complex64::new(1.0, 0.0); n_ues * n_aps * n_symbols],
        }
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize, tau: usize) -> Complex64 {
        self.v[(k * self.n_aps + l) * self.n_symbols + tau]
    }
}

/// Frequency-domain phase drift of one symbol; entry `i` for
/// `i in -N/2..N/2` is read through [`PhaseDriftSpectrum::get`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDriftSpectrum {
    bins: Vec<Complex64>,
}

impl PhaseDriftSpectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// `J_i`; indices are taken modulo N.
    #[inline]
    pub fn get(&self, i: i64) -> Complex64 {
        self.bins[i.rem_euclid(self.bins.len() as i64) as usize]
    }

    pub fn cpe(&self) -> Complex64 {
        self.bins[0]
    }

    /// `(i, J_i)` for `i = -N/2 .. N/2 - 1`.
    pub fn centered(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        let n = self.bins.len() as i64;
        (-n / 2..n / 2).map(move |i| (i, self.get(i)))
    }

    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// N-point transform computing `J_i = (1/N) sum_n exp(j theta_n) exp(-j 2 pi n i / N)`.
pub struct DriftTransform {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl DriftTransform {
    pub fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        DriftTransform { n, fft }
    }

    pub fn apply(&self, theta: &[f64]) -> Result<PhaseDriftSpectrum> {
        if theta.len() != self.n {
            return Err(SimError::InvalidInput(format!(
                "phase vector has {} samples, expected {}",
                theta.len(),
                self.n
            )));
        }
        let inv = 1.0 / self.n as f64;
        let mut bins: Vec<Complex64> = theta.iter().map(|&t| Complex64::from_polar(inv, t)).collect();
        self.fft.process(&mut bins);
        Ok(PhaseDriftSpectrum { bins })
    }
}

/// One-shot convenience wrapper around [`DriftTransform`].
pub fn phase_drift(theta: &[f64]) -> Result<PhaseDriftSpectrum> {
    if theta.is_empty() {
        return Err(SimError::InvalidInput("empty phase vector".into()));
    }
    DriftTransform::new(theta.len()).apply(theta)
}

/// Cached kernel values keyed by `(i1, i2, dtau)`; lookups are exact-hit
/// only, indices are reduced modulo N into `[-N/2, N/2)`.
#[derive(Debug, Clone)]
pub struct CorrelationTable {
    params: KernelParams,
    values: HashMap<(i64, i64, i64), Complex64>,
}

impl CorrelationTable {
    pub fn build(params: KernelParams, needed: impl IntoIterator<Item = (i64, i64, i64)>) -> Self {
        let mut table = CorrelationTable {
            params,
            values: HashMap::new(),
        };
        table.extend(needed);
        table
    }

    fn key(&self, i1: i64, i2: i64, dtau: i64) -> (i64, i64, i64) {
        let n = self.params.n as i64;
        let wrap = |i: i64| (i + n / 2).rem_euclid(n) - n / 2;
        (wrap(i1), wrap(i2), dtau)
    }

    pub fn extend(&mut self, needed: impl IntoIterator<Item = (i64, i64, i64)>) {
        for (i1, i2, dtau) in needed {
            let key = self.key(i1, i2, dtau);
            if !self.values.contains_key(&key) {
                let v = correlation_b_fast(key.0, key.1, key.2, &self.params);
                self.values.insert(key, v);
            }
        }
    }

    pub fn get(&self, i1: i64, i2: i64, dtau: i64) -> Result<Complex64> {
        let key = self.key(i1, i2, dtau);
        self.values.get(&key).copied().ok_or(SimError::TableMiss {
            i1: key.0,
            i2: key.1,
            dtau,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(i64, i64, i64), &Complex64)> {
        self.values.iter()
    }

    /// Common-phase-error entries `B_{0,0}^{(dtau)}` for `|dtau| < n_symbols`.
    pub fn cpe_indices(n_symbols: usize) -> impl Iterator<Item = (i64, i64, i64)> {
        let m = n_symbols as i64;
        (-(m - 1)..m).map(|d| (0, 0, d))
    }
}
