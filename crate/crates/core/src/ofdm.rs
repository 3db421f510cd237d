//! Frequency-domain transmit grids, received pilot observations with exact
//! inter-carrier interference, and a time-domain reference model.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::network::{ChannelRealization, NetworkRealization, SimulationLayout};
use crate::phase_noise::{CpeTable, PhaseDriftSpectrum, PhasorSet};
use crate::rng::complex_normal;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `tau_p` mutually orthogonal unit-modulus pilot sequences of length `tau_p`.
#[derive(Debug, Clone)]
pub struct PilotBook {
    tau_p: usize,
    entries: Vec<Complex64>,
}

impl PilotBook {
    /// Exponential basis: `S[i, t] = exp(j 2 pi i t / tau_p)`.
    pub fn new(tau_p: usize) -> Self {
        let mut entries = Vec::with_capacity(tau_p * tau_p);
        for t in 0..tau_p {
            for i in 0..tau_p {
                let ang = 2.0 * PI * ((i * t) % tau_p) as f64 / tau_p as f64;
                entries.push(Complex64::from_polar(1.0, ang));
            }
        }
        PilotBook { tau_p, entries }
    }

    pub fn len(&self) -> usize {
        self.tau_p
    }

    pub fn is_empty(&self) -> bool {
        self.tau_p == 0
    }

    /// Pilot sequence `s_t`.
    pub fn column(&self, t: usize) -> &[Complex64] {
        &self.entries[t * self.tau_p..(t + 1) * self.tau_p]
    }

    #[inline]
    pub fn entry(&self, position: usize, t: usize) -> Complex64 {
        self.entries[t * self.tau_p + position]
    }
}

/// Distribution of the unit-power data symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataKind {
    #[default]
    Gaussian,
    Qpsk,
}

pub fn draw_data_symbol(kind: DataKind, rng: &mut ChaCha8Rng) -> Complex64 {
    match kind {
        DataKind::Gaussian => complex_normal(rng, 1.0),
        DataKind::Qpsk => {
            let a = std::f64::consts::FRAC_1_SQRT_2;
            let re = if rng.gen::<bool>() { a } else { -a };
            let im = if rng.gen::<bool>() { a } else { -a };
            Complex64::new(re, im)
        }
    }
}

/// Maps a subcarrier of the full symbol to its pilot position, if any, for
/// a given OFDM symbol. Every coherence block repeats the same pilot pattern.
#[derive(Debug, Clone)]
pub struct PilotMap {
    block_subcarriers: usize,
    /// `subcarrier within block -> index into pilot_subcarriers`
    sub_slot: Vec<Option<usize>>,
    /// `symbol -> index into pilot_symbols`
    sym_slot: Vec<Option<usize>>,
    n_pilot_subcarriers: usize,
}

impl PilotMap {
    pub fn new(layout: &SimulationLayout) -> Self {
        let mut sub_slot = vec![None; layout.block_subcarriers];
        for (i, &q) in layout.pilot_subcarriers.iter().enumerate() {
            sub_slot[q] = Some(i);
        }
        let mut sym_slot = vec![None; layout.block_symbols];
        for (i, &t) in layout.pilot_symbols.iter().enumerate() {
            sym_slot[t] = Some(i);
        }
        PilotMap {
            block_subcarriers: layout.block_subcarriers,
            sub_slot,
            sym_slot,
            n_pilot_subcarriers: layout.pilot_subcarriers.len(),
        }
    }

    /// Stacked pilot position carried by subcarrier `j` of symbol `symbol`.
    #[inline]
    pub fn position(&self, j: usize, symbol: usize) -> Option<usize> {
        let ps = self.sym_slot.get(symbol).copied().flatten()?;
        let q = self.sub_slot[j % self.block_subcarriers]?;
        Some(ps * self.n_pilot_subcarriers + q)
    }
}

/// Frequency-domain symbols of every UE over a set of OFDM symbols.
#[derive(Debug, Clone)]
pub struct TransmitGrid {
    n: usize,
    symbols: Vec<usize>,
    s: Vec<Complex64>,
}

impl TransmitGrid {
    /// Pilots on the pilot positions of every block, unit-power data elsewhere.
    pub fn draw(
        layout: &SimulationLayout,
        book: &PilotBook,
        pilot_index: &[usize],
        symbols: &[usize],
        kind: DataKind,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = layout.n_subcarriers;
        let map = PilotMap::new(layout);
        let mut s = Vec::with_capacity(pilot_index.len() * symbols.len() * n);
        for &t in pilot_index {
            for &sym in symbols {
                for j in 0..n {
                    s.push(match map.position(j, sym) {
                        Some(pos) => book.entry(pos, t),
                        None => draw_data_symbol(kind, rng),
                    });
                }
            }
        }
        TransmitGrid {
            n,
            symbols: symbols.to_vec(),
            s,
        }
    }

    /// Builds a grid from explicit per-(UE, symbol) vectors.
    pub fn from_rows(n: usize, symbols: Vec<usize>, rows: Vec<Vec<Complex64>>) -> Self {
        assert!(rows.iter().all(|r| r.len() == n));
        TransmitGrid {
            n,
            symbols,
            s: rows.concat(),
        }
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    /// Symbols of UE `k` on the `idx`-th stored OFDM symbol.
    pub fn row(&self, k: usize, idx: usize) -> &[Complex64] {
        let s = (k * self.symbols.len() + idx) * self.n;
        &self.s[s..s + self.n]
    }
}

/// Received pilot samples of every AP, stacked in pilot order, with their
/// three components kept apart.
#[derive(Debug, Clone)]
pub struct PilotObservations {
    pub tau_p: usize,
    pub y: Vec<Complex64>,
    pub effective: Vec<Complex64>,
    pub ici: Vec<Complex64>,
    pub noise: Vec<Complex64>,
}

impl PilotObservations {
    pub fn ap(&self, l: usize) -> &[Complex64] {
        &self.y[l * self.tau_p..(l + 1) * self.tau_p]
    }

    pub fn n_aps(&self) -> usize {
        self.y.len() / self.tau_p
    }
}

/// How the inter-carrier interference on pilot samples is produced.
pub enum IciSource<'a> {
    /// No ICI (phase noise disabled).
    Off,
    /// Exact ICI from the full transmit grid and phase-noise phasors.
    Exact {
        grid: &'a TransmitGrid,
        phasors: &'a PhasorSet,
        engine: &'a IciEngine,
    },
    /// Complex Gaussian surrogate of variance `sum_k p_k beta_kl (1 - B00)`.
    Gaussian { one_minus_b00: f64, rng: &'a mut ChaCha8Rng },
}

/// Transforms reused across trials for exact ICI synthesis.
pub struct IciEngine {
    n: usize,
    ifft: Arc<dyn Fft<f64>>,
    roots: Vec<Complex64>,
}

impl IciEngine {
    pub fn new(n: usize) -> Self {
        let ifft = FftPlanner::new().plan_fft_inverse(n);
        let roots = (0..n)
            .map(|r| Complex64::from_polar(1.0, -2.0 * PI * r as f64 / n as f64))
            .collect();
        IciEngine { n, ifft, roots }
    }
}

/// Pilot observations `y_l = sum_k (sqrt(p_k) s h^(tau) + zeta) + eta` for
/// every AP at every pilot position of block 0.
pub fn synth_pilot_observations(
    layout: &SimulationLayout,
    net: &NetworkRealization,
    book: &PilotBook,
    channel: &ChannelRealization,
    cpe: &CpeTable,
    ici: IciSource<'_>,
    noise_rng: &mut ChaCha8Rng,
) -> PilotObservations {
    let positions = layout.pilot_positions();
    let tau_p = positions.len();
    let (n_ues, n_aps) = (net.n_ues(), net.n_aps());
    let mut effective = vec![ZERO; n_aps * tau_p];
    for l in 0..n_aps {
        for k in 0..n_ues {
            let amp = net.power[k].sqrt() * channel.get(k, l, 0);
            let t = net.pilot_index[k];
            for (i, pos) in positions.iter().enumerate() {
                effective[l * tau_p + i] += amp * book.entry(i, t) * cpe.get(k, l, pos.symbol);
            }
        }
    }

    let mut zeta = vec![ZERO; n_aps * tau_p];
    match ici {
        IciSource::Off => {}
        IciSource::Gaussian { one_minus_b00, rng } => {
            for l in 0..n_aps {
                let var: f64 = (0..n_ues).map(|k| net.power[k] * net.beta[(k, l)]).sum::<f64>() * one_minus_b00;
                for i in 0..tau_p {
                    zeta[l * tau_p + i] = complex_normal(rng, var.max(0.0));
                }
            }
        }
        IciSource::Exact { grid, phasors, engine } => {
            exact_ici(layout, net, channel, cpe, grid, phasors, engine, &mut zeta);
        }
    }

    let sigma2 = net.noise_power;
    let noise: Vec<Complex64> = (0..n_aps * tau_p).map(|_| complex_normal(noise_rng, sigma2)).collect();
    let y = effective
        .iter()
        .zip(&zeta)
        .zip(&noise)
        .map(|((e, z), w)| e + z + w)
        .collect();
    PilotObservations {
        tau_p,
        y,
        effective,
        ici: zeta,
        noise,
    }
}

#[allow(clippy::too_many_arguments)]
fn exact_ici(
    layout: &SimulationLayout,
    net: &NetworkRealization,
    channel: &ChannelRealization,
    cpe: &CpeTable,
    grid: &TransmitGrid,
    phasors: &PhasorSet,
    engine: &IciEngine,
    zeta: &mut [Complex64],
) {
    let n = engine.n;
    let nc = layout.block_subcarriers;
    let n_q = layout.pilot_subcarriers.len();
    let tau_p = n_q * layout.pilot_symbols.len();
    let inv_n = 1.0 / n as f64;
    let mut buf = vec![ZERO; n];
    let mut kernels = vec![ZERO; n_q * n];
    for k in 0..net.n_ues() {
        let amp = net.power[k].sqrt();
        for (ps, &sym) in layout.pilot_symbols.iter().enumerate() {
            let idx = grid
                .symbols()
                .iter()
                .position(|&s| s == sym)
                .expect("transmit grid lacks a pilot symbol");
            let row = grid.row(k, idx);
            // UE phasor times the demodulation exponent of each target subcarrier
            let b = phasors.ue_symbol(k, sym);
            for (qi, &q) in layout.pilot_subcarriers.iter().enumerate() {
                for m in 0..n {
                    kernels[qi * n + m] = b[m] * engine.roots[(m * q) % n] * inv_n;
                }
            }
            for l in 0..net.n_aps() {
                let h = channel.link(k, l);
                for (j, x) in buf.iter_mut().enumerate() {
                    *x = row[j] * h[j / nc];
                }
                engine.ifft.process(&mut buf);
                let a = phasors.ap_symbol(l, sym);
                let j0 = cpe.get(k, l, sym);
                for (qi, &q) in layout.pilot_subcarriers.iter().enumerate() {
                    let ker = &kernels[qi * n..(qi + 1) * n];
                    let total: Complex64 = a.iter().zip(ker).zip(&buf).map(|((a, c), u)| a * c * u).sum();
                    let own = row[q] * j0 * h[0];
                    zeta[l * tau_p + ps * n_q + qi] += amp * (total - own);
                }
            }
        }
    }
}

/// Output of the time-domain reference model for one AP.
#[derive(Debug, Clone)]
pub struct OracleOutput {
    pub time: Vec<Complex64>,
    pub freq: Vec<Complex64>,
}

/// Unitary N-point DFT.
pub fn unitary_dft(x: &[Complex64]) -> Vec<Complex64> {
    let mut v = x.to_vec();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut v);
    let s = 1.0 / (x.len() as f64).sqrt();
    v.iter_mut().for_each(|z| *z *= s);
    v
}

/// Unitary N-point inverse DFT.
pub fn unitary_idft(x: &[Complex64]) -> Vec<Complex64> {
    let mut v = x.to_vec();
    FftPlanner::new().plan_fft_inverse(x.len()).process(&mut v);
    let s = 1.0 / (x.len() as f64).sqrt();
    v.iter_mut().for_each(|z| *z *= s);
    v
}

/// Frequency response `h_j = sum_q taps_q exp(-j 2 pi q j / N)`.
pub fn fir_response(taps: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut v = vec![ZERO; n];
    v[..taps.len()].copy_from_slice(taps);
    FftPlanner::new().plan_fft_forward(n).process(&mut v);
    v
}

fn circular_convolve(taps: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|m| taps.iter().enumerate().map(|(q, h)| h * x[(m + n - q % n) % n]).sum())
        .collect()
}

/// Time-domain received symbol of one AP:
/// `sum_k sqrt(p_k) diag(exp(j theta_k)) (taps_k (*) IDFT(s_k)) + noise`.
///
/// `symbols[k]` are frequency-domain symbols; `noise` is time-domain.
pub fn time_domain_oracle(
    taps: &[&[Complex64]],
    symbols: &[&[Complex64]],
    theta: &[&[f64]],
    power: &[f64],
    noise: &[Complex64],
) -> OracleOutput {
    let n = noise.len();
    let mut time = noise.to_vec();
    for k in 0..taps.len() {
        let s_time = unitary_idft(symbols[k]);
        let conv = circular_convolve(taps[k], &s_time);
        let amp = power[k].sqrt();
        for m in 0..n {
            time[m] += amp * Complex64::from_polar(1.0, theta[k][m]) * conv[m];
        }
    }
    let freq = unitary_dft(&time);
    OracleOutput { time, freq }
}

/// Frequency-domain model `y_n = sum_k sqrt(p_k) sum_j J_{k, n-j} h_{k,j} s_{k,j} + eta_n`,
/// evaluated term by term.
pub fn frequency_domain_model(
    drift: &[PhaseDriftSpectrum],
    response: &[&[Complex64]],
    symbols: &[&[Complex64]],
    power: &[f64],
    noise: &[Complex64],
) -> Vec<Complex64> {
    let n = noise.len();
    (0..n)
        .map(|target| {
            let mut acc = noise[target];
            for k in 0..drift.len() {
                let amp = power[k].sqrt();
                for j in 0..n {
                    acc += amp * drift[k].get(target as i64 - j as i64) * response[k][j] * symbols[k][j];
                }
            }
            acc
        })
        .collect()
}
