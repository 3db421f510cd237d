//! Property suite runnable from the command line at small N.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::estimation::{needed_indices, EstimatorContext, EstimatorKind, EstimatorModel, IciMode};
use crate::network::{gen_channel, gen_fir_channel, NetworkRealization, Point, Positions, SimulationLayout};
use crate::ofdm::{
    draw_data_symbol, fir_response, frequency_domain_model, synth_pilot_observations, time_domain_oracle, DataKind,
    IciEngine, IciSource, PilotBook, TransmitGrid,
};
use crate::phase_noise::{
    correlation_b_fast, correlation_b_oracle, gen_pn_trace, phase_drift, CorrelationTable, KernelParams,
    PhaseDriftSpectrum, PhasorSet,
};
use crate::rng::{stream_rng, Stream};
use crate::se::lambda_ici;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn abs(name: &str, observed: f64, expected: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            observed,
            expected,
            tolerance,
            pass: (observed - expected).abs() <= tolerance,
        }
    }

    /// `observed` is a bound statistic that must stay at or below `tolerance`.
    fn below(name: &str, observed: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            observed,
            expected: 0.0,
            tolerance,
            pass: observed <= tolerance,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: observed {:.3e}, expected {:.3e}, tolerance {:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.expected,
            self.tolerance
        )
    }
}

/// Suite options. `fault_stride` adds one sample to the stride of the fast
/// kernel, which the oracle check must catch.
#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    pub n: usize,
    pub fault_stride: bool,
    pub mc_trials: usize,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            n: 64,
            fault_stride: false,
            mc_trials: 4000,
        }
    }
}

pub fn run_validation(opts: &ValidateOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let n = opts.n;
    out.push(kernel_oracle(n, 7e-4, opts.fault_stride));
    out.push(kernel_oracle(n, 0.0, opts.fault_stride));
    out.extend(parseval_and_trace(n, 7e-3));
    out.push(domain_equivalence(n, 20));
    out.extend(no_pn_reductions(n));
    out.push(lambda_trace_sum(n, 7e-3));
    out.extend(orthogonality(n, opts.mc_trials));
    out
}

/// Largest |fast - oracle| over `|i| <= 8`, `|dtau| <= 3`.
pub fn kernel_max_error(n: usize, sigma2: f64, stride: usize, fast_stride: usize) -> f64 {
    let p = KernelParams::new(n, sigma2, stride);
    let pf = KernelParams::new(n, sigma2, fast_stride);
    let mut worst: f64 = 0.0;
    for d in -3i64..=3 {
        for i1 in -8i64..=8 {
            for i2 in -8i64..=8 {
                let e = (correlation_b_fast(i1, i2, d, &pf) - correlation_b_oracle(i1, i2, d, &p)).norm();
                worst = worst.max(e);
            }
        }
    }
    worst
}

fn kernel_oracle(n: usize, sigma2: f64, fault: bool) -> CheckResult {
    let fast_stride = if fault { n + 1 } else { n };
    let name = format!("kernel oracle equivalence (N = {n}, sigma2 = {sigma2:e})");
    CheckResult::below(&name, kernel_max_error(n, sigma2, n, fast_stride), 1e-10)
}

pub fn parseval_and_trace(n: usize, sigma2: f64) -> Vec<CheckResult> {
    let mut rng = stream_rng(11, 0, 0, Stream::PhaseNoise);
    let trace = gen_pn_trace(sigma2 / 2.0, sigma2 / 2.0, n, 4, 4, 2, 2, &mut rng);
    let mut worst: f64 = 0.0;
    for tau in 0..4 {
        for k in 0..2 {
            for l in 0..2 {
                let j = phase_drift(&trace.theta(k, l, tau)).expect("non-empty");
                worst = worst.max((j.energy() - 1.0).abs());
            }
        }
    }
    let p = KernelParams::new(n, sigma2, n);
    let nn = n as i64;
    let diag: Vec<f64> = (0..nn).map(|i| correlation_b_fast(i, i, 0, &p).re).collect();
    let total: f64 = diag.iter().sum();
    let off: f64 = diag[1..].iter().sum();
    vec![
        CheckResult::below("Parseval of phase-drift spectra", worst, 1e-12),
        CheckResult::abs("trace sum of B at lag 0", total, 1.0, 1e-10),
        CheckResult::abs("1 - B00 equals off-diagonal trace", 1.0 - diag[0], off, 1e-10),
    ]
}

/// Worst relative error between the time-domain oracle and the
/// frequency-domain model over `draws` random FIR channels and PN traces.
pub fn domain_equivalence(n: usize, draws: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    let k = 2;
    for draw in 0..draws {
        let mut r = stream_rng(200 + draw, 0, 0, Stream::Data);
        let beta = DMatrix::from_element(k, 1, 1.0);
        let fir = gen_fir_channel(&beta, 6, 2.0, &mut r);
        let syms: Vec<Vec<Complex64>> = (0..k)
            .map(|ki| {
                (0..n)
                    .map(|j| {
                        if j % 4 == 0 {
                            Complex64::from_polar(1.0, 0.3 * (j + ki) as f64)
                        } else {
                            draw_data_symbol(DataKind::Qpsk, &mut r)
                        }
                    })
                    .collect()
            })
            .collect();
        let trace = gen_pn_trace(0.01, 0.01, n, 4, 1, 1, k, &mut r);
        let thetas: Vec<Vec<f64>> = (0..k).map(|ki| trace.theta(ki, 0, 0)).collect();
        let noise: Vec<Complex64> = (0..n).map(|_| crate::rng::complex_normal(&mut r, 0.01)).collect();
        let taps: Vec<&[Complex64]> = (0..k).map(|ki| fir.link(ki, 0)).collect();
        let sref: Vec<&[Complex64]> = syms.iter().map(Vec::as_slice).collect();
        let tref: Vec<&[f64]> = thetas.iter().map(Vec::as_slice).collect();
        let power = [0.4, 0.9];
        let out = time_domain_oracle(&taps, &sref, &tref, &power, &noise);
        let drift: Vec<PhaseDriftSpectrum> = thetas.iter().map(|t| phase_drift(t).expect("non-empty")).collect();
        let resp: Vec<Vec<Complex64>> = taps.iter().map(|t| fir_response(t, n)).collect();
        let rref: Vec<&[Complex64]> = resp.iter().map(Vec::as_slice).collect();
        let freq_noise = crate::ofdm::unitary_dft(&noise);
        let model = frequency_domain_model(&drift, &rref, &sref, &power, &freq_noise);
        let err: f64 = out.freq.iter().zip(&model).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = model.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max(err / norm);
    }
    CheckResult::below(&format!("time vs frequency domain (N = {n})"), worst, 1e-9)
}

fn toy_net(beta: DMatrix<f64>, pilots: Vec<usize>, noise_power: f64) -> NetworkRealization {
    let (k, l) = beta.shape();
    NetworkRealization {
        positions: Positions {
            aps: vec![Point { x: 0.0, y: 0.0 }; l],
            ues: vec![Point { x: 0.0, y: 0.0 }; k],
        },
        serving: DMatrix::from_element(k, l, true),
        beta,
        pilot_index: pilots,
        power: vec![0.1; k],
        noise_power,
    }
}

fn small_layout(n: usize) -> SimulationLayout {
    SimulationLayout {
        n_subcarriers: n,
        cp_length: 4,
        subcarrier_spacing: 15e3,
        block_subcarriers: 8,
        block_symbols: 4,
        pilot_length: 2,
        pilot_subcarriers: vec![0],
        pilot_symbols: vec![0, 1],
        n_aps: 1,
        n_ues: 2,
        area_side: 100.0,
    }
}

pub fn no_pn_reductions(n: usize) -> Vec<CheckResult> {
    let layout = small_layout(n);
    let book = PilotBook::new(layout.pilot_length);
    let (p, beta, s2) = (0.1, 2.0, 0.05);
    let tau_p = layout.pilot_length as f64;
    let want = p * beta * beta * tau_p / (p * beta * tau_p + s2);
    let mut out = Vec::new();
    for kind in [EstimatorKind::PnaOfdm, EstimatorKind::PnaSc, EstimatorKind::Unaware] {
        let table = CorrelationTable::build(
            KernelParams::new(n, 0.0, n),
            needed_indices(&layout, IciMode::AsPrinted),
        );
        let model = EstimatorModel::build(kind, &layout, &book, &table, IciMode::AsPrinted).expect("model");
        let net = toy_net(DMatrix::from_element(1, 1, beta), vec![0], s2);
        let ctx = EstimatorContext::build(&model, &net).expect("context");
        let (eps, _) = ctx.estimation_stats(0, 0, 2);
        out.push(CheckResult::abs(
            &format!("no phase noise: {} matches single-UE MMSE", kind.name()),
            eps,
            want,
            1e-10 * want,
        ));
    }
    out
}

fn lambda_trace_sum(n: usize, sigma2: f64) -> CheckResult {
    let p = KernelParams::new(n, sigma2, n);
    let b00 = correlation_b_fast(0, 0, 0, &p).re;
    let off: f64 = (1..n as i64).map(|i| correlation_b_fast(i, i, 0, &p).re).sum();
    let net = toy_net(DMatrix::from_element(1, 1, 3.0), vec![0], 1.0);
    let lam = lambda_ici(&net, b00)[(0, 0)];
    CheckResult::abs("ICI power equals p beta times off-diagonal trace", lam, 0.1 * 3.0 * off, 1e-10)
}

/// Monte Carlo orthogonality principle and error-variance decomposition for
/// the OFDM-aware estimator with exact ICI and independent data.
pub fn orthogonality(n: usize, trials: usize) -> Vec<CheckResult> {
    let layout = small_layout(n);
    let book = PilotBook::new(layout.pilot_length);
    let (s_ap, s_ue) = (2e-3, 2e-3);
    let params = KernelParams::new(n, s_ap + s_ue, layout.n_subcarriers + layout.cp_length);
    let b00 = correlation_b_fast(0, 0, 0, &params).re;
    let table = CorrelationTable::build(params, needed_indices(&layout, IciMode::IndependentData));
    let model =
        EstimatorModel::build(EstimatorKind::PnaOfdm, &layout, &book, &table, IciMode::IndependentData).expect("model");
    // two UEs sharing pilot 0 at one AP
    let beta = DMatrix::from_row_slice(2, 1, &[1.0, 0.4]);
    let net = toy_net(beta, vec![0, 0], 0.02);
    let ctx = EstimatorContext::build(&model, &net).expect("context");
    let engine = IciEngine::new(n);
    let tau_p = layout.pilot_length;
    let tau = 3;
    let mut cross = vec![Complex64::new(0.0, 0.0); tau_p];
    let mut cross_sq = vec![(0.0f64, 0.0f64); tau_p];
    let (mut err2, mut err4) = (0.0, 0.0);
    for t in 0..trials as u64 {
        let channel = gen_channel(&net.beta, layout.n_blocks(), &mut stream_rng(5, 0, t, Stream::Channel));
        let trace = gen_pn_trace(s_ap, s_ue, n, layout.cp_length, layout.block_symbols, 1, 2, &mut stream_rng(5, 0, t, Stream::PhaseNoise));
        let ph = PhasorSet::from_trace(&trace);
        let cpe = ph.common_phase_errors();
        let grid = TransmitGrid::draw(&layout, &book, &net.pilot_index, &layout.pilot_symbols, DataKind::Gaussian, &mut stream_rng(5, 0, t, Stream::Data));
        let src = IciSource::Exact {
            grid: &grid,
            phasors: &ph,
            engine: &engine,
        };
        let obs = synth_pilot_observations(&layout, &net, &book, &channel, &cpe, src, &mut stream_rng(5, 0, t, Stream::Noise));
        let y = obs.ap(0);
        let h_hat = ctx.lmmse_estimate(y, 0, 0, tau);
        let e = cpe.get(0, 0, tau) * channel.get(0, 0, 0) - h_hat;
        for i in 0..tau_p {
            let z = e * y[i].conj();
            cross[i] += z;
            cross_sq[i].0 += z.re * z.re;
            cross_sq[i].1 += z.im * z.im;
        }
        let m = e.norm_sqr();
        err2 += m;
        err4 += m * m;
    }
    let nt = trials as f64;
    let mut worst_z: f64 = 0.0;
    for i in 0..tau_p {
        let m = cross[i] / nt;
        let se_re = ((cross_sq[i].0 / nt - m.re * m.re) / nt).sqrt();
        let se_im = ((cross_sq[i].1 / nt - m.im * m.im) / nt).sqrt();
        worst_z = worst_z.max((m.re / se_re).abs()).max((m.im / se_im).abs());
    }
    let mean = err2 / nt;
    let se = ((err4 / nt - mean * mean) / nt).sqrt();
    let (eps, _) = ctx.estimation_stats(0, 0, tau);
    let want = b00 * net.beta[(0, 0)] - eps;
    vec![
        CheckResult::below("orthogonality principle (max |z| over pilot samples)", worst_z, 3.0),
        CheckResult::abs("error variance B00 beta - eps", mean, want, 3.0 * se),
    ]
}
