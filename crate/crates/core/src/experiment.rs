//! Monte Carlo orchestration: geometries, per-trial draws, estimation,
//! combining, SINR accumulation and CSV output.
//!
//! Trials of a geometry are split into fixed-size chunks. Chunks run on the
//! rayon pool and their accumulators are merged in chunk order, so the
//! output does not depend on the number of threads.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::combining::{combine, Clusters, CombinerInput, Scheme};
use crate::config::{ExperimentConfig, IciSynthesis};
use crate::error::{Result, SimError};
use crate::estimation::{needed_indices, EstimatorContext, EstimatorKind, EstimatorModel};
use crate::network::{
    assign_pilots, form_dcc, gen_channel, large_scale_fading, place_nodes, NetworkRealization, Positions,
};
use crate::ofdm::{synth_pilot_observations, IciEngine, IciSource, PilotBook, TransmitGrid};
use crate::phase_noise::{
    correlation_b_fast, gen_pn_trace, CorrelationTable, CpeTable, KernelParams, PhasorSet,
};
use crate::rng::{stream_rng, Stream};
use crate::se::{
    finalize_sinr, lambda_ici, lambda_per_ap, se_per_block, trial_terms, EffectiveChannels, SinrAccumulator,
    SinrEstimate,
};

const CHUNK: usize = 8;

/// Fraction of invalid SINR records above which a run fails.
pub const MAX_INVALID_FRACTION: f64 = 0.01;

/// One estimator curve: a phase-noise curve with a given estimator, or the
/// reference without phase noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    Pn(EstimatorKind),
    NoPn,
}

impl Curve {
    pub fn estimator_name(self) -> &'static str {
        match self {
            Curve::Pn(k) => k.name(),
            Curve::NoPn => "none",
        }
    }

    pub fn label(self, scheme: Scheme) -> String {
        match self {
            Curve::Pn(k) => format!("{}_{}", scheme.name(), k.name()),
            Curve::NoPn => format!("{}_no_pn", scheme.name()),
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub curve: String,
    pub scheme: String,
    pub estimator: String,
    pub phase_noise: bool,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    /// `channel_use` or `block`
    pub metric: String,
    pub channel_use: Option<usize>,
    /// One-based OFDM symbol.
    pub tau: Option<usize>,
    pub se_per_ue: f64,
    pub standard_error: f64,
    pub n_records: usize,
    pub n_invalid: usize,
    pub n_trials: usize,
    pub n_geometries: usize,
    pub seed: u64,
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<ResultRecord>,
    pub n_sinr: usize,
    pub n_invalid: usize,
    pub n_fallback: usize,
    pub elapsed_s: f64,
}

impl RunSummary {
    pub fn invalid_fraction(&self) -> f64 {
        self.n_invalid as f64 / self.n_sinr.max(1) as f64
    }
}

/// Geometry `g`: placement, large-scale fading, pilots and clusters.
pub fn build_network(config: &ExperimentConfig, g: usize) -> NetworkRealization {
    let l = &config.layout;
    let seed = config.master_seed;
    let positions = place_nodes(l.n_aps, l.n_ues, l.area_side, &mut stream_rng(seed, g as u64, 0, Stream::Placement));
    let beta = large_scale_fading(
        &positions,
        l.area_side,
        config.propagation.wraparound,
        config.propagation.shadow_sigma_db,
        &mut stream_rng(seed, g as u64, 0, Stream::Shadowing),
    );
    let pilot_index = assign_pilots(&beta, l.pilot_length, config.pilot_policy);
    let serving = form_dcc(&beta, &pilot_index);
    NetworkRealization {
        positions,
        beta,
        serving,
        pilot_index,
        power: vec![config.propagation.ue_power; l.n_ues],
        noise_power: config.noise_power(),
    }
}

pub fn geometry_positions(config: &ExperimentConfig, g: usize) -> Positions {
    build_network(config, g).positions
}

/// Geometry-independent state shared by all trials of a run.
pub struct RunModels {
    pub curves: Vec<Curve>,
    pub models: Vec<EstimatorModel>,
    pub book: PilotBook,
    pub b00: f64,
    pub symbols: Vec<usize>,
    engine: IciEngine,
}

impl RunModels {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let layout = &config.layout;
        let book = PilotBook::new(layout.pilot_length);
        let sigma2 = config.pn_params().sigma2_total();
        let params = KernelParams::new(layout.n_subcarriers, sigma2, config.stride());
        let b00 = correlation_b_fast(0, 0, 0, &params).re;
        let table = CorrelationTable::build(params, needed_indices(layout, config.ici_mode));
        let off = KernelParams::new(layout.n_subcarriers, 0.0, config.stride());
        let off_table = CorrelationTable::build(off, needed_indices(layout, config.ici_mode));

        let mut curves = Vec::new();
        let mut models = Vec::new();
        for &kind in &config.estimators {
            curves.push(Curve::Pn(kind));
            models.push(EstimatorModel::build(kind, layout, &book, &table, config.ici_mode)?);
        }
        if config.include_no_pn {
            curves.push(Curve::NoPn);
            models.push(EstimatorModel::build(
                EstimatorKind::Unaware,
                layout,
                &book,
                &off_table,
                config.ici_mode,
            )?);
        }
        Ok(RunModels {
            curves,
            models,
            book,
            b00,
            symbols: config.needed_symbols(),
            engine: IciEngine::new(layout.n_subcarriers),
        })
    }
}

/// Accumulators of one geometry, flat `[curve][scheme][k][symbol]`.
#[derive(Debug, Clone)]
struct GeometryAcc {
    acc: Vec<SinrAccumulator>,
    fallbacks: usize,
}

impl GeometryAcc {
    fn new(len: usize) -> Self {
        GeometryAcc {
            acc: vec![SinrAccumulator::default(); len],
            fallbacks: 0,
        }
    }

    fn merge(&mut self, other: &GeometryAcc) {
        for (a, b) in self.acc.iter_mut().zip(&other.acc) {
            a.merge(b);
        }
        self.fallbacks += other.fallbacks;
    }
}

struct GeometryState<'a> {
    config: &'a ExperimentConfig,
    models: &'a RunModels,
    net: NetworkRealization,
    clusters: Clusters,
    contexts: Vec<EstimatorContext>,
    lambda_pn: Vec<f64>,
    lambda_off: Vec<f64>,
    g: usize,
}

impl GeometryState<'_> {
    fn index(&self, curve: usize, scheme: usize, k: usize, sym: usize) -> usize {
        let n_s = self.config.schemes.len();
        let n_k = self.net.n_ues();
        let n_t = self.models.symbols.len();
        ((curve * n_s + scheme) * n_k + k) * n_t + sym
    }

    fn acc_len(&self) -> usize {
        self.models.curves.len() * self.config.schemes.len() * self.net.n_ues() * self.models.symbols.len()
    }

    fn run_trial(&self, trial: usize, out: &mut GeometryAcc) {
        let config = self.config;
        let layout = &config.layout;
        let (seed, g, t) = (config.master_seed, self.g as u64, trial as u64);
        let net = &self.net;
        let (n_ues, n_aps, tau_c) = (net.n_ues(), net.n_aps(), layout.block_symbols);
        let channel = gen_channel(&net.beta, layout.n_blocks(), &mut stream_rng(seed, g, t, Stream::Channel));
        let pn = config.pn_params();
        let any_pn = self.models.curves.iter().any(|c| matches!(c, Curve::Pn(_)));

        let mut phasors = None;
        let cpe = if pn.is_disabled() || !any_pn {
            CpeTable::unit(n_ues, n_aps, tau_c)
        } else {
            let trace = gen_pn_trace(
                pn.sigma2_ap(),
                pn.sigma2_ue(),
                layout.n_subcarriers,
                layout.cp_length,
                tau_c,
                n_aps,
                n_ues,
                &mut stream_rng(seed, g, t, Stream::PhaseNoise),
            );
            let ph = PhasorSet::from_trace(&trace);
            let cpe = ph.common_phase_errors();
            phasors = Some(ph);
            cpe
        };

        let obs_pn = any_pn.then(|| {
            let mut noise = stream_rng(seed, g, t, Stream::Noise);
            match (&phasors, config.ici_synthesis) {
                (None, _) => synth_pilot_observations(
                    layout,
                    net,
                    &self.models.book,
                    &channel,
                    &cpe,
                    IciSource::Off,
                    &mut noise,
                ),
                (Some(ph), IciSynthesis::Exact) => {
                    let grid = TransmitGrid::draw(
                        layout,
                        &self.models.book,
                        &net.pilot_index,
                        &layout.pilot_symbols,
                        config.data_kind,
                        &mut stream_rng(seed, g, t, Stream::Data),
                    );
                    let src = IciSource::Exact {
                        grid: &grid,
                        phasors: ph,
                        engine: &self.models.engine,
                    };
                    synth_pilot_observations(layout, net, &self.models.book, &channel, &cpe, src, &mut noise)
                }
                (Some(_), IciSynthesis::Gaussian) => {
                    let mut rng = stream_rng(seed, g, t, Stream::Ici);
                    let src = IciSource::Gaussian {
                        one_minus_b00: 1.0 - self.models.b00,
                        rng: &mut rng,
                    };
                    synth_pilot_observations(layout, net, &self.models.book, &channel, &cpe, src, &mut noise)
                }
            }
        });
        let obs_off = config.include_no_pn.then(|| {
            let unit = CpeTable::unit(n_ues, n_aps, tau_c);
            let mut noise = stream_rng(seed, g, t, Stream::Noise);
            synth_pilot_observations(layout, net, &self.models.book, &channel, &unit, IciSource::Off, &mut noise)
        });

        let eff_pn = any_pn.then(|| EffectiveChannels::from_fn(n_ues, n_aps, tau_c, |i, l, tau| cpe.get(i, l, tau) * channel.get(i, l, 0)));
        let eff_off = config
            .include_no_pn
            .then(|| EffectiveChannels::from_fn(n_ues, n_aps, tau_c, |i, l, _| channel.get(i, l, 0)));

        for (ci, curve) in self.models.curves.iter().enumerate() {
            let (obs, eff, lambda) = match curve {
                Curve::Pn(_) => (obs_pn.as_ref(), eff_pn.as_ref(), &self.lambda_pn),
                Curve::NoPn => (obs_off.as_ref(), eff_off.as_ref(), &self.lambda_off),
            };
            let (obs, eff) = (obs.expect("observations"), eff.expect("channels"));
            let est = self.contexts[ci].estimate(obs);
            for (si, &scheme) in config.schemes.iter().enumerate() {
                for (ti, &tau) in self.models.symbols.iter().enumerate() {
                    let input = CombinerInput {
                        est: &est,
                        net,
                        clusters: &self.clusters,
                        tau,
                    };
                    for k in 0..n_ues {
                        let (v, fb) = combine(scheme, &input, k);
                        out.fallbacks += fb as usize;
                        let terms = trial_terms(&v, k, tau, &self.clusters.aps_of_ue[k], eff, net, lambda);
                        out.acc[self.index(ci, si, k, ti)].push(&terms, net.noise_power);
                    }
                }
            }
        }
    }
}

/// Finalized SINRs of one geometry, flat like the accumulators.
struct GeometryResult {
    sinr: Vec<SinrEstimate>,
    fallbacks: usize,
}

fn run_geometry(config: &ExperimentConfig, models: &RunModels, g: usize) -> Result<GeometryResult> {
    let net = build_network(config, g);
    let clusters = Clusters::new(&net);
    let contexts = models
        .models
        .iter()
        .map(|m| EstimatorContext::build(m, &net))
        .collect::<Result<Vec<_>>>()?;
    let lambda_pn = lambda_per_ap(&lambda_ici(&net, models.b00));
    let lambda_off = vec![0.0; net.n_aps()];
    let state = GeometryState {
        config,
        models,
        net,
        clusters,
        contexts,
        lambda_pn,
        lambda_off,
        g,
    };
    let len = state.acc_len();
    let n_chunks = config.n_trials.div_ceil(CHUNK);
    let parts: Vec<GeometryAcc> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = GeometryAcc::new(len);
            for trial in c * CHUNK..((c + 1) * CHUNK).min(config.n_trials) {
                state.run_trial(trial, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = GeometryAcc::new(len);
    for p in &parts {
        total.merge(p);
    }
    let n_s = config.schemes.len();
    let n_k = state.net.n_ues();
    let n_t = models.symbols.len();
    let mut sinr = Vec::with_capacity(len);
    for ci in 0..models.curves.len() {
        for si in 0..n_s {
            for k in 0..n_k {
                for ti in 0..n_t {
                    sinr.push(finalize_sinr(&total.acc[state.index(ci, si, k, ti)], state.net.power[k]));
                }
            }
        }
    }
    Ok(GeometryResult {
        sinr,
        fallbacks: total.fallbacks,
    })
}

#[derive(Default)]
struct Agg {
    sum: f64,
    var: f64,
    n: usize,
    invalid: usize,
}

impl Agg {
    fn push(&mut self, value: Option<(f64, f64)>) {
        match value {
            Some((se, err)) => {
                self.sum += se;
                self.var += err * err;
                self.n += 1;
            }
            None => self.invalid += 1,
        }
    }

    fn mean(&self) -> (f64, f64) {
        if self.n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (self.sum / self.n as f64, self.var.sqrt() / self.n as f64)
        }
    }
}

/// Runs every geometry and trial of `config` and returns the records.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let start = Instant::now();
    let models = RunModels::build(config)?;
    info!(
        "{}: {} curves x {} schemes, K = {}, L = {}, {} geometries x {} trials",
        config.experiment_id,
        models.curves.len(),
        config.schemes.len(),
        config.layout.n_ues,
        config.layout.n_aps,
        config.n_geometries,
        config.n_trials
    );
    let mut results = Vec::with_capacity(config.n_geometries);
    for g in 0..config.n_geometries {
        let t0 = Instant::now();
        results.push(run_geometry(config, &models, g)?);
        info!(
            "geometry {}/{} done in {:.2} s",
            g + 1,
            config.n_geometries,
            t0.elapsed().as_secs_f64()
        );
    }

    let layout = &config.layout;
    let n_s = config.schemes.len();
    let n_k = layout.n_ues;
    let n_t = models.symbols.len();
    let at = |ci: usize, si: usize, k: usize, ti: usize| ((ci * n_s + si) * n_k + k) * n_t + ti;
    let n_sinr = results.len() * results.first().map_or(0, |r| r.sinr.len());
    let n_invalid = results.iter().flat_map(|r| &r.sinr).filter(|s| !s.valid).count();
    let n_fallback = results.iter().map(|r| r.fallbacks).sum();
    let phase_noise = !config.pn_params().is_disabled();

    let mut records = Vec::new();
    for (ci, &curve) in models.curves.iter().enumerate() {
        for (si, &scheme) in config.schemes.iter().enumerate() {
            let rec = |metric: &str, channel_use: Option<usize>, tau: Option<usize>, agg: &Agg| {
                let (se, err) = agg.mean();
                ResultRecord {
                    experiment: config.experiment_id.clone(),
                    curve: curve.label(scheme),
                    scheme: scheme.name().into(),
                    estimator: curve.estimator_name().into(),
                    phase_noise: phase_noise && curve != Curve::NoPn,
                    k: n_k,
                    l: layout.n_aps,
                    metric: metric.into(),
                    channel_use,
                    tau,
                    se_per_ue: se,
                    standard_error: err,
                    n_records: agg.n,
                    n_invalid: agg.invalid,
                    n_trials: config.n_trials,
                    n_geometries: config.n_geometries,
                    seed: config.master_seed,
                }
            };
            for &c in &config.channel_uses {
                let tau = layout.symbol_of_channel_use(c);
                let ti = models.symbols.iter().position(|&s| s == tau).expect("symbol evaluated");
                let mut agg = Agg::default();
                for r in &results {
                    for k in 0..n_k {
                        let s = r.sinr[at(ci, si, k, ti)];
                        agg.push(s.valid.then(|| (s.se(), s.se_stderr())));
                    }
                }
                records.push(rec("channel_use", Some(c), Some(tau + 1), &agg));
            }
            if config.block_se {
                let mut agg = Agg::default();
                for r in &results {
                    for k in 0..n_k {
                        let sinrs: Vec<SinrEstimate> = (0..n_t).map(|ti| r.sinr[at(ci, si, k, ti)]).collect();
                        let err = sinrs.iter().map(|s| s.se_stderr().powi(2)).sum::<f64>().sqrt() / n_t as f64;
                        agg.push(se_per_block(&sinrs).map(|se| (se, err)));
                    }
                }
                records.push(rec("block", None, None, &agg));
            }
        }
    }
    let summary = RunSummary {
        records,
        n_sinr,
        n_invalid,
        n_fallback,
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    if n_fallback > 0 {
        warn!("pseudo-inverse fallback used {n_fallback} times");
    }
    info!(
        "{}: {} SINR records, {} invalid, {:.1} s",
        config.experiment_id, n_sinr, n_invalid, summary.elapsed_s
    );
    Ok(summary)
}

/// Fails with a numerical error if more than 1% of the SINR records are invalid.
pub fn check_invalid(summary: &RunSummary) -> Result<()> {
    if summary.invalid_fraction() > MAX_INVALID_FRACTION {
        return Err(SimError::Numerical(format!(
            "{} of {} SINR records have a non-positive denominator",
            summary.n_invalid, summary.n_sinr
        )));
    }
    Ok(())
}

pub fn write_csv<W: Write>(records: &[ResultRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(records: &[ResultRecord], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_csv(records, std::io::BufWriter::new(f))
}

/// X axis of a gnuplot table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotAxis {
    ChannelUse,
    Ues,
}

/// Whitespace-separated table: one row per x value, one column per curve,
/// `NaN` where a curve has no value. Uses the per-channel-use records.
pub fn write_gnuplot<W: Write>(records: &[ResultRecord], axis: PlotAxis, mut out: W) -> Result<()> {
    let rows: Vec<&ResultRecord> = records.iter().filter(|r| r.metric == "channel_use").collect();
    let mut curves: Vec<&str> = Vec::new();
    let mut xs: Vec<usize> = Vec::new();
    for r in &rows {
        if !curves.contains(&r.curve.as_str()) {
            curves.push(&r.curve);
        }
        let x = match axis {
            PlotAxis::ChannelUse => r.channel_use.unwrap_or(0),
            PlotAxis::Ues => r.k,
        };
        if !xs.contains(&x) {
            xs.push(x);
        }
    }
    xs.sort_unstable();
    let head = match axis {
        PlotAxis::ChannelUse => "channel_use",
        PlotAxis::Ues => "K",
    };
    writeln!(out, "# {head} {}", curves.join(" "))?;
    for x in xs {
        write!(out, "{x}")?;
        for c in &curves {
            let v = rows
                .iter()
                .find(|r| {
                    r.curve == *c
                        && match axis {
                            PlotAxis::ChannelUse => r.channel_use == Some(x),
                            PlotAxis::Ues => r.k == x,
                        }
                })
                .map_or(f64::NAN, |r| r.se_per_ue);
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reference scenario with channel uses 1..180, MMSE and MR, all
/// estimators plus the reference without phase noise.
pub fn preset_fig2(overrides: &[String]) -> Result<ExperimentConfig> {
    let base = ExperimentConfig {
        experiment_id: "fig2".into(),
        schemes: vec![Scheme::Mmse, Scheme::Mr],
        estimators: vec![EstimatorKind::PnaOfdm, EstimatorKind::PnaSc, EstimatorKind::Unaware],
        include_no_pn: true,
        output: "fig2.csv".into(),
        ..Default::default()
    };
    base.with_overrides(overrides)
}

pub const FIG3_UES: [usize; 5] = [1, 6, 10, 20, 100];

/// Reference scenario at channel use 60; `n_ues` is swept by [`run_fig3`].
pub fn preset_fig3(overrides: &[String]) -> Result<ExperimentConfig> {
    let base = ExperimentConfig {
        experiment_id: "fig3".into(),
        schemes: vec![Scheme::Mmse, Scheme::Mr],
        estimators: vec![EstimatorKind::PnaOfdm, EstimatorKind::PnaSc, EstimatorKind::Unaware],
        include_no_pn: true,
        channel_uses: vec![60],
        block_se: false,
        output: "fig3.csv".into(),
        ..Default::default()
    };
    base.with_overrides(overrides)
}

/// Runs `config` once per UE count and concatenates the records.
pub fn run_sweep_ues(config: &ExperimentConfig, ues: &[usize]) -> Result<RunSummary> {
    let mut all = RunSummary {
        records: Vec::new(),
        n_sinr: 0,
        n_invalid: 0,
        n_fallback: 0,
        elapsed_s: 0.0,
    };
    for &k in ues {
        let mut c = config.clone();
        c.layout.n_ues = k;
        let s = run_experiment(&c)?;
        all.records.extend(s.records);
        all.n_sinr += s.n_sinr;
        all.n_invalid += s.n_invalid;
        all.n_fallback += s.n_fallback;
        all.elapsed_s += s.elapsed_s;
    }
    Ok(all)
}

pub fn record_value(records: &[ResultRecord], curve: &str, metric: &str, channel_use: Option<usize>, k: Option<usize>) -> Option<f64> {
    records
        .iter()
        .find(|r| {
            r.curve == curve
                && r.metric == metric
                && (channel_use.is_none() || r.channel_use == channel_use)
                && (k.is_none() || Some(r.k) == k)
        })
        .map(|r| r.se_per_ue)
}
