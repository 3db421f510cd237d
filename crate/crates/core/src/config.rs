//! Experiment configuration: a flat `key = value` text format.
//!
//! Lines starting with `#` and trailing `# ...` are comments. Keys are case
//! sensitive and unknown keys are rejected. Lists are comma separated;
//! integer lists also accept `a..b` inclusive ranges. Units:
//!
//! | key | unit / values | default |
//! |---|---|---|
//! | `experiment_id` | text | `custom` |
//! | `n_aps`, `n_ues` | count | 200, 10 |
//! | `area_side_m` | m | 1000 |
//! | `n_subcarriers` | count, even | 1200 |
//! | `cp_length` | samples | 84 |
//! | `subcarrier_spacing_hz` | Hz | 15000 |
//! | `block_subcarriers`, `block_symbols` | count | 12, 15 |
//! | `pilot_length` | count | 12 |
//! | `pilot_subcarriers` | zero-based subcarriers in the block | 0 |
//! | `pilot_symbols` | one-based symbols in the block | 1..12 |
//! | `carrier_hz` | Hz | 2e9 |
//! | `gamma_ap`, `gamma_ue` | oscillator constant, s | 4e-17 |
//! | `phase_noise` | on / off | on |
//! | `wraparound` | bool | true |
//! | `shadow_sigma_db` | dB | 4 |
//! | `ue_power_w` | W | 0.1 |
//! | `noise_figure_db` | dB | 7 |
//! | `pilot_policy` | round_robin / greedy | round_robin |
//! | `estimators` | pna_ofdm, pna_sc, unaware | all three |
//! | `schemes` | mr, lp_mmse, p_mmse, mmse | mmse, mr |
//! | `include_no_pn` | bool | true |
//! | `ici_mode` | as_printed / independent_data | as_printed |
//! | `ici_synthesis` | exact / gaussian | exact |
//! | `cp_consistent_correlation` | bool | false |
//! | `data_symbols` | gaussian / qpsk | gaussian |
//! | `channel_uses` | one-based channel uses in the block | 1..180 |
//! | `block_se` | bool | true |
//! | `n_geometries`, `n_trials` | count | 50, 200 |
//! | `master_seed` | u64 | 1 |
//! | `output` | path | `results.csv` |
//! | `plot_output` | path, optional gnuplot table | unset |

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::combining::Scheme;
use crate::error::{Result, SimError};
use crate::estimation::{EstimatorKind, IciMode};
use crate::network::{PilotPolicy, Propagation, SimulationLayout};
use crate::ofdm::DataKind;
use crate::phase_noise::{PnParams, StrideMode};

/// How the inter-carrier interference on pilot samples is produced per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IciSynthesis {
    #[default]
    Exact,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub layout: SimulationLayout,
    pub propagation: Propagation,
    pub carrier_hz: f64,
    pub gamma_ap: f64,
    pub gamma_ue: f64,
    pub phase_noise: bool,
    pub pilot_policy: PilotPolicy,
    pub estimators: Vec<EstimatorKind>,
    pub schemes: Vec<Scheme>,
    pub include_no_pn: bool,
    pub ici_mode: IciMode,
    pub ici_synthesis: IciSynthesis,
    pub stride_mode: StrideMode,
    pub data_kind: DataKind,
    /// One-based channel uses to report.
    pub channel_uses: Vec<usize>,
    pub block_se: bool,
    pub n_geometries: usize,
    pub n_trials: usize,
    pub master_seed: u64,
    pub output: PathBuf,
    pub plot_output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let layout = SimulationLayout::reference();
        let channel_uses = (1..=layout.block_channel_uses()).collect();
        ExperimentConfig {
            experiment_id: "custom".into(),
            layout,
            propagation: Propagation::default(),
            carrier_hz: 2e9,
            gamma_ap: 4e-17,
            gamma_ue: 4e-17,
            phase_noise: true,
            pilot_policy: PilotPolicy::RoundRobin,
            estimators: vec![EstimatorKind::PnaOfdm, EstimatorKind::PnaSc, EstimatorKind::Unaware],
            schemes: vec![Scheme::Mmse, Scheme::Mr],
            include_no_pn: true,
            ici_mode: IciMode::AsPrinted,
            ici_synthesis: IciSynthesis::Exact,
            stride_mode: StrideMode::Symbol,
            data_kind: DataKind::Gaussian,
            channel_uses,
            block_se: true,
            n_geometries: 50,
            n_trials: 200,
            master_seed: 1,
            output: PathBuf::from("results.csv"),
            plot_output: None,
        }
    }
}

impl ExperimentConfig {
    /// Reduced desk-scale scenario.
    pub fn reduced() -> Self {
        let layout = SimulationLayout::reduced();
        ExperimentConfig {
            experiment_id: "reduced".into(),
            channel_uses: (1..=layout.block_channel_uses()).collect(),
            layout,
            n_geometries: 5,
            n_trials: 50,
            ..Default::default()
        }
    }

    pub fn pn_params(&self) -> PnParams {
        let (ga, gu) = if self.phase_noise {
            (self.gamma_ap, self.gamma_ue)
        } else {
            (0.0, 0.0)
        };
        PnParams {
            carrier_hz: self.carrier_hz,
            gamma_ap: ga,
            gamma_ue: gu,
            sample_time: self.layout.sample_time(),
        }
    }

    pub fn noise_power(&self) -> f64 {
        self.propagation.noise_power(self.layout.bandwidth())
    }

    pub fn stride(&self) -> usize {
        self.stride_mode.stride(self.layout.n_subcarriers, self.layout.cp_length)
    }

    /// Zero-based symbols whose SINR is required.
    pub fn needed_symbols(&self) -> Vec<usize> {
        if self.block_se {
            return (0..self.layout.block_symbols).collect();
        }
        let set: BTreeSet<usize> = self
            .channel_uses
            .iter()
            .map(|&c| self.layout.symbol_of_channel_use(c))
            .collect();
        set.into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let fail = |m: &str| Err(SimError::InvalidInput(m.to_string()));
        if self.n_geometries == 0 || self.n_trials == 0 {
            return fail("n_geometries and n_trials must be >= 1");
        }
        if self.estimators.is_empty() && !self.include_no_pn {
            return fail("nothing to evaluate: no estimators and include_no_pn = false");
        }
        if self.schemes.is_empty() {
            return fail("schemes must not be empty");
        }
        let cu = self.layout.block_channel_uses();
        if let Some(c) = self.channel_uses.iter().find(|&&c| c == 0 || c > cu) {
            return Err(SimError::InvalidInput(format!("channel use {c} outside [1, {cu}]")));
        }
        if !self.block_se && self.channel_uses.is_empty() {
            return fail("channel_uses is empty and block_se = false");
        }
        for (name, v) in [
            ("carrier_hz", self.carrier_hz),
            ("gamma_ap", self.gamma_ap),
            ("gamma_ue", self.gamma_ue),
            ("ue_power_w", self.propagation.ue_power),
            ("shadow_sigma_db", self.propagation.shadow_sigma_db),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let l = &mut self.layout;
        match key {
            "experiment_id" => self.experiment_id = value.to_string(),
            "n_aps" => l.n_aps = parse_num(value)?,
            "n_ues" => l.n_ues = parse_num(value)?,
            "area_side_m" => l.area_side = parse_num(value)?,
            "n_subcarriers" => l.n_subcarriers = parse_num(value)?,
            "cp_length" => l.cp_length = parse_num(value)?,
            "subcarrier_spacing_hz" => l.subcarrier_spacing = parse_num(value)?,
            "block_subcarriers" => l.block_subcarriers = parse_num(value)?,
            "block_symbols" => l.block_symbols = parse_num(value)?,
            "pilot_length" => l.pilot_length = parse_num(value)?,
            "pilot_subcarriers" => l.pilot_subcarriers = parse_index_list(value)?,
            "pilot_symbols" => {
                let v = parse_index_list(value)?;
                if v.contains(&0) {
                    return Err("pilot_symbols are one-based".into());
                }
                l.pilot_symbols = v.into_iter().map(|s| s - 1).collect();
            }
            "carrier_hz" => self.carrier_hz = parse_num(value)?,
            "gamma_ap" => self.gamma_ap = parse_num(value)?,
            "gamma_ue" => self.gamma_ue = parse_num(value)?,
            "phase_noise" => self.phase_noise = parse_bool(value)?,
            "wraparound" => self.propagation.wraparound = parse_bool(value)?,
            "shadow_sigma_db" => self.propagation.shadow_sigma_db = parse_num(value)?,
            "ue_power_w" => self.propagation.ue_power = parse_num(value)?,
            "noise_figure_db" => self.propagation.noise_figure_db = parse_num(value)?,
            "pilot_policy" => {
                self.pilot_policy = match value {
                    "round_robin" => PilotPolicy::RoundRobin,
                    "greedy" => PilotPolicy::Greedy,
                    _ => return Err(format!("unknown pilot_policy '{value}'")),
                }
            }
            "estimators" => {
                self.estimators = parse_list(value, |s| {
                    EstimatorKind::parse(s).ok_or_else(|| format!("unknown estimator '{s}'"))
                })?
            }
            "schemes" => {
                self.schemes = parse_list(value, |s| Scheme::parse(s).ok_or_else(|| format!("unknown scheme '{s}'")))?
            }
            "include_no_pn" => self.include_no_pn = parse_bool(value)?,
            "ici_mode" => {
                self.ici_mode = match value {
                    "as_printed" => IciMode::AsPrinted,
                    "independent_data" => IciMode::IndependentData,
                    _ => return Err(format!("unknown ici_mode '{value}'")),
                }
            }
            "ici_synthesis" => {
                self.ici_synthesis = match value {
                    "exact" => IciSynthesis::Exact,
                    "gaussian" => IciSynthesis::Gaussian,
                    _ => return Err(format!("unknown ici_synthesis '{value}'")),
                }
            }
            "cp_consistent_correlation" => {
                self.stride_mode = if parse_bool(value)? {
                    StrideMode::CpConsistent
                } else {
                    StrideMode::Symbol
                }
            }
            "data_symbols" => {
                self.data_kind = match value {
                    "gaussian" => DataKind::Gaussian,
                    "qpsk" => DataKind::Qpsk,
                    _ => return Err(format!("unknown data_symbols '{value}'")),
                }
            }
            "channel_uses" => self.channel_uses = parse_index_list(value)?,
            "block_se" => self.block_se = parse_bool(value)?,
            "n_geometries" => self.n_geometries = parse_num(value)?,
            "n_trials" => self.n_trials = parse_num(value)?,
            "master_seed" => self.master_seed = parse_num(value)?,
            "output" => self.output = PathBuf::from(value),
            "plot_output" => {
                self.plot_output = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Parses config text on top of `base`.
    pub fn parse_onto(mut base: ExperimentConfig, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SimError::Config {
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            base.set(key.trim(), value.trim()).map_err(|message| SimError::Config {
                line: i + 1,
                message,
            })?;
        }
        base.validate()?;
        Ok(base)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_onto(ExperimentConfig::default(), text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides and revalidates.
    pub fn with_overrides(mut self, overrides: &[String]) -> Result<Self> {
        for (i, o) in overrides.iter().enumerate() {
            let (k, v) = o.split_once('=').ok_or_else(|| SimError::Config {
                line: i + 1,
                message: format!("override '{o}' is not key=value"),
            })?;
            self.set(k.trim(), v.trim()).map_err(|message| SimError::Config {
                line: i + 1,
                message,
            })?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Full effective configuration including derived quantities, as config text.
    pub fn echo(&self) -> String {
        let l = &self.layout;
        let pn = self.pn_params();
        let join = |v: Vec<String>| v.join(", ");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("experiment_id", self.experiment_id.clone());
        kv("n_aps", l.n_aps.to_string());
        kv("n_ues", l.n_ues.to_string());
        kv("area_side_m", l.area_side.to_string());
        kv("n_subcarriers", l.n_subcarriers.to_string());
        kv("cp_length", l.cp_length.to_string());
        kv("subcarrier_spacing_hz", l.subcarrier_spacing.to_string());
        kv("block_subcarriers", l.block_subcarriers.to_string());
        kv("block_symbols", l.block_symbols.to_string());
        kv("pilot_length", l.pilot_length.to_string());
        kv("pilot_subcarriers", join(l.pilot_subcarriers.iter().map(|x| x.to_string()).collect()));
        kv("pilot_symbols", join(l.pilot_symbols.iter().map(|x| (x + 1).to_string()).collect()));
        kv("carrier_hz", self.carrier_hz.to_string());
        kv("gamma_ap", self.gamma_ap.to_string());
        kv("gamma_ue", self.gamma_ue.to_string());
        kv("phase_noise", if self.phase_noise { "on" } else { "off" }.into());
        kv("wraparound", self.propagation.wraparound.to_string());
        kv("shadow_sigma_db", self.propagation.shadow_sigma_db.to_string());
        kv("ue_power_w", self.propagation.ue_power.to_string());
        kv("noise_figure_db", self.propagation.noise_figure_db.to_string());
        kv(
            "pilot_policy",
            match self.pilot_policy {
                PilotPolicy::RoundRobin => "round_robin",
                PilotPolicy::Greedy => "greedy",
            }
            .into(),
        );
        kv("estimators", join(self.estimators.iter().map(|e| e.name().to_string()).collect()));
        kv("schemes", join(self.schemes.iter().map(|e| e.name().to_string()).collect()));
        kv("include_no_pn", self.include_no_pn.to_string());
        kv("ici_mode", self.ici_mode.name().into());
        kv(
            "ici_synthesis",
            match self.ici_synthesis {
                IciSynthesis::Exact => "exact",
                IciSynthesis::Gaussian => "gaussian",
            }
            .into(),
        );
        kv(
            "cp_consistent_correlation",
            (self.stride_mode == StrideMode::CpConsistent).to_string(),
        );
        kv(
            "data_symbols",
            match self.data_kind {
                DataKind::Gaussian => "gaussian",
                DataKind::Qpsk => "qpsk",
            }
            .into(),
        );
        kv("channel_uses", compress_ranges(&self.channel_uses));
        kv("block_se", self.block_se.to_string());
        kv("n_geometries", self.n_geometries.to_string());
        kv("n_trials", self.n_trials.to_string());
        kv("master_seed", self.master_seed.to_string());
        kv("output", self.output.display().to_string());
        if let Some(p) = &self.plot_output {
            kv("plot_output", p.display().to_string());
        }
        let _ = writeln!(s, "# derived: bandwidth_hz = {}", l.bandwidth());
        let _ = writeln!(s, "# derived: sample_time_s = {:e}", l.sample_time());
        let _ = writeln!(s, "# derived: sigma2_pn_ap = {:e}", pn.sigma2_ap());
        let _ = writeln!(s, "# derived: sigma2_pn_ue = {:e}", pn.sigma2_ue());
        let _ = writeln!(s, "# derived: sigma2_pn_total = {:e}", pn.sigma2_total());
        let _ = writeln!(s, "# derived: kernel_stride = {}", self.stride());
        let _ = writeln!(s, "# derived: noise_power_w = {:e}", self.noise_power());
        let _ = writeln!(s, "# derived: coherence_time_s = {:e}", l.block_symbols as f64 * (l.n_subcarriers + l.cp_length) as f64 * l.sample_time());
        let _ = writeln!(s, "# derived: coherence_bandwidth_hz = {}", l.block_subcarriers as f64 * l.subcarrier_spacing);
        s
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("invalid number '{v}'"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("invalid boolean '{v}'")),
    }
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn parse_index_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let (a, b): (usize, usize) = (parse_num(a.trim())?, parse_num(b.trim())?);
            if a > b {
                return Err(format!("empty range '{item}'"));
            }
            out.extend(a..=b);
        } else {
            out.push(parse_num(item)?);
        }
    }
    Ok(out)
}

fn compress_ranges(v: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[j] + 1 {
            j += 1;
        }
        parts.push(if j > i + 1 {
            format!("{}..{}", v[i], v[j])
        } else if j == i + 1 {
            format!("{}, {}", v[i], v[j])
        } else {
            v[i].to_string()
        });
        i = j + 1;
    }
    parts.join(", ")
}
