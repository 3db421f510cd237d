//! Network geometry, large-scale fading, pilot assignment, cooperation
//! clusters and block-fading small-scale channels.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::rng::{complex_normal, normal};

/// Time-frequency layout of one OFDM coherence block and the node counts.
///
/// `pilot_symbols` are zero-based OFDM symbol indices inside the block;
/// the config file uses one-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLayout {
    pub n_subcarriers: usize,
    pub cp_length: usize,
    pub subcarrier_spacing: f64,
    pub block_subcarriers: usize,
    pub block_symbols: usize,
    pub pilot_length: usize,
    pub pilot_subcarriers: Vec<usize>,
    pub pilot_symbols: Vec<usize>,
    pub n_aps: usize,
    pub n_ues: usize,
    pub area_side: f64,
}

/// One pilot channel use inside the coherence block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PilotPosition {
    pub subcarrier: usize,
    pub symbol: usize,
}

impl SimulationLayout {
    /// Scenario of the reference evaluation: 200 APs, 10 UEs on 1 km^2,
    /// N = 1200, 12 x 15 coherence block, pilots on subcarrier 0 of
    /// symbols 1..=12.
    pub fn reference() -> Self {
        SimulationLayout {
            n_subcarriers: 1200,
            cp_length: 84,
            subcarrier_spacing: 15e3,
            block_subcarriers: 12,
            block_symbols: 15,
            pilot_length: 12,
            pilot_subcarriers: vec![0],
            pilot_symbols: (0..12).collect(),
            n_aps: 200,
            n_ues: 10,
            area_side: 1000.0,
        }
    }

    /// Reduced layout that keeps every code path alive at desk scale.
    pub fn reduced() -> Self {
        SimulationLayout {
            n_subcarriers: 120,
            cp_length: 8,
            subcarrier_spacing: 15e3,
            block_subcarriers: 12,
            block_symbols: 5,
            pilot_length: 4,
            pilot_subcarriers: vec![0],
            pilot_symbols: (0..4).collect(),
            n_aps: 30,
            n_ues: 5,
            area_side: 1000.0,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.n_subcarriers.div_ceil(self.block_subcarriers)
    }

    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing
    }

    pub fn sample_time(&self) -> f64 {
        1.0 / self.bandwidth()
    }

    /// Channel uses per coherence block.
    pub fn block_channel_uses(&self) -> usize {
        self.block_subcarriers * self.block_symbols
    }

    /// Pilot positions in stacking order: symbol-major, then subcarrier.
    pub fn pilot_positions(&self) -> Vec<PilotPosition> {
        self.pilot_symbols
            .iter()
            .flat_map(|&symbol| {
                self.pilot_subcarriers
                    .iter()
                    .map(move |&subcarrier| PilotPosition { subcarrier, symbol })
            })
            .collect()
    }

    /// Symbol that carries channel use `c` (one-based) under the
    /// `ceil(c / N_c)` convention; returned zero-based.
    pub fn symbol_of_channel_use(&self, channel_use: usize) -> usize {
        channel_use.div_ceil(self.block_subcarriers) - 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SimError::InvalidInput(m));
        if self.n_subcarriers < 2 || self.n_subcarriers % 2 != 0 {
            return fail(format!("n_subcarriers must be even and >= 2, got {}", self.n_subcarriers));
        }
        if self.block_subcarriers == 0 || self.block_subcarriers > self.n_subcarriers {
            return fail(format!(
                "block_subcarriers must lie in [1, n_subcarriers], got {}",
                self.block_subcarriers
            ));
        }
        if self.block_symbols == 0 {
            return fail("block_symbols must be >= 1".into());
        }
        if self.pilot_length == 0 {
            return fail("pilot_length must be >= 1".into());
        }
        if self.pilot_length > self.block_channel_uses() {
            return fail(format!(
                "pilot_length ({}) must not exceed block_subcarriers * block_symbols ({})",
                self.pilot_length,
                self.block_channel_uses()
            ));
        }
        if self.pilot_subcarriers.len() * self.pilot_symbols.len() != self.pilot_length {
            return fail(format!(
                "|pilot_subcarriers| * |pilot_symbols| = {} but pilot_length = {}",
                self.pilot_subcarriers.len() * self.pilot_symbols.len(),
                self.pilot_length
            ));
        }
        if let Some(&n) = self.pilot_subcarriers.iter().find(|&&n| n >= self.block_subcarriers) {
            return fail(format!("pilot subcarrier {n} outside [0, {})", self.block_subcarriers));
        }
        if let Some(&t) = self.pilot_symbols.iter().find(|&&t| t >= self.block_symbols) {
            return fail(format!("pilot symbol {} outside [1, {}]", t + 1, self.block_symbols));
        }
        if has_duplicates(&self.pilot_subcarriers) || has_duplicates(&self.pilot_symbols) {
            return fail("pilot subcarrier and symbol sets must not repeat entries".into());
        }
        if self.n_aps == 0 || self.n_ues == 0 {
            return fail("n_aps and n_ues must be >= 1".into());
        }
        if !(self.area_side > 0.0) {
            return fail("area_side must be positive".into());
        }
        if !(self.subcarrier_spacing > 0.0) {
            return fail("subcarrier_spacing must be positive".into());
        }
        Ok(())
    }
}

fn has_duplicates(v: &[usize]) -> bool {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.windows(2).any(|w| w[0] == w[1])
}

/// Propagation and power constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub wraparound: bool,
    pub shadow_sigma_db: f64,
    pub ue_power: f64,
    pub noise_figure_db: f64,
}

impl Default for Propagation {
    fn default() -> Self {
        Propagation {
            wraparound: true,
            shadow_sigma_db: 4.0,
            ue_power: 0.1,
            noise_figure_db: 7.0,
        }
    }
}

impl Propagation {
    /// Thermal noise power in watts over `bandwidth` Hz.
    pub fn noise_power(&self, bandwidth: f64) -> f64 {
        let dbm = -174.0 + 10.0 * bandwidth.log10() + self.noise_figure_db;
        10f64.powf((dbm - 30.0) / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Positions {
    pub aps: Vec<Point>,
    pub ues: Vec<Point>,
}

/// Drops APs and UEs i.i.d. uniformly on the square `[0, side)^2`.
pub fn place_nodes(n_aps: usize, n_ues: usize, side: f64, rng: &mut ChaCha8Rng) -> Positions {
    let mut draw = |n: usize| -> Vec<Point> {
        (0..n)
            .map(|_| Point {
                x: rng.gen::<f64>() * side,
                y: rng.gen::<f64>() * side,
            })
            .collect()
    };
    let aps = draw(n_aps);
    let ues = draw(n_ues);
    Positions { aps, ues }
}

pub const MIN_DISTANCE: f64 = 1.0;

/// 2-D distance, optionally the shortest among the 9 wrap-around images.
pub fn link_distance(a: Point, b: Point, side: f64, wraparound: bool) -> f64 {
    let direct = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
    let d = if wraparound {
        let mut best = f64::INFINITY;
        for sx in [-side, 0.0, side] {
            for sy in [-side, 0.0, side] {
                let dx = a.x - b.x + sx;
                let dy = a.y - b.y + sy;
                best = best.min((dx * dx + dy * dy).sqrt());
            }
        }
        best
    } else {
        direct
    };
    d.max(MIN_DISTANCE)
}

/// Path-loss gain in dB at distance `d` meters (no shadowing).
pub fn path_loss_db(d: f64) -> f64 {
    -30.5 - 36.7 * d.max(MIN_DISTANCE).log10()
}

/// Large-scale fading matrix, K rows (UEs) by L columns (APs).
pub fn large_scale_fading(
    positions: &Positions,
    side: f64,
    wraparound: bool,
    shadow_sigma_db: f64,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let k = positions.ues.len();
    let l = positions.aps.len();
    let mut beta = DMatrix::zeros(k, l);
    for (ki, ue) in positions.ues.iter().enumerate() {
        for (li, ap) in positions.aps.iter().enumerate() {
            let d = link_distance(*ue, *ap, side, wraparound);
            let shadow = if shadow_sigma_db > 0.0 {
                normal(rng, shadow_sigma_db)
            } else {
                0.0
            };
            beta[(ki, li)] = 10f64.powf((path_loss_db(d) + shadow) / 10.0);
        }
    }
    beta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PilotPolicy {
    #[default]
    RoundRobin,
    Greedy,
}

/// Zero-based pilot index per UE.
pub fn assign_pilots(beta: &DMatrix<f64>, pilot_length: usize, policy: PilotPolicy) -> Vec<usize> {
    let k = beta.nrows();
    match policy {
        PilotPolicy::RoundRobin => (0..k).map(|ki| ki % pilot_length).collect(),
        PilotPolicy::Greedy => {
            let strongest: Vec<(usize, f64)> = (0..k)
                .map(|ki| {
                    beta.row(ki)
                        .iter()
                        .copied()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |acc, (l, b)| if b > acc.1 { (l, b) } else { acc })
                })
                .collect();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| strongest[b].1.total_cmp(&strongest[a].1).then(a.cmp(&b)));
            let mut pilots = vec![usize::MAX; k];
            for &ki in &order {
                let master = strongest[ki].0;
                let mut contamination = vec![0.0; pilot_length];
                for (other, &t) in pilots.iter().enumerate() {
                    if t != usize::MAX {
                        contamination[t] += beta[(other, master)];
                    }
                }
                let best = contamination
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (t, &c)| if c < acc.1 { (t, c) } else { acc })
                    .0;
                pilots[ki] = best;
            }
            pilots
        }
    }
}

/// Index of the AP with the largest gain to `ue` (ties go to the lowest index).
pub fn master_ap(beta: &DMatrix<f64>, ue: usize) -> usize {
    let row = beta.row(ue);
    let mut best = 0;
    for l in 1..row.len() {
        if row[l] > row[best] {
            best = l;
        }
    }
    best
}

/// Cooperation-cluster matrix (K x L): on every pilot an AP serves the
/// strongest UE using it, then each UE's master AP is switched on.
pub fn form_dcc(beta: &DMatrix<f64>, pilot_index: &[usize]) -> DMatrix<bool> {
    let (k, l) = beta.shape();
    let mut d = DMatrix::from_element(k, l, false);
    for li in 0..l {
        for ki in 0..k {
            let t = pilot_index[ki];
            let strongest = (0..k)
                .filter(|&i| pilot_index[i] == t)
                .fold(None::<usize>, |acc, i| match acc {
                    Some(j) if beta[(j, li)] >= beta[(i, li)] => Some(j),
                    _ => Some(i),
                });
            if strongest == Some(ki) {
                d[(ki, li)] = true;
            }
        }
    }
    for ki in 0..k {
        d[(ki, master_ap(beta, ki))] = true;
    }
    d
}

/// Geometry plus everything derived from it that stays fixed over trials.
#[derive(Debug, Clone)]
pub struct NetworkRealization {
    pub positions: Positions,
    pub beta: DMatrix<f64>,
    pub serving: DMatrix<bool>,
    pub pilot_index: Vec<usize>,
    pub power: Vec<f64>,
    pub noise_power: f64,
}

impl NetworkRealization {
    pub fn n_ues(&self) -> usize {
        self.beta.nrows()
    }

    pub fn n_aps(&self) -> usize {
        self.beta.ncols()
    }

    /// APs serving UE `k`.
    pub fn cluster(&self, k: usize) -> Vec<usize> {
        (0..self.n_aps()).filter(|&l| self.serving[(k, l)]).collect()
    }

    /// UEs served by AP `l`.
    pub fn served_by(&self, l: usize) -> Vec<usize> {
        (0..self.n_ues()).filter(|&k| self.serving[(k, l)]).collect()
    }

    /// UEs whose cluster overlaps the cluster of `k`.
    pub fn partial_set(&self, k: usize) -> Vec<usize> {
        (0..self.n_ues())
            .filter(|&i| (0..self.n_aps()).any(|l| self.serving[(k, l)] && self.serving[(i, l)]))
            .collect()
    }
}

/// Frequency-domain block-fading channels, one coefficient per
/// (UE, AP, coherence block).
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    n_ues: usize,
    n_aps: usize,
    n_blocks: usize,
    h: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn from_fn(
        n_ues: usize,
        n_aps: usize,
        n_blocks: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut h = Vec::with_capacity(n_ues * n_aps * n_blocks);
        for k in 0..n_ues {
            for l in 0..n_aps {
                for r in 0..n_blocks {
                    h.push(f(k, l, r));
                }
            }
        }
        ChannelRealization {
            n_ues,
            n_aps,
            n_blocks,
            h,
        }
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize, r: usize) -> Complex64 {
        self.h[(k * self.n_aps + l) * self.n_blocks + r]
    }

    /// All blocks of link (k, l).
    pub fn link(&self, k: usize, l: usize) -> &[Complex64] {
        let start = (k * self.n_aps + l) * self.n_blocks;
        &self.h[start..start + self.n_blocks]
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn n_ues(&self) -> usize {
        self.n_ues
    }

    pub fn n_aps(&self) -> usize {
        self.n_aps
    }
}

/// Independent `CN(0, beta_kl)` draw per (k, l, block).
pub fn gen_channel(beta: &DMatrix<f64>, n_blocks: usize, rng: &mut ChaCha8Rng) -> ChannelRealization {
    let (k, l) = beta.shape();
    ChannelRealization::from_fn(k, l, n_blocks, |ki, li, _| complex_normal(rng, beta[(ki, li)]))
}

/// Time-domain multipath taps per link, used by the time-domain oracle.
#[derive(Debug, Clone)]
pub struct FirChannel {
    pub n_aps: usize,
    pub taps: Vec<Vec<Complex64>>,
}

impl FirChannel {
    pub fn link(&self, k: usize, l: usize) -> &[Complex64] {
        &self.taps[k * self.n_aps + l]
    }
}

/// Q-tap channels with exponential power-delay profile `exp(-q / decay)`
/// normalized so the tap powers of link (k, l) sum to `beta_kl`.
pub fn gen_fir_channel(beta: &DMatrix<f64>, n_taps: usize, decay: f64, rng: &mut ChaCha8Rng) -> FirChannel {
    let profile: Vec<f64> = (0..n_taps).map(|q| (-(q as f64) / decay).exp()).collect();
    let total: f64 = profile.iter().sum();
    let (k, l) = beta.shape();
    let mut taps = Vec::with_capacity(k * l);
    for ki in 0..k {
        for li in 0..l {
            taps.push(
                profile
                    .iter()
                    .map(|p| complex_normal(rng, beta[(ki, li)] * p / total))
                    .collect(),
            );
        }
    }
    FirChannel { n_aps: l, taps }
}

/// Writes a geometry dump: `node_type,index,x_m,y_m`.
pub fn write_geometry_csv<W: std::io::Write>(positions: &Positions, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_type", "index", "x_m", "y_m"])?;
    for (kind, nodes) in [("ap", &positions.aps), ("ue", &positions.ues)] {
        for (i, p) in nodes.iter().enumerate() {
            w.write_record([kind.to_string(), i.to_string(), p.x.to_string(), p.y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
