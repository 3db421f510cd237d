//! Linear MMSE estimation of the effective channels `J_0^(tau) h` from the
//! stacked pilot observations of each AP, plus the two baseline estimators.
//!
//! Work is split in three layers. [`EstimatorModel`] holds everything that
//! only depends on the layout and the oscillators (kernel values, per-pilot
//! `Phi_t` and ICI matrices). [`EstimatorContext`] adds one geometry: it
//! factorizes every `Psi_l` once and stores `Psi_l^{-1} g` for every
//! (AP, pilot, symbol). Per trial, [`EstimatorContext::estimate`] is then a
//! set of inner products.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::network::{NetworkRealization, SimulationLayout};
use crate::ofdm::{PilotBook, PilotObservations};
use crate::phase_noise::{kernel_quadratic_form, subcarrier_spectrum, CorrelationTable, KernelParams};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// OFDM phase-noise-aware LMMSE with ICI covariance.
    PnaOfdm,
    /// Single-carrier drift model, one drift sample per symbol, no ICI.
    PnaSc,
    /// Block-fading MMSE that ignores phase noise.
    Unaware,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::PnaOfdm => "pna_ofdm",
            EstimatorKind::PnaSc => "pna_sc",
            EstimatorKind::Unaware => "unaware",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pna_ofdm" => Some(EstimatorKind::PnaOfdm),
            "pna_sc" => Some(EstimatorKind::PnaSc),
            "unaware" => Some(EstimatorKind::Unaware),
            _ => None,
        }
    }
}

/// Treatment of the data-subcarrier terms of the ICI covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IciMode {
    /// Full double sums over pilot and data subcarriers of the whole symbol.
    #[default]
    AsPrinted,
    /// Exact covariance for i.i.d. zero-mean data and channels that are
    /// independent across coherence blocks.
    IndependentData,
}

impl IciMode {
    pub fn name(self) -> &'static str {
        match self {
            IciMode::AsPrinted => "as_printed",
            IciMode::IndependentData => "independent_data",
        }
    }
}

/// Pilot subcarriers of the whole symbol: `r N_c + q` for every block `r`.
fn pilot_subcarriers_all(layout: &SimulationLayout) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for r in 0..layout.n_blocks() {
        for (qi, &q) in layout.pilot_subcarriers.iter().enumerate() {
            let j = r * layout.block_subcarriers + q;
            if j < layout.n_subcarriers {
                v.push((j, qi));
            }
        }
    }
    v
}

/// Kernel entries read by the estimator: the CPE correlations for every
/// symbol lag in the block and, for `IndependentData`, the ICI offsets.
pub fn needed_indices(layout: &SimulationLayout, mode: IciMode) -> Vec<(i64, i64, i64)> {
    let mut v: Vec<(i64, i64, i64)> = CorrelationTable::cpe_indices(layout.block_symbols).collect();
    if mode == IciMode::IndependentData {
        let positions = layout.pilot_positions();
        let nc = layout.block_subcarriers;
        let n = layout.n_subcarriers;
        for p1 in &positions {
            for p2 in &positions {
                let dtau = p1.symbol as i64 - p2.symbol as i64;
                for r in 0..layout.n_blocks() {
                    for &q1 in &layout.pilot_subcarriers {
                        for &q2 in &layout.pilot_subcarriers {
                            let (j1, j2) = (r * nc + q1, r * nc + q2);
                            if j1 >= n || j2 >= n || j1 == p1.subcarrier || j2 == p2.subcarrier {
                                continue;
                            }
                            v.push((p1.subcarrier as i64 - j1 as i64, p2.subcarrier as i64 - j2 as i64, dtau));
                        }
                    }
                }
                if dtau == 0 {
                    for (j, _) in pilot_subcarriers_all(layout) {
                        v.push((p1.subcarrier as i64 - j as i64, p2.subcarrier as i64 - j as i64, 0));
                    }
                }
            }
        }
    }
    v
}

/// Per-pilot ICI matrices `M_t` with `Z_l = sum_k p_k beta_kl M_{t_k}`.
pub fn ici_pilot_matrices(
    layout: &SimulationLayout,
    book: &PilotBook,
    table: &CorrelationTable,
    mode: IciMode,
) -> Result<Vec<DMatrix<Complex64>>> {
    match mode {
        IciMode::AsPrinted => Ok(ici_as_printed(layout, book, table.params())),
        IciMode::IndependentData => ici_independent(layout, book, table),
    }
}

fn ici_as_printed(layout: &SimulationLayout, book: &PilotBook, kp: &KernelParams) -> Vec<DMatrix<Complex64>> {
    let positions = layout.pilot_positions();
    let tau_p = positions.len();
    let n_q = layout.pilot_subcarriers.len();
    let one = Complex64::new(1.0, 0.0);
    let pilots_all = pilot_subcarriers_all(layout);
    let is_pilot = {
        let mut m = vec![false; layout.n_subcarriers];
        pilots_all.iter().for_each(|&(j, _)| m[j] = true);
        m
    };
    let data: Vec<(usize, Complex64)> = (0..layout.n_subcarriers).filter(|&j| !is_pilot[j]).map(|j| (j, one)).collect();

    // spectra indexed by target slot (position within N_p)
    let pilot_spec: Vec<Vec<Vec<Complex64>>> = layout
        .pilot_subcarriers
        .iter()
        .map(|&n| {
            (0..n_q)
                .map(|q| {
                    let w: Vec<(usize, Complex64)> = pilots_all.iter().filter(|&&(j, qi)| qi == q && j != n).map(|&(j, _)| (j, one)).collect();
                    subcarrier_spectrum(n, &w, kp)
                })
                .collect()
        })
        .collect();
    let data_spec: Vec<Vec<Complex64>> = layout.pilot_subcarriers.iter().map(|&n| subcarrier_spectrum(n, &data, kp)).collect();

    let max_lag = layout.block_symbols as i64 - 1;
    let lags = (2 * max_lag + 1) as usize;
    let lag_idx = |d: i64| (d + max_lag) as usize;
    // Qp[((a*n_q + q1)*n_q + b)*n_q + q2][lag], Qd[a*n_q + b][lag]
    let mut qp = vec![vec![ZERO; lags]; n_q.pow(4)];
    let mut qd = vec![vec![ZERO; lags]; n_q * n_q];
    let mut lag_used = vec![false; lags];
    for p1 in &positions {
        for p2 in &positions {
            lag_used[lag_idx(p1.symbol as i64 - p2.symbol as i64)] = true;
        }
    }
    for (li, used) in lag_used.iter().enumerate() {
        if !used {
            continue;
        }
        let d = li as i64 - max_lag;
        for a in 0..n_q {
            for b in 0..n_q {
                qd[a * n_q + b][li] = kernel_quadratic_form(&data_spec[a], &data_spec[b], d, kp);
                for q1 in 0..n_q {
                    for q2 in 0..n_q {
                        qp[((a * n_q + q1) * n_q + b) * n_q + q2][li] =
                            kernel_quadratic_form(&pilot_spec[a][q1], &pilot_spec[b][q2], d, kp);
                    }
                }
            }
        }
    }

    let slot = |sub: usize| layout.pilot_subcarriers.iter().position(|&q| q == sub).unwrap();
    (0..book.len())
        .map(|t| {
            let mut m = DMatrix::from_element(tau_p, tau_p, ZERO);
            for (i1, p1) in positions.iter().enumerate() {
                let (a, ps1) = (slot(p1.subcarrier), i1 / n_q);
                for (i2, p2) in positions.iter().enumerate() {
                    let (b, ps2) = (slot(p2.subcarrier), i2 / n_q);
                    let li = lag_idx(p1.symbol as i64 - p2.symbol as i64);
                    let mut acc = qd[a * n_q + b][li];
                    for q1 in 0..n_q {
                        let s1 = book.entry(ps1 * n_q + q1, t);
                        for q2 in 0..n_q {
                            let s2 = book.entry(ps2 * n_q + q2, t);
                            acc += s1 * s2.conj() * qp[((a * n_q + q1) * n_q + b) * n_q + q2][li];
                        }
                    }
                    m[(i1, i2)] = acc;
                }
            }
            hermitian_part(&m)
        })
        .collect()
}

fn ici_independent(layout: &SimulationLayout, book: &PilotBook, table: &CorrelationTable) -> Result<Vec<DMatrix<Complex64>>> {
    let positions = layout.pilot_positions();
    let tau_p = positions.len();
    let n_q = layout.pilot_subcarriers.len();
    let nc = layout.block_subcarriers;
    let n = layout.n_subcarriers;
    let pilots_all = pilot_subcarriers_all(layout);
    let mut out = Vec::with_capacity(book.len());
    for t in 0..book.len() {
        let mut m = DMatrix::from_element(tau_p, tau_p, ZERO);
        for (i1, p1) in positions.iter().enumerate() {
            let ps1 = i1 / n_q;
            for (i2, p2) in positions.iter().enumerate() {
                let ps2 = i2 / n_q;
                let dtau = p1.symbol as i64 - p2.symbol as i64;
                let (n1, n2) = (p1.subcarrier as i64, p2.subcarrier as i64);
                let mut acc = ZERO;
                for r in 0..layout.n_blocks() {
                    for (q1i, &q1) in layout.pilot_subcarriers.iter().enumerate() {
                        let j1 = r * nc + q1;
                        if j1 >= n || j1 == p1.subcarrier {
                            continue;
                        }
                        let s1 = book.entry(ps1 * n_q + q1i, t);
                        for (q2i, &q2) in layout.pilot_subcarriers.iter().enumerate() {
                            let j2 = r * nc + q2;
                            if j2 >= n || j2 == p2.subcarrier {
                                continue;
                            }
                            let s2 = book.entry(ps2 * n_q + q2i, t);
                            acc += s1 * s2.conj() * table.get(n1 - j1 as i64, n2 - j2 as i64, dtau)?;
                        }
                    }
                }
                if dtau == 0 {
                    let mut pilot_sum = ZERO;
                    for &(j, _) in &pilots_all {
                        pilot_sum += table.get(n1 - j as i64, n2 - j as i64, 0)?;
                    }
                    let delta = if n1 == n2 { 1.0 } else { 0.0 };
                    acc += Complex64::new(delta, 0.0) - pilot_sum;
                }
                m[(i1, i2)] = acc;
            }
        }
        out.push(hermitian_part(&m));
    }
    Ok(out)
}

fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Geometry-independent estimator statistics.
#[derive(Debug, Clone)]
pub struct EstimatorModel {
    pub kind: EstimatorKind,
    tau_c: usize,
    tau_p: usize,
    /// `B_{0,0}^(d)` for `d in -(tau_c-1)..=tau_c-1`
    cpe_corr: Vec<Complex64>,
    /// `Phi_t` per pilot
    phi: Vec<DMatrix<Complex64>>,
    /// `M_t` per pilot (zero unless OFDM-aware)
    ici: Vec<DMatrix<Complex64>>,
    /// `g_{t,tau}[i] = conj(B_{0,0}^(tau - tau_i)) s_{t,i}`, flat `[t][tau][i]`
    g: Vec<Complex64>,
}

impl EstimatorModel {
    pub fn build(
        kind: EstimatorKind,
        layout: &SimulationLayout,
        book: &PilotBook,
        table: &CorrelationTable,
        mode: IciMode,
    ) -> Result<Self> {
        let tau_c = layout.block_symbols;
        let max_lag = tau_c as i64 - 1;
        let kp = table.params();
        let cpe_corr = (-max_lag..=max_lag)
            .map(|d| match kind {
                EstimatorKind::PnaOfdm => table.get(0, 0, d),
                EstimatorKind::PnaSc => Ok(Complex64::new(
                    (-0.5 * kp.sigma2_total * kp.n as f64 * d.unsigned_abs() as f64).exp(),
                    0.0,
                )),
                EstimatorKind::Unaware => Ok(Complex64::new(1.0, 0.0)),
            })
            .collect::<Result<Vec<_>>>()?;
        let positions = layout.pilot_positions();
        let tau_p = positions.len();
        let corr = |d: i64| cpe_corr[(d + max_lag) as usize];

        let phi = (0..book.len())
            .map(|t| {
                DMatrix::from_fn(tau_p, tau_p, |i1, i2| {
                    let d = positions[i1].symbol as i64 - positions[i2].symbol as i64;
                    book.entry(i1, t) * book.entry(i2, t).conj() * corr(d)
                })
            })
            .collect();
        let ici = match kind {
            EstimatorKind::PnaOfdm if kp.sigma2_total > 0.0 => ici_pilot_matrices(layout, book, table, mode)?,
            _ => vec![DMatrix::from_element(tau_p, tau_p, ZERO); book.len()],
        };
        let mut g = Vec::with_capacity(book.len() * tau_c * tau_p);
        for t in 0..book.len() {
            for tau in 0..tau_c {
                for (i, p) in positions.iter().enumerate() {
                    g.push(corr(tau as i64 - p.symbol as i64).conj() * book.entry(i, t));
                }
            }
        }
        Ok(EstimatorModel {
            kind,
            tau_c,
            tau_p,
            cpe_corr,
            phi,
            ici,
            g,
        })
    }

    /// `B_{0,0}^(d)` as used by this estimator.
    pub fn cpe_correlation(&self, d: i64) -> Complex64 {
        self.cpe_corr[(d + self.tau_c as i64 - 1) as usize]
    }

    pub fn phi(&self, t: usize) -> &DMatrix<Complex64> {
        &self.phi[t]
    }

    pub fn ici_matrix(&self, t: usize) -> &DMatrix<Complex64> {
        &self.ici[t]
    }

    pub fn g(&self, t: usize, tau: usize) -> &[Complex64] {
        let s = (t * self.tau_c + tau) * self.tau_p;
        &self.g[s..s + self.tau_p]
    }

    pub fn tau_c(&self) -> usize {
        self.tau_c
    }

    pub fn tau_p(&self) -> usize {
        self.tau_p
    }

    pub fn n_pilots(&self) -> usize {
        self.phi.len()
    }
}

/// Received power per pilot at AP `l`: `P_{t,l} = sum_{k: t_k = t} p_k beta_kl`.
fn pilot_powers(net: &NetworkRealization, l: usize, n_pilots: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_pilots];
    for k in 0..net.n_ues() {
        p[net.pilot_index[k]] += net.power[k] * net.beta[(k, l)];
    }
    p
}

/// `Z_l = sum_k p_k beta_kl M_{t_k}`.
pub fn build_z_ici(model: &EstimatorModel, net: &NetworkRealization, l: usize) -> DMatrix<Complex64> {
    let tau_p = model.tau_p;
    let mut z = DMatrix::from_element(tau_p, tau_p, ZERO);
    for (t, &pw) in pilot_powers(net, l, model.n_pilots()).iter().enumerate() {
        if pw != 0.0 {
            z += model.ici_matrix(t) * Complex64::new(pw, 0.0);
        }
    }
    z
}

/// `Psi_l = sum_k p_k beta_kl Phi_{t_k} + Z_l + sigma^2 I`.
pub fn build_psi(model: &EstimatorModel, net: &NetworkRealization, l: usize) -> DMatrix<Complex64> {
    let tau_p = model.tau_p;
    let mut psi = build_z_ici(model, net, l);
    for (t, &pw) in pilot_powers(net, l, model.n_pilots()).iter().enumerate() {
        if pw != 0.0 {
            psi += model.phi(t) * Complex64::new(pw, 0.0);
        }
    }
    for i in 0..tau_p {
        psi[(i, i)] += net.noise_power;
    }
    psi
}

/// Per-geometry estimator: factorized `Psi_l` applied to every `g_{t,tau}`.
#[derive(Debug, Clone)]
pub struct EstimatorContext {
    pub kind: EstimatorKind,
    n_ues: usize,
    n_aps: usize,
    n_pilots: usize,
    tau_c: usize,
    tau_p: usize,
    /// `sqrt(p_k) beta_kl`
    gain: DMatrix<f64>,
    beta: DMatrix<f64>,
    pilot_index: Vec<usize>,
    /// `Psi_l^{-1} g_{t,tau}`, flat `[l][t][tau][i]`
    w: Vec<Complex64>,
    /// `eps_{k,l}^(tau)`, flat `[k][l][tau]`
    eps: Vec<f64>,
}

impl EstimatorContext {
    pub fn build(model: &EstimatorModel, net: &NetworkRealization) -> Result<Self> {
        let (n_ues, n_aps) = (net.n_ues(), net.n_aps());
        let (tau_c, tau_p, n_pilots) = (model.tau_c, model.tau_p, model.n_pilots());
        let mut w = Vec::with_capacity(n_aps * n_pilots * tau_c * tau_p);
        // g^H Psi^{-1} g per (l, t, tau)
        let mut quad = Vec::with_capacity(n_aps * n_pilots * tau_c);
        for l in 0..n_aps {
            let psi = build_psi(model, net, l);
            let chol = psi.clone().cholesky().ok_or_else(|| {
                SimError::Numerical(format!("Psi for AP {l} is not positive definite"))
            })?;
            for t in 0..n_pilots {
                for tau in 0..tau_c {
                    let g = DVector::from_column_slice(model.g(t, tau));
                    let x = chol.solve(&g);
                    quad.push(g.dotc(&x).re);
                    w.extend(x.iter());
                }
            }
        }
        let gain = DMatrix::from_fn(n_ues, n_aps, |k, l| net.power[k].sqrt() * net.beta[(k, l)]);
        let mut eps = Vec::with_capacity(n_ues * n_aps * tau_c);
        for k in 0..n_ues {
            let t = net.pilot_index[k];
            for l in 0..n_aps {
                for tau in 0..tau_c {
                    let q = quad[(l * n_pilots + t) * tau_c + tau];
                    eps.push(gain[(k, l)] * gain[(k, l)] * q);
                }
            }
        }
        Ok(EstimatorContext {
            kind: model.kind,
            n_ues,
            n_aps,
            n_pilots,
            tau_c,
            tau_p,
            gain,
            beta: net.beta.clone(),
            pilot_index: net.pilot_index.clone(),
            w,
            eps,
        })
    }

    fn w(&self, l: usize, t: usize, tau: usize) -> &[Complex64] {
        let s = ((l * self.n_pilots + t) * self.tau_c + tau) * self.tau_p;
        &self.w[s..s + self.tau_p]
    }

    /// `h_hat_{k,l}^(tau) = sqrt(p_k) beta_kl g^H Psi_l^{-1} y_l`.
    pub fn lmmse_estimate(&self, y_l: &[Complex64], k: usize, l: usize, tau: usize) -> Complex64 {
        let w = self.w(l, self.pilot_index[k], tau);
        let ip: Complex64 = w.iter().zip(y_l).map(|(a, b)| a.conj() * b).sum();
        ip * self.gain[(k, l)]
    }

    /// `(eps, c)` with `c = beta - eps`.
    pub fn estimation_stats(&self, k: usize, l: usize, tau: usize) -> (f64, f64) {
        let e = self.eps[(k * self.n_aps + l) * self.tau_c + tau];
        (e, self.beta[(k, l)] - e)
    }

    /// Estimates of every (UE, AP, symbol) from one trial's observations.
    pub fn estimate(&self, obs: &PilotObservations) -> EstimateSet {
        let mut h_hat = Vec::with_capacity(self.n_ues * self.n_aps * self.tau_c);
        for k in 0..self.n_ues {
            for l in 0..self.n_aps {
                let y = obs.ap(l);
                for tau in 0..self.tau_c {
                    h_hat.push(self.lmmse_estimate(y, k, l, tau));
                }
            }
        }
        let c = self
            .eps
            .iter()
            .enumerate()
            .map(|(idx, e)| {
                let k = idx / (self.n_aps * self.tau_c);
                let l = (idx / self.tau_c) % self.n_aps;
                self.beta[(k, l)] - e
            })
            .collect();
        EstimateSet {
            n_aps: self.n_aps,
            tau_c: self.tau_c,
            h_hat,
            eps: self.eps.clone(),
            c,
        }
    }

    pub fn tau_c(&self) -> usize {
        self.tau_c
    }
}

/// Channel estimates with their variances and error variances, flat `[k][l][tau]`.
#[derive(Debug, Clone)]
pub struct EstimateSet {
    n_aps: usize,
    tau_c: usize,
    pub h_hat: Vec<Complex64>,
    pub eps: Vec<f64>,
    pub c: Vec<f64>,
}

impl EstimateSet {
    /// Assembles a set from flat `[k][l][tau]` arrays.
    pub fn from_parts(n_aps: usize, tau_c: usize, h_hat: Vec<Complex64>, eps: Vec<f64>, c: Vec<f64>) -> Self {
        assert!(h_hat.len() == eps.len() && eps.len() == c.len());
        assert_eq!(h_hat.len() % (n_aps * tau_c), 0);
        EstimateSet {
            n_aps,
            tau_c,
            h_hat,
            eps,
            c,
        }
    }

    #[inline]
    fn idx(&self, k: usize, l: usize, tau: usize) -> usize {
        (k * self.n_aps + l) * self.tau_c + tau
    }

    #[inline]
    pub fn h_hat(&self, k: usize, l: usize, tau: usize) -> Complex64 {
        self.h_hat[self.idx(k, l, tau)]
    }

    #[inline]
    pub fn eps(&self, k: usize, l: usize, tau: usize) -> f64 {
        self.eps[self.idx(k, l, tau)]
    }

    #[inline]
    pub fn c(&self, k: usize, l: usize, tau: usize) -> f64 {
        self.c[self.idx(k, l, tau)]
    }

    pub fn n_aps(&self) -> usize {
        self.n_aps
    }

    pub fn tau_c(&self) -> usize {
        self.tau_c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Point, Positions};
    use crate::phase_noise::correlation_b_oracle;

    fn net(beta: DMatrix<f64>, pilots: Vec<usize>, sigma2: f64) -> NetworkRealization {
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
            noise_power: sigma2,
        }
    }

    fn toy_layout(n: usize, tau_p: usize) -> SimulationLayout {
        SimulationLayout {
            n_subcarriers: n,
            cp_length: 2,
            subcarrier_spacing: 15e3,
            block_subcarriers: 4,
            block_symbols: tau_p + 1,
            pilot_length: tau_p,
            pilot_subcarriers: vec![0],
            pilot_symbols: (0..tau_p).collect(),
            n_aps: 1,
            n_ues: 1,
            area_side: 100.0,
        }
    }

    fn table(layout: &SimulationLayout, sigma2: f64, mode: IciMode) -> CorrelationTable {
        let kp = KernelParams::new(layout.n_subcarriers, sigma2, layout.n_subcarriers);
        CorrelationTable::build(kp, needed_indices(layout, mode))
    }

    #[test]
    fn reference_layout_table_covers_cpe_lags() {
        let layout = SimulationLayout::reference();
        let idx = needed_indices(&layout, IciMode::AsPrinted);
        for d in -14..=14 {
            assert!(idx.contains(&(0, 0, d)));
        }
        let t = table(&toy_layout(16, 3), 0.0, IciMode::IndependentData);
        for d in -3..=3 {
            assert!((t.get(0, 0, d).unwrap() - 1.0).norm() < 1e-14);
        }
    }

    #[test]
    fn no_pn_gives_zero_ici() {
        let layout = toy_layout(16, 2);
        let book = PilotBook::new(2);
        for mode in [IciMode::AsPrinted, IciMode::IndependentData] {
            let t = table(&layout, 0.0, mode);
            for m in ici_pilot_matrices(&layout, &book, &t, mode).unwrap() {
                assert!(m.iter().all(|z| z.norm() < 1e-12), "{mode:?}");
            }
        }
    }

    /// Literal double loop over the printed ICI covariance with the
    /// O(N^2) kernel.
    fn brute_as_printed(layout: &SimulationLayout, book: &PilotBook, kp: &KernelParams, t: usize, i1: usize, i2: usize) -> Complex64 {
        let pos = layout.pilot_positions();
        let (p1, p2) = (pos[i1], pos[i2]);
        let n = layout.n_subcarriers;
        let is_pilot = |j: usize| layout.pilot_subcarriers.contains(&(j % layout.block_subcarriers));
        let pilot_val = |j: usize, sym: usize| {
            let q = layout.pilot_subcarriers.iter().position(|&q| q == j % layout.block_subcarriers).unwrap();
            let ps = layout.pilot_symbols.iter().position(|&s| s == sym).unwrap();
            book.entry(ps * layout.pilot_subcarriers.len() + q, t)
        };
        let d = p1.symbol as i64 - p2.symbol as i64;
        let mut acc = ZERO;
        for j1 in 0..n {
            for j2 in 0..n {
                if j1 == p1.subcarrier || j2 == p2.subcarrier || is_pilot(j1) != is_pilot(j2) {
                    continue;
                }
                let b = correlation_b_oracle(p1.subcarrier as i64 - j1 as i64, p2.subcarrier as i64 - j2 as i64, d, kp);
                acc += if is_pilot(j1) {
                    pilot_val(j1, p1.symbol) * pilot_val(j2, p2.symbol).conj() * b
                } else {
                    b
                };
            }
        }
        acc
    }

    #[test]
    fn as_printed_matches_double_loop() {
        let layout = toy_layout(16, 2);
        let book = PilotBook::new(2);
        let t = table(&layout, 0.05, IciMode::AsPrinted);
        let m = ici_pilot_matrices(&layout, &book, &t, IciMode::AsPrinted).unwrap();
        for pilot in 0..2 {
            for i1 in 0..2 {
                for i2 in 0..2 {
                    let want = brute_as_printed(&layout, &book, t.params(), pilot, i1, i2);
                    assert!((m[pilot][(i1, i2)] - want).norm() < 1e-10, "{pilot} {i1} {i2}");
                }
            }
        }
    }

    #[test]
    fn as_printed_with_two_pilot_subcarriers_matches_double_loop() {
        let mut layout = toy_layout(16, 4);
        layout.pilot_subcarriers = vec![0, 2];
        layout.pilot_symbols = vec![0, 2];
        let book = PilotBook::new(4);
        let t = table(&layout, 0.03, IciMode::AsPrinted);
        let m = ici_pilot_matrices(&layout, &book, &t, IciMode::AsPrinted).unwrap();
        for i1 in 0..4 {
            for i2 in 0..4 {
                let want = brute_as_printed(&layout, &book, t.params(), 3, i1, i2);
                assert!((m[3][(i1, i2)] - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn independent_diagonal_data_part_bounded() {
        let layout = toy_layout(16, 2);
        let book = PilotBook::new(2);
        let t = table(&layout, 0.05, IciMode::IndependentData);
        let m = ici_pilot_matrices(&layout, &book, &t, IciMode::IndependentData).unwrap();
        let kp = t.params();
        let b00 = t.get(0, 0, 0).unwrap().re;
        for i in 0..2 {
            // pilot leakage from the same subcarrier slot of the other blocks
            let pilot: f64 = (1..4).map(|r| correlation_b_oracle(-4 * r, -4 * r, 0, kp).re).sum();
            let data: f64 = (0..16).filter(|j| j % 4 != 0).map(|j| correlation_b_oracle(-j, -j, 0, kp).re).sum();
            assert!((m[0][(i, i)].re - (pilot + data)).abs() < 1e-10);
            assert!(data <= 1.0 - b00 + 1e-12);
        }
    }

    #[test]
    fn psi_without_pn_is_pilot_outer_products() {
        let layout = toy_layout(16, 3);
        let book = PilotBook::new(3);
        let t = table(&layout, 0.0, IciMode::AsPrinted);
        let model = EstimatorModel::build(EstimatorKind::PnaOfdm, &layout, &book, &t, IciMode::AsPrinted).unwrap();
        let beta = DMatrix::from_row_slice(2, 1, &[1e-6, 3e-7]);
        let nw = net(beta.clone(), vec![0, 2], 1e-9);
        let psi = build_psi(&model, &nw, 0);
        let mut want = DMatrix::<Complex64>::identity(3, 3) * Complex64::new(1e-9, 0.0);
        for k in 0..2 {
            let s = DVector::from_column_slice(book.column(nw.pilot_index[k]));
            want += &s * s.adjoint() * Complex64::new(0.1 * beta[(k, 0)], 0.0);
        }
        assert!((psi - want).camax() < 1e-18);
    }

    #[test]
    fn single_ue_closed_form_mmse() {
        let layout = toy_layout(16, 4);
        let book = PilotBook::new(4);
        let t = table(&layout, 0.0, IciMode::AsPrinted);
        let (p, b, s2) = (0.1, 2e-6, 1e-9);
        let nw = net(DMatrix::from_element(1, 1, b), vec![1], s2);
        for kind in [EstimatorKind::PnaOfdm, EstimatorKind::PnaSc, EstimatorKind::Unaware] {
            let model = EstimatorModel::build(kind, &layout, &book, &t, IciMode::AsPrinted).unwrap();
            let ctx = EstimatorContext::build(&model, &nw).unwrap();
            let tp = 4.0;
            let eps_want = p * b * b * tp / (p * b * tp + s2);
            for tau in 0..5 {
                let (e, c) = ctx.estimation_stats(0, 0, tau);
                assert!((e - eps_want).abs() <= 1e-10 * eps_want);
                assert!((c - (b - eps_want)).abs() <= 1e-10 * b);
            }
            // h_hat = sqrt(p) b / (p b tau_p + s2) s^H y
            let y: Vec<Complex64> = (0..4).map(|i| Complex64::new(i as f64 * 1e-4, 1e-4 - i as f64 * 3e-5)).collect();
            let sy: Complex64 = book.column(1).iter().zip(&y).map(|(s, y)| s.conj() * y).sum();
            let want = sy * (p.sqrt() * b / (p * b * tp + s2));
            let got = ctx.lmmse_estimate(&y, 0, 0, 2);
            assert!((got - want).norm() <= 1e-10 * want.norm());
            let psi = build_psi(&model, &nw, 0);
            let s = DVector::from_column_slice(book.column(1));
            let q = s.dotc(&psi.clone().cholesky().unwrap().solve(&s)).re;
            assert!((q - tp / (p * b * tp + s2)).abs() <= 1e-10 * q);
        }
    }

    #[test]
    fn zero_beta_gives_zero_stats_and_linear_estimates() {
        let layout = toy_layout(16, 2);
        let book = PilotBook::new(2);
        let t = table(&layout, 0.02, IciMode::AsPrinted);
        let model = EstimatorModel::build(EstimatorKind::PnaOfdm, &layout, &book, &t, IciMode::AsPrinted).unwrap();
        let nw = net(DMatrix::from_row_slice(2, 1, &[0.0, 1e-6]), vec![0, 1], 1e-9);
        let ctx = EstimatorContext::build(&model, &nw).unwrap();
        assert_eq!(ctx.estimation_stats(0, 0, 1), (0.0, 0.0));
        let y = [Complex64::new(1e-4, 2e-4), Complex64::new(-3e-4, 1e-5)];
        assert_eq!(ctx.lmmse_estimate(&[ZERO, ZERO], 1, 0, 1), ZERO);
        let a = Complex64::new(0.3, -2.0);
        let ya: Vec<Complex64> = y.iter().map(|v| v * a).collect();
        let lhs = ctx.lmmse_estimate(&ya, 1, 0, 1);
        let rhs = ctx.lmmse_estimate(&y, 1, 0, 1) * a;
        assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm());
    }

    #[test]
    fn psi_is_hermitian_with_pn() {
        let layout = toy_layout(32, 3);
        let book = PilotBook::new(3);
        for mode in [IciMode::AsPrinted, IciMode::IndependentData] {
            let t = table(&layout, 0.01, mode);
            let model = EstimatorModel::build(EstimatorKind::PnaOfdm, &layout, &book, &t, mode).unwrap();
            let nw = net(DMatrix::from_row_slice(3, 2, &[1e-6, 2e-7, 3e-7, 5e-6, 1e-8, 4e-7]), vec![0, 1, 0], 1e-10);
            for l in 0..2 {
                let psi = build_psi(&model, &nw, l);
                assert!((&psi - psi.adjoint()).camax() <= 1e-12 * psi.camax());
            }
            assert!(EstimatorContext::build(&model, &nw).is_ok());
        }
    }

    #[test]
    fn unaware_weights_are_constant_over_symbols() {
        let layout = toy_layout(16, 3);
        let book = PilotBook::new(3);
        let t = table(&layout, 0.05, IciMode::AsPrinted);
        let model = EstimatorModel::build(EstimatorKind::Unaware, &layout, &book, &t, IciMode::AsPrinted).unwrap();
        let nw = net(DMatrix::from_element(1, 1, 1e-6), vec![2], 1e-9);
        let ctx = EstimatorContext::build(&model, &nw).unwrap();
        let y = [Complex64::new(1e-4, 0.0), Complex64::new(0.0, 2e-4), Complex64::new(-1e-4, 1e-4)];
        assert_eq!(ctx.lmmse_estimate(&y, 0, 0, 0), ctx.lmmse_estimate(&y, 0, 0, 3));
    }

    #[test]
    fn single_carrier_and_ofdm_kernels_compared() {
        let layout = SimulationLayout::reference();
        let kp = KernelParams::new(1200, 2.0 * 3.509e-4, 1200);
        let t = CorrelationTable::build(kp, CorrelationTable::cpe_indices(15));
        let book = PilotBook::new(12);
        let sc = EstimatorModel::build(EstimatorKind::PnaSc, &layout, &book, &t, IciMode::AsPrinted).unwrap();
        assert_eq!(sc.cpe_correlation(0), Complex64::new(1.0, 0.0));
        assert!(t.get(0, 0, 0).unwrap().re < 0.9);
        // for d != 0 the OFDM kernel averages exp(-a |dN + n1 - n2|), a convex
        // function of a symmetric offset, so by Jensen it sits above the
        // single-carrier value
        for d in (-14..=14).filter(|&d| d != 0) {
            let (b, bt) = (t.get(0, 0, d).unwrap().re, sc.cpe_correlation(d).re);
            assert!(b >= bt && b <= 1.05 * bt, "d={d} b={b} bt={bt}");
        }
    }
}
