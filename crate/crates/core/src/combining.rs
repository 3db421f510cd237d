//! Receive combiners built from channel estimates and the cooperation
//! clusters: MR, local partial MMSE, partial MMSE and centralized MMSE.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::estimation::EstimateSet;
use crate::network::NetworkRealization;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Mr,
    LpMmse,
    PMmse,
    Mmse,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Mr, Scheme::LpMmse, Scheme::PMmse, Scheme::Mmse];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mr => "mr",
            Scheme::LpMmse => "lp_mmse",
            Scheme::PMmse => "p_mmse",
            Scheme::Mmse => "mmse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Scheme::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Cluster index sets of one geometry.
#[derive(Debug, Clone)]
pub struct Clusters {
    /// APs serving each UE (support of `D_k`).
    pub aps_of_ue: Vec<Vec<usize>>,
    /// UEs served by each AP.
    pub ues_of_ap: Vec<Vec<usize>>,
    /// UEs whose clusters overlap that of each UE.
    pub partial: Vec<Vec<usize>>,
}

impl Clusters {
    pub fn new(net: &NetworkRealization) -> Self {
        Clusters {
            aps_of_ue: (0..net.n_ues()).map(|k| net.cluster(k)).collect(),
            ues_of_ap: (0..net.n_aps()).map(|l| net.served_by(l)).collect(),
            partial: (0..net.n_ues()).map(|k| net.partial_set(k)).collect(),
        }
    }
}

/// Shared inputs of all combiners at one OFDM symbol.
pub struct CombinerInput<'a> {
    pub est: &'a EstimateSet,
    pub net: &'a NetworkRealization,
    pub clusters: &'a Clusters,
    pub tau: usize,
}

/// Length-L combining vector of UE `k`, zero outside its cluster.
/// Returns the vector and whether the pseudo-inverse fallback was used.
pub fn combine(scheme: Scheme, input: &CombinerInput<'_>, k: usize) -> (Vec<Complex64>, bool) {
    match scheme {
        Scheme::Mr => (combine_mr(input, k), false),
        Scheme::LpMmse => (combine_lp_mmse(input, k), false),
        Scheme::PMmse => combine_centralized(input, k, &input.clusters.partial[k]),
        Scheme::Mmse => {
            let all: Vec<usize> = (0..input.net.n_ues()).collect();
            combine_centralized(input, k, &all)
        }
    }
}

/// `v = D_k h_hat_k`.
pub fn combine_mr(input: &CombinerInput<'_>, k: usize) -> Vec<Complex64> {
    let mut v = vec![ZERO; input.net.n_aps()];
    for &l in &input.clusters.aps_of_ue[k] {
        v[l] = input.est.h_hat(k, l, input.tau);
    }
    v
}

/// Per-AP scalar `p_k h_hat_kl / (sum_{i in D_l} p_i (|h_hat_il|^2 + c_il) + sigma^2)`.
pub fn combine_lp_mmse(input: &CombinerInput<'_>, k: usize) -> Vec<Complex64> {
    let (est, net, tau) = (input.est, input.net, input.tau);
    let mut v = vec![ZERO; net.n_aps()];
    for &l in &input.clusters.aps_of_ue[k] {
        let denom: f64 = input.clusters.ues_of_ap[l]
            .iter()
            .map(|&i| net.power[i] * (est.h_hat(i, l, tau).norm_sqr() + est.c(i, l, tau)))
            .sum::<f64>()
            + net.noise_power;
        v[l] = est.h_hat(k, l, tau) * (net.power[k] / denom);
    }
    v
}

/// `p_k (sum_{i in U} p_i D h_i h_i^H D + D (sum_{i in U} p_i C_i + sigma^2 I) D)^+ D h_hat_k`,
/// solved on the cluster support of `k`.
fn combine_centralized(input: &CombinerInput<'_>, k: usize, ues: &[usize]) -> (Vec<Complex64>, bool) {
    let (est, net, tau) = (input.est, input.net, input.tau);
    let support = &input.clusters.aps_of_ue[k];
    let s = support.len();
    let lambda: Vec<f64> = support
        .iter()
        .map(|&l| ues.iter().map(|&i| net.power[i] * est.c(i, l, tau)).sum::<f64>() + net.noise_power)
        .collect();
    // G = [sqrt(p_i) h_hat_{i,S}]
    let g = DMatrix::from_fn(s, ues.len(), |r, c| est.h_hat(ues[c], support[r], tau) * net.power[ues[c]].sqrt());
    let rhs = DVector::from_fn(s, |r, _| est.h_hat(k, support[r], tau) * net.power[k]);

    let (x, fallback) = if ues.len() < s {
        woodbury_solve(&lambda, &g, &rhs)
    } else {
        let mut a = &g * g.adjoint();
        for (r, lam) in lambda.iter().enumerate() {
            a[(r, r)] += lam;
        }
        hermitian_solve(a, &rhs)
    };
    let mut v = vec![ZERO; net.n_aps()];
    for (r, &l) in support.iter().enumerate() {
        v[l] = x[r];
    }
    (v, fallback)
}

/// Solves `(diag(lambda) + G G^H) x = b` through the `|U| x |U|` capacitance matrix.
fn woodbury_solve(lambda: &[f64], g: &DMatrix<Complex64>, b: &DVector<Complex64>) -> (DVector<Complex64>, bool) {
    let inv = DVector::from_iterator(lambda.len(), lambda.iter().map(|&x| Complex64::new(1.0 / x, 0.0)));
    let lb = b.component_mul(&inv);
    let mut lg = g.clone();
    for (r, mut row) in lg.row_iter_mut().enumerate() {
        row *= inv[r];
    }
    let mut cap = g.adjoint() * &lg;
    for i in 0..cap.nrows() {
        cap[(i, i)] += Complex64::new(1.0, 0.0);
    }
    let (inner, fallback) = hermitian_solve(cap, &(g.adjoint() * &lb));
    (lb - lg * inner, fallback)
}

/// Cholesky solve with an SVD pseudo-inverse fallback.
fn hermitian_solve(a: DMatrix<Complex64>, b: &DVector<Complex64>) -> (DVector<Complex64>, bool) {
    match a.clone().cholesky() {
        Some(ch) => (ch.solve(b), false),
        None => {
            log::warn!("combiner system not positive definite (n = {}); using pseudo-inverse", a.nrows());
            let svd = a.svd(true, true);
            let x = svd.solve(b, 1e-12 * svd.singular_values.max()).unwrap_or_else(|_| DVector::zeros(b.len()));
            (x, true)
        }
    }
}
