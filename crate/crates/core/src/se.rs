//! Use-and-then-forget SINR and spectral efficiency from Monte Carlo moments.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::network::NetworkRealization;

/// `lambda_{i,l} = p_i beta_il (1 - B_{0,0}^(0))`, a K x L matrix.
pub fn lambda_ici(net: &NetworkRealization, b00: f64) -> DMatrix<f64> {
    DMatrix::from_fn(net.n_ues(), net.n_aps(), |i, l| net.power[i] * net.beta[(i, l)] * (1.0 - b00))
}

/// Column sums `sum_i lambda_{i,l}`.
pub fn lambda_per_ap(lambda: &DMatrix<f64>) -> Vec<f64> {
    lambda.column_iter().map(|c| c.sum()).collect()
}

/// Effective channels `h_{i,l}^(tau) = J_{i,l,0}^(tau) h_{i,l}` of one trial,
/// flat `[i][l][tau]`.
#[derive(Debug, Clone)]
pub struct EffectiveChannels {
    n_aps: usize,
    tau_c: usize,
    h: Vec<Complex64>,
}

impl EffectiveChannels {
    pub fn from_fn(n_ues: usize, n_aps: usize, tau_c: usize, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut h = Vec::with_capacity(n_ues * n_aps * tau_c);
        for i in 0..n_ues {
            for l in 0..n_aps {
                for tau in 0..tau_c {
                    h.push(f(i, l, tau));
                }
            }
        }
        EffectiveChannels { n_aps, tau_c, h }
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize, tau: usize) -> Complex64 {
        self.h[(i * self.n_aps + l) * self.tau_c + tau]
    }
}

/// Random quantities of one trial entering the SINR of UE `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialTerms {
    /// `v^H D_k h_k^(tau)`
    pub signal: Complex64,
    /// `sum_i p_i |v^H D_k h_i^(tau)|^2`
    pub interference: f64,
    /// `v^H D_k diag(sum_i lambda_i) D_k v`
    pub ici: f64,
    /// `||D_k v||^2`
    pub norm: f64,
}

/// Evaluates the trial terms for combiner `v` of UE `k` at symbol `tau`.
/// `support` lists the APs with `d_kl = 1`; `lambda_ap` holds `sum_i lambda_{i,l}`.
pub fn trial_terms(
    v: &[Complex64],
    k: usize,
    tau: usize,
    support: &[usize],
    channels: &EffectiveChannels,
    net: &NetworkRealization,
    lambda_ap: &[f64],
) -> TrialTerms {
    let mut interference = 0.0;
    let mut signal = Complex64::new(0.0, 0.0);
    for i in 0..net.n_ues() {
        let a: Complex64 = support.iter().map(|&l| v[l].conj() * channels.get(i, l, tau)).sum();
        interference += net.power[i] * a.norm_sqr();
        if i == k {
            signal = a;
        }
    }
    let mut ici = 0.0;
    let mut norm = 0.0;
    for &l in support {
        let m = v[l].norm_sqr();
        norm += m;
        ici += m * lambda_ap[l];
    }
    TrialTerms {
        signal,
        interference,
        ici,
        norm,
    }
}

/// Running first and second moments of `u = (Re s, Im s, T)` with
/// `T = interference + ici + sigma^2 norm`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SinrAccumulator {
    pub count: u64,
    sum: [f64; 3],
    outer: [[f64; 3]; 3],
    sum_interference: f64,
    sum_ici: f64,
    sum_norm: f64,
}

impl SinrAccumulator {
    pub fn push(&mut self, t: &TrialTerms, noise_power: f64) {
        let u = [t.signal.re, t.signal.im, t.interference + t.ici + noise_power * t.norm];
        self.count += 1;
        for a in 0..3 {
            self.sum[a] += u[a];
            for b in 0..3 {
                self.outer[a][b] += u[a] * u[b];
            }
        }
        self.sum_interference += t.interference;
        self.sum_ici += t.ici;
        self.sum_norm += t.norm;
    }

    pub fn merge(&mut self, other: &SinrAccumulator) {
        self.count += other.count;
        for a in 0..3 {
            self.sum[a] += other.sum[a];
            for b in 0..3 {
                self.outer[a][b] += other.outer[a][b];
            }
        }
        self.sum_interference += other.sum_interference;
        self.sum_ici += other.sum_ici;
        self.sum_norm += other.sum_norm;
    }

    /// Mean of `v^H D_k h_k`.
    pub fn mean_signal(&self) -> Complex64 {
        Complex64::new(self.sum[0], self.sum[1]) / self.count as f64
    }

    /// Means of the interference, ICI and norm terms.
    pub fn breakdown(&self) -> (f64, f64, f64) {
        let n = self.count as f64;
        (self.sum_interference / n, self.sum_ici / n, self.sum_norm / n)
    }
}

/// Finalized SINR with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrEstimate {
    pub sinr: f64,
    /// Standard error of the SINR by the delta method.
    pub sinr_stderr: f64,
    /// `false` when the estimated denominator is not positive.
    pub valid: bool,
}

impl SinrEstimate {
    /// `log2(1 + SINR)`; zero for invalid records.
    pub fn se(&self) -> f64 {
        if self.valid {
            (1.0 + self.sinr).log2()
        } else {
            0.0
        }
    }

    pub fn se_stderr(&self) -> f64 {
        if self.valid {
            self.sinr_stderr / ((1.0 + self.sinr) * std::f64::consts::LN_2)
        } else {
            0.0
        }
    }
}

/// `SINR = p |E s|^2 / (E T - p |E s|^2)`.
pub fn finalize_sinr(acc: &SinrAccumulator, power: f64) -> SinrEstimate {
    if acc.count == 0 {
        return SinrEstimate {
            sinr: 0.0,
            sinr_stderr: 0.0,
            valid: false,
        };
    }
    let n = acc.count as f64;
    let m = acc.sum.map(|x| x / n);
    let num = power * (m[0] * m[0] + m[1] * m[1]);
    let den = m[2] - num;
    if !(den > 0.0) {
        return SinrEstimate {
            sinr: 0.0,
            sinr_stderr: 0.0,
            valid: false,
        };
    }
    let sinr = num / den;
    let grad = [2.0 * power * m[0] * m[2] / (den * den), 2.0 * power * m[1] * m[2] / (den * den), -num / (den * den)];
    let mut var = 0.0;
    if acc.count > 1 {
        for a in 0..3 {
            for b in 0..3 {
                let cov = (acc.outer[a][b] - n * m[a] * m[b]) / (n - 1.0);
                var += grad[a] * cov * grad[b];
            }
        }
        var = (var / n).max(0.0);
    }
    SinrEstimate {
        sinr,
        sinr_stderr: var.sqrt(),
        valid: true,
    }
}

/// `(1 / tau_c) sum_tau log2(1 + SINR^(tau))`; `None` if any record is invalid.
pub fn se_per_block(sinrs: &[SinrEstimate]) -> Option<f64> {
    if sinrs.iter().any(|s| !s.valid) || sinrs.is_empty() {
        return None;
    }
    Some(sinrs.iter().map(|s| s.se()).sum::<f64>() / sinrs.len() as f64)
}

/// Symbol (zero-based) that carries one-based channel use `c` when the
/// `N_c` subcarriers of each symbol are counted first.
pub fn channel_use_symbol(channel_use: usize, block_subcarriers: usize) -> usize {
    channel_use.div_ceil(block_subcarriers) - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Point, Positions};
    use proptest::prelude::*;

    fn net(k: usize, l: usize, sigma2: f64) -> NetworkRealization {
        NetworkRealization {
            positions: Positions {
                aps: vec![Point { x: 0.0, y: 0.0 }; l],
                ues: vec![Point { x: 0.0, y: 0.0 }; k],
            },
            beta: DMatrix::from_fn(k, l, |i, j| 1e-6 * (1.0 + i as f64 + 0.5 * j as f64)),
            serving: DMatrix::from_element(k, l, true),
            pilot_index: (0..k).collect(),
            power: vec![0.1; k],
            noise_power: sigma2,
        }
    }

    fn acc_of(terms: &[TrialTerms], sigma2: f64) -> SinrAccumulator {
        let mut a = SinrAccumulator::default();
        terms.iter().for_each(|t| a.push(t, sigma2));
        a
    }

    #[test]
    fn lambda_vanishes_without_pn_and_scales_with_power() {
        let mut nw = net(2, 3, 1.0);
        assert!(lambda_ici(&nw, 1.0).iter().all(|&x| x == 0.0));
        let a = lambda_ici(&nw, 0.8);
        nw.power[1] *= 2.0;
        let b = lambda_ici(&nw, 0.8);
        for l in 0..3 {
            assert_eq!(a[(0, l)], b[(0, l)]);
            assert!((b[(1, l)] - 2.0 * a[(1, l)]).abs() < 1e-20);
        }
    }

    #[test]
    fn single_trial_mr_hand_value() {
        // K = 1, L = 2, D = I, no PN and no noise: v = h_hat, h = h_hat + e
        let nw = net(1, 2, 0.0);
        let h = [Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.5)];
        let ch = EffectiveChannels::from_fn(1, 2, 1, |_, l, _| h[l]);
        let v = [Complex64::new(0.9, 2.1), Complex64::new(-0.4, 0.5)];
        let t = trial_terms(&v, 0, 0, &[0, 1], &ch, &nw, &[0.0, 0.0]);
        let want = v[0].conj() * h[0] + v[1].conj() * h[1];
        assert!((t.signal - want).norm() < 1e-14);
        assert!((t.interference - 0.1 * want.norm_sqr()).abs() < 1e-14);
        assert!(t.signal.re > 0.0);
        assert_eq!(t.ici, 0.0);
    }

    #[test]
    fn zero_channel_contributes_nothing() {
        let nw = net(2, 2, 1.0);
        let ch = EffectiveChannels::from_fn(2, 2, 1, |_, _, _| Complex64::new(0.0, 0.0));
        let v = [Complex64::new(1.0, 0.0); 2];
        let t = trial_terms(&v, 0, 0, &[0, 1], &ch, &nw, &[0.0, 0.0]);
        assert_eq!(t.signal, Complex64::new(0.0, 0.0));
        assert_eq!(t.interference, 0.0);
    }

    #[test]
    fn identical_trials_equal_single_trial() {
        let t = TrialTerms {
            signal: Complex64::new(0.3, -0.2),
            interference: 0.05,
            ici: 0.01,
            norm: 2.0,
        };
        let one = finalize_sinr(&acc_of(&[t], 1e-3), 0.1);
        let many = finalize_sinr(&acc_of(&[t; 50], 1e-3), 0.1);
        assert!((one.sinr - many.sinr).abs() < 1e-12 * one.sinr);
        assert!(many.sinr_stderr < 1e-6 * many.sinr);
    }

    #[test]
    fn closed_form_single_ap_uatf() {
        // Single AP, no PN, MR. With moments set to their exact values,
        // E{v^* h} = eps, E{|v^* h|^2} = eps (beta + eps) for Gaussian estimates,
        // E{|v|^2} = eps: SINR = p eps^2 / (p eps (beta + eps) - p eps^2 + s2 eps)
        let (p, beta, eps, s2) = (0.1, 2.0, 1.5, 0.3);
        let mut acc = SinrAccumulator::default();
        acc.push(
            &TrialTerms {
                signal: Complex64::new(eps, 0.0),
                interference: p * eps * (beta + eps),
                ici: 0.0,
                norm: eps,
            },
            s2,
        );
        let got = finalize_sinr(&acc, p).sinr;
        let want = p * eps / (p * beta + s2);
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn zero_combiner_gives_zero_or_invalid() {
        let acc = acc_of(
            &[TrialTerms {
                signal: Complex64::new(0.0, 0.0),
                interference: 0.0,
                ici: 0.0,
                norm: 0.0,
            }],
            1.0,
        );
        let s = finalize_sinr(&acc, 0.1);
        assert_eq!(s.se(), 0.0);
        assert!(!s.valid || s.sinr == 0.0);
    }

    #[test]
    fn negative_denominator_flagged() {
        // interference below the signal power: impossible moments
        let acc = acc_of(
            &[TrialTerms {
                signal: Complex64::new(1.0, 0.0),
                interference: 0.01,
                ici: 0.0,
                norm: 0.0,
            }],
            0.0,
        );
        assert!(!finalize_sinr(&acc, 1.0).valid);
    }

    #[test]
    fn se_block_arithmetic() {
        let s = |x: f64| SinrEstimate {
            sinr: x,
            sinr_stderr: 0.0,
            valid: true,
        };
        assert!((se_per_block(&[s(1.0), s(3.0)]).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(se_per_block(&[s(0.0), s(0.0)]).unwrap(), 0.0);
        assert!((se_per_block(&[s(7.0); 4]).unwrap() - 3.0).abs() < 1e-12);
        let mut bad = s(1.0);
        bad.valid = false;
        assert!(se_per_block(&[s(1.0), bad]).is_none());
    }

    #[test]
    fn channel_use_mapping() {
        assert_eq!(channel_use_symbol(1, 12), 0);
        assert_eq!(channel_use_symbol(12, 12), 0);
        assert_eq!(channel_use_symbol(13, 12), 1);
        assert_eq!(channel_use_symbol(60, 12), 4);
        assert_eq!(channel_use_symbol(144, 12), 11);
        assert_eq!(channel_use_symbol(180, 12), 14);
    }

    #[test]
    fn merge_matches_sequential_push() {
        let terms: Vec<TrialTerms> = (0..10)
            .map(|i| TrialTerms {
                signal: Complex64::new(1.0 + 0.1 * i as f64, -0.3 * i as f64),
                interference: 3.0 + i as f64,
                ici: 0.1,
                norm: 1.0 + 0.01 * i as f64,
            })
            .collect();
        let all = acc_of(&terms, 0.5);
        let mut a = acc_of(&terms[..4], 0.5);
        a.merge(&acc_of(&terms[4..], 0.5));
        let (x, y) = (finalize_sinr(&all, 0.2), finalize_sinr(&a, 0.2));
        assert!((x.sinr - y.sinr).abs() < 1e-12 * x.sinr);
        assert!((x.sinr_stderr - y.sinr_stderr).abs() < 1e-9 * x.sinr_stderr);
    }

    #[test]
    fn delta_method_matches_empirical_spread() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let z = crate::rng::complex_normal(rng, 0.5);
            let s = Complex64::new(1.0, 0.0) + z;
            TrialTerms {
                signal: s,
                interference: 0.1 * s.norm_sqr() + 0.2,
                ici: 0.0,
                norm: 1.0 + crate::rng::normal(rng, 0.1).abs(),
            }
        };
        let n = 200;
        let reps: Vec<SinrEstimate> = (0..300)
            .map(|_| {
                let ts: Vec<TrialTerms> = (0..n).map(|_| draw(&mut rng)).collect();
                finalize_sinr(&acc_of(&ts, 0.05), 0.1)
            })
            .collect();
        let mean = reps.iter().map(|r| r.sinr).sum::<f64>() / reps.len() as f64;
        let sd = (reps.iter().map(|r| (r.sinr - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt();
        let pred = reps.iter().map(|r| r.sinr_stderr).sum::<f64>() / reps.len() as f64;
        assert!((pred / sd - 1.0).abs() < 0.2, "pred {pred} sd {sd}");
    }

    proptest! {
        #[test]
        fn sinr_invariant_to_combiner_scaling(
            re in -2.0f64..2.0, im in -2.0f64..2.0, alpha in 0.01f64..100.0, phase in 0.0f64..6.28,
            extra in 0.0f64..5.0
        ) {
            let a = Complex64::from_polar(alpha, phase);
            let base = [
                TrialTerms { signal: Complex64::new(re, im), interference: 0.1 * (re * re + im * im) + extra, ici: 0.3, norm: 1.5 },
                TrialTerms { signal: Complex64::new(re * 0.9, im * 1.1), interference: 0.1 * (re * re + im * im) + 2.0 * extra, ici: 0.2, norm: 1.2 },
            ];
            // v -> a v scales the signal by conj(a) and the quadratic terms by |a|^2
            let scaled: Vec<TrialTerms> = base.iter().map(|t| TrialTerms {
                signal: t.signal * a.conj(),
                interference: t.interference * alpha * alpha,
                ici: t.ici * alpha * alpha,
                norm: t.norm * alpha * alpha,
            }).collect();
            let x = finalize_sinr(&acc_of(&base, 0.4), 0.1);
            let y = finalize_sinr(&acc_of(&scaled, 0.4), 0.1);
            prop_assert_eq!(x.valid, y.valid);
            if x.valid {
                prop_assert!((x.sinr - y.sinr).abs() <= 1e-9 * x.sinr.max(1e-12));
            }
        }

        #[test]
        fn extra_interferer_never_increases_sinr(
            re in 0.1f64..2.0, extra in 0.0f64..3.0, add in 0.0f64..3.0
        ) {
            let t = TrialTerms { signal: Complex64::new(re, 0.0), interference: 0.1 * re * re + extra, ici: 0.1, norm: 1.0 };
            let mut u = t;
            u.interference += add;
            let x = finalize_sinr(&acc_of(&[t, t], 0.2), 0.1);
            let y = finalize_sinr(&acc_of(&[u, u], 0.2), 0.1);
            prop_assert!(y.sinr <= x.sinr + 1e-15);
        }
    }
}
