//! Stand-alone reference for the uplink without phase noise: classic MMSE
//! channel estimation, dense-matrix combiners with a pseudo-inverse and the
//! use-and-then-forget SINR. Shares only geometry and random streams with
//! the library.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use pnsim::combining::Scheme;
use pnsim::config::ExperimentConfig;
use pnsim::experiment::build_network;
use pnsim::network::gen_channel;
use pnsim::rng::{complex_normal, stream_rng, Stream};

type C = Complex64;

fn pilot(t: usize, i: usize, tau_p: usize) -> C {
    C::from_polar(1.0, 2.0 * PI * ((i * t) % tau_p) as f64 / tau_p as f64)
}

fn pinv_solve(a: &DMatrix<C>, b: &DVector<C>) -> DVector<C> {
    let scale = (0..a.nrows()).map(|i| a[(i, i)].re).fold(0.0, f64::max);
    let an = a / C::new(scale, 0.0);
    an.pseudo_inverse(1e-12).expect("svd") * b / C::new(scale, 0.0)
}

/// Mean SE over UEs and geometries, and its per-(geometry, UE) values.
pub fn reference_no_pn_se(config: &ExperimentConfig, scheme: Scheme) -> (f64, Vec<f64>) {
    let layout = &config.layout;
    let tau_p = layout.pilot_length;
    let mut per_ue = Vec::new();
    for g in 0..config.n_geometries {
        let net = build_network(config, g);
        let (k_n, l_n) = (net.n_ues(), net.n_aps());
        let s2 = net.noise_power;
        let p = &net.power;
        let d: Vec<DMatrix<C>> = (0..k_n)
            .map(|k| DMatrix::from_fn(l_n, l_n, |a, b| if a == b && net.serving[(k, a)] { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) }))
            .collect();
        // pilot-domain received power, estimate variance and error variance
        let denom = |k: usize, l: usize| {
            let t = net.pilot_index[k];
            tau_p as f64 * (0..k_n).filter(|&i| net.pilot_index[i] == t).map(|i| p[i] * net.beta[(i, l)]).sum::<f64>() + s2
        };
        let c = DMatrix::from_fn(k_n, l_n, |k, l| {
            let b = net.beta[(k, l)];
            b - p[k] * tau_p as f64 * b * b / denom(k, l)
        });
        let mut sig = vec![C::new(0.0, 0.0); k_n];
        let mut pow = vec![0.0; k_n];
        let mut nrm = vec![0.0; k_n];
        for t in 0..config.n_trials as u64 {
            let ch = gen_channel(&net.beta, layout.n_blocks(), &mut stream_rng(config.master_seed, g as u64, t, Stream::Channel));
            let mut nr = stream_rng(config.master_seed, g as u64, t, Stream::Noise);
            let noise: Vec<C> = (0..l_n * tau_p).map(|_| complex_normal(&mut nr, s2)).collect();
            let h = DMatrix::from_fn(l_n, k_n, |l, k| ch.get(k, l, 0));
            let mut hhat = DMatrix::from_element(l_n, k_n, C::new(0.0, 0.0));
            for l in 0..l_n {
                let y: Vec<C> = (0..tau_p)
                    .map(|i| (0..k_n).map(|k| pilot(net.pilot_index[k], i, tau_p) * h[(l, k)] * p[k].sqrt()).sum::<C>() + noise[l * tau_p + i])
                    .collect();
                for k in 0..k_n {
                    let t = net.pilot_index[k];
                    let proj: C = (0..tau_p).map(|i| pilot(t, i, tau_p).conj() * y[i]).sum();
                    hhat[(l, k)] = proj * (p[k].sqrt() * net.beta[(k, l)] / denom(k, l));
                }
            }
            for k in 0..k_n {
                let hk = hhat.column(k).into_owned();
                let v: DVector<C> = match scheme {
                    Scheme::Mr => &d[k] * &hk,
                    Scheme::LpMmse => DVector::from_fn(l_n, |l, _| {
                        if !net.serving[(k, l)] {
                            return C::new(0.0, 0.0);
                        }
                        let den: f64 = (0..k_n)
                            .filter(|&i| net.serving[(i, l)])
                            .map(|i| p[i] * (hhat[(l, i)].norm_sqr() + c[(i, l)]))
                            .sum::<f64>()
                            + s2;
                        hk[l] * (p[k] / den)
                    }),
                    Scheme::PMmse | Scheme::Mmse => {
                        let users: Vec<usize> = (0..k_n)
                            .filter(|&i| scheme == Scheme::Mmse || (0..l_n).any(|l| net.serving[(k, l)] && net.serving[(i, l)]))
                            .collect();
                        let mut a = DMatrix::from_element(l_n, l_n, C::new(0.0, 0.0));
                        let mut z = DMatrix::from_element(l_n, l_n, C::new(0.0, 0.0));
                        for &i in &users {
                            let hi = &d[k] * hhat.column(i);
                            a += &hi * hi.adjoint() * C::new(p[i], 0.0);
                            for l in 0..l_n {
                                z[(l, l)] += C::new(p[i] * c[(i, l)], 0.0);
                            }
                        }
                        for l in 0..l_n {
                            z[(l, l)] += C::new(s2, 0.0);
                        }
                        a += &d[k] * z * &d[k];
                        pinv_solve(&a, &(&d[k] * &hk)) * C::new(p[k], 0.0)
                    }
                };
                let dv = &d[k] * &v;
                sig[k] += dv.dotc(&h.column(k));
                pow[k] += (0..k_n).map(|i| p[i] * dv.dotc(&h.column(i)).norm_sqr()).sum::<f64>();
                nrm[k] += dv.norm_squared();
            }
        }
        let n = config.n_trials as f64;
        for k in 0..k_n {
            let m = sig[k] / n;
            let num = p[k] * m.norm_sqr();
            let sinr = num / (pow[k] / n - num + s2 * nrm[k] / n);
            per_ue.push((1.0 + sinr).log2());
        }
    }
    let mean = per_ue.iter().sum::<f64>() / per_ue.len() as f64;
    (mean, per_ue)
}

/// CI-scale configuration without phase noise.
pub fn ci_no_pn_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::reduced();
    c.phase_noise = false;
    c.estimators = vec![pnsim::estimation::EstimatorKind::PnaOfdm];
    c.include_no_pn = false;
    c.schemes = Scheme::ALL.to_vec();
    c.channel_uses = vec![1];
    c.block_se = true;
    c
}
