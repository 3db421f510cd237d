//! Without phase noise the full pipeline must agree with a plain
//! block-fading cell-free reference built from dense matrices.

mod common;

use pnsim::combining::Scheme;
use pnsim::estimation::EstimatorKind;
use pnsim::experiment::{record_value, run_experiment, Curve};

#[test]
fn pipeline_matches_dense_reference_for_all_schemes() {
    let config = common::ci_no_pn_config();
    let summary = run_experiment(&config).unwrap();
    assert_eq!(summary.n_invalid, 0);
    for scheme in Scheme::ALL {
        let rec = summary
            .records
            .iter()
            .find(|r| r.scheme == scheme.name() && r.metric == "block" && r.estimator == EstimatorKind::PnaOfdm.name())
            .expect("block record");
        let (reference, _) = common::reference_no_pn_se(&config, scheme);
        let diff = (rec.se_per_ue - reference).abs();
        println!("{}: pipeline {:.6}, reference {:.6}, se {:.2e}", scheme.name(), rec.se_per_ue, reference, rec.standard_error);
        assert!(diff <= 2.0 * rec.standard_error, "{}: {} vs {}", scheme.name(), rec.se_per_ue, reference);
        // same draws, so agreement is far tighter than the statistical bound
        assert!(diff <= 1e-6 * reference.max(1.0), "{}: {} vs {}", scheme.name(), rec.se_per_ue, reference);
    }
}

#[test]
fn all_estimators_reduce_to_classic_mmse_without_phase_noise() {
    let mut config = common::ci_no_pn_config();
    config.n_geometries = 2;
    config.n_trials = 16;
    config.estimators = vec![EstimatorKind::PnaOfdm, EstimatorKind::PnaSc, EstimatorKind::Unaware];
    config.schemes = vec![Scheme::Mmse];
    let summary = run_experiment(&config).unwrap();
    let vals: Vec<f64> = config
        .estimators
        .iter()
        .map(|&e| record_value(&summary.records, &Curve::Pn(e).label(Scheme::Mmse), "block", None, None).unwrap())
        .collect();
    for v in &vals[1..] {
        assert!((v - vals[0]).abs() < 1e-9 * vals[0], "{vals:?}");
    }
}
