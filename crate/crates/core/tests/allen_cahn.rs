//! Two kissing bubbles under the variable-order Allen-Cahn flow.

use varfrac::experiment::{run_evolve, ExperimentConfig, ExperimentKind, SchemeKind};

fn bubbles(t_final: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Evolve, 2);
    cfg.domain = [0.0, 1.0];
    cfg.sizes = vec![127];
    cfg.order = "ac_middle".into();
    cfg.evolve.scheme = SchemeKind::AllenCahn;
    cfg.evolve.dt = 1e-4;
    cfg.evolve.t_final = t_final;
    cfg.evolve.kappa = 0.01;
    cfg.evolve.initial = "bubbles".into();
    cfg
}

/// Components of `{u > 0}` go 2, then 1, then 0, with the merge before t = 0.004.
#[test]
fn bubbles_coalesce_then_vanish() {
    let report = run_evolve(&bubbles(0.025), None).unwrap();
    let obs = &report.runs[0].1.observations;
    let mut seq: Vec<usize> = obs.iter().map(|o| o.components).collect();
    seq.dedup();
    assert_eq!(seq, [2, 1, 0]);

    let merged = obs.iter().find(|o| o.components == 1).unwrap().time;
    assert!(merged <= 0.004, "merged at {merged}");
    let gone = obs.iter().find(|o| o.components == 0).unwrap().time;
    assert!(gone > merged && gone < 0.025, "vanished at {gone}");

    // the explicit reaction overshoots to about 1.4 as the last bubble collapses
    assert!(obs.iter().all(|o| o.max_norm.is_finite() && o.max_norm < 2.0));
}
