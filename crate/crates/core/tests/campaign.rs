use std::path::Path;

use resil_core::campaign::{self, CampaignConfig, Outcome, RunOptions};
use resil_core::linalg::CsrMatrix;

fn parse(text: &str) -> CampaignConfig {
    CampaignConfig::parse(text, Path::new(".")).unwrap()
}

const FT: &str = r#"{
  "experiment": "ft_gmres",
  "problem": {
    "kind": "linear",
    "matrix": {"kind": "laplacian_2d", "k": 5},
    "rhs": {"kind": "image_of_ones"},
    "solver": {"restart": 20, "tol": 1e-8, "maxit": 100},
    "inner": {"restart": 5, "maxit": 5, "tol": 1e-2}
  },
  "cluster": {"n_ranks": 3},
  "faults": {"kind": "random_campaign", "rate": 0.3, "horizon": 200.0, "bits": {"lo": 52, "hi": 62}},
  "seeds": [4, 5, 6]
}"#;

#[test]
fn identity_converges_in_one_iteration() {
    let cfg = parse(
        r#"{"experiment": "gmres",
            "problem": {"kind": "linear", "matrix": {"kind": "identity", "n": 6}, "rhs": {"kind": "values", "values": [1, 2, 3, 4, 5, 6]}},
            "cluster": {"n_ranks": 3}, "seeds": [0]}"#,
    );
    assert!(cfg.check().is_empty());
    let res = campaign::run_campaign(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(res.records.len(), 1);
    let r = &res.records[0];
    assert_eq!(r.outcome, Outcome::Converged);
    assert!(r.verified);
    assert_eq!(r.report.as_ref().unwrap().iterations, 1);
    assert!(r.true_relative_residual.unwrap() <= 1e-15);
}

#[test]
fn arms_share_plans_and_runs_repeat() {
    let cfg = parse(FT);
    let a = campaign::run_campaign(&cfg, &RunOptions::default()).unwrap();
    let b = campaign::run_campaign(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(a.records.len(), 6);
    let ja: Vec<String> = a.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    let jb: Vec<String> = b.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    assert_eq!(ja, jb);
    for pair in a.records.chunks(2) {
        assert_eq!(pair[0].seed, pair[1].seed);
        assert_eq!((pair[0].arm.as_str(), pair[1].arm.as_str()), ("gmres", "ft_gmres"));
        assert_eq!(pair[0].plan_digest, pair[1].plan_digest);
    }
    assert_eq!(campaign::summary_text(&a.summary), campaign::summary_text(&b.summary));
}

#[test]
fn converged_ft_runs_meet_tolerance() {
    let cfg = parse(FT);
    let res = campaign::run_campaign(&cfg, &RunOptions::default()).unwrap();
    for r in res.records.iter().filter(|r| r.arm == "ft_gmres" && r.converged) {
        assert!(r.true_relative_residual.unwrap() <= 1e-8, "{}", r.run_id);
    }
}

#[test]
fn true_residual_matches_direct_formula() {
    let a = CsrMatrix::laplacian_1d(4);
    let b = vec![1.0, 0.0, 0.0, 1.0];
    let x = vec![1.0, 1.0, 1.0, 1.5];
    // r = b - A x = [0, 0, 0.5, -1]
    let want = (0.25f64 + 1.0).sqrt() / 2f64.sqrt();
    let got = campaign::true_relative_residual(&a, &b, &x).unwrap();
    assert!((got - want).abs() <= 1e-15);
}

#[test]
fn overrides_select_seeds_and_arms() {
    let cfg = parse(FT);
    let opts = RunOptions {
        seeds: Some(campaign::parse_seed_range("10..12").unwrap()),
        arm: Some("ft_gmres".into()),
    };
    let res = campaign::run_campaign(&cfg, &opts).unwrap();
    let ids: Vec<&str> = res.records.iter().map(|r| r.run_id.as_str()).collect();
    assert_eq!(ids, ["ft_gmres-10-ft_gmres", "ft_gmres-11-ft_gmres"]);
    let bad = RunOptions {
        seeds: None,
        arm: Some("pipelined".into()),
    };
    assert!(campaign::run_campaign(&cfg, &bad).is_err());
}

#[test]
fn diagnostics_point_at_the_problem() {
    let err = CampaignConfig::parse("{\"experiment\": \"gmres\",\n \"seeds\": [1,]}", Path::new(".")).unwrap_err();
    assert_eq!(err.line, Some(2));

    let cfg = parse(&FT.replace("\"n_ranks\": 3", "\"n_ranks\": 40"));
    let diags = cfg.check();
    assert!(diags.iter().any(|d| d.path == "cluster.n_ranks"), "{diags:?}");

    let cfg = parse(&FT.replace("\"ft_gmres\"", "\"heat_lflr\""));
    assert!(cfg.check().iter().any(|d| d.path == "problem"));
}
