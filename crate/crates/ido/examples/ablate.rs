//! Scratch: damping x seed grid at acceptance scale. (temporary)
use ido::bench::*;
use ido::descriptor::{build_context, DescriptorMode};
use ido::perturb::{generate_training_pairs, PerturbationKind, TrainingRanges};
use ido::regressor::{train, SolverKind, TrainingSet};
use ido::shape::synthetic_shape;

fn main() {
    let shape = synthetic_shape(128).unwrap();
    // criterion 4 at n=200
    let (pairs, _) = generate_training_pairs(&shape, 200, &TrainingRanges::default(), 303).unwrap();
    let ctx_i = build_context(&shape, 0.03, DescriptorMode::Improved).unwrap();
    let ts = TrainingSet::from_pairs(ctx_i, &pairs).unwrap();
    let (_, tr_i) = train(&ts, 10, 0.0002, SolverKind::Exact).unwrap();
    let ctx_o = build_context(&shape, 0.03, DescriptorMode::Original).unwrap();
    let ts = TrainingSet::from_pairs(ctx_o, &pairs).unwrap();
    let (_, tr_o) = train(&ts, 10, 0.0002, SolverKind::Exact).unwrap();
    let (fi, fo) = (tr_i[10].mean_error, tr_o[10].mean_error);
    println!("#4: improved {fi:.4} vs original {fo:.4} -> {}", if fi < fo {"OK"} else {"INVERTED"});

    for seed in std::env::args().skip(1).map(|s| s.parse::<u64>().unwrap()) {
        let config = CampaignConfig {
            model: ModelConfig { source: "synthetic".into(), points: 128 },
            training: TrainingConfig { samples: 500, maps: 10, ..Default::default() },
            sweeps: CampaignConfig::desk_sweeps(),
            algorithms: vec![Algorithm::ImprovedDo, Algorithm::OriginalDo, Algorithm::Icp],
            output_dir: std::env::temp_dir().join(format!("grid-{seed}-{}", std::process::id())),
            seed,
            max_iter: 1000, epsilon: 0.005, t_pt: 0.1, icp_tol: 1e-10,
            metric_points: MetricPoints::Inliers,
        };
        let report = run_campaign(&config).unwrap();
        let mut acc_wins = 0; let mut rmse_wins = 0; let mut detail = String::new();
        for kind in PerturbationKind::ALL {
            let (ai, ri) = report.summary.get(kind, Algorithm::ImprovedDo).unwrap();
            let (ao, ro) = report.summary.get(kind, Algorithm::OriginalDo).unwrap();
            if ai >= ao { acc_wins += 1; }
            if ri <= ro { rmse_wins += 1; }
            detail += &format!(" {kind}:{:+.3}", ai - ao);
        }
        let (ai, ri) = report.summary.get(PerturbationKind::Rotation, Algorithm::ImprovedDo).unwrap();
        let (ao, ro) = report.summary.get(PerturbationKind::Rotation, Algorithm::OriginalDo).unwrap();
        let (ac, rc) = report.summary.get(PerturbationKind::Rotation, Algorithm::Icp).unwrap();
        let icp_ok = ai > ac && ao > ac && ri < rc && ro < rc;
        println!("#5 seed {seed}: acc {acc_wins}/6 rmse {rmse_wins}/6 icp {}  margins:{detail}", if icp_ok {"OK"} else {"FAIL"});
    }
}
