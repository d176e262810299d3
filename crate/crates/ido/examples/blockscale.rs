//! Scratch: criterion-4 ordering vs training-set size.
use ido::descriptor::{build_context, DescriptorMode};
use ido::perturb::{generate_training_pairs, TrainingRanges};
use ido::regressor::{train, SolverKind, TrainingSet};
use ido::shape::synthetic_shape;

fn main() {
    let shape = synthetic_shape(128).unwrap();
    for n in [100usize, 200, 300, 500, 800, 1200] {
        let (pairs, _) = generate_training_pairs(&shape, n, &TrainingRanges::default(), 303).unwrap();
        let ctx = build_context(&shape, 0.03, DescriptorMode::Improved).unwrap();
        let ts = TrainingSet::from_pairs(ctx, &pairs).unwrap();
        let (_, tr_i) = train(&ts, 10, 0.0002, SolverKind::Exact).unwrap();
        let ctx = build_context(&shape, 0.03, DescriptorMode::Original).unwrap();
        let ts = TrainingSet::from_pairs(ctx, &pairs).unwrap();
        let (_, tr_o) = train(&ts, 10, 0.0002, SolverKind::Exact).unwrap();
        let (fi, fo) = (tr_i[10].mean_error, tr_o[10].mean_error);
        println!("n={n:5}  improved {fi:.4}  original {fo:.4}  -> {}", if fi < fo {"improved wins"} else {"original wins"});
    }
}
