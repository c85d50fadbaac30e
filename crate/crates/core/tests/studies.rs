mod common;

use std::collections::HashSet;

use mvlatent::baselines::{BaselineKind, BaselineParams};
use mvlatent::data::{table2_schema, ViewSchema};
use mvlatent::eval::{
    kfold_lambda_select, latent_vs_original, per_view_study, projection_2d, projection_plot_points,
    ratio_sweep, run_experiment, study_feature_sets, sweep_plot_points, write_reports_csv,
    write_sweep_csv, FeatureScaling, Method, SweepOutcome,
};
use mvlatent::latent::RepresentationConfig;
use mvlatent::pipeline::PipelineConfig;
use mvlatent::regressor::RegressorConfig;
use mvlatent::synth::{synth_generate, SynthSpec};
use mvlatent::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quick_config() -> PipelineConfig {
    PipelineConfig {
        representation: RepresentationConfig {
            latent_dim: 4,
            epochs: 60,
            ..Default::default()
        },
        regressor: RegressorConfig {
            hidden: 32,
            epochs: 60,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn gnb() -> Method {
    Method::Baseline {
        kind: BaselineKind::GaussianNb,
        params: BaselineParams::default(),
        scaling: FeatureScaling::Standardized,
    }
}

#[test]
fn sweep_keeps_the_test_set_and_nests_training_sets() {
    let data = common::easy_data(25, 51);
    let ratios = [0.01, 0.2, 0.4, 0.6, 0.9];
    let sweep = ratio_sweep(&data, &quick_config(), &ratios, 0.2, 7, 2).unwrap();
    assert_eq!(sweep.test_ids.len(), 10);
    let test: HashSet<&String> = sweep.test_ids.iter().collect();

    assert!(matches!(sweep.points[0].outcome, SweepOutcome::Skipped(_)));
    assert!(matches!(sweep.points[4].outcome, SweepOutcome::Skipped(_)));
    let evaluated = &sweep.points[1..4];
    for (p, want) in evaluated.iter().zip([10, 20, 30]) {
        assert_eq!(p.train_ids.len(), want);
        assert!(p.train_ids.iter().all(|id| !test.contains(id)));
        let SweepOutcome::Evaluated(r) = &p.outcome else {
            panic!("ratio {} skipped", p.ratio)
        };
        assert_eq!(r.trials.len(), 2);
        assert!(r.trials.iter().all(|t| t.counts.total() == 10));
    }
    for pair in evaluated.windows(2) {
        let bigger: HashSet<&String> = pair[1].train_ids.iter().collect();
        assert!(pair[0].train_ids.iter().all(|id| bigger.contains(id)));
    }
    assert_eq!(sweep_plot_points(&sweep).len(), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&path, &sweep).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert_eq!(text.lines().filter(|l| l.contains(",skipped,")).count(), 2);
    assert!(ratio_sweep(&data, &quick_config(), &[1.0], 0.2, 7, 1).is_err());
}

#[test]
fn per_view_study_matches_direct_experiments() {
    let schema = vec![ViewSchema::new("gray", 5), ViewSchema::new("texture", 4)];
    let mut spec = SynthSpec::new(40, schema, 3.0, 1.0, 52);
    spec.noise_per_view = vec![8.0, 0.8];
    let data = synth_generate(&spec).unwrap();
    let sets = study_feature_sets(&data);
    let names: Vec<&str> = sets.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["gray", "texture", "radiomic", "all"]);

    let study = per_view_study(&data, &[gnb()], 3, 10).unwrap();
    assert_eq!(study.len(), 4);
    let direct = run_experiment(&data.concat_views(), &gnb(), 3, 10).unwrap();
    let all = &study[3].reports[0];
    assert_eq!(all.descriptor.feature_set, "all");
    assert_eq!(all.trials, direct.trials);
    assert_eq!(all.descriptor.seeds, [10, 11, 12]);

    let weak = study[0].reports[0].acc.mean;
    assert!(
        weak < all.acc.mean,
        "weak view {weak} vs all {}",
        all.acc.mean
    );
}

#[test]
fn preset_schema_adds_both_groups() {
    let spec = SynthSpec::new(3, table2_schema(), 1.0, 1.0, 0);
    let data = synth_generate(&spec).unwrap();
    let names: Vec<String> = study_feature_sets(&data)
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    assert_eq!(names.len(), 10);
    assert_eq!(&names[7..], ["radiomic", "handcrafted", "all"]);
}

#[test]
fn experiments_repeat_exactly() {
    let data = common::easy_data(15, 53);
    let method = Method::Baseline {
        kind: BaselineKind::LogisticRegression,
        params: BaselineParams::default(),
        scaling: FeatureScaling::Normalized,
    };
    let a = run_experiment(&data, &method, 4, 3).unwrap();
    assert_eq!(a, run_experiment(&data, &method, 4, 3).unwrap());
    assert_eq!(a.descriptor.method, "LR/normalized");
    assert!(a.trials.iter().all(|t| t.counts.total() == 8));

    let dir = tempfile::tempdir().unwrap();
    let (p, q) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_reports_csv(&p, &[&a]).unwrap();
    write_reports_csv(&q, &[&run_experiment(&data, &method, 4, 3).unwrap()]).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(bytes, std::fs::read(&q).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("method,feature_set,trial,seed,tp,tn,fp,fn,acc,sen,spc\n"));
    assert_eq!(text.lines().count(), 1 + 4 + 2);
}

#[test]
fn lambda_selection_reports_every_fold() {
    let data = common::easy_data(6, 54);
    let sel = kfold_lambda_select(&data, &[0.0, 10.0], 3, &quick_config()).unwrap();
    assert_eq!(sel.table.len(), 2);
    for row in &sel.table {
        assert_eq!(row.fold_accuracy.len(), 3);
        let mean = row.fold_accuracy.iter().sum::<f64>() / 3.0;
        assert!((row.mean_accuracy - mean).abs() < 1e-12);
    }
    let top = sel
        .table
        .iter()
        .map(|r| r.mean_accuracy)
        .fold(f64::MIN, f64::max);
    let best_row = sel.table.iter().find(|r| r.lambda == sel.best).unwrap();
    assert_eq!(best_row.mean_accuracy, top);
    // Ties go to the larger weight.
    let larger = sel
        .table
        .iter()
        .filter(|r| r.mean_accuracy == top)
        .map(|r| r.lambda)
        .fold(f64::MIN, f64::max);
    assert_eq!(sel.best, larger);

    let single = kfold_lambda_select(&data, &[100.0], 3, &quick_config()).unwrap();
    assert_eq!(single.best, 100.0);
    assert!(single.table.is_empty());
    assert!(kfold_lambda_select(&data, &[-1.0, 1.0], 3, &quick_config()).is_err());
    assert!(kfold_lambda_select(&data, &[1.0, 2.0], 7, &quick_config()).is_err());
}

#[test]
fn latent_comparison_shares_trials() {
    let data = common::easy_data(12, 55);
    let kinds = [BaselineKind::Knn, BaselineKind::GaussianNb];
    let out = latent_vs_original(
        &data,
        &quick_config(),
        &kinds,
        &BaselineParams::default(),
        2,
        20,
    )
    .unwrap();
    assert_eq!(out.len(), 2);
    for (c, kind) in out.iter().zip(kinds) {
        assert_eq!(c.kind, kind);
        assert_eq!(c.original.descriptor.seeds, [20, 21]);
        assert_eq!(c.latent.descriptor.seeds, [20, 21]);
        assert!(c.latent.descriptor.method.ends_with("/latent"));
        assert!(c.original.acc.mean >= 0.9);
    }
}

/// Leading eigenvector of the sample covariance by power iteration.
fn power_axis(points: &Matrix) -> Vec<f64> {
    let (n, d) = (points.rows(), points.cols());
    let mean: Vec<f64> = (0..d)
        .map(|j| points.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in points.row_iter() {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / n as f64;
            }
        }
    }
    let mut v = vec![1.0; d];
    for _ in 0..2000 {
        let w: Vec<f64> = cov
            .iter()
            .map(|row| row.iter().zip(&v).map(|(c, x)| c * x).sum())
            .collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let lead = v
        .iter()
        .copied()
        .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

#[test]
fn projection_first_axis_matches_power_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(56);
    let scales = [5.0, 2.0, 1.0, 0.5];
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let z: Vec<f64> = scales
                .iter()
                .map(|s| s * rng.random_range(-1.0..1.0))
                .collect();
            // Mix the axes so the principal directions are not coordinate axes.
            vec![z[0] + z[1], z[0] - z[1], z[2] + 0.3 * z[0], z[3] + 1.0]
        })
        .collect();
    let points = Matrix::from_rows(&rows).unwrap();
    let coords = projection_2d(&points).unwrap();
    let axis = power_axis(&points);
    let mean: Vec<f64> = (0..4)
        .map(|j| points.column(j).iter().sum::<f64>() / 200.0)
        .collect();
    for (i, r) in points.row_iter().enumerate() {
        let want: f64 = r
            .iter()
            .zip(&mean)
            .zip(&axis)
            .map(|((x, m), a)| (x - m) * a)
            .sum();
        assert!((coords.get(i, 0) - want).abs() < 1e-8, "row {i}");
    }
    let var = |j: usize| coords.column(j).iter().map(|x| x * x).sum::<f64>();
    assert!(var(0) >= var(1));
    let cross: f64 = (0..200).map(|i| coords.get(i, 0) * coords.get(i, 1)).sum();
    assert!(cross.abs() < 1e-8 * var(0));

    let pts = projection_plot_points(&coords, &[1; 200], 150).unwrap();
    assert_eq!(pts.iter().filter(|p| p.split == "train").count(), 150);
    assert!(projection_plot_points(&coords, &[1], 0).is_err());
}
