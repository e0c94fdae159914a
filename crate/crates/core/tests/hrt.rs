use flowselect::experiments::{gen_mog_features, gen_response, MoGSpec, ResponseMode, ResponseSpec, ResponseTemplate};
use flowselect::hrt::*;
use flowselect::models::{neg_mse_statistic, LassoModel, Model};
use flowselect::sampler::NullSamples;
use flowselect::FeatureMatrix;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;

/// The largest set whose members all sit under `γ·|S|/D`, found by trying
/// every subset. Inputs are on a 1/20 grid, so the comparison is done in
/// integers: `a/20 ≤ (g/20)·s/D  ⇔  a·D ≤ g·s`.
fn brute_force_bh(grid: &[u32], g: u32) -> Vec<usize> {
    let d = grid.len();
    let mut best: Vec<usize> = Vec::new();
    for mask in 0u32..(1 << d) {
        let set: Vec<usize> = (0..d).filter(|&i| mask & (1 << i) != 0).collect();
        let s = set.len() as u32;
        if set.iter().all(|&i| grid[i] * d as u32 <= g * s) && set.len() > best.len() {
            best = set;
        }
    }
    best
}

fn to_p(grid: &[u32]) -> Vec<f64> {
    grid.iter().map(|&a| a as f64 / 20.0).collect()
}

#[test]
fn bh_equals_brute_force_on_every_short_grid_vector() {
    // every vector of length ≤ 3 on the 0.05 grid, every 0.05-multiple γ
    for len in 1..=3u32 {
        let total = 20u32.pow(len);
        for code in 0..total {
            let grid: Vec<u32> = (0..len).map(|i| 1 + (code / 20u32.pow(i)) % 20).collect();
            for g in 1..=20 {
                let got = bh_select(&to_p(&grid), g as f64 / 20.0).unwrap().selected;
                assert_eq!(got, brute_force_bh(&grid, g), "p {grid:?} γ {g}/20");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    #[test]
    fn bh_equals_brute_force_up_to_six(grid in prop::collection::vec(1u32..=20, 4..=6), g in 1u32..=20) {
        let got = bh_select(&to_p(&grid), g as f64 / 20.0).unwrap().selected;
        prop_assert_eq!(got, brute_force_bh(&grid, g));
    }
}

proptest! {
    #[test]
    fn by_selects_a_subset_of_bh(p in prop::collection::vec(0.0f64..=1.0, 1..40), gamma in 0.0f64..=1.0) {
        let bh = bh_select(&p, gamma).unwrap().selected;
        let by = by_select(&p, gamma).unwrap().selected;
        prop_assert!(by.iter().all(|j| bh.contains(j)));
    }

    #[test]
    fn selection_is_a_threshold_on_value(p in prop::collection::vec(0.0f64..=1.0, 1..30), gamma in 0.0f64..=1.0) {
        let s = bh_select(&p, gamma).unwrap();
        match s.threshold {
            None => prop_assert!(s.selected.is_empty()),
            Some(t) => {
                for (j, &v) in p.iter().enumerate() {
                    prop_assert_eq!(s.selected.contains(&j), v <= t);
                }
            }
        }
    }

    #[test]
    fn pvalues_lie_on_the_grid(t_star in -5.0f64..5.0, nulls in prop::collection::vec(-5.0f64..5.0, 1..60), seed in any::<u64>()) {
        let k = nulls.len();
        let counts = NullCounts::new(t_star, &nulls);
        let mut rng = flowselect::seed::rng_for(seed, &[]);
        for rule in [TieRule::Strict, TieRule::Conservative, TieRule::Randomized] {
            let p = counts.pvalue(rule, &mut rng);
            let m = p * (k + 1) as f64;
            prop_assert!((m - m.round()).abs() < 1e-9);
            prop_assert!(m.round() >= 1.0 && m.round() <= (k + 1) as f64);
        }
        prop_assert_eq!(counts.pvalue(TieRule::Strict, &mut rng), empirical_pvalue(t_star, &nulls).unwrap());
    }
}

#[test]
fn by_on_random_vectors_is_within_bh() {
    let mut rng = flowselect::seed::rng_for(3, &[]);
    use rand::Rng as _;
    for _ in 0..100 {
        let p: Vec<f64> = (0..12).map(|_| rng.random::<f64>().powi(3)).collect();
        let bh = bh_select(&p, 0.2).unwrap().selected;
        let by = by_select(&p, 0.2).unwrap().selected;
        assert!(by.iter().all(|j| bh.contains(j)));
    }
}

#[test]
fn pvalue_examples() {
    assert_eq!(empirical_pvalue(0.0, &[1.0, 2.0, -1.0, -2.0]).unwrap(), 0.6);
    assert_eq!(empirical_pvalue(9.0, &[1.0, 2.0, 3.0]).unwrap(), 0.25);
    assert_eq!(empirical_pvalue(1.0, &[1.0; 7]).unwrap(), 0.125);
    assert!(empirical_pvalue(1.0, &[]).is_err());
}

fn hand_lasso() -> Model {
    Model::Lasso(LassoModel {
        beta: array![2.0, -1.0],
        intercept: 0.5,
        lambda_selected: 0.0,
        cv_curve: vec![],
        converged: true,
    })
}

#[test]
fn observed_statistic_examples() {
    let x = array![[1.0, 2.0], [0.0, 1.0], [2.0, 0.0], [-1.0, 3.0]];
    let y = array![1.0, 0.0, 4.0, -2.0];
    let m = hand_lasso();
    // residuals 0.5, 0.5, −0.5, 2.5
    assert_eq!(observed_statistic(&m, x.view(), y.view()).unwrap(), -1.75);
    assert_eq!(
        observed_statistic(&m, x.view(), y.view()).unwrap(),
        neg_mse_statistic(&m, x.view(), y.view()).unwrap()
    );
    let perfect = array![0.5, -0.5, 4.5, -4.5];
    assert_eq!(observed_statistic(&m, x.view(), perfect.view()).unwrap(), 0.0);
}

#[test]
fn null_statistic_examples() {
    let x = array![[1.0, 2.0], [0.0, 1.0], [2.0, 0.0], [-1.0, 3.0]];
    let y = array![1.0, 0.0, 4.0, -2.0];
    let m = hand_lasso();
    let t_star = observed_statistic(&m, x.view(), y.view()).unwrap();
    let draws = Array2::from_shape_fn((4, 3), |(i, k)| match k {
        0 => x[[i, 0]],
        1 => 0.0,
        _ => -x[[i, 0]],
    });
    let nulls = NullSamples {
        feature: 0,
        samples: draws,
        acceptance_rate: vec![1.0; 4],
    };
    let t = null_statistics(&m, x.view(), y.view(), 0, &nulls).unwrap();
    assert_eq!(t[0], t_star);
    // zeros in column 0: predictions 0.5 − x₁, residuals 2.5, 0.5, 3.5, 0.5
    assert_eq!(t[1], -4.75);
    assert!(t[2] < t_star);

    let ignoring = Model::Lasso(LassoModel {
        beta: array![2.0, 0.0],
        intercept: 0.5,
        lambda_selected: 0.0,
        cv_curve: vec![],
        converged: true,
    });
    let t_ign = observed_statistic(&ignoring, x.view(), y.view()).unwrap();
    let swapped = NullSamples { feature: 1, ..nulls.clone() };
    for v in null_statistics(&ignoring, x.view(), y.view(), 1, &swapped).unwrap() {
        assert_eq!(v, t_ign);
    }

    assert!(null_statistics(&m, x.view(), y.view(), 1, &nulls).is_err());
    let short = NullSamples {
        feature: 0,
        samples: Array2::zeros((3, 2)),
        acceptance_rate: vec![1.0; 3],
    };
    assert!(null_statistics(&m, x.view(), y.view(), 0, &short).is_err());
}

#[test]
fn split_is_a_disjoint_cover() {
    let s = SplitSpec::random(101, 0.5, 4).unwrap();
    let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..101).collect::<Vec<_>>());
    assert_eq!(s.train.len(), 51);
    s.validate(101).unwrap();
    assert!(s.validate(100).is_err());
    assert_eq!(SplitSpec::random(101, 0.5, 4).unwrap(), s);
}

fn oracle_config(spec: &MoGSpec, k: usize, seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.seed = seed;
    c.sampler = SamplerKind::MixtureExact;
    c.mixture = Some(spec.clone());
    c.mcmc.k = k;
    c.model.lasso.n_lambdas = 30;
    c
}

#[test]
fn two_feature_strong_signal_fixture() {
    // Y = 5·x₁ + N(0, 0.1²); observed over 20 seeds: feature 1 always
    // selected, feature 2 above 0.05 in 18 runs
    let spec = MoGSpec::benchmark(2);
    let mut selected_first = 0;
    let mut second_above = 0;
    for run in 0..20u64 {
        let x = gen_mog_features(&spec, 5000, 100 + run).unwrap();
        let rs = ResponseSpec {
            beta: vec![5.0, 0.0],
            noise_std: 0.1,
            mode: ResponseMode::Linear,
            seed: 200 + run,
        };
        let y = gen_response(x.values(), &rs).unwrap();
        let report = run_pipeline(&x, y.view(), &oracle_config(&spec, 200, run)).unwrap();
        selected_first += usize::from(report.features[0].selected);
        second_above += usize::from(report.features[1].p_value > 0.05);
    }
    assert_eq!(selected_first, 20);
    assert!(second_above >= 18, "feature 2 above 0.05 in {second_above} of 20 runs");
}

#[test]
fn global_null_pvalues_are_uniform() {
    let spec = MoGSpec::benchmark(10);
    let x = gen_mog_features(&spec, 4000, 17).unwrap();
    let config = oracle_config(&spec, 200, 17);
    let library = build_null_library(&x, &config).unwrap();
    let tmpl = ResponseTemplate {
        null: true,
        ..ResponseTemplate::default()
    };
    let mut bins = [0usize; 5];
    for r in 0..20 {
        let seed = flowselect::experiments::replicate_seed(config.seed, r);
        let y = gen_response(x.values(), &tmpl.draw(10, seed)).unwrap();
        let report = test_with_library(&x, y.view(), &library, &config, seed).unwrap();
        for p in report.p_values() {
            bins[((p * 5.0).ceil() as usize).clamp(1, 5) - 1] += 1;
        }
    }
    // the grid m/201 puts 40, 40, 40, 40, 41 of the 201 points in the bins
    let expected = [40.0, 40.0, 40.0, 40.0, 41.0].map(|c| c / 201.0 * 200.0);
    let chi2: f64 = bins.iter().zip(expected).map(|(&o, e)| (o as f64 - e).powi(2) / e).sum();
    // 0.999 quantile of chi-square with 4 degrees of freedom
    assert!(chi2 < 18.4668, "bins {bins:?}, chi-square {chi2}");
}

#[test]
fn exceedances_grow_with_k_on_shared_draws() {
    let spec = MoGSpec::benchmark(4);
    let x = gen_mog_features(&spec, 600, 2).unwrap();
    let config = oracle_config(&spec, 120, 2);
    let library = build_null_library(&x, &config).unwrap();
    let y = gen_response(x.values(), &ResponseTemplate::default().draw(4, 8)).unwrap();
    let mut previous: Option<Vec<usize>> = None;
    for k in [10, 40, 120] {
        let report = test_with_library(&x, y.view(), &library.truncated(k), &config, 8).unwrap();
        assert_eq!(report.k, k);
        let counts: Vec<usize> = report.features.iter().map(|f| f.exceedances).collect();
        if let Some(prev) = &previous {
            assert!(prev.iter().zip(&counts).all(|(a, b)| a <= b));
        }
        for f in &report.features {
            let m = f.p_value * (k + 1) as f64;
            assert!((m - m.round()).abs() < 1e-9 && m >= 0.999);
        }
        previous = Some(counts);
    }
}

#[test]
fn permuting_columns_permutes_report_rows() {
    let spec = MoGSpec::benchmark(5);
    let x = gen_mog_features(&spec, 800, 5).unwrap();
    let y = gen_response(x.values(), &ResponseTemplate::default().draw(5, 1)).unwrap();
    let config = oracle_config(&spec, 60, 9);
    let base = run_pipeline(&x, y.view(), &config).unwrap();

    let perm = [3usize, 0, 4, 2, 1];
    let px = x.select_columns(&perm);
    let mut pconfig = config.clone();
    pconfig.features = Some(vec![4, 1, 0]);
    let permuted = run_pipeline(&px, y.view(), &pconfig).unwrap();
    for f in &permuted.features {
        let original = perm[f.feature];
        let b = &base.features[original];
        assert_eq!(f.name, b.name);
        assert_eq!(f.p_value, b.p_value, "feature {}", f.name);
        assert_eq!(f.exceedances, b.exceedances);
    }
    assert_eq!(permuted.features.iter().map(|f| f.feature).collect::<Vec<_>>(), vec![4, 1, 0]);
}

#[test]
fn cached_nulls_reproduce_pvalues() {
    let dir = tempfile::tempdir().unwrap();
    let spec = MoGSpec::benchmark(3);
    let x = gen_mog_features(&spec, 500, 1).unwrap();
    let y = gen_response(x.values(), &ResponseTemplate::default().draw(3, 2)).unwrap();
    let mut config = PipelineConfig {
        sampler: SamplerKind::MixtureDensity,
        ..oracle_config(&spec, 30, 4)
    };
    config.mcmc.burn_in = 10;
    config.cache_dir = Some(dir.path().to_path_buf());
    let first = run_pipeline(&x, y.view(), &config).unwrap();
    std::fs::remove_file(dir.path().join("nulls_2.fsns")).unwrap();
    config.resume = true;
    let second = run_pipeline(&x, y.view(), &config).unwrap();
    assert_eq!(first.p_values(), second.p_values());

    // resuming from a cache made with other settings is refused
    config.mcmc.k = 31;
    assert!(matches!(build_null_library(&x, &config).unwrap_err().root(), flowselect::Error::Mismatch(_)));
}

#[test]
fn selected_flags_follow_the_threshold() {
    let spec = MoGSpec::benchmark(6);
    let x = gen_mog_features(&spec, 1000, 3).unwrap();
    let y = gen_response(x.values(), &ResponseTemplate::default().draw(6, 3)).unwrap();
    let mut config = oracle_config(&spec, 99, 3);
    config.gamma = 0.3;
    let report = run_pipeline(&x, y.view(), &config).unwrap();
    for f in &report.features {
        assert_eq!(f.selected, report.threshold.is_some_and(|s| f.p_value <= s));
    }
    let by = report.reselect(0.3, Correction::By).unwrap();
    assert!(by.selected().iter().all(|j| report.selected().contains(j)));
}

#[test]
fn report_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = MoGSpec::benchmark(3);
    let x = gen_mog_features(&spec, 400, 6).unwrap();
    let y = gen_response(x.values(), &ResponseTemplate::default().draw(3, 6)).unwrap();
    let report = run_pipeline(&x, y.view(), &oracle_config(&spec, 40, 6)).unwrap();
    let csv = dir.path().join("r.csv");
    report.write_csv(&csv).unwrap();
    let rows = read_report_csv(&csv).unwrap();
    for (r, f) in rows.iter().zip(&report.features) {
        assert_eq!((r.0, r.1, r.2), (f.feature, f.p_value, f.selected));
    }
    let tsv = dir.path().join("m.tsv");
    report.write_manhattan_tsv(&tsv, Some(&["a".into(), "b".into(), "c".into()])).unwrap();
    let text = std::fs::read_to_string(&tsv).unwrap();
    let line = text.lines().nth(1).unwrap();
    let last: f64 = line.split('\t').last().unwrap().parse().unwrap();
    assert!((last + report.features[0].p_value.log10()).abs() < 1e-12);
    let json: serde_json::Value = serde_json::from_str(&report.summary_json()).unwrap();
    assert_eq!(json["k"], 40);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let spec = MoGSpec::benchmark(3);
    let x = gen_mog_features(&spec, 300, 1).unwrap();
    let config = oracle_config(&spec, 10, 1);
    let short = Array1::zeros(299);
    assert!(run_pipeline(&x, short.view(), &config).is_err());
    let wrong = MoGSpec::benchmark(4);
    let c = oracle_config(&wrong, 10, 1);
    assert!(build_null_library(&x, &c).is_err());
    let mut bad = config.clone();
    bad.features = Some(vec![0, 3]);
    assert!(build_null_library(&x, &bad).is_err());
    let mut nan = x.clone().into_values();
    nan[[4, 1]] = f64::NAN;
    assert!(build_null_library(&FeatureMatrix::from_array(nan), &config).is_err());
    let mut gamma = config;
    gamma.gamma = 1.5;
    assert!(gamma.validate().is_err());
}
