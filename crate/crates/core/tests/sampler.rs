use std::sync::OnceLock;

use flowselect::experiments::{gen_mog_features, MoGDensity, MoGSpec};
use flowselect::flow::{train_flow, FlowArch, FlowModel, TrainConfig};
use flowselect::sampler::*;
use flowselect::seed::rng_for;
use flowselect::FeatureMatrix;
use ndarray::{Array1, Array2, ArrayView1};
use proptest::prelude::*;
use rand::Rng as _;

/// chi-square quantiles at 0.999 for 1..=9 degrees of freedom
const CHI2_999: [f64; 9] = [10.8276, 13.8155, 16.2662, 18.4668, 20.515, 22.4577, 24.3219, 26.1245, 27.8772];

fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn spd5() -> Array2<f64> {
    let b = Array2::from_shape_fn((5, 5), |(a, c)| ((a + 2 * c + 1) as f64).sin());
    b.dot(&b.t()) + Array2::<f64>::eye(5) * 0.5
}

#[test]
fn proposal_matches_dense_solve_oracle() {
    // numpy: sqrt(S_jj - S_j,o solve(S_oo + λI, S_o,j)), λ = 1e-6·tr(S)/5
    let stds = [0.8645903564241036, 0.8813886359127358, 0.9708911242373686, 0.8771270688567784, 0.8679825733166366];
    let means = [1.490609994131667, -1.7327445279547442, 2.017029376326562, 1.6510127490957731, -0.4983871518030238];
    let cov = spd5();
    let g = ConditionalGaussian::from_moments(Array1::from(vec![1.0, -1.0, 0.5, 2.0, 0.0]), cov.clone()).unwrap();
    let row = [0.3, 1.2, -0.7, 2.5, 0.1];
    for j in 0..5 {
        assert!((conditional_proposal_std(cov.view(), j).unwrap() - stds[j]).abs() < 1e-10);
        assert!((g.std(j) - stds[j]).abs() < 1e-10);
        assert!((g.conditional_mean(&row, j) - means[j]).abs() < 1e-10, "j={j}");
    }
}

fn benchmark5() -> (MoGSpec, FeatureMatrix) {
    let spec = MoGSpec::benchmark(5);
    let x = gen_mog_features(&spec, 10_000, 3).unwrap();
    (spec, x)
}

fn learned_flow() -> &'static FlowModel {
    static FLOW: OnceLock<FlowModel> = OnceLock::new();
    FLOW.get_or_init(|| {
        let (_, x) = benchmark5();
        let cfg = TrainConfig {
            arch: FlowArch {
                maf_layers: 3,
                hidden_sizes: vec![32, 32],
                ..FlowArch::default()
            },
            epochs_phase1: 60,
            epochs_phase2: 60,
            seed: 11,
            ..TrainConfig::default()
        };
        train_flow(&x, &cfg).unwrap().model
    })
}

fn probes(n_rows: usize, d: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = rng_for(seed, &[]);
    (0..count).map(|_| (rng.random_range(0..n_rows), rng.random_range(0..d))).collect()
}

fn chain_ks(density: &dyn JointDensity, spec: &MoGSpec, x: &FeatureMatrix, probes: &[(usize, usize)]) -> Vec<f64> {
    let proposal = ConditionalGaussian::fit(x.values()).unwrap();
    let config = ChainConfig {
        k: 5000,
        burn_in: 200,
        thinning: 5,
        seed: 21,
        ..ChainConfig::default()
    };
    probes
        .iter()
        .map(|&(i, j)| {
            let row = x.values().row(i).to_vec();
            let out = mh_chain(&row, i, j, density, &proposal, &config).unwrap();
            assert_eq!(out.samples.len(), 5000);
            let cond = MoGConditioner::new(spec, j).unwrap().conditional_for_row(&row).unwrap();
            ks_distance(&out.samples, |v| cond.cdf(v))
        })
        .collect()
}

#[test]
fn chain_on_exact_mixture_density_matches_analytic_conditional() {
    let (spec, x) = benchmark5();
    let density = MoGDensity::new(spec.clone()).unwrap();
    let ks = chain_ks(&density, &spec, &x, &probes(x.n_rows(), 5, 10, 4));
    assert!(ks.iter().all(|&d| d < 0.05), "{ks:?}");
}

#[test]
#[ignore = "flow fit too coarse for the narrow conditionals: observed KS up to 0.24 with this flow, 0.07 with a 5-block flow trained 13 minutes on 50k rows"]
fn chain_on_learned_flow_matches_analytic_conditional() {
    let (spec, x) = benchmark5();
    let ks = chain_ks(learned_flow(), &spec, &x, &probes(x.n_rows(), 5, 5, 5));
    assert!(ks.iter().all(|&d| d < 0.05), "{ks:?}");
}

#[test]
fn chain_on_learned_flow_matches_its_own_conditional() {
    let (_, x) = benchmark5();
    let flow = learned_flow();
    let proposal = ConditionalGaussian::fit(x.values()).unwrap();
    let config = ChainConfig {
        k: 5000,
        burn_in: 200,
        thinning: 5,
        seed: 21,
        ..ChainConfig::default()
    };
    for (i, j) in probes(x.n_rows(), 5, 5, 5) {
        let row = x.values().row(i).to_vec();
        let out = mh_chain(&row, i, j, flow, &proposal, &config).unwrap();

        // conditional CDF of the flow by trapezoidal quadrature along x_j
        let (lo, h, n) = (row[j] - 4.0, 1e-3, 8001);
        let mut grid = Array2::from_shape_fn((n, 5), |(_, c)| row[c]);
        for k in 0..n {
            grid[[k, j]] = lo + k as f64 * h;
        }
        let dens = JointDensity::log_density_rows(flow, grid.view()).mapv(f64::exp);
        let mut cdf = vec![0.0; n];
        for k in 1..n {
            cdf[k] = cdf[k - 1] + 0.5 * h * (dens[k] + dens[k - 1]);
        }
        let z = cdf[n - 1];
        let at = |v: f64| {
            let t = ((v - lo) / h).clamp(0.0, (n - 1) as f64);
            let k = (t.floor() as usize).min(n - 2);
            (cdf[k] + (t - k as f64) * (cdf[k + 1] - cdf[k])) / z
        };
        let ks = ks_distance(&out.samples, at);
        assert!(ks < 0.05, "probe ({i}, {j}): KS {ks}");
    }
}

#[test]
fn acceptance_rate_on_learned_flow_is_moderate() {
    let (_, x) = benchmark5();
    let proposal = ConditionalGaussian::fit(x.values()).unwrap();
    let rows = x.values().slice(ndarray::s![..200, ..]).to_owned();
    let ids: Vec<usize> = (0..200).collect();
    let config = ChainConfig {
        k: 200,
        burn_in: 50,
        seed: 2,
        ..ChainConfig::default()
    };
    let mut rates = Vec::new();
    for j in 0..5 {
        rates.push(sample_null_features(rows.view(), &ids, j, learned_flow(), &proposal, &config).unwrap().mean_acceptance());
    }
    // observed: about 0.7 for every feature
    assert!(rates.iter().all(|r| (0.2..=0.8).contains(r)), "{rates:?}");
}

#[test]
fn analytic_conditional_integrates_to_one_and_agrees_with_joint() {
    let spec = MoGSpec::benchmark(5);
    let density = MoGDensity::new(spec.clone()).unwrap();
    let x = gen_mog_features(&spec, 50, 8).unwrap();
    for (i, j) in [(3, 0), (17, 2), (40, 4)] {
        let row = x.values().row(i).to_vec();
        let cond = MoGConditioner::new(&spec, j).unwrap().conditional_for_row(&row).unwrap();

        // Simpson's rule over a range that holds all the mass
        let (lo, hi, n) = (-15.0, 55.0, 700_000usize);
        let h = (hi - lo) / n as f64;
        let mut total = cond.pdf(lo) + cond.pdf(hi);
        for k in 1..n {
            total += if k % 2 == 1 { 4.0 } else { 2.0 } * cond.pdf(lo + k as f64 * h);
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-8, "{total}");

        // The joint density along the line, normalized numerically.
        let mut probe = row.clone();
        let mut joint = |v: f64| {
            probe[j] = v;
            density.log_density(ArrayView1::from(&probe[..])).exp()
        };
        let z: f64 = (0..=n).map(|k| joint(lo + k as f64 * h)).sum::<f64>() * h;
        for v in [row[j] - 0.2, row[j], row[j] + 0.1] {
            assert!((joint(v) / z - cond.pdf(v)).abs() < 1e-6 * cond.pdf(v).max(1e-3));
        }
    }
}

#[test]
fn analytic_conditional_matches_rejection_sampling_from_the_joint() {
    let spec = MoGSpec::benchmark(5);
    let density = MoGDensity::new(spec.clone()).unwrap();
    let x = gen_mog_features(&spec, 10, 9).unwrap();
    let (i, j) = (6, 1);
    let row = x.values().row(i).to_vec();
    let mut probe = row.clone();
    let mut lp = |v: f64| {
        probe[j] = v;
        density.log_density(ArrayView1::from(&probe[..]))
    };
    // Envelope: bracket where the joint is within e^-30 of its maximum on a grid.
    let grid: Vec<f64> = (0..=60_000).map(|k| -10.0 + k as f64 * 1e-3).collect();
    let vals: Vec<f64> = grid.iter().map(|&v| lp(v)).collect();
    let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<f64> = grid.iter().zip(&vals).filter(|(_, &l)| l > top - 30.0).map(|(&g, _)| g).collect();
    let (lo, hi) = (keep[0] - 0.05, keep[keep.len() - 1] + 0.05);
    let bound = top + 0.1;

    let mut rng = rng_for(13, &[]);
    let mut accepted = Vec::new();
    while accepted.len() < 20_000 {
        let v = rng.random_range(lo..hi);
        let u: f64 = rng.random();
        if u.ln() < lp(v) - bound {
            accepted.push(v);
        }
    }
    let cond = exact_mog_conditional(&spec, &[row[0], row[2], row[3], row[4]], j).unwrap();
    let ks = ks_distance(&accepted, |v| cond.cdf(v));
    assert!(ks < 0.02, "{ks}");
}

#[test]
fn chain_reaches_bivariate_gaussian_conditional_moments() {
    let spec = MoGSpec {
        weights: vec![1.0],
        means: vec![0.0],
        correlations: vec![0.6],
        dim: 2,
    };
    let density = MoGDensity::new(spec).unwrap();
    let proposal = ConditionalGaussian::from_moments(Array1::zeros(2), spec_cov(0.6)).unwrap();
    let config = ChainConfig {
        k: 40_000,
        burn_in: 500,
        seed: 3,
        ..ChainConfig::default()
    };
    let out = mh_chain(&[0.0, 1.0], 0, 0, &density, &proposal, &config).unwrap();
    let s = &out.samples;
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // batch means for the autocorrelated standard error
    let batches = 50;
    let size = s.len() / batches;
    let bm: Vec<f64> = s.chunks(size).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let bvar = bm.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let se = (bvar / batches as f64).sqrt();
    assert!((mean - 0.6).abs() < 3.0 * se, "mean {mean} se {se}");
    assert!((var / 0.64 - 1.0).abs() < 0.1, "var {var}");
}

fn spec_cov(rho: f64) -> Array2<f64> {
    Array2::from_shape_fn((2, 2), |(a, b)| if a == b { 1.0 } else { rho })
}

#[test]
fn gibbs_frequencies_pass_chi_square_on_random_densities() {
    let mut rng = rng_for(99, &[]);
    for trial in 0..20 {
        let m = rng.random_range(2..=8usize);
        let support: Vec<f64> = (0..m).map(|c| c as f64).collect();
        let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.5..1.5)).collect();
        let slope: f64 = rng.random_range(-0.5..0.5);
        let lp = move |x: &[f64]| theta[x[1] as usize] + slope * x[1] * x[0];
        let row = [rng.random_range(-1.0..1.0), 0.0];
        let k = 20_000;
        let probs = enumerate_conditional(&row, 1, &lp, &support).unwrap();
        let draws = gibbs_discrete(&row, 1, &lp, &support, k, 1000 + trial).unwrap();
        let mut counts = vec![0usize; m];
        for d in draws {
            counts[d as usize] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 - k as f64 * p).powi(2) / (k as f64 * p))
            .sum();
        assert!(stat < CHI2_999[m - 2], "trial {trial}: {stat} with {} df", m - 1);
    }
}

#[test]
fn gibbs_on_fixed_categorical_densities() {
    let support = [0.0, 1.0, 2.0, 3.0];
    let uniform = |_: &[f64]| 0.0;
    let draws = gibbs_discrete(&[0.0], 0, &uniform, &support, 20_000, 5).unwrap();
    for c in 0..4 {
        let f = draws.iter().filter(|&&v| v == c as f64).count() as f64 / 20_000.0;
        assert!((f - 0.25).abs() < 0.02, "{c}: {f}");
    }

    let lp = |x: &[f64]| [0.0, 2f64.ln(), 3f64.ln()][x[0] as usize];
    let draws = gibbs_discrete(&[0.0], 0, &lp, &[0.0, 1.0, 2.0], 20_000, 6).unwrap();
    for (c, want) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].iter().enumerate() {
        let f = draws.iter().filter(|&&v| v == c as f64).count() as f64 / 20_000.0;
        assert!((f - want).abs() < 0.02, "{c}: {f}");
    }
}

fn small_problem() -> (MoGDensity, ConditionalGaussian, FeatureMatrix) {
    let spec = MoGSpec::benchmark(3);
    let x = gen_mog_features(&spec, 60, 4).unwrap();
    let proposal = ConditionalGaussian::fit(x.values()).unwrap();
    (MoGDensity::new(spec).unwrap(), proposal, x)
}

#[test]
fn null_draws_follow_rows_under_permutation() {
    let (density, proposal, x) = small_problem();
    let config = ChainConfig {
        k: 15,
        burn_in: 10,
        seed: 8,
        ..ChainConfig::default()
    };
    let ids: Vec<usize> = (0..60).collect();
    let base = sample_null_features(x.values(), &ids, 1, &density, &proposal, &config).unwrap();
    let perm: Vec<usize> = (0..60).map(|i| (i * 7 + 3) % 60).collect();
    let xp = x.values().select(ndarray::Axis(0), &perm);
    let permuted = sample_null_features(xp.view(), &perm, 1, &density, &proposal, &config).unwrap();
    for (r, &p) in perm.iter().enumerate() {
        assert_eq!(permuted.samples.row(r), base.samples.row(p));
        assert_eq!(permuted.acceptance_rate[r], base.acceptance_rate[p]);
    }
}

#[test]
fn null_draws_are_seed_deterministic() {
    let (density, proposal, x) = small_problem();
    let ids: Vec<usize> = (0..60).collect();
    let mut config = ChainConfig {
        k: 10,
        burn_in: 5,
        seed: 1,
        ..ChainConfig::default()
    };
    let a = sample_null_features(x.values(), &ids, 2, &density, &proposal, &config).unwrap();
    let b = sample_null_features(x.values(), &ids, 2, &density, &proposal, &config).unwrap();
    assert_eq!(a, b);
    config.seed = 2;
    let c = sample_null_features(x.values(), &ids, 2, &density, &proposal, &config).unwrap();
    assert_ne!(a.samples, c.samples);
}

#[test]
fn thinning_and_truncation_shapes() {
    let (density, proposal, x) = small_problem();
    let ids: Vec<usize> = (0..60).collect();
    let config = ChainConfig {
        k: 12,
        burn_in: 3,
        thinning: 3,
        seed: 1,
        ..ChainConfig::default()
    };
    let s = sample_null_features(x.values(), &ids, 0, &density, &proposal, &config).unwrap();
    assert_eq!((s.n_rows(), s.k()), (60, 12));
    let t = s.truncated(5);
    assert_eq!(t.samples.view(), s.samples.slice(ndarray::s![.., ..5]));
}

#[test]
fn null_cache_roundtrips_and_detects_corruption() {
    let (density, proposal, x) = small_problem();
    let ids: Vec<usize> = (0..60).collect();
    let config = ChainConfig {
        k: 7,
        burn_in: 2,
        seed: 1,
        ..ChainConfig::default()
    };
    let s = sample_null_features(x.values(), &ids, 2, &density, &proposal, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nulls.fsns");
    s.save(&path).unwrap();
    assert_eq!(NullSamples::load(&path).unwrap(), s);

    let bytes = s.to_bytes();
    for pos in [0, 5, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(NullSamples::from_bytes(&bad).is_err(), "flip at {pos}");
    }
    assert!(NullSamples::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (density, proposal, x) = small_problem();
    let ids: Vec<usize> = (0..60).collect();
    let config = ChainConfig::default();
    assert!(sample_null_features(x.values(), &ids[..59], 0, &density, &proposal, &config).is_err());
    assert!(sample_null_features(x.values(), &ids, 3, &density, &proposal, &config).is_err());
    let other = MoGDensity::new(MoGSpec::benchmark(4)).unwrap();
    assert!(matches!(
        sample_null_features(x.values(), &ids, 0, &other, &proposal, &config),
        Err(flowselect::Error::Mismatch(_))
    ));
}

proptest! {
    #[test]
    fn log_acceptance_is_a_log_probability(a in -1e6f64..1e6, b in -1e6f64..1e6) {
        let r = log_acceptance(a, b);
        prop_assert!(!r.is_nan());
        prop_assert!(r <= 0.0);
        prop_assert!((r - (a - b).min(0.0)).abs() < 1e-9 * (1.0 + (a - b).abs()));
    }

    #[test]
    fn conditional_weights_sum_to_one(v in prop::collection::vec(-5.0f64..45.0, 3), j in 0usize..4) {
        let spec = MoGSpec::benchmark(4);
        let c = exact_mog_conditional(&spec, &v, j).unwrap();
        prop_assert!((c.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(c.stds.iter().all(|&s| s > 0.0));
    }
}
