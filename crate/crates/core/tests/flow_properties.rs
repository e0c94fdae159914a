use flowselect::flow::{train_flow, FlowArch, FlowModel, Mode, TrainConfig};
use flowselect::seed::{rng_for, Rng};
use flowselect::FeatureMatrix;
use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn normal_matrix(n: usize, d: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

/// A model with every tensor moved away from its initial value.
fn random_model(d: usize, seed: u64) -> FlowModel {
    let mut rng = rng_for(seed, &[77]);
    let data = normal_matrix(64, d, &mut rng) * 2.0 + 1.0;
    let arch = FlowArch {
        clusters: 3,
        maf_layers: 2,
        hidden_sizes: vec![6, 5],
        output_init_scale: 0.4,
        ..FlowArch::default()
    };
    let mut m = FlowModel::init(data.view(), &arch, seed).unwrap();
    for t in m.trainable_mut().into_iter().skip(FlowModel::GAUSS_TENSORS) {
        for v in t.iter_mut() {
            if *v != 0.0 || rng.random::<f64>() < 0.5 {
                *v += 0.2 * (rng.random::<f64>() - 0.5);
            }
        }
    }
    // masked entries must stay zero
    for b in &mut m.blocks {
        for lin in b.made.hidden.iter_mut().chain(std::iter::once(&mut b.made.output)) {
            lin.weight = &lin.weight * &lin.mask;
        }
        b.norm.running_mean.mapv_inplace(|_| 0.3 * (rng.random::<f64>() - 0.5));
        b.norm.running_var.mapv_inplace(|_| 0.5 + rng.random::<f64>());
    }
    for v in m.gauss.log_s.iter_mut() {
        *v += 0.3 * (rng.random::<f64>() - 0.5);
    }
    m
}

/// Whether each scalar of each trainable tensor is a free parameter.
fn free_flags(m: &FlowModel) -> Vec<Vec<bool>> {
    let mut out = vec![vec![true; m.gauss.mu.len()], vec![true; m.gauss.log_s.len()]];
    for b in &m.blocks {
        for lin in b.made.hidden.iter().chain(std::iter::once(&b.made.output)) {
            out.push(lin.mask.iter().map(|&v| v != 0.0).collect());
            out.push(vec![true; lin.bias.len()]);
        }
        out.push(vec![true; b.norm.log_gamma.len()]);
        out.push(vec![true; b.norm.beta.len()]);
    }
    out
}

fn check_gradients(mode: Mode) {
    let d = 4;
    let model = random_model(d, 3);
    let mut rng = rng_for(5, &[1]);
    let batch = normal_matrix(8, d, &mut rng) * 2.0 + 1.0;
    let pass = model.nll_and_gradients(batch.view(), mode, false).unwrap();
    let free = free_flags(&model);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (t, flags) in free.iter().enumerate() {
        for (i, &is_free) in flags.iter().enumerate() {
            let analytic = pass.grads[t][i];
            if !is_free {
                assert_eq!(analytic, 0.0, "masked gradient must be zero (tensor {t}, entry {i})");
                continue;
            }
            let mut plus = model.clone();
            plus.trainable_mut()[t][i] += h;
            let mut minus = model.clone();
            minus.trainable_mut()[t][i] -= h;
            let fp = plus.nll_and_gradients(batch.view(), mode, false).unwrap().nll;
            let fm = minus.nll_and_gradients(batch.view(), mode, false).unwrap().nll;
            let numeric = (fp - fm) / (2.0 * h);
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-2);
            let abs_err = (numeric - analytic).abs();
            assert!(
                err < 1e-4 || abs_err < 1e-6,
                "tensor {t} entry {i}: analytic {analytic} numeric {numeric}"
            );
            worst = worst.max(err.min(abs_err / 1e-6 * 1e-4));
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn gradients_match_finite_differences_in_train_mode() {
    check_gradients(Mode::Train);
}

#[test]
fn gradients_match_finite_differences_in_eval_mode() {
    check_gradients(Mode::Eval);
}

#[test]
fn gaussianization_only_gradients_match_finite_differences() {
    let model = random_model(3, 8);
    let mut rng = rng_for(2, &[1]);
    let batch = normal_matrix(8, 3, &mut rng) * 2.0 + 1.0;
    let pass = model.nll_and_gradients(batch.view(), Mode::Train, true).unwrap();
    let h = 1e-5;
    for t in 0..FlowModel::GAUSS_TENSORS {
        for i in 0..pass.grads[t].len() {
            let mut p = model.clone();
            p.trainable_mut()[t][i] += h;
            let mut m = model.clone();
            m.trainable_mut()[t][i] -= h;
            let num = (p.nll_and_gradients(batch.view(), Mode::Train, true).unwrap().nll
                - m.nll_and_gradients(batch.view(), Mode::Train, true).unwrap().nll)
                / (2.0 * h);
            let a = pass.grads[t][i];
            assert!((num - a).abs() <= 1e-4 * num.abs().max(1e-2), "{t}/{i}: {a} vs {num}");
        }
    }
    assert!(pass.grads[FlowModel::GAUSS_TENSORS..].iter().flatten().all(|&g| g == 0.0));
}

#[test]
fn alpha_bias_gradient_is_one_at_zero_parameters() {
    let d = 3;
    let arch = FlowArch {
        maf_layers: 1,
        hidden_sizes: vec![4],
        ..FlowArch::default()
    };
    let model = FlowModel::identity(d, &arch);
    let batch = Array2::zeros((5, d));
    let pass = model.nll_and_gradients(batch.view(), Mode::Eval, false).unwrap();
    // tensors: mu, log_s, hidden W, hidden b, output W, output b, ...
    let out_bias = &pass.grads[5];
    assert_eq!(out_bias.len(), 2 * d);
    for j in 0..d {
        assert!((out_bias[d + j] - 1.0).abs() < 1e-12, "alpha bias grad {}", out_bias[d + j]);
        assert!(out_bias[j].abs() < 1e-12);
    }
}

#[test]
fn duplicating_the_batch_changes_nothing() {
    let model = random_model(3, 11);
    let mut rng = rng_for(4, &[1]);
    let batch = normal_matrix(6, 3, &mut rng);
    let doubled = ndarray::concatenate![ndarray::Axis(0), batch, batch];
    for mode in [Mode::Train, Mode::Eval] {
        let a = model.nll_and_gradients(batch.view(), mode, false).unwrap();
        let b = model.nll_and_gradients(doubled.view(), mode, false).unwrap();
        assert!((a.nll - b.nll).abs() < 1e-12);
        for (ga, gb) in a.grads.iter().flatten().zip(b.grads.iter().flatten()) {
            assert!((ga - gb).abs() < 1e-10 * (1.0 + ga.abs()));
        }
    }
}

#[test]
fn identity_flow_is_the_standardizer() {
    let d = 3;
    let arch = FlowArch {
        maf_layers: 2,
        hidden_sizes: vec![4],
        ..FlowArch::default()
    };
    let mut model = FlowModel::identity(d, &arch);
    model.standardizer.mean = Array1::from(vec![1.0, -2.0, 0.5]);
    model.standardizer.std = Array1::from(vec![2.0, 0.5, 4.0]);
    let x = [3.0, -1.0, 0.5];
    let (z, ld) = model.flow_forward(&x).unwrap();
    let expect = [1.0, 2.0, 0.0];
    for k in 0..d {
        assert!((z[k] - expect[k]).abs() < 1e-6, "{z:?}");
    }
    let want_ld = -(2.0f64.ln() + 0.5f64.ln() + 4.0f64.ln());
    assert!((ld - want_ld).abs() < 1e-6);
}

#[test]
fn identity_flow_density_is_standard_normal() {
    let arch = FlowArch {
        maf_layers: 1,
        hidden_sizes: vec![3],
        ..FlowArch::default()
    };
    let model = FlowModel::identity(1, &arch);
    let lp = model.log_density(&[0.0]).unwrap();
    assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-5, "{lp}");
}

#[test]
fn inverse_recovers_input() {
    let model = random_model(4, 21);
    let mut rng = rng_for(9, &[1]);
    for _ in 0..20 {
        let x: Vec<f64> = (0..4).map(|_| 1.0 + 2.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let (z, _) = model.flow_forward(&x).unwrap();
        let back = model.inverse(&z).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{x:?} vs {back:?}");
        }
    }
}

fn numerical_jacobian(model: &FlowModel, x: &[f64]) -> Array2<f64> {
    let d = x.len();
    let h = 1e-5;
    let mut jac = Array2::zeros((d, d));
    for c in 0..d {
        let mut xp = x.to_vec();
        xp[c] += h;
        let mut xm = x.to_vec();
        xm[c] -= h;
        let (zp, _) = model.flow_forward(&xp).unwrap();
        let (zm, _) = model.flow_forward(&xm).unwrap();
        for r in 0..d {
            jac[[r, c]] = (zp[r] - zm[r]) / (2.0 * h);
        }
    }
    jac
}

fn log_abs_det(m: &Array2<f64>) -> f64 {
    let d = m.nrows();
    let mat = nalgebra::DMatrix::from_fn(d, d, |r, c| m[[r, c]]);
    mat.determinant().abs().ln()
}

#[test]
fn log_det_matches_numerical_jacobian() {
    for d in 1..=5 {
        let model = random_model(d, 30 + d as u64);
        let mut rng = rng_for(d as u64, &[2]);
        for _ in 0..3 {
            let x: Vec<f64> = (0..d).map(|_| 1.0 + 1.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
            let (_, ld) = model.flow_forward(&x).unwrap();
            let num = log_abs_det(&numerical_jacobian(&model, &x));
            assert!((ld - num).abs() <= 1e-4 * ld.abs().max(1.0), "D={d}: {ld} vs {num}");
        }
    }
}

#[test]
fn flow_is_autoregressive_after_gaussianization() {
    // elementwise layers keep the triangular structure of the MADE blocks
    let model = random_model(5, 41);
    let mut rng = rng_for(41, &[3]);
    for _ in 0..10 {
        let x: Vec<f64> = (0..5).map(|_| 1.0 + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let jac = numerical_jacobian(&model, &x);
        for i in 0..5 {
            for j in (i + 1)..5 {
                assert!(jac[[i, j]].abs() < 1e-9, "dz_{i}/dx_{j} = {}", jac[[i, j]]);
            }
        }
    }
}

#[test]
fn made_layer_matches_dense_jacobian() {
    let mut rng = rng_for(12, &[0]);
    let made = flowselect::flow::MadeLayerParams::random(3, &[8, 8], 0.5, &mut rng);
    let x = [0.1, -0.2, 0.3];
    let (u, ld) = made.forward_vec(&x).unwrap();
    let h = 1e-5;
    let mut jac = Array2::zeros((3, 3));
    for c in 0..3 {
        let mut xp = x;
        xp[c] += h;
        let mut xm = x;
        xm[c] -= h;
        let (up, _) = made.forward_vec(&xp).unwrap();
        let (um, _) = made.forward_vec(&xm).unwrap();
        for r in 0..3 {
            jac[[r, c]] = (up[r] - um[r]) / (2.0 * h);
        }
    }
    for r in 0..3 {
        for c in (r + 1)..3 {
            assert_eq!(jac[[r, c]], 0.0);
        }
    }
    assert!((log_abs_det(&jac) - ld).abs() < 1e-8);
    // u_j = (x_j − μ_j)·exp(−α_j) with the diagonal equal to exp(−α_j)
    let (u0, _) = made.forward_vec(&[0.0, -0.2, 0.3]).unwrap();
    assert!(((u[0] - u0[0]) / 0.1 - jac[[0, 0]]).abs() < 1e-8);
}

#[test]
fn identity_flow_samples_are_standard_normal() {
    let arch = FlowArch {
        maf_layers: 1,
        hidden_sizes: vec![3],
        ..FlowArch::default()
    };
    let model = FlowModel::identity(2, &arch);
    let n = 4000;
    let s = model.sample(n, 17).unwrap();
    for c in 0..2 {
        let m = s.column(c).mean().unwrap();
        assert!(m.abs() < 4.0 / (n as f64).sqrt());
    }
}

#[test]
fn sampled_points_map_back_to_base_draws() {
    let model = random_model(3, 51);
    let s = model.sample(25, 99).unwrap();
    let mut rng = rng_for(99, &[flowselect::seed::stream::FLOW_SAMPLE]);
    for row in s.rows() {
        let z: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (back, _) = model.flow_forward(row.as_slice().unwrap()).unwrap();
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).abs() < 1e-5, "{z:?} vs {back:?}");
        }
    }
}

fn quick_config(seed: u64, hidden: Vec<usize>) -> TrainConfig {
    TrainConfig {
        arch: FlowArch {
            clusters: 4,
            maf_layers: 2,
            hidden_sizes: hidden,
            ..FlowArch::default()
        },
        epochs_phase1: 3,
        epochs_phase2: 6,
        batch_size: 128,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let mut rng = rng_for(1, &[5]);
    let data = FeatureMatrix::from_array(normal_matrix(600, 2, &mut rng));
    let cfg = quick_config(4, vec![8]);
    let a = train_flow(&data, &cfg).unwrap();
    let b = train_flow(&data, &cfg).unwrap();
    assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    assert_eq!(a.metrics, b.metrics);
    let c = train_flow(&data, &quick_config(5, vec![8])).unwrap();
    assert_ne!(a.model.to_bytes(), c.model.to_bytes());
}

#[test]
fn too_few_rows_is_rejected() {
    let data = FeatureMatrix::from_array(Array2::from_shape_fn((100, 2), |(i, j)| (i * (j + 1)) as f64));
    assert!(train_flow(&data, &quick_config(0, vec![4])).is_err());
}

#[test]
fn trained_one_dimensional_density_integrates_to_one() {
    let mut rng = rng_for(2, &[6]);
    // bimodal data
    let x = Array2::from_shape_fn((3000, 1), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        if rng.random::<bool>() {
            z * 0.7 - 2.0
        } else {
            z + 2.5
        }
    });
    let trained = train_flow(&FeatureMatrix::from_array(x), &quick_config(3, vec![16])).unwrap();
    let n = 2001;
    let grid = Array2::from_shape_fn((n, 1), |(i, _)| -10.0 + 20.0 * i as f64 / (n - 1) as f64);
    let p = trained.model.log_density_batch(grid.view()).unwrap().mapv(f64::exp);
    let h = 20.0 / (n - 1) as f64;
    let integral = h * (p.sum() - 0.5 * (p[0] + p[n - 1]));
    assert!((integral - 1.0).abs() < 1e-2, "integral {integral}");
}

#[test]
fn trained_two_dimensional_density_integrates_to_one() {
    let mut rng = rng_for(3, &[6]);
    let x = Array2::from_shape_fn((3000, 2), |_| StandardNormal.sample(&mut rng));
    let mut x = x;
    for mut r in x.rows_mut() {
        r[1] = 0.8 * r[0] + 0.6 * r[1];
    }
    let trained = train_flow(&FeatureMatrix::from_array(x), &quick_config(6, vec![16])).unwrap();
    let n = 321;
    let h = 16.0 / (n - 1) as f64;
    let grid = Array2::from_shape_fn((n * n, 2), |(k, c)| {
        let idx = if c == 0 { k / n } else { k % n };
        -8.0 + h * idx as f64
    });
    let p = trained.model.log_density_batch(grid.view()).unwrap().mapv(f64::exp);
    let mut total = 0.0;
    for a in 0..n {
        let wa = if a == 0 || a == n - 1 { 0.5 } else { 1.0 };
        for b in 0..n {
            let wb = if b == 0 || b == n - 1 { 0.5 } else { 1.0 };
            total += wa * wb * p[a * n + b];
        }
    }
    let integral = total * h * h;
    assert!((integral - 1.0).abs() < 5e-2, "integral {integral}");
}

#[test]
fn trained_on_standard_normal_recovers_its_density() {
    let mut rng = rng_for(4, &[6]);
    let x = normal_matrix(50_000, 1, &mut rng);
    let mut cfg = quick_config(7, vec![16]);
    cfg.batch_size = 512;
    let trained = train_flow(&FeatureMatrix::from_array(x), &cfg).unwrap();
    let lp = trained.model.log_density(&[0.0]).unwrap();
    assert!((lp + 0.9189).abs() < 0.05, "log density at 0: {lp}");
}

#[test]
fn validation_nll_of_standard_normal_matches_entropy() {
    let mut rng = rng_for(5, &[6]);
    let x = normal_matrix(20_000, 2, &mut rng);
    let mut cfg = quick_config(8, vec![16]);
    cfg.batch_size = 256;
    let trained = train_flow(&FeatureMatrix::from_array(x), &cfg).unwrap();
    let per_dim = trained.best_val_nll / 2.0;
    // entropy of N(0,1) is ½ ln(2πe)
    let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    assert!((per_dim - entropy).abs() < 0.05, "per-dimension NLL {per_dim} vs {entropy}");
}
