//! Federated training loop: gradients, determinism, aggregation modes.

use airfl_core::aircomp::CoefficientMode;
use airfl_core::channel::RngStream;
use airfl_core::config::{GammaSetting, SystemConfig};
use airfl_core::fltrain::{
    batch_loss, gaussian_blobs, local_gradient, train, AggregationMode, Federation, Model, Partition, Sample,
    TaskKind, MLP_HIDDEN,
};

fn small_config() -> SystemConfig {
    let mut cfg = SystemConfig::default();
    cfg.train.rounds = 40;
    cfg
}

fn check_fd(model: Model, n_classes: usize, seed: u64) {
    let mut rng = RngStream::new(seed, 0);
    let data = gaussian_blobs(40, model.n_features(), n_classes, 2.0, &mut rng).unwrap();
    for trial in 0..20 {
        let w: Vec<f64> = (0..model.dim()).map(|_| 0.5 * rng.normal()).collect();
        let batch: Vec<&Sample> = data.samples.iter().skip(trial).take(8).collect();
        let g = local_gradient(&model, &w, &batch).unwrap();
        let mut fd = vec![0.0; w.len()];
        for i in 0..w.len() {
            let h = 1e-6 * w[i].abs().max(1.0);
            let mut up = w.clone();
            up[i] += h;
            let mut dn = w.clone();
            dn[i] -= h;
            fd[i] = (batch_loss(&model, &up, &batch).unwrap() - batch_loss(&model, &dn, &batch).unwrap()) / (2.0 * h);
        }
        let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-5 * norm.max(1e-3), "{model:?} trial {trial}: err {err} norm {norm}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    check_fd(Model::Logistic { n_features: 10 }, 2, 1);
    check_fd(
        Model::Mlp {
            n_features: 6,
            hidden: MLP_HIDDEN,
            n_classes: 4,
        },
        4,
        2,
    );
}

#[test]
fn runs_are_bit_identical() {
    let cfg = small_config();
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(train(&other).unwrap().records, a.records);
}

#[test]
fn ideal_training_descends() {
    let mut cfg = small_config();
    cfg.train.aggregation = AggregationMode::Ideal;
    let t = train(&cfg).unwrap();
    assert_eq!(t.records.len(), 40);
    assert!(t.records.last().unwrap().train_loss < t.initial_train_loss);
    assert!(t.records.iter().all(|r| r.divergence == 0.0 && !r.skipped));
}

#[test]
fn unit_coefficients_without_noise_match_ideal_training() {
    let mut cfg = small_config();
    cfg.rho = 1.0;
    let mut fed = Federation::build(&cfg).unwrap();
    fed.power.sigma2 = 0.0;
    fed.coefficient_mode = CoefficientMode::ForceUnit;
    let air = fed.run(AggregationMode::AirComp).unwrap();
    let ideal = fed.run(AggregationMode::Ideal).unwrap();
    assert_eq!(air.final_params, ideal.final_params);
    for (a, i) in air.records.iter().zip(&ideal.records) {
        assert_eq!(a.train_loss.to_bits(), i.train_loss.to_bits());
        assert_eq!(a.test_accuracy.to_bits(), i.test_accuracy.to_bits());
        assert_eq!(a.divergence, 0.0);
    }
}

#[test]
fn noiseless_perfect_csi_distortion_is_deterministic() {
    // with every device active, each ξ equals e^γ, so ĝ = e^γ·g
    let mut cfg = small_config();
    cfg.rho = 1.0;
    let gamma: f64 = 1e-3;
    cfg.gamma_th = GammaSetting::Fixed(gamma);
    let mut fed = Federation::build(&cfg).unwrap();
    fed.power.sigma2 = 0.0;
    let mut state = fed.initial_state().unwrap();
    let mut replay = state.clone();
    let mut checked = 0;
    for _ in 0..40 {
        let grads = fed.round_gradients(&mut replay).unwrap();
        let rec = fed.run_round(&mut state, AggregationMode::AirComp).unwrap();
        replay = state.clone();
        if rec.active_devices == grads.len() {
            let k = grads.len() as f64;
            let mean_sq: f64 = (0..grads[0].len())
                .map(|j| grads.iter().map(|g| g[j]).sum::<f64>() / k)
                .map(|m| m * m)
                .sum();
            let want = gamma.exp_m1().powi(2) * mean_sq;
            assert!((rec.divergence - want).abs() <= 1e-9 * want, "{} vs {want}", rec.divergence);
            checked += 1;
        }
    }
    assert!(checked > 30);
}

#[test]
fn skipped_rounds_leave_weights_alone() {
    let mut cfg = small_config();
    cfg.gamma_th = GammaSetting::Fixed(60.0);
    let fed = Federation::build(&cfg).unwrap();
    let init = fed.initial_state().unwrap().params;
    let t = fed.run(AggregationMode::AirComp).unwrap();
    assert!(t.records.iter().all(|r| r.skipped && r.active_devices == 0));
    assert_eq!(t.final_params, init);
}

#[test]
fn measured_divergence_tracks_prediction() {
    let mut cfg = SystemConfig::default();
    cfg.train.rounds = 400;
    let t = train(&cfg).unwrap();
    let gaps: Vec<f64> = t.records.iter().map(|r| r.divergence - r.predicted_divergence).collect();
    let n = gaps.len() as f64;
    let m = gaps.iter().sum::<f64>() / n;
    let se = (gaps.iter().map(|g| (g - m) * (g - m)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!(m.abs() < 4.0 * se, "mean gap {m} ± {se}");
    assert!(t.records.iter().all(|r| r.divergence.is_finite() && r.divergence >= 0.0));
}

#[test]
fn genie_bound_never_violates_power() {
    let mut cfg = small_config();
    cfg.train.genie_g_bound = true;
    let t = train(&cfg).unwrap();
    assert!(t.records.iter().all(|r| r.power_violations == 0));
}

#[test]
fn batches_do_not_depend_on_mode() {
    let fed = Federation::build(&small_config()).unwrap();
    let mut a = fed.initial_state().unwrap();
    let mut b = fed.initial_state().unwrap();
    fed.run_round(&mut a, AggregationMode::Ideal).unwrap();
    fed.run_round(&mut b, AggregationMode::AirComp).unwrap();
    // same parameters in, same batches out
    b.params = a.params.clone();
    assert_eq!(fed.round_gradients(&mut a).unwrap(), fed.round_gradients(&mut b).unwrap());
}

#[test]
fn mlp_with_label_skew_learns() {
    let mut cfg = small_config();
    cfg.train.task = TaskKind::SmallMlp;
    cfg.train.n_classes = 4;
    cfg.train.separation = 4.0;
    cfg.train.eta = 0.1;
    cfg.train.rounds = 60;
    cfg.train.partition = Partition::LabelSkew;
    cfg.train.aggregation = AggregationMode::Ideal;
    let t = train(&cfg).unwrap();
    assert!(t.records.last().unwrap().train_loss < t.initial_train_loss);
    assert!(t.final_accuracy() > 0.4);
}
