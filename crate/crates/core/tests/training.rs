use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrfsplat::spectrum::{AngularGrid, Spectrum};
use wrfsplat::splat::{init_random, rasterize};
use wrfsplat::training::{
    coarse_stage, fine_stage, hybrid_loss, init_model, run_coarse, spectrum_problem_parts, train, Checkpoint,
    LogRow, Problem, TrainConfig,
};
use wrfsplat::wavesim::{generate_dataset, ArrayConfig, Dataset, GenOptions, Mobility, Scene};
use wrfsplat::WrfError;

fn random_spectrum(grid: AngularGrid, rng: &mut ChaCha8Rng) -> Spectrum<f64> {
    let values = (0..2 * grid.cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Spectrum::from_values(grid, values).unwrap()
}

fn dataset(n: usize, grid: AngularGrid, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let moving_positions =
        (0..n).map(|_| [rng.random_range(0.5..3.5), rng.random_range(0.5..2.5), rng.random_range(1.0..2.2)]).collect();
    let scene = Scene {
        room_dims: [4.0, 3.0, 2.5],
        wall_reflectivity: 0.5,
        max_bounces: 1,
        fixed_node: [2.0, 1.5, 0.8],
        moving_positions,
        mode: Mobility::TxMoving,
        array: ArrayConfig::half_wavelength_4x4(2.4e9),
    };
    let test_every = if n >= 10 { 10 } else { 1 };
    generate_dataset(&scene, grid, &GenOptions { seed, test_every, tx_power_dbm: 0.0 }).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig { n_primitives: 16, coarse_iters: 20, fine_iters: 10, log_every: 1, ..TrainConfig::desk() }
}

#[test]
fn hybrid_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = AngularGrid::new(16, 16).unwrap();
    let h = 1e-6;
    for lambda1 in [0.0, 0.7, 1.0] {
        let pred = random_spectrum(grid, &mut rng);
        let gt = random_spectrum(grid, &mut rng);
        let (_, grad) = hybrid_loss(&pred, &gt, lambda1).unwrap();
        for k in (0..pred.values().len()).step_by(7) {
            let mut p = pred.clone();
            p.values_mut()[k] += h;
            let mut m = pred.clone();
            m.values_mut()[k] -= h;
            let fd = (hybrid_loss(&p, &gt, lambda1).unwrap().0.loss - hybrid_loss(&m, &gt, lambda1).unwrap().0.loss) / (2.0 * h);
            let err = (grad[k] - fd).abs();
            assert!(err <= 1e-3 * grad[k].abs().max(fd.abs()) + 1e-9, "λ1 {lambda1}, value {k}: {} vs {fd}", grad[k]);
        }
    }
}

#[test]
fn hybrid_loss_of_identical_spectra_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_spectrum(AngularGrid::new(20, 12).unwrap(), &mut rng);
    let (terms, grad) = hybrid_loss(&a, &a, 0.7).unwrap();
    assert!(terms.loss.abs() < 1e-12);
    assert!(grad.iter().all(|g| g.abs() < 1e-9));
}

#[test]
fn plain_l1_gradient_is_sign_over_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let grid = AngularGrid::new(12, 12).unwrap();
    let a = random_spectrum(grid, &mut rng);
    let b = random_spectrum(grid, &mut rng);
    let (_, grad) = hybrid_loss(&a, &b, 1.0).unwrap();
    let n = a.values().len() as f64;
    for ((x, y), g) in a.values().iter().zip(b.values()).zip(&grad) {
        assert_eq!(*g, (x - y).signum() / n);
    }
}

#[test]
fn zero_coarse_iterations_leave_the_set_untouched() {
    let ds = dataset(3, AngularGrid::new(24, 12).unwrap(), 1);
    let cfg = TrainConfig { coarse_iters: 0, ..small_config() };
    let set = init_random::<f32>(16, ds.grid(), 5).unwrap();
    assert_eq!(coarse_stage(&ds, set.clone(), &cfg).unwrap(), set);
}

#[test]
fn runs_with_one_seed_agree_exactly() {
    let ds = dataset(12, AngularGrid::new(24, 12).unwrap(), 2);
    let cfg = small_config();
    let run = || {
        let mut log: Vec<LogRow> = Vec::new();
        let ck = train(&ds, &cfg, None, &mut |r| log.push(*r)).unwrap();
        (ck.to_bytes(), log.iter().map(|r| r.loss).collect::<Vec<_>>())
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert_eq!(a, b);
    assert_eq!(la.len() as u64, cfg.coarse_iters + cfg.fine_iters);
}

#[test]
fn coarse_loss_trends_down_on_a_single_spectrum() {
    let ds = dataset(1, AngularGrid::new(72, 18).unwrap(), 3);
    let cfg = TrainConfig { n_primitives: 32, coarse_iters: 2_000, fine_iters: 0, log_every: 1, ..TrainConfig::default() };
    let (positions, objective) = spectrum_problem_parts(&ds, cfg.lambda1);
    let problem = Problem { positions, objective: &objective };
    let mut set = init_random::<f32>(cfg.n_primitives, ds.grid(), 0).unwrap();
    let mut losses = Vec::new();
    run_coarse(&problem, &mut set, &cfg, 0..cfg.coarse_iters, &mut |r| losses.push(r.loss)).unwrap();
    let smooth: Vec<f64> = losses.windows(100).map(|w| w.iter().sum::<f64>() / 100.0).collect();
    for t in 0..smooth.len() - 1_000 {
        assert!(smooth[t + 1_000] <= smooth[t], "smoothed loss rose from {} to {} after iteration {t}", smooth[t], smooth[t + 1_000]);
    }
    assert!(smooth[smooth.len() - 1] < 0.5 * smooth[0]);
}

#[test]
fn fine_stage_starts_from_the_coarse_render() {
    let ds = dataset(12, AngularGrid::new(24, 12).unwrap(), 4);
    let cfg = small_config();
    let model = init_model(&ds, &cfg).unwrap();
    let set = coarse_stage(&ds, model.set.clone(), &cfg).unwrap();
    let coarse = rasterize(&set, None, &cfg.raster()).unwrap();
    let mut deformed = model.clone();
    deformed.set = set;
    for s in &ds.samples {
        assert_eq!(deformed.render(s.position.map(f64::from), &cfg.raster()).unwrap(), coarse);
    }
}

#[test]
fn stop_gradient_freezes_centers_bit_for_bit() {
    let ds = dataset(12, AngularGrid::new(24, 12).unwrap(), 5);
    let cfg = TrainConfig { fine_iters: 30, ..small_config() };
    let model = init_model(&ds, &cfg).unwrap();
    let set = coarse_stage(&ds, model.set, &cfg).unwrap();
    let (after, net) = fine_stage(&ds, set.clone(), model.net.clone(), &cfg).unwrap();
    assert_eq!(after.center_raw, set.center_raw);
    assert_ne!(after.response, set.response);
    assert_ne!(net, model.net);

    let free = TrainConfig { stop_gradient: false, ..cfg };
    let (moved, _) = fine_stage(&ds, set.clone(), model.net, &free).unwrap();
    assert_ne!(moved.center_raw, set.center_raw);
}

#[test]
fn checkpoint_bytes_round_trip() {
    let ds = dataset(12, AngularGrid::new(24, 12).unwrap(), 6);
    let ck = train(&ds, &small_config(), None, &mut |_| {}).unwrap();
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.wrfc");
    ck.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ds = dataset(12, AngularGrid::new(24, 12).unwrap(), 7);
    let bytes = train(&ds, &small_config(), None, &mut |_| {}).unwrap().to_bytes();
    assert!(matches!(Checkpoint::from_bytes(&bytes[..40]), Err(WrfError::Format(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(WrfError::Format(_))));
    let mut bad = bytes.clone();
    bad[8..16].copy_from_slice(&(bytes.len() as u64).to_le_bytes());
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn resume_checks_the_dataset() {
    let grid = AngularGrid::new(24, 12).unwrap();
    let ds = dataset(12, grid, 8);
    let other = dataset(12, grid, 9);
    let cfg = small_config();
    let ck = train(&ds, &cfg, None, &mut |_| {}).unwrap();
    assert!(matches!(train(&other, &cfg, Some(ck.clone()), &mut |_| {}), Err(WrfError::HashMismatch { .. })));

    // resuming a finished run is a no-op
    let again = train(&ds, &cfg, Some(ck.clone()), &mut |_| {}).unwrap();
    assert_eq!(again.model, ck.model);

    let longer = TrainConfig { fine_iters: cfg.fine_iters + 5, ..cfg };
    let mut rows = Vec::new();
    let more = train(&ds, &longer, Some(ck.clone()), &mut |r| rows.push(r.iteration)).unwrap();
    assert_eq!(more.meta.iteration, longer.coarse_iters + longer.fine_iters);
    assert_eq!(rows.first().copied(), Some(cfg.coarse_iters + cfg.fine_iters));
}

#[test]
fn config_rejects_bad_values() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        TrainConfig { lambda1: 1.5, ..ok },
        TrainConfig { lr_gaussian: 0.0, ..ok },
        TrainConfig { n_primitives: 0, ..ok },
        TrainConfig { tile_size: 0, ..ok },
        TrainConfig { cutoff: Some(-1.0), ..ok },
    ] {
        assert!(matches!(bad.validate(), Err(WrfError::InvalidArgument(_))));
    }
    let parsed: TrainConfig = serde_json::from_str(r#"{"coarse_iters": 5}"#).unwrap();
    assert_eq!(parsed, TrainConfig { coarse_iters: 5, ..ok });
    assert!(serde_json::from_str::<TrainConfig>(r#"{"coarse_iter": 5}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hybrid_loss_stays_in_range(seed in any::<u64>(), lambda1 in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = AngularGrid::new(16, 12).unwrap();
        let a = random_spectrum(grid, &mut rng);
        let b = random_spectrum(grid, &mut rng);
        let (t, g) = hybrid_loss(&a, &b, lambda1).unwrap();
        prop_assert!(t.loss >= 0.0 && t.loss <= lambda1 * 2.0 + (1.0 - lambda1) * 2.0 + 1e-12);
        prop_assert!((t.loss - (lambda1 * t.l1 + (1.0 - lambda1) * t.ssim)).abs() < 1e-12);
        prop_assert!(g.iter().all(|v| v.is_finite()));
    }
}
