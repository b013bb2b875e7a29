use std::f64::consts::TAU;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrfsplat::spectrum::AngularGrid;
use wrfsplat::splat::{
    init_random, kernel_weight, materialize_center, rasterize, rasterize_backward, GaussianSet, RasterConfig,
    Residuals, CHOL_EPS,
};

fn random_set(n: usize, grid: AngularGrid, rng: &mut ChaCha8Rng) -> GaussianSet<f64> {
    let mut set = init_random::<f64>(n, grid, rng.random()).unwrap();
    for i in 0..n {
        set.cholesky[3 * i] = rng.random_range(0.5..3.0);
        set.cholesky[3 * i + 1] = rng.random_range(-1.5..1.5);
        set.cholesky[3 * i + 2] = rng.random_range(0.5..3.0);
        set.atten_logit[i] = rng.random_range(-2.0..2.0);
        set.response[2 * i] = rng.random_range(-1.0..1.0);
        set.response[2 * i + 1] = rng.random_range(-1.0..1.0);
    }
    set
}

fn random_residuals(n: usize, grid: AngularGrid, rng: &mut ChaCha8Rng) -> Residuals<f64> {
    let mut r = Residuals::zeros(n);
    for i in 0..n {
        r.d_center[2 * i] = rng.random_range(-1.0..1.0) * grid.elevation_step();
        r.d_center[2 * i + 1] = rng.random_range(-1.0..1.0) * grid.azimuth_step();
        r.d_response[2 * i] = rng.random_range(-0.3..0.3);
        r.d_response[2 * i + 1] = rng.random_range(-0.3..0.3);
        r.d_atten[i] = rng.random_range(-0.05..0.05);
    }
    r
}

/// Closed-form 2×2 inverse and explicit wrap, one cell and one primitive at
/// a time.
fn dense_oracle(set: &GaussianSet<f64>, res: Option<&Residuals<f64>>) -> Vec<f64> {
    let g = set.grid;
    let (se, sa) = (g.elevation_step(), g.azimuth_step());
    let mut out = vec![0.0; 2 * g.cells()];
    for row in 0..g.n_elevation {
        for col in 0..g.n_azimuth {
            for i in 0..set.len() {
                let (mut el, mut az) = materialize_center([set.center_raw[2 * i], set.center_raw[2 * i + 1]]);
                let mut psi = [set.response[2 * i], set.response[2 * i + 1]];
                let mut delta = 1.0 / (1.0 + (-set.atten_logit[i]).exp());
                if let Some(r) = res {
                    el += r.d_center[2 * i];
                    az += r.d_center[2 * i + 1];
                    psi[0] += r.d_response[2 * i];
                    psi[1] += r.d_response[2 * i + 1];
                    delta = (delta + r.d_atten[i]).clamp(0.0, 1.0);
                }
                let l1 = set.cholesky[3 * i].max(CHOL_EPS);
                let l2 = set.cholesky[3 * i + 1];
                let l3 = set.cholesky[3 * i + 2].max(CHOL_EPS);
                // Σ = L Lᵀ
                let (s11, s12, s22) = (l1 * l1, l1 * l2, l2 * l2 + l3 * l3);
                let det = s11 * s22 - s12 * s12;
                let (i11, i12, i22) = (s22 / det, -s12 / det, s11 / det);
                let dr = row as f64 - el / se;
                let mut dc = (col as f64 * sa - az) / sa;
                let n = g.n_azimuth as f64;
                dc -= n * (dc / n + 0.5).floor();
                let q = i11 * dr * dr + 2.0 * i12 * dr * dc + i22 * dc * dc;
                let k = delta * (-0.5 * q).exp();
                let o = 2 * (row * g.n_azimuth + col);
                out[o] += psi[0] * k;
                out[o + 1] += psi[1] * k;
            }
        }
    }
    out
}

#[test]
fn tiled_forward_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let grid = AngularGrid::new(rng.random_range(1..=32), rng.random_range(1..=16)).unwrap();
        let n = rng.random_range(1..=64);
        let set = random_set(n, grid, &mut rng);
        let res = (case % 2 == 1).then(|| random_residuals(n, grid, &mut rng));
        let cfg = RasterConfig { cutoff: None, tile_size: rng.random_range(1..=16) };
        let got = rasterize(&set, res.as_ref(), &cfg).unwrap();
        let want = dense_oracle(&set, res.as_ref());
        let worst = got.values().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-5, "case {case}: max abs diff {worst}");
    }
}

#[test]
fn kernel_weight_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = AngularGrid::new(360, 90).unwrap();
    for _ in 0..200 {
        let set = random_set(1, grid, &mut rng);
        let el = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let az = rng.random_range(0.0..TAU);
        let got = kernel_weight(&set, 0, el, az, None);
        let (ce, ca) = set.center(0);
        let (l1, l2, l3) = (set.cholesky[0], set.cholesky[1], set.cholesky[2]);
        let (s11, s12, s22) = (l1 * l1, l1 * l2, l2 * l2 + l3 * l3);
        let det = s11 * s22 - s12 * s12;
        let dr = (el - ce) / grid.elevation_step();
        let mut dc = (az - ca) / grid.azimuth_step();
        dc -= 360.0 * (dc / 360.0 + 0.5).floor();
        let q = (s22 * dr * dr - 2.0 * s12 * dr * dc + s11 * dc * dc) / det;
        let want = set.attenuation(0) * (-0.5 * q).exp();
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

fn contraction(set: &GaussianSet<f64>, res: &Residuals<f64>, up: &[f64], cfg: &RasterConfig) -> f64 {
    rasterize(set, Some(res), cfg).unwrap().values().iter().zip(up).map(|(a, b)| a * b).sum()
}

fn check(analytic: f64, fd: f64, what: &str) {
    let err = (analytic - fd).abs();
    assert!(err <= 1e-3 * analytic.abs().max(fd.abs()) + 1e-8, "{what}: analytic {analytic} vs fd {fd}");
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let grid = AngularGrid::new(12, 6).unwrap();
    let cfg = RasterConfig::uncut();
    let h = 1e-4;
    for _ in 0..5 {
        let set = random_set(4, grid, &mut rng);
        let res = random_residuals(4, grid, &mut rng);
        let up: Vec<f64> = (0..2 * grid.cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = rasterize_backward(&set, Some(&res), &up, &cfg).unwrap();

        type SetField = fn(&mut GaussianSet<f64>) -> &mut Vec<f64>;
        let set_fields: [(&str, SetField, &Vec<f64>); 4] = [
            ("center_raw", |s| &mut s.center_raw, &g.center_raw),
            ("cholesky", |s| &mut s.cholesky, &g.cholesky),
            ("atten_logit", |s| &mut s.atten_logit, &g.atten_logit),
            ("response", |s| &mut s.response, &g.response),
        ];
        for (name, field, analytic) in set_fields {
            for k in 0..analytic.len() {
                let mut p = set.clone();
                field(&mut p)[k] += h;
                let mut m = set.clone();
                field(&mut m)[k] -= h;
                let fd = (contraction(&p, &res, &up, &cfg) - contraction(&m, &res, &up, &cfg)) / (2.0 * h);
                check(analytic[k], fd, &format!("{name}[{k}]"));
            }
        }

        type ResField = fn(&mut Residuals<f64>) -> &mut Vec<f64>;
        let res_fields: [(&str, ResField, &Vec<f64>); 3] = [
            ("d_center", |r| &mut r.d_center, &g.d_center),
            ("d_response", |r| &mut r.d_response, &g.d_response),
            ("d_atten", |r| &mut r.d_atten, &g.d_atten),
        ];
        for (name, field, analytic) in res_fields {
            for k in 0..analytic.len() {
                let mut p = res.clone();
                field(&mut p)[k] += h;
                let mut m = res.clone();
                field(&mut m)[k] -= h;
                let fd = (contraction(&set, &p, &up, &cfg) - contraction(&set, &m, &up, &cfg)) / (2.0 * h);
                check(analytic[k], fd, &format!("{name}[{k}]"));
            }
        }
    }
}

#[test]
fn response_gradient_is_kernel_weighted_upstream() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = AngularGrid::new(24, 10).unwrap();
    let set = random_set(6, grid, &mut rng);
    let up: Vec<f64> = (0..2 * grid.cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = rasterize_backward(&set, None, &up, &RasterConfig::uncut()).unwrap();
    for i in 0..set.len() {
        let mut want = [0.0; 2];
        for row in 0..grid.n_elevation {
            for col in 0..grid.n_azimuth {
                let k = kernel_weight(&set, i, grid.elevation(row), grid.azimuth(col), None);
                let o = 2 * grid.index(row, col);
                want[0] += up[o] * k;
                want[1] += up[o + 1] * k;
            }
        }
        assert!((g.response[2 * i] - want[0]).abs() <= 1e-10);
        assert!((g.response[2 * i + 1] - want[1]).abs() <= 1e-10);
    }
}

#[test]
fn untouched_primitive_gets_zero_gradient() {
    let grid = AngularGrid::new(64, 32).unwrap();
    let mut set = init_random::<f64>(2, grid, 1).unwrap();
    set.center_raw = vec![0.0, -1.0, 0.0, 1.0];
    let mut up = vec![0.0; 2 * grid.cells()];
    // upstream only far from the first primitive's 3σ footprint
    let c1 = set.center(1);
    let row = (c1.0 / grid.elevation_step()).round() as usize;
    let col = (c1.1 / grid.azimuth_step()).round() as usize;
    up[2 * grid.index(row, col)] = 1.0;
    let g = rasterize_backward(&set, None, &up, &RasterConfig::default()).unwrap();
    assert_eq!([g.response[0], g.response[1], g.cholesky[0], g.atten_logit[0]], [0.0; 4]);
    assert!(g.response[2] > 0.0);
    assert!(g.center_raw.iter().chain(&g.d_center).all(|v| v.is_finite()));
}

#[test]
fn cutoff_error_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let grid = AngularGrid::new(rng.random_range(8..=96), rng.random_range(4..=48)).unwrap();
        let set = random_set(24, grid, &mut rng);
        let cut = rasterize(&set, None, &RasterConfig::default()).unwrap();
        let full = rasterize(&set, None, &RasterConfig::uncut()).unwrap();
        let bound: f64 = (0..set.len())
            .map(|i| set.response[2 * i].hypot(set.response[2 * i + 1]) * set.attenuation(i))
            .sum::<f64>()
            * (-4.5f64).exp();
        for (a, b) in cut.values().chunks_exact(2).zip(full.values().chunks_exact(2)) {
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) <= bound + 1e-12);
        }
    }
}

#[test]
fn cutoff_render_matches_truncated_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let r2 = 9.0;
    for _ in 0..20 {
        let grid = AngularGrid::new(rng.random_range(8..=120), rng.random_range(4..=60)).unwrap();
        let set = random_set(30, grid, &mut rng);
        let got = rasterize(&set, None, &RasterConfig::default()).unwrap();
        let (se, sa) = (grid.elevation_step(), grid.azimuth_step());
        let n = grid.n_azimuth as f64;
        for row in 0..grid.n_elevation {
            for col in 0..grid.n_azimuth {
                let (mut want, mut slack) = ([0.0f64; 2], 0.0);
                for i in 0..set.len() {
                    let (el, az) = set.center(i);
                    let (l1, l2, l3) = (set.cholesky[3 * i], set.cholesky[3 * i + 1], set.cholesky[3 * i + 2]);
                    let dr = row as f64 - el / se;
                    let mut dc = col as f64 - az / sa;
                    dc -= n * (dc / n + 0.5).floor();
                    let u = dr / l1;
                    let v = (dc - l2 * u) / l3;
                    let q = u * u + v * v;
                    let k = set.attenuation(i) * (-0.5 * q).exp();
                    if (q - r2).abs() <= 1e-9 {
                        slack += k * set.response[2 * i].hypot(set.response[2 * i + 1]);
                    } else if q < r2 {
                        want[0] += set.response[2 * i] * k;
                        want[1] += set.response[2 * i + 1] * k;
                    }
                }
                let (re, im) = got.get(row, col);
                assert!((re - want[0]).hypot(im - want[1]) <= slack + 1e-12, "cell ({row}, {col})");
            }
        }
    }
}

#[test]
fn f32_render_tracks_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = AngularGrid::new(360, 90).unwrap();
    let set = random_set(500, grid, &mut rng);
    let a = rasterize(&set, None, &RasterConfig::default()).unwrap();
    let b = rasterize(&set.cast::<f32>(), None, &RasterConfig::default()).unwrap();
    let worst = a.values().iter().zip(b.values()).map(|(x, y)| (x - *y as f64).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permutation_invariance(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = AngularGrid::new(48, 20).unwrap();
        let set = random_set(n, grid, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let a = rasterize(&set, None, &RasterConfig::default()).unwrap();
        let b = rasterize(&set.permuted(&perm), None, &RasterConfig::default()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_residuals_are_bit_exact(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = AngularGrid::new(36, 18).unwrap();
        let set = random_set(n, grid, &mut rng).cast::<f32>();
        let a = rasterize(&set, None, &RasterConfig::default()).unwrap();
        let b = rasterize(&set, Some(&Residuals::zeros(n)), &RasterConfig::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn thin_kernels_never_exceed_their_peak(seed in any::<u64>(), l1 in 1e-4f64..3.0, l2 in -3.0f64..3.0, l3 in 1e-4f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = AngularGrid::new(360, 90).unwrap();
        let mut set = random_set(8, grid, &mut rng);
        for i in 0..8 {
            set.cholesky[3 * i..3 * i + 3].copy_from_slice(&[l1, l2 * (i as f64 - 3.5), if i % 2 == 0 { CHOL_EPS } else { l3 }]);
        }
        let set = set.cast::<f32>();
        let peak: f32 = (0..8).map(|i| set.response[2 * i].hypot(set.response[2 * i + 1]) * set.attenuation(i)).sum();
        let spec = rasterize(&set, None, &RasterConfig::uncut()).unwrap();
        for v in spec.values().chunks_exact(2) {
            prop_assert!(v[0].hypot(v[1]) <= peak * 1.0001);
        }
    }

    #[test]
    fn centers_stay_in_domain(e in -50.0f64..50.0, a in -50.0f64..50.0) {
        let (el, az) = materialize_center([e, a]);
        prop_assert!((0.0..=std::f64::consts::FRAC_PI_2).contains(&el));
        prop_assert!((0.0..=TAU).contains(&az));
    }
}
