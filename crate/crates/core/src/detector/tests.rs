use super::langevin::gather_scatter_round_trip;
use super::*;
use crate::linalg::C64;
use crate::prior::testutil::{fd_wirtinger, max_rel_err};
use crate::prior::GaussianPrior;
use crate::random::{complex_normal_matrix, seeded};
use crate::signal::{make_qam, nmse, random_symbols, ser, transmit};

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

struct System {
    h: CMatrix,
    x: CMatrix,
    y: CMatrix,
    s2: f64,
    p: usize,
}

fn system(n_r: usize, n_u: usize, p: usize, d: usize, snr: f64, seed: u64) -> System {
    let q = make_qam(4).unwrap();
    let mut rng = seeded(seed);
    let h = complex_normal_matrix(n_r, n_u, &mut rng);
    let x = random_symbols(&q, n_u, p + d, &mut rng);
    let (y, s2) = transmit(&h, &x, snr, &mut rng).unwrap();
    System { h, x, y, s2, p }
}

impl System {
    fn x_p(&self) -> CMatrix {
        self.x.col_range(0, self.p)
    }
    fn x_d(&self) -> CMatrix {
        self.x.col_range(self.p, self.x.cols())
    }
}

#[test]
fn plan_orders_by_norm_and_chunks() {
    let h = CMatrix::from_rows(&[vec![c(1.0), c(3.0), c(2.0), c(3.0)]]);
    let plan = make_plan(&h, 2);
    assert_eq!(plan.inverse(), &[1, 3, 2, 0]);
    assert_eq!(plan.order(), &[3, 0, 2, 1]);
    assert_eq!(plan.blocks(), &[vec![1, 3], vec![2, 0]]);
    let ragged = make_plan(&h, 3);
    assert_eq!(ragged.blocks(), &[vec![1, 3, 2], vec![0]]);
}

#[test]
fn plan_rejects_non_permutation() {
    assert!(SicPlan::from_inverse(vec![0, 0, 1], 2).is_err());
    assert!(SicPlan::from_inverse(vec![0, 3, 1], 2).is_err());
    assert!(SicPlan::from_inverse(vec![], 2).is_err());
}

#[test]
fn interference_cov_sums_later_users() {
    let mut rng = seeded(10);
    let h = complex_normal_matrix(3, 7, &mut rng);
    let plan = make_plan(&h, 3);
    for i in 0..plan.n_blocks() {
        let cov = interference_cov(&plan, &h, i, 0.2).unwrap();
        // Rank-one sum over every user decoded after block i.
        let mut expect = CMatrix::identity(3).scale(0.2);
        let first_later = (i + 1) * 3;
        for &u in &plan.inverse()[first_later.min(7)..] {
            let col = h.select_cols(&[u]);
            expect += &col.matmul_hermitian(&col).unwrap();
        }
        assert!(cov.max_abs_diff(&expect) < 1e-12);
    }
    let last = interference_cov(&plan, &h, plan.n_blocks() - 1, 0.2).unwrap();
    assert!(last.max_abs_diff(&CMatrix::identity(3).scale(0.2)) < 1e-15);
    assert!(interference_cov(&plan, &h, 0, 0.0).is_err());
    assert!(interference_cov(&plan, &h, 9, 0.1).is_err());
}

fn check_gradients(n_r: usize, n_u: usize) {
    let q = make_qam(4).unwrap();
    let sys = system(n_r, n_u, 3, 4, 10.0, 20 + n_u as u64);
    let mut rng = seeded(99);
    // Evaluate away from the truth so the likelihood gradient is non-trivial.
    let h_hat = &sys.h + &complex_normal_matrix(n_r, n_u, &mut rng).scale(0.3);
    let mut x_full = sys.x.clone();
    let noise = complex_normal_matrix(n_u, 4, &mut rng).scale(0.3);
    for u in 0..n_u {
        for k in 0..4 {
            x_full[(u, 3 + k)] += noise[(u, k)];
        }
    }
    let plan = make_plan(&h_hat, n_r);
    let covs = interference_covs(&plan, &h_hat, sys.s2 + 0.1).unwrap();
    let prior = GaussianPrior::white(1.0).unwrap();
    let sigma = 0.4;
    let objective = |h: &CMatrix, x: &CMatrix| {
        map_objective(&sys.y, x, h, &plan, &covs, &prior, &q, sigma, 3).unwrap()
    };
    for i in 0..plan.n_blocks() {
        let block = &plan.blocks()[i];
        let g = grad_h_block(&sys.y, &x_full, &h_hat, &plan, i, &covs, &prior, sigma).unwrap();
        let fd = fd_wirtinger(&h_hat.select_cols(block), 1e-6, |hb| {
            let mut h = h_hat.clone();
            h.scatter_cols(block, hb);
            objective(&h, &x_full)
        });
        assert!(max_rel_err(&g, &fd, 1e-3) < 1e-5, "H block {i}");

        let gx = grad_x_block(&sys.y, &x_full, &h_hat, &plan, i, &covs, &q, sigma, 3).unwrap();
        let xd_block = x_full.select_rows(block).col_range(3, 7);
        let fd = fd_wirtinger(&xd_block, 1e-6, |xb| {
            let mut x = x_full.clone();
            for (r, &u) in block.iter().enumerate() {
                for k in 0..4 {
                    x[(u, 3 + k)] = xb[(r, k)];
                }
            }
            objective(&h_hat, &x)
        });
        assert!(max_rel_err(&gx, &fd, 1e-3) < 1e-5, "X block {i}");
    }
}

#[test]
fn gradients_match_finite_differences_single_block() {
    check_gradients(4, 3);
}

#[test]
fn gradients_match_finite_differences_multi_block() {
    check_gradients(2, 5);
}

#[test]
fn gradient_rejects_bad_shapes() {
    let sys = system(2, 3, 2, 2, 10.0, 1);
    let plan = make_plan(&sys.h, 2);
    let prior = GaussianPrior::white(1.0).unwrap();
    let covs = interference_covs(&plan, &sys.h, 0.1).unwrap();
    let short = sys.x.col_range(0, 3);
    assert!(grad_h_block(&sys.y, &short, &sys.h, &plan, 0, &covs, &prior, 0.1).is_err());
    assert!(grad_h_block(&sys.y, &sys.x, &sys.h, &plan, 0, &covs[..1], &prior, 0.1).is_err());
}

#[test]
fn gather_scatter_restores_user_order() {
    let (n_r, n_u, p, d) = (2, 5, 2, 3);
    // Column u of H and row u of X carry marker u.
    let h = CMatrix::from_fn(n_r, n_u, |r, u| C64::new(u as f64, r as f64));
    let x_p = CMatrix::from_fn(n_u, p, |u, k| C64::new(u as f64, -(k as f64)));
    let x_d = CMatrix::from_fn(n_u, d, |u, k| C64::new(10.0 * u as f64, k as f64));
    let plan = SicPlan::from_inverse(vec![3, 0, 4, 1, 2], n_r).unwrap();
    let (h2, xd2) = gather_scatter_round_trip(plan, &h, &x_p, &x_d);
    assert_eq!(h2, h);
    assert_eq!(xd2, x_d);
}

#[test]
fn schedule_and_validation() {
    let cfg = LangevinConfig {
        n_levels: 4,
        sigma_max: 1.0,
        sigma_min: 0.001,
        ..Default::default()
    };
    let lv = cfg.levels();
    assert_eq!(lv.len(), 4);
    assert!((lv[0] - 1.0).abs() < 1e-15 && (lv[3] - 0.001).abs() < 1e-15);
    assert!((lv[1] - 0.1).abs() < 1e-12);
    let single = LangevinConfig { n_levels: 1, ..cfg };
    assert_eq!(single.levels(), vec![0.001]);
    assert!((cfg.step_at(0.001) - cfg.step_scale).abs() < 1e-20);

    let bad = [
        LangevinConfig { n_levels: 0, ..cfg },
        LangevinConfig {
            sigma_min: 0.0,
            ..cfg
        },
        LangevinConfig {
            sigma_max: 0.0005,
            ..cfg
        },
        LangevinConfig {
            step_scale: 0.0,
            ..cfg
        },
        LangevinConfig {
            reorder_every: 0,
            ..cfg
        },
        LangevinConfig {
            temperature: -1.0,
            ..cfg
        },
    ];
    for b in bad {
        assert!(b.validate().is_err(), "{b:?}");
    }
    assert!(LangevinConfig::default().validate().is_ok());
}

fn quick_cfg() -> LangevinConfig {
    LangevinConfig {
        n_levels: 4,
        steps_per_level: 10,
        n_outer: 2,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_estimate() {
    let q = make_qam(4).unwrap();
    let sys = system(2, 4, 4, 6, 10.0, 30);
    let prior = GaussianPrior::white(1.0).unwrap();
    // Noise injection is what consumes the generator.
    let cfg = LangevinConfig {
        temperature: 1.0,
        ..quick_cfg()
    };
    let run = |seed| {
        run_sic_langevin(
            &sys.y,
            &sys.x_p(),
            &q,
            &cfg,
            &prior,
            sys.s2,
            &mut seeded(seed),
        )
        .unwrap()
    };
    let (a, b, other) = (run(5), run(5), run(6));
    assert_eq!(a.h_hat, b.h_hat);
    assert_eq!(a.x_d_soft, b.x_d_soft);
    assert_eq!(a.trace, b.trace);
    assert_ne!(a.h_hat, other.h_hat);
}

#[test]
fn outputs_are_in_user_order() {
    let q = make_qam(4).unwrap();
    let sys = system(2, 4, 4, 8, 10.0, 31);
    let prior = GaussianPrior::white(1.0).unwrap();
    let est = run_sic_langevin(
        &sys.y,
        &sys.x_p(),
        &q,
        &quick_cfg(),
        &prior,
        sys.s2,
        &mut seeded(1),
    )
    .unwrap();
    assert_eq!(est.h_hat.shape(), (2, 4));
    assert_eq!(est.x_d_hat.shape(), (4, 8));
    assert_eq!(est.plan, make_plan(&est.h_hat, 2));
    assert_eq!(est.x_d_hat, crate::signal::hard_decision(&est.x_d_soft, &q));
}

#[test]
fn permuting_users_permutes_the_estimate() {
    let q = make_qam(4).unwrap();
    let sys = system(2, 4, 4, 6, 10.0, 32);
    let perm = [2, 0, 3, 1];
    let h_perm = sys.h.select_cols(&perm);
    let x_perm = sys.x.select_rows(&perm);
    let y = h_perm.matmul(&x_perm).unwrap();
    let y0 = sys.h.matmul(&sys.x).unwrap();
    assert!(y.max_abs_diff(&y0) < 1e-12);
    let prior = GaussianPrior::white(1.0).unwrap();
    let cfg = quick_cfg();
    let a = run_sic_langevin(&y0, &sys.x_p(), &q, &cfg, &prior, 0.05, &mut seeded(3)).unwrap();
    let b = run_sic_langevin(
        &y0,
        &x_perm.col_range(0, 4),
        &q,
        &cfg,
        &prior,
        0.05,
        &mut seeded(3),
    )
    .unwrap();
    assert!(a.h_hat.select_cols(&perm).max_abs_diff(&b.h_hat) < 1e-9);
    assert!(a.x_d_soft.select_rows(&perm).max_abs_diff(&b.x_d_soft) < 1e-9);
}

#[test]
fn truth_is_nearly_a_fixed_point_without_noise() {
    let q = make_qam(4).unwrap();
    let sys = system(4, 4, 8, 12, 40.0, 33);
    let prior = GaussianPrior::white(1.0).unwrap();
    let cfg = LangevinConfig {
        temperature: 0.0,
        ..quick_cfg()
    };
    let est = run_sic_langevin_from(
        &sys.y,
        &sys.x_p(),
        &q,
        &cfg,
        &prior,
        sys.s2,
        sys.h.clone(),
        sys.x_d(),
        &mut seeded(0),
    )
    .unwrap();
    assert!(nmse(&est.h_hat, &sys.h).unwrap() < 1e-2);
    assert_eq!(ser(&est.x_d_hat, &sys.x_d(), &q).unwrap(), 0.0);
}

#[test]
fn single_user_high_snr_is_error_free() {
    let q = make_qam(4).unwrap();
    let prior = GaussianPrior::white(1.0).unwrap();
    for seed in 0..5 {
        let sys = system(4, 1, 4, 20, 30.0, 40 + seed);
        let est = run_sic_langevin(
            &sys.y,
            &sys.x_p(),
            &q,
            &quick_cfg(),
            &prior,
            sys.s2,
            &mut seeded(seed),
        )
        .unwrap();
        assert_eq!(
            ser(&est.x_d_hat, &sys.x_d(), &q).unwrap(),
            0.0,
            "seed {seed}"
        );
        assert!(nmse(&est.h_hat, &sys.h).unwrap() < 0.05);
    }
}

#[test]
fn joint_full_matches_sic_when_users_fit_one_block() {
    let q = make_qam(4).unwrap();
    let sys = system(4, 3, 4, 6, 10.0, 50);
    let prior = GaussianPrior::white(1.0).unwrap();
    let cfg = quick_cfg();
    let a = run_sic_langevin(&sys.y, &sys.x_p(), &q, &cfg, &prior, sys.s2, &mut seeded(8)).unwrap();
    let b = run_joint_full(&sys.y, &sys.x_p(), &q, &cfg, &prior, sys.s2, &mut seeded(8)).unwrap();
    assert_eq!(a.h_hat, b.h_hat);
    assert_eq!(a.x_d_soft, b.x_d_soft);
    assert_eq!(b.plan.n_blocks(), 1);
}

#[test]
fn joint_full_uses_one_block_when_overloaded() {
    let q = make_qam(4).unwrap();
    let sys = system(2, 5, 6, 6, 10.0, 51);
    let prior = GaussianPrior::white(1.0).unwrap();
    let est = run_joint_full(
        &sys.y,
        &sys.x_p(),
        &q,
        &quick_cfg(),
        &prior,
        sys.s2,
        &mut seeded(1),
    )
    .unwrap();
    assert_eq!(est.plan.n_blocks(), 1);
    assert_eq!(est.plan.blocks()[0].len(), 5);
}

#[test]
fn runaway_steps_report_divergence() {
    let q = make_qam(4).unwrap();
    let sys = system(2, 4, 4, 6, 10.0, 52);
    let prior = GaussianPrior::white(1.0).unwrap();
    let cfg = LangevinConfig {
        step_scale: 1e6,
        step_clamp: 1e6,
        ..quick_cfg()
    };
    let err =
        run_sic_langevin(&sys.y, &sys.x_p(), &q, &cfg, &prior, sys.s2, &mut seeded(1)).unwrap_err();
    assert!(matches!(err, DetectorError::Diverged { sweep: 0 }), "{err}");
}

#[test]
fn rejects_inconsistent_inputs() {
    let q = make_qam(4).unwrap();
    let sys = system(2, 3, 4, 4, 10.0, 53);
    let prior = GaussianPrior::white(1.0).unwrap();
    let cfg = quick_cfg();
    let all = sys.x.clone();
    assert!(run_sic_langevin(&sys.y, &all, &q, &cfg, &prior, sys.s2, &mut seeded(0)).is_err());
    let wrong = CMatrix::zeros(2, 2);
    assert!(run_sic_langevin_from(
        &sys.y,
        &sys.x_p(),
        &q,
        &cfg,
        &prior,
        sys.s2,
        wrong,
        sys.x_d(),
        &mut seeded(0)
    )
    .is_err());
}

#[test]
fn higher_snr_gives_better_channel_estimates() {
    let q = make_qam(4).unwrap();
    let prior = GaussianPrior::white(1.0).unwrap();
    let cfg = quick_cfg();
    let mean_nmse = |snr: f64| {
        (0..10)
            .map(|t| {
                let sys = system(4, 4, 8, 8, snr, 60 + t);
                let est =
                    run_sic_langevin(&sys.y, &sys.x_p(), &q, &cfg, &prior, sys.s2, &mut seeded(t))
                        .unwrap();
                nmse(&est.h_hat, &sys.h).unwrap()
            })
            .sum::<f64>()
            / 10.0
    };
    let (lo, hi) = (mean_nmse(0.0), mean_nmse(20.0));
    assert!(hi < lo, "{hi} !< {lo}");
}
