//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `cargo test --test acceptance -- --nocapture`
//! to see them).

mod oracle;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lidarpp::background::{gibbs_sweep, sweep_single_pixel, BackgroundField};
use lidarpp::grid::{Grid, Pixel};
use lidarpp::likelihood::{delta_pixel_edit, pixel_log_likelihood, PixelRateView};
use lidarpp::metrics::{detection_curves, metric_points_from_scene, nmse_background};
use lidarpp::multires::{
    rescale_irf, run_multiscale, threshold_support, AdmissibleSupport, MultiresOptions,
    ScaleSchedule,
};
use lidarpp::photon_data::scenes::{flat_scene, make_irf, two_surface_scene, SceneBudget};
use lidarpp::photon_data::{bin_cube, generate_cube, CubeGeometry, GroundTruthScene};
use lidarpp::point_cloud::{edge_set, PointConfiguration, PointId};
use lidarpp::priors::{
    area_log_density, full_precision_log_det, window_log_det, HyperParameters,
};
use lidarpp::sampler::{EditRecord, MoveKind, MoveTable, Outcome, Sampler};
use lidarpp::{Cube, Irf};

// ---- shared fixtures ---------------------------------------------------------

fn small_hyper() -> HyperParameters<f64> {
    HyperParameters {
        gamma_a: 2.0f64.exp(),
        lambda_a: 60.0,
        d_min: 21.0,
        n_p: 3,
        n_b: 10.0,
        sigma2: 0.36,
        beta: 0.0036,
        alpha_b: 2.0,
        l_z: 4.0,
    }
}

/// Random observation cube for the oracle instances (<= 16x16x200).
fn small_cube(seed: u64) -> (Cube, Irf) {
    let irf = make_irf::<f64>(8, 24);
    let n_bins = 200;
    let mut scene = two_surface_scene(10, 10, n_bins, irf.total_sum(), SceneBudget::default());
    let sig = scene.signal_photons_per_pixel(&irf, n_bins);
    let bg = scene.background_photons_per_pixel(n_bins);
    scene.scale_budget(4.0 / sig, 7.0 / bg);
    let geom = CubeGeometry { n_bins, bin_width: 1.0, pixel_pitch: 4.0 };
    (generate_cube(&scene, &irf, None, geom, seed).unwrap(), irf)
}

struct Instance {
    cube: Cube,
    irf: Irf,
    hyper: HyperParameters<f64>,
    support: AdmissibleSupport<f64>,
    moves: MoveTable<f64>,
}

fn instance(seed: u64) -> Instance {
    let (cube, irf) = small_cube(seed);
    let support = AdmissibleSupport::full(cube.n_rows(), cube.n_cols(), cube.n_bins());
    Instance { cube, irf, hyper: small_hyper(), support, moves: MoveTable::default() }
}

impl Instance {
    fn sampler(&self, seed: u64) -> Sampler<'_, f64> {
        let config =
            PointConfiguration::new(self.cube.n_rows(), self.cube.n_cols(), self.hyper.geometry());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBEE);
        let field = BackgroundField::init_random(
            self.cube.n_rows(),
            self.cube.n_cols(),
            self.hyper.alpha_b,
            &mut rng,
        );
        Sampler::new(
            &self.cube,
            &self.irf,
            self.hyper,
            &self.support,
            config,
            field,
            self.moves.clone(),
            seed,
        )
        .unwrap()
    }
}

/// Desk-scale analogue of the paper's synthetic scene.
fn desk_scene(seed: u64) -> (GroundTruthScene<f64>, Cube, Irf) {
    let irf = make_irf::<f64>(20, 80);
    let n_bins = 1500;
    let mut scene = two_surface_scene(33, 33, n_bins, irf.total_sum(), SceneBudget::default());
    let sig = scene.signal_photons_per_pixel(&irf, n_bins);
    let bg = scene.background_photons_per_pixel(n_bins);
    scene.scale_budget(4.0 / sig, 7.0 / bg);
    let geom = CubeGeometry { n_bins, bin_width: 1.2, pixel_pitch: 8.5 };
    let cube = generate_cube(&scene, &irf, None, geom, seed).unwrap();
    (scene, cube, irf)
}

struct DeskRun {
    f_true: f64,
    f_false: u64,
    nmse_b: f64,
    n_truth: usize,
    shift_rate: f64,
    mark_rate: f64,
    seconds: f64,
}

fn desk_run(seed: u64, moves: Option<[f64; 8]>, scales: usize) -> DeskRun {
    let (scene, cube, raw_irf) = desk_scene(seed);
    let irf = rescale_irf(&raw_irf, &cube);
    let n_b = (4.0 * cube.l_z()).round();
    let schedule = match scales {
        2 => ScaleSchedule::two_scale(&cube, n_b, 25),
        1 => {
            // equal iteration budget: coarse + fine of the 2-scale run
            let pixels = (cube.n_rows() * cube.n_cols()) as u64;
            ScaleSchedule::single_scale(&cube, n_b, 2 * 25 * pixels)
        }
        _ => unreachable!(),
    };
    let started = Instant::now();
    let out = run_multiscale(
        &cube,
        &irf,
        &schedule,
        &MultiresOptions { seed, moves, ..MultiresOptions::default() },
    )
    .unwrap();
    let seconds = started.elapsed().as_secs_f64();

    let mut estimate = out.estimate.clone();
    let est_points: Vec<(Pixel, f64)> = estimate
        .export_rows()
        .iter()
        .map(|p| (Pixel { r: p.i - 1, c: p.j - 1 }, p.t))
        .collect();
    let truth = metric_points_from_scene(&scene);
    let tau = raw_irf.attack() as f64;
    let curve = detection_curves(&est_points, &truth, &[tau]);
    let nmse_b = nmse_background(
        &out.background.clone().expect("post-burn-in samples exist"),
        &scene.background,
    )
    .unwrap();
    let fine = out.scales.last().unwrap();
    DeskRun {
        f_true: curve.f_true[0],
        f_false: curve.f_false[0],
        nmse_b,
        n_truth: truth.len(),
        shift_rate: fine.run.stats.counter(MoveKind::Shift).acceptance_rate(),
        mark_rate: fine.run.stats.counter(MoveKind::Mark).acceptance_rate(),
        seconds,
    }
}

// ---- criterion 1: oracle consistency ------------------------------------------

#[test]
fn criterion_01_move_ratios_match_from_scratch_oracle() {
    let started = Instant::now();
    let target = 10_000u32;
    let mut checked = [0u32; 8];
    let mut worst = 0.0f64;
    let mut seed = 0u64;
    'outer: loop {
        let fx = instance(seed);
        let mut sampler = fx.sampler(seed.wrapping_mul(31) ^ 17);
        // grow a starting configuration
        for _ in 0..3000 {
            sampler.step();
        }
        for round in 0..2500 {
            for kind in MoveKind::ALL {
                if checked.iter().all(|&c| c >= target) {
                    break 'outer;
                }
                if checked[kind as usize] >= target && round % 4 != 0 {
                    continue;
                }
                let before_config = sampler.config().clone();
                let before_levels = sampler.field().levels().clone();
                if let Outcome::Proposed(proposal) = sampler.propose(kind) {
                    let reference = oracle::log_ratio(
                        &fx.cube,
                        &fx.irf,
                        &fx.hyper,
                        &fx.moves,
                        &fx.support,
                        &before_config,
                        &before_levels,
                        &proposal,
                    );
                    let err = (proposal.log_acceptance - reference).abs();
                    worst = worst.max(err);
                    assert!(
                        err < 1e-8,
                        "{kind:?}: implemented {} vs oracle {reference}",
                        proposal.log_acceptance
                    );
                    checked[kind as usize] += 1;
                    let cap = before_config.len() < 40;
                    let grows = matches!(
                        kind,
                        MoveKind::Birth | MoveKind::Dilation | MoveKind::Split
                    );
                    if proposal.log_acceptance > -2.0 && (cap || !grows) {
                        sampler.commit(&proposal);
                    }
                }
            }
        }
        seed += 1;
        assert!(seed < 200, "could not gather enough proposals: {checked:?}");
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 300.0, "oracle suite took {secs:.0}s (> 5 min)");
    println!(
        "criterion 1 PASS: 8 x {target} move ratios within 1e-8 of the from-scratch oracle \
         (worst |error| {worst:.2e}, {secs:.0}s)"
    );
}

// ---- criterion 2: reversible pairs --------------------------------------------

fn canonical(config: &PointConfiguration<f64>) -> Vec<(Pixel, f64, f64)> {
    let mut v: Vec<(Pixel, f64, f64)> =
        config.points_sorted().iter().map(|p| (p.pixel, p.t, p.m)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn assert_state_restored(
    before: &[(Pixel, f64, f64)],
    config: &PointConfiguration<f64>,
    context: &str,
) {
    let after = canonical(config);
    assert_eq!(before.len(), after.len(), "{context}: point count");
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.0, b.0, "{context}: pixel");
        assert!((a.1 - b.1).abs() <= 1e-12 * a.1.abs().max(1.0), "{context}: depth");
        assert!((a.2 - b.2).abs() <= 1e-12 * a.2.abs().max(1.0), "{context}: mark");
    }
}

#[test]
fn criterion_02_reversible_pairs_restore_state() {
    let fx = instance(11);
    let mut sampler = fx.sampler(23);
    for _ in 0..4000 {
        sampler.step();
    }
    let irf_mass = fx.irf.total_sum() / fx.cube.n_bins() as f64;
    let mut done = [0u32; 3];
    let mut rounds = 0u64;
    while done.iter().any(|&d| d < 1000) {
        rounds += 1;
        assert!(rounds < 3_000_000, "pairs not exercised: {done:?}");
        // keep the chain lively
        if rounds.is_multiple_of(7) {
            sampler.step();
        }
        let kind = match rounds % 3 {
            0 => MoveKind::Birth,
            1 => MoveKind::Dilation,
            _ => MoveKind::Split,
        };
        if done[(rounds % 3) as usize] >= 1000 {
            continue;
        }
        let before = canonical(sampler.config());
        let before_edges = edge_set(sampler.config());
        let outcome = sampler.propose(kind);
        let Outcome::Proposed(p) = outcome else { continue };
        match (&p.record.edit, kind) {
            (&EditRecord::Add { pixel, t, m, b_new }, _) => {
                let b_old = sampler.field().level(pixel);
                sampler.commit(&p);
                // inverse (death / erosion) mapping
                let id = *sampler
                    .config()
                    .points_in(pixel)
                    .iter()
                    .find(|&&q| sampler.config().t_of(q) == t && sampler.config().m_of(q) == m)
                    .unwrap();
                sampler.config_mut().remove(id);
                let b_restored = b_new + m.exp() * irf_mass;
                assert!((b_restored - b_old).abs() <= 1e-12 * b_old.max(1.0));
                sampler.field_mut().set_level(pixel, b_old);
                *sampler.log_posterior_mut() -= p.posterior_delta;
                assert_state_restored(&before, sampler.config(), "birth/dilation inverse");
                assert_eq!(before_edges, edge_set(sampler.config()));
                done[(rounds % 3) as usize] += 1;
            }
            (&EditRecord::Split { id, t1, m1, t2, m2 }, _) => {
                let original = sampler.config().point(id);
                sampler.commit(&p);
                let pixel = original.pixel;
                let ids: Vec<PointId> = sampler
                    .config()
                    .points_in(pixel)
                    .iter()
                    .copied()
                    .filter(|&q| {
                        (sampler.config().t_of(q) == t1 && sampler.config().m_of(q) == m1)
                            || (sampler.config().t_of(q) == t2 && sampler.config().m_of(q) == m2)
                    })
                    .collect();
                assert_eq!(ids.len(), 2);
                // merge mapping restores the original point
                let (ra, rb) =
                    (sampler.config().m_of(ids[0]).exp(), sampler.config().m_of(ids[1]).exp());
                let (ta, tb) = (sampler.config().t_of(ids[0]), sampler.config().t_of(ids[1]));
                let r = ra + rb;
                let t_merged = (ta * ra + tb * rb) / r;
                assert!((t_merged - original.t).abs() <= 1e-9);
                assert!((r.ln() - original.m).abs() <= 1e-12);
                sampler.config_mut().remove(ids[0]);
                sampler.config_mut().remove(ids[1]);
                sampler.config_mut().insert(pixel, original.t, original.m).unwrap();
                *sampler.log_posterior_mut() -= p.posterior_delta;
                assert_state_restored(&before, sampler.config(), "split/merge inverse");
                done[(rounds % 3) as usize] += 1;
            }
            _ => {}
        }
    }
    println!(
        "criterion 2 PASS: birth/death, dilation/erosion and split/merge inverses each \
         restored the state on 1000 instances (structure exact, values within 1e-12)"
    );
}

// ---- criterion 3: sparse-vs-dense likelihood -----------------------------------

#[test]
fn criterion_03_sparse_dense_likelihood_and_telescoping() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_eq = 0.0f64;
    let mut n_pixels = 0;
    'outer: for seed in 0..40 {
        let (cube, irf) = small_cube(seed);
        for _ in 0..25 {
            if n_pixels >= 1000 {
                break 'outer;
            }
            let pixel =
                Pixel::new(rng.random_range(0..cube.n_rows()), rng.random_range(0..cube.n_cols()));
            let n = rng.random_range(0..4);
            let returns: Vec<(f64, i64)> = (0..n)
                .map(|_| {
                    (rng.random_range(0.2..8.0), rng.random_range(1..=cube.n_bins() as i64))
                })
                .collect();
            let b = rng.random_range(0.001..0.05);
            let view = PixelRateView::new(&cube, &irf, pixel, returns, b);
            let sparse = pixel_log_likelihood(&cube, &irf, &view);
            // dense oracle over every bin
            let stored: std::collections::BTreeMap<u32, u32> =
                cube.pixel(pixel).iter().copied().collect();
            let mut dense = 0.0;
            for bin in 1..=cube.n_bins() as i64 {
                let rate = view.rate_at(&irf, bin);
                if let Some(&z) = stored.get(&(bin as u32)) {
                    dense += z as f64 * rate.ln();
                }
                dense -= rate;
            }
            worst_eq = worst_eq.max((sparse - dense).abs());
            assert!((sparse - dense).abs() < 1e-9, "sparse {sparse} dense {dense}");
            n_pixels += 1;
        }
    }

    // telescoping over a 1000-edit sequence
    let (cube, irf) = small_cube(99);
    let pixel = Pixel::new(4, 4);
    let mut view = PixelRateView::new(&cube, &irf, pixel, vec![(2.0, 60)], 0.02);
    let start = pixel_log_likelihood(&cube, &irf, &view);
    let mut acc = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(0..4);
        let returns: Vec<(f64, i64)> = (0..n)
            .map(|_| (rng.random_range(0.2..8.0), rng.random_range(1..=cube.n_bins() as i64)))
            .collect();
        let next = PixelRateView::new(&cube, &irf, pixel, returns, rng.random_range(0.001..0.05));
        acc += delta_pixel_edit(&cube, &irf, &view, &next);
        view = next;
    }
    let end = pixel_log_likelihood(&cube, &irf, &view);
    let drift = (acc - (end - start)).abs();
    assert!(drift < 1e-8, "telescoping drift {drift}");
    println!(
        "criterion 3 PASS: sparse == dense within 1e-9 on {n_pixels} pixels \
         (worst {worst_eq:.2e}); 1000-edit telescoping drift {drift:.2e} < 1e-8"
    );
}

// ---- criterion 4: gamma_a = 1 reduction + prior-only Poisson count -------------

#[test]
fn criterion_04_gamma_one_reduction_and_prior_chain() {
    // exact geometry independence at gamma_a = 1
    let mut hyper = small_hyper();
    hyper.gamma_a = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let mut config = PointConfiguration::new(8, 8, hyper.geometry());
        for _ in 0..rng.random_range(0..30) {
            let pixel = Pixel::new(rng.random_range(0..8), rng.random_range(0..8));
            let _ = config.insert(pixel, rng.random_range(0.0..100.0), 0.0);
        }
        let f2 = area_log_density(&config, &hyper);
        assert_eq!(f2, config.len() as f64 * hyper.lambda_a.ln());
    }

    // prior-only chain on an 8x8x100 domain: point count ~ Poisson(lambda_a)
    let lambda_a = 6.0;
    let hyper = HyperParameters {
        gamma_a: 1.0,
        lambda_a,
        d_min: 1e-6,
        n_p: 3,
        n_b: 0.0,
        sigma2: 0.36,
        beta: 0.0036,
        alpha_b: 2.0,
        l_z: 4.0,
    };
    let irf = make_irf::<f64>(4, 10);
    let cube = lidarpp::photon_data::SparseLidarCube::new(
        8,
        8,
        100,
        vec![Vec::new(); 64],
        Grid::fill(8, 8, 1.0),
        1.0,
        4.0,
    )
    .unwrap();
    let support = AdmissibleSupport::full(8, 8, 100);
    let moves = MoveTable::new([1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0]).unwrap();
    let config = PointConfiguration::new(8, 8, hyper.geometry());
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let field = BackgroundField::init_random(8, 8, hyper.alpha_b, &mut rng);
    let mut sampler =
        Sampler::new(&cube, &irf, hyper, &support, config, field, moves, 4242).unwrap();
    sampler.set_prior_only(true);
    for _ in 0..20_000 {
        sampler.step();
    }
    let mut counts = Vec::new();
    for k in 0..80_000u64 {
        sampler.step();
        if k % 25 == 0 {
            counts.push(sampler.config().len());
        }
    }
    let n = counts.len() as f64;
    let pmf = |k: usize| -> f64 {
        let lk = k as f64;
        (lk * lambda_a.ln() - lambda_a - statrs::function::gamma::ln_gamma(lk + 1.0)).exp()
    };
    let k_max = 20usize;
    let mut observed = vec![0.0; k_max + 2];
    for &c in &counts {
        observed[c.min(k_max + 1)] += 1.0;
    }
    let mut exp_bins = Vec::new();
    let mut obs_bins = Vec::new();
    let (mut e_acc, mut o_acc) = (0.0, 0.0);
    #[allow(clippy::needless_range_loop)]
    for k in 0..=k_max + 1 {
        let pk = if k <= k_max { pmf(k) } else { 1.0 - (0..=k_max).map(pmf).sum::<f64>() };
        e_acc += n * pk;
        o_acc += observed[k];
        if e_acc >= 5.0 {
            exp_bins.push(e_acc);
            obs_bins.push(o_acc);
            e_acc = 0.0;
            o_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        *exp_bins.last_mut().unwrap() += e_acc;
        *obs_bins.last_mut().unwrap() += o_acc;
    }
    let stat: f64 =
        exp_bins.iter().zip(&obs_bins).map(|(e, o)| (o - e) * (o - e) / e).sum();
    let dof = (exp_bins.len() - 1) as f64;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let critical = ChiSquared::new(dof).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi-square {stat:.1} >= critical {critical:.1} (dof {dof})");
    println!(
        "criterion 4 PASS: f2 exactly N*log(lambda_a) at gamma_a=1 (50 configs); \
         prior-only count chi-square {stat:.1} < {critical:.1} at the 1% level (Poisson({lambda_a}))"
    );
}

// ---- criterion 5: gamma-MRF marginal + Gibbs stationarity ----------------------

#[test]
fn criterion_05_background_marginal_quadrature_and_gibbs() {
    // (a) 2x2 marginal against per-pixel quadrature of the augmented joint
    let alpha = 2.0f64;
    let b = Grid::from_vec(2, 2, vec![0.012, 0.004, 0.008, 0.02]);
    let mut quad_total = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let nbr_sum: f64 = b.cross_neighbourhood(r, c).map(|(i, j)| b[(i, j)]).sum();
            let m = b.cross_neighbourhood(r, c).count() as f64;
            let coeff = alpha / m * nbr_sum;
            // substitute v = 1/w: integral of v^(alpha-1) exp(-coeff v) dv
            let integrand = move |v: f64| -> f64 { v.powf(alpha - 1.0) * (-coeff * v).exp() };
            let integral = oracle::integrate(&integrand, 0.0, 60.0 / coeff, 1e-13);
            quad_total += (alpha - 1.0) * b[(r, c)].ln() + integral.ln();
        }
    }
    let implemented = lidarpp::priors::background_marginal_log_density(&b, alpha);
    // they differ by the analytic constant sum of log Gamma(alpha) - alpha log(alpha/|M|)
    let mut constant = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let m = b.cross_neighbourhood(r, c).count() as f64;
            constant += statrs::function::gamma::ln_gamma(alpha) - alpha * (alpha / m).ln();
        }
    }
    let gap = (quad_total - (implemented + constant)).abs();
    assert!(gap < 1e-6, "marginal vs quadrature gap {gap}");

    // (b) single-pixel Gibbs kernel stationarity on a 4x4 fixture
    let irf = make_irf::<f64>(4, 10);
    let n_bins = 120usize;
    let scene = GroundTruthScene {
        n_rows: 4,
        n_cols: 4,
        points: vec![lidarpp::photon_data::TruthPoint {
            pixel: Pixel::new(1, 1),
            t: 60.0,
            intensity: 8.0 / irf.total_sum(),
            surface: 0,
        }],
        background: Grid::fill(4, 4, 0.03),
    };
    let geom = CubeGeometry { n_bins, bin_width: 1.0, pixel_pitch: 4.0 };
    let cube = generate_cube(&scene, &irf, None, geom, 5).unwrap();
    let hyper = small_hyper();
    let mut config = PointConfiguration::new(4, 4, hyper.geometry());
    config.insert(Pixel::new(1, 1), 60.0, (8.0 / irf.total_sum()).ln()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut field = BackgroundField::init_random(4, 4, alpha, &mut rng);
    // settle the whole field first, then freeze everything except (1,1)
    for _ in 0..300 {
        gibbs_sweep(&cube, &irf, &config, &mut field, &mut rng);
    }
    let pixel = Pixel::new(1, 1);
    let mut mean = 0.0;
    let n_samples = 200_000u32;
    for _ in 0..20_000 {
        sweep_single_pixel(&cube, &irf, &config, &mut field, pixel, &mut rng);
    }
    for _ in 0..n_samples {
        sweep_single_pixel(&cube, &irf, &config, &mut field, pixel, &mut rng);
        mean += field.level(pixel) / n_samples as f64;
    }

    // quadrature target: p(b | everything else frozen)
    let levels = field.levels().clone();
    let returns: Vec<(f64, i64)> = vec![(8.0 / irf.total_sum(), 60)];
    let (pr, pc) = (1usize, 1usize);
    let c_p: f64 = levels
        .cross_neighbourhood(pr, pc)
        .filter(|&(i, j)| (i, j) != (pr, pc))
        .map(|(i, j)| levels[(i, j)])
        .sum();
    // pixels n != p whose auxiliary neighbourhood contains p contribute
    // exp(-b * (alpha/|M_n|) / w_n); with the frozen w field
    let mut w_coeff = 0.0;
    {
        let w = {
            // reconstruct the frozen auxiliaries by one more deterministic read:
            // sweep_single_pixel redraws w at (1,1), so freeze by copying levels-based
            // neighbours directly from the field's auxiliaries is not exposed;
            // instead integrate them out for the off-pixel factors as well is
            // intractable -- use the exact conditional given W via a probe.
            field.auxiliaries().clone()
        };
        for (i, j) in levels.cross_neighbourhood(pr, pc) {
            if (i, j) == (pr, pc) {
                continue;
            }
            let m_n = levels.cross_neighbourhood(i, j).count() as f64;
            w_coeff += alpha / m_n / w[(i, j)];
        }
    }
    let g = cube.gain(pixel);
    let hist: Vec<(u32, u32)> = cube.pixel(pixel).to_vec();
    let log_target = move |b: f64| -> f64 {
        if b <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut ll = 0.0;
        for &(bin, z) in &hist {
            let mut rate = b;
            for &(r0, centre) in &returns {
                rate += r0 * irf.value_at(bin as i64 - centre);
            }
            ll += z as f64 * (g * rate).ln();
        }
        ll -= g * b * n_bins as f64;
        ll + (alpha - 1.0) * b.ln() - b * w_coeff - alpha * (b + c_p).ln()
    };
    let peak = (0..4000)
        .map(|k| 1e-4 + k as f64 * 5e-5)
        .map(&log_target)
        .fold(f64::NEG_INFINITY, f64::max);
    let num = oracle::integrate(&|b| b * (log_target(b) - peak).exp(), 1e-6, 0.35, 1e-12);
    let den = oracle::integrate(&|b| (log_target(b) - peak).exp(), 1e-6, 0.35, 1e-12);
    let target_mean = num / den;
    let rel = (mean - target_mean).abs() / target_mean;
    assert!(
        rel < 0.05,
        "gibbs long-run mean {mean:.5} vs quadrature {target_mean:.5} ({:.1}%)",
        100.0 * rel
    );
    println!(
        "criterion 5 PASS: 2x2 marginal matches quadrature within {gap:.1e} (< 1e-6); \
         single-pixel Gibbs mean {mean:.5} vs quadrature {target_mean:.5} ({:.2}% < 5%)",
        100.0 * rel
    );
}

// ---- criterion 6: local determinant-ratio approximation ------------------------

#[test]
fn criterion_06_local_det_ratio_error_bounded() {
    let hyper = small_hyper();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut errors = Vec::new();
    let mut attempts = 0;
    while errors.len() < 100 && attempts < 1000 {
        attempts += 1;
        // connected configuration of up to 20 points, grown around a seed
        let mut config = PointConfiguration::new(8, 8, hyper.geometry());
        let seed_pixel = Pixel::new(rng.random_range(1..7), rng.random_range(1..7));
        let t0 = rng.random_range(40.0..160.0);
        config.insert(seed_pixel, t0, rng.random_range(-1.0..1.0)).unwrap();
        let size = rng.random_range(2..=20);
        let mut guard = 0;
        while config.len() < size && guard < 500 {
            guard += 1;
            let anchor = config.id_at(rng.random_range(0..config.len()));
            let adj = config.adjacent_pixels(config.pixel_of(anchor));
            if adj.is_empty() {
                continue;
            }
            let pixel = adj[rng.random_range(0..adj.len())];
            let t = config.t_of(anchor) + rng.random_range(-hyper.n_b..hyper.n_b);
            let _ = config.insert(pixel, t, rng.random_range(-1.0..1.0));
        }
        // single-point edit: add a new attached point
        let anchor = config.id_at(rng.random_range(0..config.len()));
        let adj = config.adjacent_pixels(config.pixel_of(anchor));
        if adj.is_empty() {
            continue;
        }
        let pixel = adj[rng.random_range(0..adj.len())];
        let t = config.t_of(anchor) + rng.random_range(-hyper.n_b..hyper.n_b);
        if !config.hard_core_ok(pixel, t, &[]) {
            continue;
        }
        let exact_before = full_precision_log_det(&config, &hyper);
        let (id, diff) = config.insert(pixel, t, 0.0).unwrap();
        let exact_after = full_precision_log_det(&config, &hyper);
        // windowed approximation around the edited core
        let mut core = vec![id];
        core.extend(diff.touched());
        let mut members_after = Vec::new();
        for &q in &core {
            if config.contains(q) {
                members_after.push(q);
                members_after.extend_from_slice(config.neighbours(q));
            }
        }
        let approx_after = window_log_det(&config, &hyper, &members_after);
        config.remove(id);
        let mut members_before = Vec::new();
        for &q in &core {
            if config.contains(q) {
                members_before.push(q);
                members_before.extend_from_slice(config.neighbours(q));
            }
        }
        let approx_before = if members_before.is_empty() {
            0.0
        } else {
            window_log_det(&config, &hyper, &members_before)
        };
        let exact = exact_after - exact_before;
        let approx = approx_after - approx_before;
        errors.push((approx - exact).abs());
    }
    assert!(errors.len() >= 100, "only {} usable configurations", errors.len());
    let mean: f64 = errors.iter().sum::<f64>() / errors.len() as f64;
    let max = errors.iter().cloned().fold(0.0, f64::max);
    assert!(mean <= 0.25, "mean |log-det error| {mean} > 0.25");
    println!(
        "criterion 6 PASS: mean |log-det-ratio error| {mean:.4} <= 0.25 over {} connected \
         configurations (max {max:.4})",
        errors.len()
    );
}

// ---- criterion 7: threshold retention ------------------------------------------

#[test]
fn criterion_07_threshold_retains_signal_at_low_sbr() {
    let irf = make_irf::<f64>(20, 80);
    let n_bins = 1500;
    let depth = 700.0;
    let sbr = 0.05;
    let mut report = Vec::new();
    for &lambda_p in &[5.0, 10.0, 25.0, 50.0] {
        let signal = lambda_p * sbr / (1.0 + sbr);
        let background = lambda_p / (1.0 + sbr);
        let mut retained = 0u32;
        let mut total = 0u32;
        for seed in 0..100 {
            let scene =
                flat_scene(9, 9, n_bins, depth, irf.total_sum(), signal, background);
            let geom = CubeGeometry { n_bins, bin_width: 1.2, pixel_pitch: 8.5 };
            let cube =
                generate_cube(&scene, &irf, None, geom, seed ^ ((lambda_p as u64) << 32)).unwrap();
            let coarse = bin_cube(&cube, 3);
            let support = threshold_support(&coarse, &irf);
            for r in 0..3 {
                for c in 0..3 {
                    total += 1;
                    if support.contains(Pixel::new(r, c), depth) {
                        retained += 1;
                    }
                }
            }
        }
        let rate = retained as f64 / total as f64;
        assert!(
            rate >= 0.9,
            "lambda_p {lambda_p}: retention {rate:.3} < 0.9 ({retained}/{total})"
        );
        report.push(format!("lambda_p {lambda_p}: {rate:.3}"));
    }
    println!(
        "criterion 7 PASS: true bin retained at SBR 0.05 with probability >= 0.9 ({})",
        report.join(", ")
    );
}

// ---- criteria 8 + 9: end-to-end reconstruction + tuning sanity -----------------

#[test]
fn criterion_08_and_09_end_to_end_reconstruction() {
    let seeds = [1u64, 2, 3];
    let mut runs = Vec::new();
    for &seed in &seeds {
        runs.push(desk_run(seed, None, 2));
    }
    let mean = |f: &dyn Fn(&DeskRun) -> f64| -> f64 {
        runs.iter().map(f).sum::<f64>() / runs.len() as f64
    };
    let f_true = mean(&|r| r.f_true);
    let f_false = mean(&|r| r.f_false as f64);
    let nmse_b = mean(&|r| r.nmse_b);
    let budget = 0.10 * runs[0].n_truth as f64;
    let max_secs = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    for r in &runs {
        assert!(r.seconds < 120.0, "run took {:.0}s (> 2 min)", r.seconds);
    }
    assert!(f_true >= 0.80, "mean F_true {f_true:.3} < 0.80");
    assert!(f_false <= budget, "mean F_false {f_false:.1} > {budget:.0}");
    assert!(nmse_b <= 0.2, "mean NMSE_B {nmse_b:.3} > 0.2");
    println!(
        "criterion 8 PASS: over seeds {seeds:?}: mean F_true(attack) {f_true:.3} >= 0.80, \
         mean F_false {f_false:.1} <= {budget:.0}, mean NMSE_B {nmse_b:.3} <= 0.2 \
         (slowest run {max_secs:.1}s < 120s)"
    );

    let shift = mean(&|r| r.shift_rate);
    let mark = mean(&|r| r.mark_rate);
    for (name, rate) in [("shift", shift), ("mark", mark)] {
        assert!(
            (0.26..=0.56).contains(&rate),
            "{name} acceptance {rate:.3} outside 41% +- 15%"
        );
    }
    println!(
        "criterion 9 PASS: fine-scale acceptance rates shift {shift:.3}, mark {mark:.3} \
         within 41% +- 15%"
    );
}

// ---- criterion 10: ablation direction checks -----------------------------------

#[test]
fn criterion_10_ablations_strictly_reduce_detection() {
    let seeds = [1u64, 2, 3];
    let mut full = 0.0;
    let mut no_dilero = 0.0;
    let mut single_scale = 0.0;
    for &seed in &seeds {
        full += desk_run(seed, None, 2).f_true / seeds.len() as f64;
        no_dilero += desk_run(seed, Some([1.0, 1.0, 0.0, 0.0, 5.0, 5.0, 1.0, 1.0]), 2).f_true
            / seeds.len() as f64;
        single_scale += desk_run(seed, None, 1).f_true / seeds.len() as f64;
    }
    assert!(
        no_dilero < full,
        "disabling dilation/erosion did not reduce F_true ({no_dilero:.3} vs {full:.3})"
    );
    assert!(
        single_scale < full,
        "single scale at equal budget did not reduce F_true ({single_scale:.3} vs {full:.3})"
    );
    println!(
        "criterion 10 PASS: mean F_true(attack) full {full:.3} > no-dilation/erosion \
         {no_dilero:.3} and > single-scale-equal-budget {single_scale:.3}"
    );
}

// ---- criterion 11: determinism through the CLI ----------------------------------

#[test]
fn criterion_11_identical_seeds_byte_identical_exports() {
    let bin = env!("CARGO_BIN_EXE_lidarpp");
    let dir = std::env::temp_dir().join(format!("lidarpp-accept-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "[scene]\nrows = 15\ncols = 15\nbins = 700\n[irf]\nattack = 12\ndecay = 40\n").unwrap();
    let gen = dir.join("gen");
    let status = std::process::Command::new(bin)
        .args(["generate", "--config"])
        .arg(&cfg)
        .args(["--seed", "5", "--out"])
        .arg(&gen)
        .status()
        .unwrap();
    assert!(status.success());
    let mut outs = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("rec{run}"));
        let status = std::process::Command::new(bin)
            .args(["reconstruct", "--cube"])
            .arg(gen.join("cube.txt"))
            .arg("--irf")
            .arg(gen.join("irf.txt"))
            .args(["--seed", "9", "--export-ply", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outs.push(out);
    }
    let mut compared = Vec::new();
    for name in ["points.csv", "points.ply", "background.csv", "kreturns.csv"] {
        let a = std::fs::read(outs[0].join(name)).unwrap();
        let b = std::fs::read(outs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identically-seeded runs");
        compared.push(name);
    }
    std::fs::remove_dir_all(&dir).ok();
    println!(
        "criterion 11 PASS: identically-seeded runs produced byte-identical {}",
        compared.join(", ")
    );
}
