//! The five subcommands. All numeric work is `f64`; file formats live in the
//! library's io module.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use lidarpp::background::BackgroundField;
use lidarpp::grid::{Grid, Pixel};
use lidarpp::metrics::{
    detection_curves, nmse_background, nmse_target, sweep_cell, SweepCell, SweepSettings,
};
use lidarpp::multires::{
    rescale_irf, run_multiscale, threshold_support, MultiresOptions, ScaleSchedule, ScaleStep,
};
use lidarpp::photon_data::io::{
    read_cube, read_irf, read_point_cloud_csv, write_cube, write_grid_csv, write_irf,
    write_point_cloud_csv, write_point_cloud_ply, PointRow,
};
use lidarpp::photon_data::scenes::{
    flat_scene, make_irf, plates_and_paraboloid_scene, two_surface_scene, SceneBudget,
};
use lidarpp::photon_data::{bin_cube, generate_cube, log_matched_filter, CubeGeometry};
use lidarpp::point_cloud::PointConfiguration;
use lidarpp::priors::HyperParameters;
use lidarpp::sampler::{MoveTable, Sampler};
use lidarpp::{Cube, Irf, Scene};

use crate::config::Config;
use crate::outputs::Outputs;

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("malformed {what} entry `{tok}`"))
        })
        .collect()
}

// ---- shared config resolution ----------------------------------------------

struct SceneSetup {
    scene: Scene,
    irf: Irf,
    geom: CubeGeometry<f64>,
}

fn resolve_scene(config: &Config) -> Result<SceneSetup> {
    let kind = config.get_str("scene.kind", "two-surface");
    let rows: usize = config.get("scene.rows", 33)?;
    let cols: usize = config.get("scene.cols", 33)?;
    let bins: usize = config.get("scene.bins", 1500)?;
    let bin_width: f64 = config.get("scene.bin_width", 1.2)?;
    let pixel_pitch: f64 = config.get("scene.pixel_pitch", 8.5)?;
    let signal: f64 = config.get("scene.signal_photons", 4.0)?;
    let background: f64 = config.get("scene.background_photons", 7.0)?;
    let attack: usize = config.get("irf.attack", 20)?;
    let decay: usize = config.get("irf.decay", 80)?;

    let irf = make_irf::<f64>(attack, decay);
    let mut scene = match kind.as_str() {
        "two-surface" => two_surface_scene(rows, cols, bins, irf.total_sum(), SceneBudget::default()),
        "plates" => {
            plates_and_paraboloid_scene(rows, cols, bins, irf.total_sum(), SceneBudget::default())
        }
        "flat" => {
            let depth: f64 = config.get("scene.depth_bin", bins as f64 / 2.0)?;
            flat_scene(rows, cols, bins, depth, irf.total_sum(), signal, background)
        }
        other => bail!("unknown scene.kind `{other}` (two-surface | plates | flat)"),
    };
    // normalize photon budgets to the requested means
    let sig_now = scene.signal_photons_per_pixel(&irf, bins);
    let bg_now = scene.background_photons_per_pixel(bins);
    if sig_now > 0.0 && bg_now > 0.0 {
        scene.scale_budget(signal / sig_now, background / bg_now);
    }
    Ok(SceneSetup { scene, irf, geom: CubeGeometry { n_bins: bins, bin_width, pixel_pitch } })
}

struct SamplerSetup {
    schedule: ScaleSchedule<f64>,
    options: MultiresOptions,
}

fn resolve_sampler(config: &Config, cube: &Cube) -> Result<SamplerSetup> {
    let n_b_default = (4.0 * cube.l_z()).round().max(1.0);
    let n_b: f64 = config.get("hyper.n_b", n_b_default)?;
    let d_min: f64 = config.get("hyper.d_min", 2.0 * n_b + 1.0)?;
    let n_p: u32 = config.get("hyper.n_p", 3)?;
    let alpha_b: f64 = config.get("hyper.alpha_b", 2.0)?;
    let lambda_override: f64 = config.get("hyper.lambda_a", -1.0)?;
    let lambda_factor: f64 = config.get("hyper.lambda_factor", 0.2)?;
    let gamma_coarse: f64 = config.get("hyper.gamma_a_coarse", 2.0f64.exp())?;
    let gamma_fine: f64 = config.get("hyper.gamma_a_fine", 3.0f64.exp())?;
    let sigma2_coarse: f64 = config.get("hyper.sigma2_coarse", 0.36)?;
    let sigma2_fine: f64 = config.get("hyper.sigma2_fine", 0.12)?;
    let beta_factor: f64 = config.get("hyper.beta_factor", 0.01)?;

    let scales: usize = config.get("multires.scales", 2)?;
    let window: usize = config.get("multires.window", 3)?;
    let iters_factor: u64 = config.get("sampler.iters_factor", 25)?;
    let fine_pixels = (cube.n_rows() * cube.n_cols()) as u64;
    let iters_fine: u64 = config.get("sampler.iters", iters_factor * fine_pixels)?;

    let make_hyper = |pixels: f64, l_z: f64, fine: bool| HyperParameters {
        gamma_a: if fine { gamma_fine } else { gamma_coarse },
        lambda_a: if lambda_override > 0.0 {
            lambda_override
        } else {
            lambda_factor * pixels.powf(1.5)
        },
        d_min,
        n_p,
        n_b,
        sigma2: if fine { sigma2_fine } else { sigma2_coarse },
        beta: beta_factor * if fine { sigma2_fine } else { sigma2_coarse },
        alpha_b,
        l_z,
    };

    let mut steps = Vec::new();
    if scales >= 2 {
        let coarse_rows = cube.n_rows().div_ceil(window);
        let coarse_cols = cube.n_cols().div_ceil(window);
        steps.push(ScaleStep {
            window,
            hyper: make_hyper((coarse_rows * coarse_cols) as f64, cube.l_z() * window as f64, false),
            iterations: iters_fine,
        });
    }
    steps.push(ScaleStep {
        window: 1,
        hyper: make_hyper((cube.n_rows() * cube.n_cols()) as f64, cube.l_z(), true),
        iterations: iters_fine,
    });
    if scales > 2 {
        bail!("multires.scales supports 1 or 2 (got {scales})");
    }
    let schedule = ScaleSchedule { steps };

    let seed: u64 = config.get("run.seed", 1)?;
    let moves_raw = config.get_str("sampler.moves", "1,1,5,5,5,5,1,1");
    let weights: Vec<f64> = parse_list(&moves_raw, "sampler.moves")?;
    if weights.len() != 8 {
        bail!("sampler.moves must list 8 weights");
    }
    let k_max: usize = config.get("sampler.k_max", 7)?;
    let trace_every: u64 = config.get("sampler.trace_every", 256)?;
    Ok(SamplerSetup {
        schedule,
        options: MultiresOptions {
            seed,
            moves: Some([
                weights[0], weights[1], weights[2], weights[3], weights[4], weights[5],
                weights[6], weights[7],
            ]),
            k_max,
            trace_every,
        },
    })
}

// ---- generate ----------------------------------------------------------------

pub fn generate(config: &Config, out: &Outputs) -> Result<()> {
    let setup = resolve_scene(config)?;
    let seed: u64 = config.get("run.seed", 1)?;
    let cube = generate_cube(&setup.scene, &setup.irf, None, setup.geom, seed)?;

    write_cube(&cube, &out.path("cube.txt"))?;
    write_irf(&setup.irf, &out.path("irf.txt"))?;
    let truth_rows: Vec<PointRow<f64>> = setup
        .scene
        .points
        .iter()
        .map(|p| PointRow {
            i: p.pixel.r + 1,
            j: p.pixel.c + 1,
            t: p.t,
            intensity: p.intensity,
            surface_id: p.surface,
        })
        .collect();
    write_point_cloud_csv(&truth_rows, &out.path("truth_points.csv"))?;
    write_grid_csv(&setup.scene.background, &out.path("truth_background.csv"))?;
    write_text(&out.path("config_resolved.txt"), &config.echo())?;
    println!(
        "generated {}x{}x{} cube: {} photons ({:.2} per pixel)",
        cube.n_rows(),
        cube.n_cols(),
        cube.n_bins(),
        cube.total_count(),
        cube.mean_photons_per_pixel()
    );
    Ok(())
}

// ---- reconstruct ---------------------------------------------------------------

pub struct ReconstructFlags {
    pub export_ply: bool,
    pub export_diagnostics: bool,
    pub export_intermediates: bool,
    pub refine_iters: u64,
}

pub fn reconstruct(
    config: &Config,
    out: &Outputs,
    cube_path: &Path,
    irf_path: &Path,
    flags: ReconstructFlags,
) -> Result<()> {
    let cube: Cube = read_cube(cube_path)?;
    let raw_irf: Irf = read_irf(irf_path)?;
    let irf = rescale_irf(&raw_irf, &cube);
    let setup = resolve_sampler(config, &cube)?;
    if setup.schedule.steps.iter().all(|s| s.iterations == 0) {
        bail!("no iterations requested (sampler.iters = 0): no samples to estimate from");
    }

    let result = run_multiscale(&cube, &irf, &setup.schedule, &setup.options)?;
    let mut estimate = result.estimate.clone();
    let background = result
        .background
        .clone()
        .ok_or_else(|| anyhow::anyhow!("no post-burn-in samples: cannot form the MMSE background"))?;

    write_point_cloud_csv(&estimate.export_rows(), &out.path("points.csv"))?;
    if flags.export_ply {
        write_point_cloud_ply(
            &estimate.export_rows(),
            cube.bin_width(),
            cube.pixel_pitch(),
            &out.path("points.ply"),
        )?;
    }
    write_grid_csv(&background, &out.path("background.csv"))?;

    // per-pixel return-count probabilities from the finest scale
    let fine = result.scales.last().expect("at least one scale");
    {
        let path = out.path("kreturns.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        let k_max = setup.options.k_max;
        let header: Vec<String> = (0..=k_max).map(|k| format!("p{k}")).collect();
        writeln!(w, "i,j,{}", header.join(","))?;
        for r in 0..fine.n_rows {
            for c in 0..fine.n_cols {
                let dist = fine.run.k_returns.distribution(Pixel::new(r, c));
                let cells: Vec<String> = dist.iter().map(|p| format!("{p}")).collect();
                writeln!(w, "{},{},{}", r + 1, c + 1, cells.join(","))?;
            }
        }
        w.flush()?;
    }

    if flags.export_diagnostics {
        let path = out.path("diagnostics.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "scale,iteration,log_posterior,points")?;
        for (k, scale) in result.scales.iter().enumerate() {
            for tp in &scale.run.trace {
                writeln!(w, "{},{},{},{}", k + 1, tp.iteration, tp.log_posterior, tp.points)?;
            }
        }
        w.flush()?;

        let path = out.path("acceptance.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "scale,move,proposed,accepted,skipped,rate")?;
        for (k, scale) in result.scales.iter().enumerate() {
            for kind in lidarpp::sampler::MoveKind::ALL {
                let c = scale.run.stats.counter(kind);
                writeln!(
                    w,
                    "{},{},{},{},{},{:.4}",
                    k + 1,
                    kind.name(),
                    c.proposed,
                    c.accepted,
                    c.skipped,
                    c.acceptance_rate()
                )?;
            }
        }
        w.flush()?;
        write_text(&out.path("support.txt"), &result.support_diagnostics)?;
    }

    if flags.export_intermediates {
        for (k, scale) in result.scales.iter().enumerate() {
            let mut map = scale.run.map_config.clone();
            write_point_cloud_csv(
                &map.export_rows(),
                &out.path(&format!("scale{}_points.csv", k + 1)),
            )?;
        }
    }

    if flags.refine_iters > 0 {
        let stats = refine_pass(config, &cube, &irf, &setup, &estimate, &background, flags.refine_iters)?;
        let path = out.path("refine_stats.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "i,j,t_mean,t_std,intensity_mean,intensity_std")?;
        for s in stats {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.pixel.r + 1,
                s.pixel.c + 1,
                s.t_mean,
                s.t_var.sqrt(),
                s.r_mean,
                s.r_var.sqrt()
            )?;
        }
        w.flush()?;
    }

    write_text(&out.path("config_resolved.txt"), &config.echo())?;
    println!(
        "reconstructed {} points over {} surfaces; support: {}",
        estimate.len(),
        estimate.n_surfaces(),
        result.support_diagnostics
    );
    Ok(())
}

/// Fixed-dimension refinement around the MAP: shift/mark moves only.
fn refine_pass(
    config: &Config,
    cube: &Cube,
    irf: &Irf,
    setup: &SamplerSetup,
    estimate: &PointConfiguration<f64>,
    background: &Grid<f64>,
    iterations: u64,
) -> Result<Vec<lidarpp::sampler::PointStats<f64>>> {
    let fine_step = setup.schedule.steps.last().expect("non-empty schedule");
    let coarsest = setup.schedule.steps.first().expect("non-empty schedule");
    let coarse_cube = bin_cube(cube, coarsest.window);
    let support = threshold_support(&coarse_cube, irf).upsample(
        coarsest.window,
        cube.n_rows(),
        cube.n_cols(),
    );
    let field = BackgroundField::from_levels(background.clone(), fine_step.hyper.alpha_b);
    let seed: u64 = config.get("run.seed", 1)?;
    let mut sampler = Sampler::new(
        cube,
        irf,
        fine_step.hyper,
        &support,
        estimate.clone(),
        field,
        MoveTable::default(),
        seed ^ 0x5EF1_4E00,
    )?;
    Ok(sampler.refine(iterations))
}

// ---- evaluate ------------------------------------------------------------------

pub fn evaluate(
    config: &Config,
    out: &Outputs,
    estimate_path: &Path,
    truth_path: &Path,
    est_background: Option<&Path>,
    truth_background: Option<&Path>,
) -> Result<()> {
    let est_rows: Vec<PointRow<f64>> = read_point_cloud_csv(estimate_path)?;
    let truth_rows: Vec<PointRow<f64>> = read_point_cloud_csv(truth_path)?;
    let to_points = |rows: &[PointRow<f64>]| -> Vec<(Pixel, f64)> {
        rows.iter()
            .map(|p| (Pixel { r: p.i - 1, c: p.j - 1 }, p.t))
            .collect()
    };
    let tau_max: usize = config.get("evaluate.tau_max", 60)?;
    let tau_report: f64 = config.get("evaluate.tau_report", 20.0)?;
    let taus: Vec<f64> = (0..=tau_max).map(|k| k as f64).collect();
    let curve = detection_curves(&to_points(&est_rows), &to_points(&truth_rows), &taus);

    {
        let path = out.path("detection.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "tau,f_true,f_false")?;
        for (k, tau) in curve.tau.iter().enumerate() {
            writeln!(w, "{},{},{}", tau, curve.f_true[k], curve.f_false[k])?;
        }
        w.flush()?;
    }

    let mut metrics: Vec<(String, f64)> = vec![
        ("n_truth".into(), curve.n_truth as f64),
        ("n_estimate".into(), curve.n_estimate as f64),
        ("f_true_at_tau_report".into(), curve.f_true_at(tau_report)),
        ("f_false_at_tau_report".into(), curve.f_false_at(tau_report) as f64),
    ];
    if let (Some(est_bg), Some(truth_bg)) = (est_background, truth_background) {
        let est: Grid<f64> = lidarpp::photon_data::io::read_grid_csv(est_bg)?;
        let truth: Grid<f64> = lidarpp::photon_data::io::read_grid_csv(truth_bg)?;
        metrics.push(("nmse_background".into(), nmse_background(&est, &truth)?));
    }
    let gate_lo: f64 = config.get("evaluate.gate_lo", -1.0)?;
    let gate_hi: f64 = config.get("evaluate.gate_hi", -1.0)?;
    if gate_lo >= 0.0 && gate_hi > gate_lo {
        let dims = |rows: &[PointRow<f64>]| {
            rows.iter()
                .map(|p| (p.i as usize, p.j as usize))
                .fold((0, 0), |(r, c), (i, j)| (r.max(i), c.max(j)))
        };
        let (rows_a, cols_a) = dims(&est_rows);
        let (rows_b, cols_b) = dims(&truth_rows);
        let (n_rows, n_cols) = (rows_a.max(rows_b), cols_a.max(cols_b));
        let gated = |rows: &[PointRow<f64>]| -> Vec<(Pixel, f64, f64)> {
            rows.iter()
                .map(|p| (Pixel { r: p.i - 1, c: p.j - 1 }, p.t, p.intensity))
                .collect()
        };
        metrics.push((
            "nmse_target".into(),
            nmse_target(&gated(&est_rows), &gated(&truth_rows), n_rows, n_cols, (gate_lo, gate_hi))?,
        ));
    }

    let path = out.path("metrics.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "metric,value")?;
    for (name, value) in &metrics {
        writeln!(w, "{name},{value}")?;
    }
    w.flush()?;
    write_text(&out.path("config_resolved.txt"), &config.echo())?;
    for (name, value) in &metrics {
        println!("{name} = {value}");
    }
    Ok(())
}

// ---- sweep -------------------------------------------------------------------

pub fn sweep(config: &Config, out: &Outputs, jobs: usize) -> Result<()> {
    let settings = SweepSettings::<f64> {
        n_rows: config.get("sweep.rows", 12)?,
        n_cols: config.get("sweep.cols", 12)?,
        n_bins: config.get("sweep.bins", 600)?,
        attack: config.get("sweep.attack", 10)?,
        decay: config.get("sweep.decay", 40)?,
        tau: config.get("sweep.tau", 10.0)?,
        iterations_factor: config.get("sweep.iters_factor", 25)?,
    };
    let sbr_grid: Vec<f64> = parse_list(&config.get_str("sweep.sbr", "0.1,0.3,1,3,10"), "sweep.sbr")?;
    let lambda_grid: Vec<f64> =
        parse_list(&config.get_str("sweep.lambda", "1,3,10,30"), "sweep.lambda")?;
    let seeds: Vec<u64> = parse_list(&config.get_str("sweep.seeds", "1,2,3"), "sweep.seeds")?;
    let base_seed: u64 = config.get("run.seed", 1)?;

    // one cell per (sbr, lambda, seed), fanned out over the worker pool
    let cells: Vec<(usize, usize, u64)> = sbr_grid
        .iter()
        .enumerate()
        .flat_map(|(i, _)| {
            lambda_grid
                .iter()
                .enumerate()
                .flat_map(|(j, _)| seeds.iter().map(move |&s| (i, j, s)))
                .collect::<Vec<_>>()
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    let results: Result<Vec<((usize, usize), f64)>> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(i, j, seed)| {
                let cell = SweepCell {
                    sbr: sbr_grid[i],
                    lambda_p: lambda_grid[j],
                    seed: seed ^ base_seed.rotate_left(17),
                };
                let f_true = sweep_cell(&settings, &cell)?;
                Ok(((i, j), f_true))
            })
            .collect()
    });
    let mut table = Grid::fill(sbr_grid.len(), lambda_grid.len(), 0.0f64);
    for ((i, j), f_true) in results? {
        table[(i, j)] += f_true / seeds.len() as f64;
    }

    let path = out.path("sweep.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    let header: Vec<String> = lambda_grid.iter().map(|l| format!("lambda_{l}")).collect();
    writeln!(w, "sbr,{}", header.join(","))?;
    for (i, sbr) in sbr_grid.iter().enumerate() {
        let cells: Vec<String> = (0..lambda_grid.len()).map(|j| format!("{}", table[(i, j)])).collect();
        writeln!(w, "{},{}", sbr, cells.join(","))?;
    }
    w.flush()?;
    write_text(&out.path("config_resolved.txt"), &config.echo())?;
    println!("sweep complete: {} cells", cells.len());
    Ok(())
}

// ---- baseline ------------------------------------------------------------------

pub fn baseline(config: &Config, out: &Outputs, cube_path: &Path, irf_path: &Path) -> Result<()> {
    let cube: Cube = read_cube(cube_path)?;
    let irf: Irf = read_irf(irf_path)?;
    let result = log_matched_filter(&cube, &irf);

    let depth = Grid::from_fn(cube.n_rows(), cube.n_cols(), |r, c| {
        result.depth[(r, c)].map(|t| t as f64).unwrap_or(-1.0)
    });
    write_grid_csv(&depth, &out.path("baseline_depth.csv"))?;
    write_grid_csv(&result.intensity, &out.path("baseline_intensity.csv"))?;
    write_grid_csv(&result.background, &out.path("baseline_background.csv"))?;

    let mut rows = Vec::new();
    for r in 0..cube.n_rows() {
        for c in 0..cube.n_cols() {
            if let Some(t) = result.depth[(r, c)] {
                rows.push(PointRow {
                    i: r as u32 + 1,
                    j: c as u32 + 1,
                    t: t as f64,
                    intensity: result.intensity[(r, c)],
                    surface_id: 0,
                });
            }
        }
    }
    write_point_cloud_csv(&rows, &out.path("baseline_points.csv"))?;
    write_text(&out.path("config_resolved.txt"), &config.echo())?;
    println!("baseline: {} pixels with detections", rows.len());
    Ok(())
}
