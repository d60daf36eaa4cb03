//! Evaluation metrics: true/false detection curves with one-to-one greedy
//! matching, gated intensity NMSE, background NMSE, and the SBR /
//! photon-budget sweep harness.

use thiserror::Error;

use crate::grid::{Grid, Pixel};
use crate::multires::{rescale_irf, run_multiscale, MultiresError, MultiresOptions, ScaleSchedule};
use crate::photon_data::scenes::{flat_scene, make_irf};
use crate::photon_data::{generate_cube, CubeGeometry, DataError, GroundTruthScene};
use crate::point_cloud::PointConfiguration;
use crate::Real;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("truth image is identically zero inside the gate")]
    EmptyTruthGate,
    #[error("true background is identically zero")]
    EmptyTruthBackground,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Multires(#[from] MultiresError),
}

/// A point reduced to what the detection metrics need.
pub type MetricPoint<S> = (Pixel, S);

pub fn metric_points_from_config<S: Real>(config: &PointConfiguration<S>) -> Vec<MetricPoint<S>> {
    let mut pts: Vec<MetricPoint<S>> = config
        .ids()
        .iter()
        .map(|&id| (config.pixel_of(id), config.t_of(id)))
        .collect();
    pts.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
    pts
}

pub fn metric_points_from_scene<S: Real>(scene: &GroundTruthScene<S>) -> Vec<MetricPoint<S>> {
    scene.points.iter().map(|p| (p.pixel, p.t)).collect()
}

/// True/false detection counts against a distance grid.
#[derive(Debug, Clone)]
pub struct DetectionCurve<S> {
    pub tau: Vec<S>,
    /// Fraction of truth points matched within each tau.
    pub f_true: Vec<S>,
    /// Estimated points left unmatched at each tau (a count).
    pub f_false: Vec<u64>,
    pub n_truth: usize,
    pub n_estimate: usize,
}

impl<S: Real> DetectionCurve<S> {
    /// F_true at the largest grid value not exceeding `tau`.
    pub fn f_true_at(&self, tau: S) -> S {
        let mut best = S::zero();
        for (x, f) in self.tau.iter().zip(&self.f_true) {
            if *x <= tau {
                best = *f;
            }
        }
        best
    }

    pub fn f_false_at(&self, tau: S) -> u64 {
        let mut best = self.n_estimate as u64;
        for (x, f) in self.tau.iter().zip(&self.f_false) {
            if *x <= tau {
                best = *f;
            }
        }
        best
    }
}

/// Greedy one-to-one matching per pixel by increasing depth gap. Each
/// estimated point claims at most one truth point and vice versa; a matched
/// pair counts as a true detection for every tau at or above its gap.
pub fn detection_curves<S: Real>(
    estimate: &[MetricPoint<S>],
    truth: &[MetricPoint<S>],
    tau_grid: &[S],
) -> DetectionCurve<S> {
    use std::collections::BTreeMap;
    let mut est_by_pixel: BTreeMap<Pixel, Vec<S>> = BTreeMap::new();
    for &(pix, t) in estimate {
        est_by_pixel.entry(pix).or_default().push(t);
    }
    let mut truth_by_pixel: BTreeMap<Pixel, Vec<S>> = BTreeMap::new();
    for &(pix, t) in truth {
        truth_by_pixel.entry(pix).or_default().push(t);
    }

    // matched gaps, one entry per matched pair
    let mut gaps: Vec<S> = Vec::new();
    for (pix, est_ts) in &est_by_pixel {
        let Some(truth_ts) = truth_by_pixel.get(pix) else {
            continue;
        };
        let mut candidates: Vec<(S, usize, usize)> = Vec::new();
        for (i, &te) in est_ts.iter().enumerate() {
            for (j, &tt) in truth_ts.iter().enumerate() {
                candidates.push(((te - tt).abs(), i, j));
            }
        }
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut est_used = vec![false; est_ts.len()];
        let mut truth_used = vec![false; truth_ts.len()];
        for (gap, i, j) in candidates {
            if !est_used[i] && !truth_used[j] {
                est_used[i] = true;
                truth_used[j] = true;
                gaps.push(gap);
            }
        }
    }

    let n_truth = truth.len();
    let n_estimate = estimate.len();
    let mut f_true = Vec::with_capacity(tau_grid.len());
    let mut f_false = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let matched = gaps.iter().filter(|&&g| g <= tau).count();
        f_true.push(if n_truth == 0 {
            S::zero()
        } else {
            S::of_usize(matched) / S::of_usize(n_truth)
        });
        f_false.push((n_estimate - matched) as u64);
    }
    DetectionCurve { tau: tau_grid.to_vec(), f_true, f_false, n_truth, n_estimate }
}

/// Default distance grid: integer bins from 0 to three times the response
/// attack length.
pub fn default_tau_grid<S: Real>(attack: usize) -> Vec<S> {
    (0..=3 * attack.max(1)).map(S::of_usize).collect()
}

/// Per-pixel image of the brightest return inside a depth gate (zero where
/// no return falls inside).
pub fn gated_intensity_image<S: Real>(
    points: &[(Pixel, S, S)],
    n_rows: usize,
    n_cols: usize,
    gate: (S, S),
) -> Grid<S> {
    let mut img = Grid::fill(n_rows, n_cols, S::zero());
    for &(pix, t, r) in points {
        if t >= gate.0 && t <= gate.1 {
            let cell = &mut img[(pix.r as usize, pix.c as usize)];
            if r > *cell {
                *cell = r;
            }
        }
    }
    img
}

/// Normalized mean squared error of gated max-intensity images.
pub fn nmse_target<S: Real>(
    estimate: &[(Pixel, S, S)],
    truth: &[(Pixel, S, S)],
    n_rows: usize,
    n_cols: usize,
    gate: (S, S),
) -> Result<S, MetricsError> {
    let est = gated_intensity_image(estimate, n_rows, n_cols, gate);
    let tru = gated_intensity_image(truth, n_rows, n_cols, gate);
    nmse_grids(&est, &tru).ok_or(MetricsError::EmptyTruthGate)
}

/// Normalized mean squared error of background images.
pub fn nmse_background<S: Real>(estimate: &Grid<S>, truth: &Grid<S>) -> Result<S, MetricsError> {
    nmse_grids(estimate, truth).ok_or(MetricsError::EmptyTruthBackground)
}

fn nmse_grids<S: Real>(estimate: &Grid<S>, truth: &Grid<S>) -> Option<S> {
    let mut num = S::zero();
    let mut den = S::zero();
    for (e, t) in estimate.iter().zip(truth.iter()) {
        num += (*t - *e) * (*t - *e);
        den += *t * *t;
    }
    if den > S::zero() {
        Some(num / den)
    } else {
        None
    }
}

/// One cell of the SBR sweep: a flat single-surface scene scaled to the
/// requested budgets, reconstructed with the two-scale pipeline; returns
/// F_true at the given distance.
#[derive(Debug, Clone)]
pub struct SweepCell<S> {
    pub sbr: S,
    pub lambda_p: S,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepSettings<S> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_bins: usize,
    pub attack: usize,
    pub decay: usize,
    pub tau: S,
    /// Iterations per pixel and scale.
    pub iterations_factor: u64,
}

impl<S: Real> Default for SweepSettings<S> {
    fn default() -> Self {
        Self {
            n_rows: 12,
            n_cols: 12,
            n_bins: 600,
            attack: 10,
            decay: 40,
            tau: S::of_usize(10),
            iterations_factor: 25,
        }
    }
}

/// Run one sweep cell end to end (deterministic given the cell seed).
pub fn sweep_cell<S: Real>(
    settings: &SweepSettings<S>,
    cell: &SweepCell<S>,
) -> Result<S, MetricsError> {
    if cell.lambda_p <= S::zero() {
        return Ok(S::zero());
    }
    let irf = make_irf::<S>(settings.attack, settings.decay);
    let depth = S::of_usize(settings.n_bins / 2);
    let signal = cell.lambda_p * cell.sbr / (S::one() + cell.sbr);
    let background = cell.lambda_p / (S::one() + cell.sbr);
    let scene = flat_scene(
        settings.n_rows,
        settings.n_cols,
        settings.n_bins,
        depth,
        irf.total_sum(),
        signal,
        background,
    );
    let geom = CubeGeometry {
        n_bins: settings.n_bins,
        bin_width: S::of(1.2),
        pixel_pitch: S::of(8.5),
    };
    let cube = generate_cube(&scene, &irf, None, geom, cell.seed)?;
    if cube.total_count() == 0 {
        return Ok(S::zero());
    }
    let irf = rescale_irf(&irf, &cube);
    let n_b = (S::of(4.0) * cube.l_z()).round().max(S::one());
    let schedule = ScaleSchedule::two_scale(&cube, n_b, settings.iterations_factor);
    let out = run_multiscale(
        &cube,
        &irf,
        &schedule,
        &MultiresOptions { seed: cell.seed ^ 0xABCD, ..MultiresOptions::default() },
    )?;
    let est = metric_points_from_config(&out.estimate);
    let truth = metric_points_from_scene(&scene);
    let curve = detection_curves(&est, &truth, &[settings.tau]);
    Ok(curve.f_true[0])
}

/// Full sweep, sequential: rows are SBR values, columns photon budgets,
/// entries F_true averaged over the seeds.
pub fn sbr_sweep<S: Real>(
    settings: &SweepSettings<S>,
    sbr_grid: &[S],
    lambda_grid: &[S],
    seeds: &[u64],
) -> Result<Grid<S>, MetricsError> {
    let mut table = Grid::fill(sbr_grid.len(), lambda_grid.len(), S::zero());
    for (i, &sbr) in sbr_grid.iter().enumerate() {
        for (j, &lambda_p) in lambda_grid.iter().enumerate() {
            let mut acc = S::zero();
            for &seed in seeds {
                acc += sweep_cell(settings, &SweepCell { sbr, lambda_p, seed })?;
            }
            table[(i, j)] = acc / S::of_usize(seeds.len().max(1));
        }
    }
    Ok(table)
}
