//! Coarse-to-fine driver: matched-filter thresholding of the proposal
//! support on the coarsest cube, a sampler run per scale, and estimate
//! hand-off (point upsampling, background replication) between scales.

use thiserror::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::background::{upsample_background, BackgroundField};
use crate::grid::{Grid, Pixel};
use crate::photon_data::{bin_cube, matched_filter_scores, ImpulseResponse, SparseLidarCube};
use crate::point_cloud::{upsample, PointConfiguration};
use crate::priors::HyperParameters;
use crate::sampler::{MoveTable, RunOptions, RunOutput, Sampler, SamplerError};
use crate::Real;

/// Admissible depth intervals per pixel: the support of the point-process
/// reference intensity after thresholding. Birth proposals sample uniformly
/// from it; every move rejects positions outside it.
#[derive(Debug, Clone)]
pub struct AdmissibleSupport<S> {
    n_rows: usize,
    n_cols: usize,
    t_max: S,
    /// Sorted disjoint closed intervals per pixel, inside [0, t_max].
    intervals: Vec<Vec<(S, S)>>,
    /// Cumulative interval length per pixel (for uniform sampling).
    cumulative: Vec<S>,
    total: S,
    /// Human-readable notes from the thresholding step.
    pub diagnostics: String,
}

impl<S: Real> AdmissibleSupport<S> {
    fn build(
        n_rows: usize,
        n_cols: usize,
        t_max: S,
        intervals: Vec<Vec<(S, S)>>,
        diagnostics: String,
    ) -> Self {
        let mut cumulative = Vec::with_capacity(intervals.len());
        let mut total = S::zero();
        for pixel_intervals in &intervals {
            for &(lo, hi) in pixel_intervals {
                total += hi - lo;
            }
            cumulative.push(total);
        }
        Self { n_rows, n_cols, t_max, intervals, cumulative, total, diagnostics }
    }

    /// Whole-volume support (no thresholding).
    pub fn full(n_rows: usize, n_cols: usize, t_bins: usize) -> Self {
        let t_max = S::of_usize(t_bins);
        let intervals = vec![vec![(S::zero(), t_max)]; n_rows * n_cols];
        Self::build(n_rows, n_cols, t_max, intervals, String::new())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn total_measure(&self) -> S {
        self.total
    }

    pub fn pixel_intervals(&self, pixel: Pixel) -> &[(S, S)] {
        &self.intervals[pixel.index(self.n_cols)]
    }

    pub fn contains(&self, pixel: Pixel, t: S) -> bool {
        if t < S::zero() || t > self.t_max {
            return false;
        }
        self.intervals[pixel.index(self.n_cols)]
            .iter()
            .any(|&(lo, hi)| t >= lo && t <= hi)
    }

    /// Uniform draw over the admissible volume; `None` when it is empty.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Option<(Pixel, S)> {
        if self.total <= S::zero() {
            return None;
        }
        let x = S::uniform(rng, S::zero(), self.total);
        let idx = self.cumulative.partition_point(|&c| c <= x);
        let idx = idx.min(self.cumulative.len() - 1);
        let pixel = Pixel::new(idx / self.n_cols, idx % self.n_cols);
        let prev = if idx == 0 { S::zero() } else { self.cumulative[idx - 1] };
        let mut offset = x - prev;
        for &(lo, hi) in &self.intervals[idx] {
            let len = hi - lo;
            if offset <= len {
                return Some((pixel, lo + offset));
            }
            offset -= len;
        }
        let &(lo, hi) = self.intervals[idx].last()?;
        let _ = lo;
        Some((pixel, hi))
    }

    /// Replicate to a finer grid (each fine pixel inherits the intervals of
    /// its covering coarse pixel).
    pub fn upsample(&self, window: usize, fine_rows: usize, fine_cols: usize) -> Self {
        let mut intervals = Vec::with_capacity(fine_rows * fine_cols);
        for r in 0..fine_rows {
            for c in 0..fine_cols {
                let src = Pixel::new(
                    (r / window).min(self.n_rows - 1),
                    (c / window).min(self.n_cols - 1),
                );
                intervals.push(self.intervals[src.index(self.n_cols)].clone());
            }
        }
        Self::build(fine_rows, fine_cols, self.t_max, intervals, self.diagnostics.clone())
    }
}

/// Threshold the matched-filter response of (the coarsest) cube: a depth bin
/// stays admissible when its score reaches 5% of the mean response a pure
/// background histogram would produce, and surviving bins are dilated by the
/// response length on both sides. Pixels without photons end up empty.
pub fn threshold_support<S: Real>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
) -> AdmissibleSupport<S> {
    let (n_rows, n_cols, t_bins) = (cube.n_rows(), cube.n_cols(), cube.n_bins());
    let reach = (irf.attack() + irf.decay()) as i64;
    let mut intervals = Vec::with_capacity(n_rows * n_cols);
    let mut admitted_bins = 0u64;
    for (pix, hist) in cube.pixels_iter() {
        if hist.is_empty() {
            intervals.push(Vec::new());
            continue;
        }
        let scores = matched_filter_scores(hist, irf, t_bins);
        let threshold = S::of(0.05) / S::of_usize(t_bins)
            * S::of_usize(cube.pixel_count(pix) as usize)
            * irf.sum_log_weights();
        // admitted bins, dilated by +-(attack+decay), merged into intervals
        let mut ranges: Vec<(i64, i64)> = Vec::new();
        for t in 1..=t_bins as i64 {
            let s = scores[t as usize];
            if s >= threshold && s > S::zero() {
                let (lo, hi) = ((t - reach).max(1), (t + reach).min(t_bins as i64));
                match ranges.last_mut() {
                    Some(last) if lo <= last.1 + 1 => last.1 = hi.max(last.1),
                    _ => ranges.push((lo, hi)),
                }
            }
        }
        admitted_bins += ranges.iter().map(|&(lo, hi)| (hi - lo + 1) as u64).sum::<u64>();
        intervals.push(
            ranges
                .into_iter()
                .map(|(lo, hi)| {
                    (
                        (S::of_usize(lo as usize) - S::of(0.5)).max(S::zero()),
                        (S::of_usize(hi as usize) + S::of(0.5)).min(S::of_usize(t_bins)),
                    )
                })
                .collect(),
        );
    }
    let volume = (n_rows * n_cols * t_bins) as f64;
    let diagnostics = format!(
        "matched-filter thresholding with the shifted kernel ln(h/eps): \
         {admitted_bins} of {volume:.0} bins admitted ({:.1}%)",
        100.0 * admitted_bins as f64 / volume
    );
    AdmissibleSupport::build(
        n_rows,
        n_cols,
        S::of_usize(t_bins),
        intervals,
        diagnostics,
    )
}

/// Scale the response so intensities land in a convenient range:
/// `h' = h * mean_photons / (5 sum h)`, computed once from the finest cube
/// and shared by all scales (coarse intensities are then sums of fine ones).
pub fn rescale_irf<S: Real>(
    irf: &ImpulseResponse<S>,
    cube: &SparseLidarCube<S>,
) -> ImpulseResponse<S> {
    let lambda = cube.mean_photons_per_pixel();
    if lambda <= S::zero() {
        return irf.clone();
    }
    irf.scaled(lambda / (S::of(5.0) * irf.total_sum()))
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("schedule must contain at least one scale")]
    Empty,
    #[error("windows must be strictly decreasing and end at 1")]
    BadWindows,
    #[error("window {coarse} is not a multiple of the next window {fine}")]
    NonIntegerRatio { coarse: usize, fine: usize },
}

/// One scale of the coarse-to-fine schedule.
#[derive(Debug, Clone)]
pub struct ScaleStep<S> {
    pub window: usize,
    pub hyper: HyperParameters<S>,
    pub iterations: u64,
}

/// Coarse-to-fine schedule; windows strictly decrease to 1.
#[derive(Debug, Clone)]
pub struct ScaleSchedule<S> {
    pub steps: Vec<ScaleStep<S>>,
}

impl<S: Real> ScaleSchedule<S> {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.steps.is_empty() {
            return Err(ScheduleError::Empty);
        }
        if self.steps.last().unwrap().window != 1 {
            return Err(ScheduleError::BadWindows);
        }
        for pair in self.steps.windows(2) {
            if pair[0].window <= pair[1].window {
                return Err(ScheduleError::BadWindows);
            }
            if pair[0].window % pair[1].window != 0 {
                return Err(ScheduleError::NonIntegerRatio {
                    coarse: pair[0].window,
                    fine: pair[1].window,
                });
            }
        }
        Ok(())
    }

    /// The default two-scale schedule: window 3 then full resolution. Both
    /// scales run `iterations_factor * fine pixels` iterations (the coarse
    /// chain grows the surfaces from scratch and needs the full budget; its
    /// iterations are much cheaper).
    pub fn two_scale(cube: &SparseLidarCube<S>, n_b: S, iterations_factor: u64) -> Self {
        let window = 3usize;
        let coarse_rows = cube.n_rows().div_ceil(window);
        let coarse_cols = cube.n_cols().div_ceil(window);
        let l_z = cube.l_z();
        Self {
            steps: vec![
                ScaleStep {
                    window,
                    hyper: HyperParameters::recommended(coarse_rows, coarse_cols, n_b, l_z * S::of_usize(window), false),
                    iterations: iterations_factor * (cube.n_rows() * cube.n_cols()) as u64,
                },
                ScaleStep {
                    window: 1,
                    hyper: HyperParameters::recommended(cube.n_rows(), cube.n_cols(), n_b, l_z, true),
                    iterations: iterations_factor * (cube.n_rows() * cube.n_cols()) as u64,
                },
            ],
        }
    }

    /// Single full-resolution scale.
    pub fn single_scale(cube: &SparseLidarCube<S>, n_b: S, iterations: u64) -> Self {
        Self {
            steps: vec![ScaleStep {
                window: 1,
                hyper: HyperParameters::recommended(cube.n_rows(), cube.n_cols(), n_b, cube.l_z(), true),
                iterations,
            }],
        }
    }
}

#[derive(Debug, Error)]
pub enum MultiresError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Per-scale products kept for inspection and export.
pub struct ScaleOutput<S> {
    pub window: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    pub run: RunOutput<S>,
}

pub struct MultiresOutput<S> {
    pub estimate: PointConfiguration<S>,
    pub background: Option<Grid<S>>,
    pub scales: Vec<ScaleOutput<S>>,
    pub support_diagnostics: String,
}

#[derive(Debug, Clone)]
pub struct MultiresOptions {
    pub seed: u64,
    pub moves: Option<[f64; 8]>,
    pub k_max: usize,
    pub trace_every: u64,
}

impl Default for MultiresOptions {
    fn default() -> Self {
        Self { seed: 0, moves: None, k_max: 7, trace_every: 256 }
    }
}

/// Run the schedule coarse to fine: bin the cube, threshold the proposal
/// support at the coarsest scale, then hand estimates down the chain
/// (points upsampled per surface, background replicated and rescaled).
pub fn run_multiscale<S: Real>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
    schedule: &ScaleSchedule<S>,
    options: &MultiresOptions,
) -> Result<MultiresOutput<S>, MultiresError> {
    schedule.validate()?;
    let moves = match options.moves {
        Some(w) => MoveTable::new(w.map(S::of)).expect("valid move weights"),
        None => MoveTable::default(),
    };

    let mut scales = Vec::new();
    let mut carry: Option<(PointConfiguration<S>, Grid<S>, usize)> = None;
    let mut coarse_support: Option<(AdmissibleSupport<S>, usize)> = None;
    let mut support_diagnostics = String::new();
    let mut final_estimate: Option<PointConfiguration<S>> = None;
    let mut final_background = None;

    for (k, step) in schedule.steps.iter().enumerate() {
        let cube_k = bin_cube(cube, step.window);
        let (n_rows, n_cols) = (cube_k.n_rows(), cube_k.n_cols());
        let support = match &coarse_support {
            None => {
                let s = threshold_support(&cube_k, irf);
                support_diagnostics = s.diagnostics.clone();
                s
            }
            Some((coarsest, coarsest_window)) => {
                coarsest.upsample(coarsest_window / step.window, n_rows, n_cols)
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ (k as u64).wrapping_mul(0x9E37_79B9));
        let geometry = step.hyper.geometry();
        let (config, field) = match carry.take() {
            None => (
                PointConfiguration::new(n_rows, n_cols, geometry),
                BackgroundField::init_random(n_rows, n_cols, step.hyper.alpha_b, &mut rng),
            ),
            Some((mut coarse_config, coarse_bg, prev_window)) => {
                let ratio = prev_window / step.window;
                let mut fine =
                    upsample(&mut coarse_config, ratio, n_rows, n_cols, geometry);
                // keep the initial configuration inside the admissible support
                let outside: Vec<_> = fine
                    .ids()
                    .iter()
                    .copied()
                    .filter(|&id| !support.contains(fine.pixel_of(id), fine.t_of(id)))
                    .collect();
                for id in outside {
                    fine.remove(id);
                }
                let bg = upsample_background(&coarse_bg, ratio, n_rows, n_cols);
                (fine, BackgroundField::from_levels(bg, step.hyper.alpha_b))
            }
        };

        let mut sampler = Sampler::new(
            &cube_k,
            irf,
            step.hyper,
            &support,
            config,
            field,
            moves.clone(),
            options.seed.wrapping_add(0x1000 * k as u64),
        )?;
        let run = sampler.run(&RunOptions {
            iterations: step.iterations,
            trace_every: options.trace_every,
            k_max: options.k_max,
            ..RunOptions::default()
        });

        carry = Some((
            run.map_config.clone(),
            run.mmse_background.clone().unwrap_or_else(|| {
                Grid::fill(n_rows, n_cols, S::of(1e-3))
            }),
            step.window,
        ));
        if coarse_support.is_none() {
            coarse_support = Some((support.clone(), step.window));
        }
        if k == schedule.steps.len() - 1 {
            final_estimate = Some(run.map_config.clone());
            final_background = run.mmse_background.clone();
        }
        scales.push(ScaleOutput { window: step.window, n_rows, n_cols, run });
    }

    Ok(MultiresOutput {
        estimate: final_estimate.expect("at least one scale"),
        background: final_background,
        scales,
        support_diagnostics,
    })
}
