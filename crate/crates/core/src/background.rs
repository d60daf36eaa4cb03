//! Gamma-MRF background field and its data-augmented Gibbs update: thin the
//! photons of each stored bin into signal and background parts, refresh the
//! auxiliary field, then draw each level from its conjugate gamma
//! conditional. One kernel iteration per sweep, sequential raster order.

use rand::Rng;
use thiserror::Error;

use crate::grid::{Grid, Pixel};
use crate::likelihood::{
    active_returns, delta_background_edit, signal_at, PixelRateView, Return,
};
use crate::photon_data::{ImpulseResponse, SparseLidarCube};
use crate::point_cloud::PointConfiguration;
use crate::priors::background_marginal_delta;
use crate::{binomial_draw, inverse_gamma_draw, Real};

/// Above this many photons in return-covered bins of a pixel, the per-bin
/// binomial thinning is replaced by one Poisson draw of the total.
pub const POISSON_THINNING_THRESHOLD: u64 = 100;

#[derive(Debug, Error)]
pub enum BackgroundError {
    #[error("MMSE estimate requested before any accumulated sweep")]
    NoSamples,
}

/// Background levels, gamma-MRF auxiliaries and the MMSE accumulator.
#[derive(Debug, Clone)]
pub struct BackgroundField<S> {
    b: Grid<S>,
    w: Grid<S>,
    alpha: S,
    acc: Grid<S>,
    acc_count: u64,
}

impl<S: Real> BackgroundField<S> {
    /// Start from given levels; auxiliaries are set to their conditional
    /// means given the levels.
    pub fn from_levels(b: Grid<S>, alpha: S) -> Self {
        let w = Grid::from_fn(b.n_rows(), b.n_cols(), |r, c| w_bar(&b, r, c));
        let acc = Grid::fill(b.n_rows(), b.n_cols(), S::zero());
        Self { b, w, alpha, acc, acc_count: 0 }
    }

    /// Random initialization: levels uniform on (1e-3, 1e-2).
    pub fn init_random<R: Rng + ?Sized>(
        n_rows: usize,
        n_cols: usize,
        alpha: S,
        rng: &mut R,
    ) -> Self {
        let b = Grid::from_fn(n_rows, n_cols, |_, _| {
            S::uniform(rng, S::of(1e-3), S::of(1e-2))
        });
        Self::from_levels(b, alpha)
    }

    pub fn levels(&self) -> &Grid<S> {
        &self.b
    }

    /// The gamma-MRF auxiliary field.
    pub fn auxiliaries(&self) -> &Grid<S> {
        &self.w
    }

    pub fn level(&self, pixel: Pixel) -> S {
        self.b[(pixel.r as usize, pixel.c as usize)]
    }

    pub fn set_level(&mut self, pixel: Pixel, value: S) {
        self.b[(pixel.r as usize, pixel.c as usize)] = value;
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }

    pub fn accumulated_sweeps(&self) -> u64 {
        self.acc_count
    }

    /// Add the current levels to the MMSE accumulator.
    pub fn mmse_accumulate(&mut self) {
        for (acc, b) in self.acc.as_mut_slice().iter_mut().zip(self.b.iter()) {
            *acc += *b;
        }
        self.acc_count += 1;
    }

    /// Elementwise mean of the accumulated samples.
    pub fn mmse_estimate(&self) -> Result<Grid<S>, BackgroundError> {
        if self.acc_count == 0 {
            return Err(BackgroundError::NoSamples);
        }
        let n = S::of_usize(self.acc_count as usize);
        Ok(Grid::from_vec(
            self.acc.n_rows(),
            self.acc.n_cols(),
            self.acc.iter().map(|&v| v / n).collect(),
        ))
    }
}

/// Arithmetic mean of the levels over the 5-cell neighbourhood of the
/// auxiliary at (r, c).
fn w_bar<S: Real>(b: &Grid<S>, r: usize, c: usize) -> S {
    let mut sum = S::zero();
    let mut n = 0usize;
    for (rr, cc) in b.cross_neighbourhood(r, c) {
        sum += b[(rr, cc)];
        n += 1;
    }
    sum / S::of_usize(n)
}

/// Harmonic mean of the auxiliaries over the 5-cell neighbourhood of the
/// level at (r, c).
fn b_bar<S: Real>(w: &Grid<S>, r: usize, c: usize) -> S {
    let mut sum = S::zero();
    let mut n = 0usize;
    for (rr, cc) in w.cross_neighbourhood(r, c) {
        sum += w[(rr, cc)].recip();
        n += 1;
    }
    S::of_usize(n) / sum
}

/// Photons of one pixel attributed to the background by thinning: stored
/// bins covered by a return are split binomially with probability
/// `b / (signal + b)` (one Poisson draw of the covered total above the
/// threshold); uncovered bins contribute their full counts.
pub fn thin_background_count<S: Real, R: Rng + ?Sized>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
    returns: &[Return<S>],
    b: S,
    pixel: Pixel,
    rng: &mut R,
) -> u64 {
    let hist = cube.pixel(pixel);
    let mut uncovered = 0u64;
    let mut covered: Vec<(u32, S)> = Vec::new();
    let mut covered_photons = 0u64;
    for &(bin, z) in hist {
        let signal = signal_at(returns, irf, bin as i64);
        if signal > S::zero() {
            covered.push((z, b / (signal + b)));
            covered_photons += z as u64;
        } else {
            uncovered += z as u64;
        }
    }
    let thinned = if covered_photons > POISSON_THINNING_THRESHOLD {
        let mean: S = covered
            .iter()
            .map(|&(z, p)| S::of_usize(z as usize) * p)
            .sum();
        S::poisson_draw(rng, mean)
    } else {
        covered
            .iter()
            .map(|&(z, p)| binomial_draw(rng, z as u64, p))
            .sum()
    };
    uncovered + thinned
}

/// One full background sweep: thin every pixel, redraw the auxiliaries, then
/// redraw every level from its gamma conditional. Returns the exact change
/// of the tracked log-posterior (likelihood plus marginal background prior).
pub fn gibbs_sweep<S: Real, R: Rng + ?Sized>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
    config: &PointConfiguration<S>,
    field: &mut BackgroundField<S>,
    rng: &mut R,
) -> S {
    let (n_rows, n_cols) = (cube.n_rows(), cube.n_cols());
    let alpha = field.alpha;
    let t_bins = S::of_usize(cube.n_bins());

    // Pass 1: photon thinning given the current levels.
    let mut bg_counts = vec![0u64; n_rows * n_cols];
    for r in 0..n_rows {
        for c in 0..n_cols {
            let pixel = Pixel::new(r, c);
            let returns = active_returns(config, pixel);
            bg_counts[r * n_cols + c] =
                thin_background_count(cube, irf, &returns, field.b[(r, c)], pixel, rng);
        }
    }

    // Pass 2: auxiliaries given the levels.
    for r in 0..n_rows {
        for c in 0..n_cols {
            let scale = alpha * w_bar(&field.b, r, c);
            field.w[(r, c)] = inverse_gamma_draw(rng, alpha, scale);
        }
    }

    // Pass 3: levels given auxiliaries and thinned counts.
    let mut delta = S::zero();
    for r in 0..n_rows {
        for c in 0..n_cols {
            let pixel = Pixel::new(r, c);
            let g = cube.gain(pixel);
            let shape = alpha + S::of_usize(bg_counts[r * n_cols + c] as usize);
            let rate = g * t_bins + alpha / b_bar(&field.w, r, c);
            let b_new = S::gamma_draw(rng, shape, rate.recip());

            let view =
                PixelRateView::from_config(cube, irf, config, field.b[(r, c)], pixel);
            delta += delta_background_edit(cube, irf, &view, b_new);
            delta += background_marginal_delta(&field.b, pixel, b_new, alpha);
            field.b[(r, c)] = b_new;
        }
    }
    delta
}

/// Single-pixel restriction of the sweep with every other pixel frozen:
/// thin, redraw this pixel's auxiliary, redraw this pixel's level. Used by
/// the stationarity checks.
pub fn sweep_single_pixel<S: Real, R: Rng + ?Sized>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
    config: &PointConfiguration<S>,
    field: &mut BackgroundField<S>,
    pixel: Pixel,
    rng: &mut R,
) {
    let (r, c) = (pixel.r as usize, pixel.c as usize);
    let returns = active_returns(config, pixel);
    let n_b = thin_background_count(cube, irf, &returns, field.b[(r, c)], pixel, rng);
    let alpha = field.alpha;
    field.w[(r, c)] = inverse_gamma_draw(rng, alpha, alpha * w_bar(&field.b, r, c));
    let g = cube.gain(pixel);
    let shape = alpha + S::of_usize(n_b as usize);
    let rate = g * S::of_usize(cube.n_bins()) + alpha / b_bar(&field.w, r, c);
    field.b[(r, c)] = S::gamma_draw(rng, shape, rate.recip());
}

/// Replicate a coarse background to the fine grid, dividing by the window
/// area (a coarse histogram aggregates that many fine pixels).
pub fn upsample_background<S: Real>(
    coarse: &Grid<S>,
    window: usize,
    fine_rows: usize,
    fine_cols: usize,
) -> Grid<S> {
    let scale = S::of_usize(window * window);
    Grid::from_fn(fine_rows, fine_cols, |r, c| {
        coarse[((r / window).min(coarse.n_rows() - 1), (c / window).min(coarse.n_cols() - 1))]
            / scale
    })
}
