//! Lidar data model: instrument response, sparse histogram cubes, ground
//! truth scenes, synthetic generation, spatial binning and the log-matched
//! filter baseline.

pub mod io;
pub mod scenes;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{Grid, Pixel};
use crate::Real;

/// Relative negligibility threshold for the impulse-response support:
/// epsilon = `IRF_EPSILON_FACTOR * max(h)`.
pub const IRF_EPSILON_FACTOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("impulse response is empty or has no positive sample")]
    EmptyIrf,
    #[error("impulse response sample {index} is negative")]
    NegativeIrfSample { index: usize },
    #[error("cube dimensions must be positive")]
    EmptyCube,
    #[error("pixel ({r},{c}) bin {bin} outside [1,{t_bins}]")]
    BinOutOfRange { r: usize, c: usize, bin: i64, t_bins: usize },
    #[error("pixel ({r},{c}): bins not strictly increasing")]
    UnsortedBins { r: usize, c: usize },
    #[error("pixel ({r},{c}): stored count of zero")]
    ZeroCount { r: usize, c: usize },
    #[error("scene point at pixel ({r},{c}) has non-positive intensity")]
    NonPositiveIntensity { r: usize, c: usize },
    #[error("scene has two points with surface id {surface} in pixel ({r},{c})")]
    DuplicateSurfacePoint { r: usize, c: usize, surface: u32 },
    #[error("scene point at pixel ({r},{c}) rounds to bin {bin}, outside [1,{t_bins}]")]
    PointOutsideCube { r: usize, c: usize, bin: i64, t_bins: usize },
    #[error("negative background at pixel ({r},{c})")]
    NegativeBackground { r: usize, c: usize },
}

/// Sampled temporal instrument response.
///
/// Offsets are relative to the response maximum: a return at depth `t`
/// contributes `r * h(bin - round(t))` for offsets in `[-attack, decay]`.
/// Samples are trimmed at construction to the epsilon-support.
#[derive(Debug, Clone)]
pub struct ImpulseResponse<S> {
    samples: Vec<S>,
    peak: usize,
    epsilon: S,
    total_sum: S,
    /// Prefix sums of `samples`: prefix[k] = sum of samples[..k].
    prefix: Vec<S>,
    /// Matched-filter kernel ln(h/epsilon) on the support, 0 where h <= epsilon.
    log_weights: Vec<S>,
    sum_log_weights: S,
}

impl<S: Real> ImpulseResponse<S> {
    pub fn new(raw: Vec<S>) -> Result<Self, DataError> {
        if let Some(index) = raw.iter().position(|v| *v < S::zero()) {
            return Err(DataError::NegativeIrfSample { index });
        }
        let max = raw.iter().cloned().fold(S::zero(), S::max);
        if raw.is_empty() || max <= S::zero() {
            return Err(DataError::EmptyIrf);
        }
        let epsilon = max * S::of(IRF_EPSILON_FACTOR);
        let first = raw.iter().position(|v| *v > epsilon).unwrap();
        let last = raw.iter().rposition(|v| *v > epsilon).unwrap();
        let samples: Vec<S> = raw[first..=last].to_vec();
        let peak = samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let mut prefix = Vec::with_capacity(samples.len() + 1);
        let mut acc = S::zero();
        prefix.push(acc);
        for v in &samples {
            acc += *v;
            prefix.push(acc);
        }
        let log_weights: Vec<S> = samples
            .iter()
            .map(|&v| if v > epsilon { (v / epsilon).ln() } else { S::zero() })
            .collect();
        let sum_log_weights = log_weights.iter().cloned().sum();
        Ok(Self { samples, peak, epsilon, total_sum: acc, prefix, log_weights, sum_log_weights })
    }

    /// Bins from the first support sample to the maximum.
    pub fn attack(&self) -> usize {
        self.peak
    }

    /// Bins from the maximum to the last support sample.
    pub fn decay(&self) -> usize {
        self.samples.len() - 1 - self.peak
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    pub fn epsilon(&self) -> S {
        self.epsilon
    }

    pub fn total_sum(&self) -> S {
        self.total_sum
    }

    pub fn sum_log_weights(&self) -> S {
        self.sum_log_weights
    }

    /// `h(offset)` with `offset = bin - round(t)`; zero outside the support.
    #[inline]
    pub fn value_at(&self, offset: i64) -> S {
        let idx = offset + self.peak as i64;
        if idx < 0 || idx >= self.samples.len() as i64 {
            S::zero()
        } else {
            self.samples[idx as usize]
        }
    }

    /// Matched-filter kernel `ln(h/epsilon)` at an offset; zero outside.
    #[inline]
    pub fn log_weight_at(&self, offset: i64) -> S {
        let idx = offset + self.peak as i64;
        if idx < 0 || idx >= self.log_weights.len() as i64 {
            S::zero()
        } else {
            self.log_weights[idx as usize]
        }
    }

    /// Support bin range `[centre - attack, centre + decay]` clipped to `[1, t_bins]`.
    #[inline]
    pub fn support_bins(&self, centre: i64, t_bins: usize) -> std::ops::RangeInclusive<i64> {
        let lo = (centre - self.attack() as i64).max(1);
        let hi = (centre + self.decay() as i64).min(t_bins as i64);
        lo..=hi
    }

    /// Sum of `h` over the support bins that fall inside `[1, t_bins]` for a
    /// return centred at `centre` (the rounded depth).
    pub fn clipped_sum(&self, centre: i64, t_bins: usize) -> S {
        let lo = (1 - centre + self.peak as i64).clamp(0, self.samples.len() as i64);
        let hi = (t_bins as i64 - centre + self.peak as i64 + 1).clamp(0, self.samples.len() as i64);
        if hi <= lo {
            S::zero()
        } else {
            self.prefix[hi as usize] - self.prefix[lo as usize]
        }
    }

    /// Same response with every sample scaled by `factor`.
    pub fn scaled(&self, factor: S) -> Self {
        let raw: Vec<S> = self.samples.iter().map(|&v| v * factor).collect();
        Self::new(raw).expect("scaling a valid response keeps it valid")
    }
}

/// Sparse lidar observation: per-pixel sorted `(bin, count)` lists with cube
/// metadata. Zero-count bins are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLidarCube<S> {
    n_rows: usize,
    n_cols: usize,
    n_bins: usize,
    /// Row-major per-pixel histograms: 1-based bin, count >= 1, bins strictly increasing.
    pixels: Vec<Vec<(u32, u32)>>,
    gain: Grid<S>,
    bin_width: S,
    pixel_pitch: S,
    /// Cached per-pixel photon totals.
    pixel_counts: Vec<u64>,
}

impl<S: Real> SparseLidarCube<S> {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        n_bins: usize,
        pixels: Vec<Vec<(u32, u32)>>,
        gain: Grid<S>,
        bin_width: S,
        pixel_pitch: S,
    ) -> Result<Self, DataError> {
        if n_rows == 0 || n_cols == 0 || n_bins == 0 {
            return Err(DataError::EmptyCube);
        }
        assert_eq!(pixels.len(), n_rows * n_cols);
        assert_eq!(gain.n_rows(), n_rows);
        assert_eq!(gain.n_cols(), n_cols);
        let mut pixel_counts = Vec::with_capacity(pixels.len());
        for (idx, hist) in pixels.iter().enumerate() {
            let (r, c) = (idx / n_cols, idx % n_cols);
            let mut prev = 0u32;
            let mut total = 0u64;
            for &(bin, count) in hist {
                if bin < 1 || bin as usize > n_bins {
                    return Err(DataError::BinOutOfRange { r, c, bin: bin as i64, t_bins: n_bins });
                }
                if bin <= prev {
                    return Err(DataError::UnsortedBins { r, c });
                }
                if count == 0 {
                    return Err(DataError::ZeroCount { r, c });
                }
                prev = bin;
                total += count as u64;
            }
            pixel_counts.push(total);
        }
        Ok(Self { n_rows, n_cols, n_bins, pixels, gain, bin_width, pixel_pitch, pixel_counts })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_pixels(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn bin_width(&self) -> S {
        self.bin_width
    }

    pub fn pixel_pitch(&self) -> S {
        self.pixel_pitch
    }

    /// Depth-bin length of one pixel pitch: `l_z = pixel_pitch / bin_width`.
    pub fn l_z(&self) -> S {
        self.pixel_pitch / self.bin_width
    }

    #[inline]
    pub fn pixel(&self, pix: Pixel) -> &[(u32, u32)] {
        &self.pixels[pix.index(self.n_cols)]
    }

    #[inline]
    pub fn gain(&self, pix: Pixel) -> S {
        self.gain[(pix.r as usize, pix.c as usize)]
    }

    pub fn gain_grid(&self) -> &Grid<S> {
        &self.gain
    }

    #[inline]
    pub fn pixel_count(&self, pix: Pixel) -> u64 {
        self.pixel_counts[pix.index(self.n_cols)]
    }

    pub fn total_count(&self) -> u64 {
        self.pixel_counts.iter().sum()
    }

    pub fn mean_photons_per_pixel(&self) -> S {
        S::of_usize(self.total_count() as usize) / S::of_usize(self.n_pixels())
    }

    pub fn pixels_iter(&self) -> impl Iterator<Item = (Pixel, &[(u32, u32)])> {
        let n_cols = self.n_cols;
        self.pixels
            .iter()
            .enumerate()
            .map(move |(i, hist)| (Pixel::new(i / n_cols, i % n_cols), hist.as_slice()))
    }
}

/// One true surface return: pixel, real-valued depth bin, intensity, surface label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthPoint<S> {
    pub pixel: Pixel,
    pub t: S,
    pub intensity: S,
    pub surface: u32,
}

/// Ground-truth scene: surface returns plus a background image.
#[derive(Debug, Clone)]
pub struct GroundTruthScene<S> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub points: Vec<TruthPoint<S>>,
    pub background: Grid<S>,
}

impl<S: Real> GroundTruthScene<S> {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.points {
            let (r, c) = (p.pixel.r as usize, p.pixel.c as usize);
            if p.intensity <= S::zero() {
                return Err(DataError::NonPositiveIntensity { r, c });
            }
            if !seen.insert((p.pixel, p.surface)) {
                return Err(DataError::DuplicateSurfacePoint { r, c, surface: p.surface });
            }
        }
        for (r, c, b) in self.background.enumerate() {
            if *b < S::zero() {
                return Err(DataError::NegativeBackground { r, c });
            }
        }
        Ok(())
    }

    /// Mean signal photons per pixel this scene would produce under `irf`
    /// (unit gain, depth clipping included).
    pub fn signal_photons_per_pixel(&self, irf: &ImpulseResponse<S>, n_bins: usize) -> S {
        let total: S = self
            .points
            .iter()
            .map(|p| p.intensity * irf.clipped_sum(round_bin(p.t), n_bins))
            .sum();
        total / S::of_usize(self.n_rows * self.n_cols)
    }

    /// Mean background photons per pixel over the full depth range.
    pub fn background_photons_per_pixel(&self, n_bins: usize) -> S {
        let total: S = self.background.iter().cloned().sum();
        total * S::of_usize(n_bins) / S::of_usize(self.n_rows * self.n_cols)
    }

    /// Scale all point intensities and background levels.
    pub fn scale_budget(&mut self, signal_factor: S, background_factor: S) {
        for p in &mut self.points {
            p.intensity *= signal_factor;
        }
        for b in self.background.as_mut_slice() {
            *b *= background_factor;
        }
    }
}

/// Physical cube metadata used when generating observations.
#[derive(Debug, Clone, Copy)]
pub struct CubeGeometry<S> {
    pub n_bins: usize,
    pub bin_width: S,
    pub pixel_pitch: S,
}

#[inline]
pub fn round_bin<S: Real>(t: S) -> i64 {
    t.round().to_i64().unwrap_or(0)
}

/// Draw a Poisson observation of the scene.
///
/// Per pixel and bin the count is Poisson with rate
/// `g * (sum_n r_n h(bin - round(t_n)) + b)`; background photons are drawn as
/// one aggregated Poisson total and placed uniformly over bins (the splitting
/// construction of the same law). Deterministic given `seed`.
pub fn generate_cube<S: Real>(
    scene: &GroundTruthScene<S>,
    irf: &ImpulseResponse<S>,
    gain: Option<&Grid<S>>,
    geom: CubeGeometry<S>,
    seed: u64,
) -> Result<SparseLidarCube<S>, DataError> {
    scene.validate()?;
    let (n_rows, n_cols, t_bins) = (scene.n_rows, scene.n_cols, geom.n_bins);
    let gain_grid = match gain {
        Some(g) => g.clone(),
        None => Grid::fill(n_rows, n_cols, S::one()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Group points per pixel; deterministic order.
    let mut by_pixel: Vec<Vec<&TruthPoint<S>>> = vec![Vec::new(); n_rows * n_cols];
    for p in &scene.points {
        let centre = round_bin(p.t);
        if centre < 1 || centre > t_bins as i64 {
            return Err(DataError::PointOutsideCube {
                r: p.pixel.r as usize,
                c: p.pixel.c as usize,
                bin: centre,
                t_bins,
            });
        }
        by_pixel[p.pixel.index(n_cols)].push(p);
    }

    let mut pixels = Vec::with_capacity(n_rows * n_cols);
    for r in 0..n_rows {
        for c in 0..n_cols {
            let g = gain_grid[(r, c)];
            let mut hist = std::collections::BTreeMap::<u32, u32>::new();
            // Aggregated background photons, uniform over bins.
            let b = scene.background[(r, c)];
            let n_bg = S::poisson_draw(&mut rng, g * b * S::of_usize(t_bins));
            for _ in 0..n_bg {
                let bin: u32 = rng.random_range(1..=t_bins as u32);
                *hist.entry(bin).or_insert(0) += 1;
            }
            // Per-bin Poisson draws over each return's clipped support.
            for p in &by_pixel[r * n_cols + c] {
                let centre = round_bin(p.t);
                for bin in irf.support_bins(centre, t_bins) {
                    let rate = g * p.intensity * irf.value_at(bin - centre);
                    let n = S::poisson_draw(&mut rng, rate);
                    if n > 0 {
                        *hist.entry(bin as u32).or_insert(0) += n as u32;
                    }
                }
            }
            pixels.push(hist.into_iter().collect());
        }
    }

    SparseLidarCube::new(n_rows, n_cols, t_bins, pixels, gain_grid, geom.bin_width, geom.pixel_pitch)
}

/// Sum histograms over `window x window` pixel blocks. Partial blocks at the
/// right/bottom edges are summed as-is, so total photon counts are preserved
/// exactly; gains are averaged over the actual block membership.
pub fn bin_cube<S: Real>(cube: &SparseLidarCube<S>, window: usize) -> SparseLidarCube<S> {
    assert!(window >= 1, "binning window must be >= 1");
    if window == 1 {
        return cube.clone();
    }
    let out_rows = cube.n_rows.div_ceil(window);
    let out_cols = cube.n_cols.div_ceil(window);
    let mut pixels = Vec::with_capacity(out_rows * out_cols);
    let mut gains = Vec::with_capacity(out_rows * out_cols);
    for out_r in 0..out_rows {
        for out_c in 0..out_cols {
            let mut hist = std::collections::BTreeMap::<u32, u32>::new();
            let mut gain_sum = S::zero();
            let mut members = 0usize;
            for r in out_r * window..((out_r + 1) * window).min(cube.n_rows) {
                for c in out_c * window..((out_c + 1) * window).min(cube.n_cols) {
                    let pix = Pixel::new(r, c);
                    for &(bin, count) in cube.pixel(pix) {
                        *hist.entry(bin).or_insert(0) += count;
                    }
                    gain_sum += cube.gain(pix);
                    members += 1;
                }
            }
            pixels.push(hist.into_iter().collect());
            gains.push(gain_sum / S::of_usize(members));
        }
    }
    SparseLidarCube::new(
        out_rows,
        out_cols,
        cube.n_bins,
        pixels,
        Grid::from_vec(out_rows, out_cols, gains),
        cube.bin_width,
        cube.pixel_pitch * S::of_usize(window),
    )
    .expect("binned cube from a valid cube is valid")
}

/// Per-pixel log-matched filter output.
#[derive(Debug, Clone)]
pub struct MatchedFilterOutput<S> {
    /// Estimated depth bin; `None` flags pixels without photons.
    pub depth: Grid<Option<u32>>,
    /// Corrected intensity estimate (clamped at zero).
    pub intensity: Grid<S>,
    /// Background estimate (photons per bin per unit gain).
    pub background: Grid<S>,
}

/// Matched-filter score of the histogram against the kernel `ln(h/epsilon)`
/// centred at `centre`. Shared by the baseline estimator and the
/// multiresolution thresholding step.
pub fn matched_filter_scores<S: Real>(
    hist: &[(u32, u32)],
    irf: &ImpulseResponse<S>,
    t_bins: usize,
) -> Vec<S> {
    let mut scores = vec![S::zero(); t_bins + 1];
    let (attack, decay) = (irf.attack() as i64, irf.decay() as i64);
    for &(bin, count) in hist {
        let bin = bin as i64;
        let lo = (bin - decay).max(1);
        let hi = (bin + attack).min(t_bins as i64);
        for centre in lo..=hi {
            scores[centre as usize] += S::of_usize(count as usize) * irf.log_weight_at(bin - centre);
        }
    }
    scores
}

/// Classical log-matched filtering baseline: per pixel, the depth maximising
/// the matched-filter score, intensity from photons inside the response
/// support, background from the residual photons outside it.
pub fn log_matched_filter<S: Real>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
) -> MatchedFilterOutput<S> {
    assert!(!irf.is_empty(), "impulse response has empty support");
    let (n_rows, n_cols, t_bins) = (cube.n_rows(), cube.n_cols(), cube.n_bins());
    let mut depth = Grid::fill(n_rows, n_cols, None);
    let mut intensity = Grid::fill(n_rows, n_cols, S::zero());
    let mut background = Grid::fill(n_rows, n_cols, S::zero());

    for (pix, hist) in cube.pixels_iter() {
        let (r, c) = (pix.r as usize, pix.c as usize);
        if hist.is_empty() {
            continue;
        }
        let scores = matched_filter_scores(hist, irf, t_bins);
        let mut best = 1usize;
        for t in 2..=t_bins {
            if scores[t] > scores[best] {
                best = t;
            }
        }
        let t_hat = best as i64;
        let g = cube.gain(pix);

        let mut in_support = 0u64;
        for &(bin, count) in hist {
            let offset = bin as i64 - t_hat;
            if offset >= -(irf.attack() as i64) && offset <= irf.decay() as i64 {
                in_support += count as u64;
            }
        }
        let total = cube.pixel_count(pix);
        let support_bins = irf.support_bins(t_hat, t_bins).count();
        let outside_bins = t_bins - support_bins;
        let b_hat = if outside_bins > 0 {
            S::of_usize((total - in_support) as usize) / (g * S::of_usize(outside_bins))
        } else {
            S::zero()
        };
        let r_tilde = S::of_usize(in_support as usize) / (g * irf.total_sum());
        depth[(r, c)] = Some(t_hat as u32);
        intensity[(r, c)] = (r_tilde - b_hat).max(S::zero());
        background[(r, c)] = b_hat;
    }

    MatchedFilterOutput { depth, intensity, background }
}
