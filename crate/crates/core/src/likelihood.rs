//! Sparse Poisson log-likelihood evaluation and exact increments for
//! single-pixel edits. Only stored (non-empty) bins ever enter the log terms;
//! the linear term uses precomputed clipped response sums, so evaluation cost
//! is proportional to the photons in the touched pixel, not to the histogram
//! length. Factorial terms of the Poisson likelihood are dropped throughout
//! (they cancel in every ratio), so absolute values are comparable only
//! within a run.

use crate::grid::Pixel;
use crate::photon_data::{round_bin, ImpulseResponse, SparseLidarCube};
use crate::point_cloud::PointConfiguration;
use crate::Real;

/// An active return in a pixel: intensity and rounded centre bin.
pub type Return<S> = (S, i64);

/// Intensity/centre pairs of the stored points in `pixel`.
pub fn active_returns<S: Real>(config: &PointConfiguration<S>, pixel: Pixel) -> Vec<Return<S>> {
    config
        .points_in(pixel)
        .iter()
        .map(|&id| (config.m_of(id).exp(), round_bin(config.t_of(id))))
        .collect()
}

/// Signal rate (before gain, without background) at a bin.
#[inline]
pub fn signal_at<S: Real>(returns: &[Return<S>], irf: &ImpulseResponse<S>, bin: i64) -> S {
    let mut total = S::zero();
    for &(r, centre) in returns {
        total += r * irf.value_at(bin - centre);
    }
    total
}

/// Inclusive stored-bin ranges covered by the returns' response supports,
/// merged and clipped to `[1, t_bins]`.
fn merged_windows<S: Real>(
    returns: &[&[Return<S>]],
    irf: &ImpulseResponse<S>,
    t_bins: usize,
) -> Vec<(i64, i64)> {
    let mut ranges: Vec<(i64, i64)> = Vec::new();
    for set in returns {
        for &(_, centre) in *set {
            let range = irf.support_bins(centre, t_bins);
            let (lo, hi) = (*range.start(), *range.end());
            if lo <= hi {
                ranges.push((lo, hi));
            }
        }
    }
    ranges.sort_unstable();
    let mut merged: Vec<(i64, i64)> = Vec::new();
    for (lo, hi) in ranges {
        match merged.last_mut() {
            Some(last) if lo <= last.1 + 1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

/// Stored entries of `hist` with bins inside the inclusive range.
#[inline]
fn stored_in(hist: &[(u32, u32)], lo: i64, hi: i64) -> &[(u32, u32)] {
    let start = hist.partition_point(|&(bin, _)| (bin as i64) < lo);
    let end = hist.partition_point(|&(bin, _)| (bin as i64) <= hi);
    &hist[start..end]
}

/// Rates of one pixel under a hypothetical set of returns and background
/// level, with the cached linear term of the log-likelihood.
#[derive(Debug, Clone)]
pub struct PixelRateView<S> {
    pub pixel: Pixel,
    pub returns: Vec<Return<S>>,
    pub background: S,
    pub gain: S,
    /// `g * (sum_n r_n * clipped_sum_n + b * T)`.
    pub linear_term: S,
}

impl<S: Real> PixelRateView<S> {
    pub fn new(
        cube: &SparseLidarCube<S>,
        irf: &ImpulseResponse<S>,
        pixel: Pixel,
        returns: Vec<Return<S>>,
        background: S,
    ) -> Self {
        let gain = cube.gain(pixel);
        let linear_term = gain * (signal_mass(&returns, irf, cube.n_bins()) + background * S::of_usize(cube.n_bins()));
        Self { pixel, returns, background, gain, linear_term }
    }

    pub fn from_config(
        cube: &SparseLidarCube<S>,
        irf: &ImpulseResponse<S>,
        config: &PointConfiguration<S>,
        background: S,
        pixel: Pixel,
    ) -> Self {
        Self::new(cube, irf, pixel, active_returns(config, pixel), background)
    }

    /// Full rate `g * (signal + b)` at a bin.
    #[inline]
    pub fn rate_at(&self, irf: &ImpulseResponse<S>, bin: i64) -> S {
        self.gain * (signal_at(&self.returns, irf, bin) + self.background)
    }
}

#[inline]
fn signal_mass<S: Real>(returns: &[Return<S>], irf: &ImpulseResponse<S>, t_bins: usize) -> S {
    returns
        .iter()
        .map(|&(r, centre)| r * irf.clipped_sum(centre, t_bins))
        .sum()
}

/// Sparse log-likelihood of one pixel:
/// `sum_{stored bins} z log(g (signal + b)) - g (sum_n r_n S_n + b T)`,
/// factorial constants dropped. Returns -inf when a stored bin has zero rate.
pub fn pixel_log_likelihood<S: Real>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
    view: &PixelRateView<S>,
) -> S {
    let hist = cube.pixel(view.pixel);
    let t_bins = cube.n_bins();
    let mut log_sum = S::zero();
    let mut covered_z = 0u64;
    for (lo, hi) in merged_windows(&[&view.returns], irf, t_bins) {
        for &(bin, z) in stored_in(hist, lo, hi) {
            let rate = view.rate_at(irf, bin as i64);
            if rate <= S::zero() {
                return S::neg_infinity();
            }
            log_sum += S::of_usize(z as usize) * rate.ln();
            covered_z += z as u64;
        }
    }
    let uncovered_z = cube.pixel_count(view.pixel) - covered_z;
    if uncovered_z > 0 {
        let bg_rate = view.gain * view.background;
        if bg_rate <= S::zero() {
            return S::neg_infinity();
        }
        log_sum += S::of_usize(uncovered_z as usize) * bg_rate.ln();
    }
    log_sum - view.linear_term
}

/// Exact log-likelihood change of one pixel moving from `before` to `after`
/// (any combination of return edits and a background change). Cost is
/// proportional to the stored bins inside the union of both views' response
/// supports.
pub fn delta_pixel_edit<S: Real>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
    before: &PixelRateView<S>,
    after: &PixelRateView<S>,
) -> S {
    debug_assert_eq!(before.pixel, after.pixel);
    let hist = cube.pixel(before.pixel);
    let t_bins = cube.n_bins();
    let mut delta = S::zero();
    let mut covered_z = 0u64;
    for (lo, hi) in merged_windows(&[&before.returns, &after.returns], irf, t_bins) {
        for &(bin, z) in stored_in(hist, lo, hi) {
            let rate_new = after.rate_at(irf, bin as i64);
            if rate_new <= S::zero() {
                return S::neg_infinity();
            }
            let rate_old = before.rate_at(irf, bin as i64);
            delta += S::of_usize(z as usize) * (rate_new.ln() - rate_old.ln());
            covered_z += z as u64;
        }
    }
    let uncovered_z = cube.pixel_count(before.pixel) - covered_z;
    if uncovered_z > 0 && after.background != before.background {
        if after.background <= S::zero() {
            return S::neg_infinity();
        }
        delta += S::of_usize(uncovered_z as usize)
            * (after.background.ln() - before.background.ln());
    }
    delta - (after.linear_term - before.linear_term)
}

/// Log-likelihood change of a pure background edit in one pixel.
pub fn delta_background_edit<S: Real>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
    view: &PixelRateView<S>,
    b_new: S,
) -> S {
    let after = PixelRateView::new(cube, irf, view.pixel, view.returns.clone(), b_new);
    delta_pixel_edit(cube, irf, view, &after)
}

/// Full-cube log-likelihood: the sum of the independent per-pixel terms.
pub fn cube_log_likelihood<S: Real>(
    cube: &SparseLidarCube<S>,
    irf: &ImpulseResponse<S>,
    config: &PointConfiguration<S>,
    background: &crate::grid::Grid<S>,
) -> S {
    let mut total = S::zero();
    for (pix, _) in cube.pixels_iter() {
        let view = PixelRateView::from_config(
            cube,
            irf,
            config,
            background[(pix.r as usize, pix.c as usize)],
            pix,
        );
        total += pixel_log_likelihood(cube, irf, &view);
    }
    total
}
