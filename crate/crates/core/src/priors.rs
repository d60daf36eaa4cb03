//! Prior log-densities and their exact increments: the hard-core (Strauss)
//! constraint, the area-interaction term over influence cuboids, the GMRF
//! log-intensity prior with local precision-determinant windows, and the
//! marginal gamma-MRF background density.
//!
//! The area measure is normalized so one isolated cuboid has measure 1, which
//! makes the attraction hyperparameter scale-free. Cuboids extend past the
//! image border rather than being clipped, keeping that normalization exact
//! for border points.

use thiserror::Error;

use crate::grid::{Grid, Pixel};
use crate::linalg::SymMatrix;
use crate::point_cloud::{distance, Geometry, PointConfiguration, PointId};
use crate::Real;

#[derive(Debug, Error)]
pub enum HyperError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("gamma_a must be >= 1")]
    GammaBelowOne,
    #[error("alpha_b must be >= 1")]
    AlphaBelowOne,
    #[error("d_min must exceed 2*N_b (got d_min={d_min}, N_b={n_b})")]
    DminTooSmall { d_min: f64, n_b: f64 },
    #[error("N_p must be odd and >= 3")]
    BadNp,
}

/// Fixed model constants.
#[derive(Debug, Clone, Copy)]
pub struct HyperParameters<S> {
    /// Area-interaction attraction, >= 1.
    pub gamma_a: S,
    /// Point-count control of the area-interaction process.
    pub lambda_a: S,
    /// Hard-core minimum same-pixel separation in bins.
    pub d_min: S,
    /// Influence cuboid face width in pixels (odd).
    pub n_p: u32,
    /// Influence cuboid depth half-width in bins.
    pub n_b: S,
    /// Mark smoothness of the GMRF.
    pub sigma2: S,
    /// Properness term of the GMRF precision diagonal.
    pub beta: S,
    /// Background gamma-MRF smoothness, >= 1.
    pub alpha_b: S,
    /// Depth bins per pixel pitch.
    pub l_z: S,
}

impl<S: Real> HyperParameters<S> {
    /// Defaults per scale: coarse uses a weaker attraction and a larger mark
    /// variance than the finest scale.
    ///
    /// `lambda_a` is the total mass of the point-process reference over the
    /// admissible volume; `0.2 (rows*cols)^1.5` keeps the per-pixel-bin
    /// reference intensity around `0.2 sqrt(pixels)/T`, low enough that
    /// sub-photon phantom returns stay rare while multi-photon returns are
    /// carried comfortably by their likelihood gain.
    pub fn recommended(n_rows: usize, n_cols: usize, n_b: S, l_z: S, finest: bool) -> Self {
        let pixels = S::of_usize(n_rows * n_cols);
        let sigma2 = if finest { S::of(0.36 / 3.0) } else { S::of(0.36) };
        Self {
            gamma_a: if finest { S::of(3.0).exp() } else { S::of(2.0).exp() },
            lambda_a: S::of(0.2) * pixels.powf(S::of(1.5)),
            d_min: S::of(2.0) * n_b + S::one(),
            n_p: 3,
            n_b,
            sigma2,
            beta: sigma2 / S::of(100.0),
            alpha_b: S::of(2.0),
            l_z,
        }
    }

    pub fn validate(&self) -> Result<(), HyperError> {
        for (name, v) in [
            ("lambda_a", self.lambda_a),
            ("d_min", self.d_min),
            ("sigma2", self.sigma2),
            ("beta", self.beta),
            ("l_z", self.l_z),
        ] {
            if v <= S::zero() {
                return Err(HyperError::NotPositive(name));
            }
        }
        if self.n_b < S::zero() {
            return Err(HyperError::NotPositive("n_b"));
        }
        if self.gamma_a < S::one() {
            return Err(HyperError::GammaBelowOne);
        }
        if self.alpha_b < S::one() {
            return Err(HyperError::AlphaBelowOne);
        }
        if self.d_min <= S::of(2.0) * self.n_b {
            return Err(HyperError::DminTooSmall {
                d_min: self.d_min.to_f64().unwrap_or(f64::NAN),
                n_b: self.n_b.to_f64().unwrap_or(f64::NAN),
            });
        }
        if self.n_p < 3 || self.n_p.is_multiple_of(2) {
            return Err(HyperError::BadNp);
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry<S> {
        Geometry {
            pixel_halfwidth: (self.n_p - 1) / 2,
            n_b: self.n_b,
            d_min: self.d_min,
            l_z: self.l_z,
        }
    }

    /// Depth half-length of the influence cuboid: (2*N_b + 1) / 2.
    #[inline]
    pub fn cuboid_halfdepth(&self) -> S {
        self.n_b + S::of(0.5)
    }

    /// Normalizing volume: one isolated cuboid has measure 1.
    #[inline]
    fn cuboid_volume(&self) -> S {
        let w = S::of_usize(self.n_p as usize);
        w * w * (S::of(2.0) * self.n_b + S::one())
    }
}

/// Hard-core log-density: 0 when all same-pixel pairs are at least `d_min`
/// apart, -inf otherwise. Pixel lists are depth-sorted, so adjacent entries
/// suffice.
pub fn strauss_log_density<S: Real>(config: &PointConfiguration<S>, d_min: S) -> S {
    for r in 0..config.n_rows() {
        for c in 0..config.n_cols() {
            let ids = config.points_in(Pixel::new(r, c));
            for pair in ids.windows(2) {
                if (config.t_of(pair[1]) - config.t_of(pair[0])).abs() < d_min {
                    return S::neg_infinity();
                }
            }
        }
    }
    S::zero()
}

/// Total length of a union of 1-D intervals.
fn union_length<S: Real>(intervals: &mut [(S, S)]) -> S {
    if intervals.is_empty() {
        return S::zero();
    }
    intervals.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut total = S::zero();
    let (mut lo, mut hi) = intervals[0];
    for &(a, b) in intervals.iter().skip(1) {
        if a > hi {
            total += hi - lo;
            lo = a;
            hi = b;
        } else if b > hi {
            hi = b;
        }
    }
    total + (hi - lo)
}

/// Points whose influence cuboid can intersect the cuboid of a return at
/// (`pixel`, `t`): pixel Chebyshev distance <= N_p - 1 and depth gap below
/// the full cuboid depth.
fn overlap_candidates<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
    pixel: Pixel,
    t: S,
    exclude: &[PointId],
) -> Vec<PointId> {
    let reach = (hyper.n_p - 1) as i64;
    let depth_reach = S::of(2.0) * hyper.cuboid_halfdepth();
    let mut out = Vec::new();
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let (r, c) = (pixel.r as i64 + dr, pixel.c as i64 + dc);
            if r < 0 || r as usize >= config.n_rows() || c < 0 || c as usize >= config.n_cols() {
                continue;
            }
            for &id in config.points_in(Pixel { r: r as u32, c: c as u32 }) {
                if exclude.contains(&id) {
                    continue;
                }
                if (config.t_of(id) - t).abs() < depth_reach {
                    out.push(id);
                }
            }
        }
    }
    out
}

/// Measure of `S(c) \ union of the other points' cuboids`, in units of one
/// cuboid volume. An isolated return yields exactly 1. `exclude` removes ids
/// from the covering set (the point itself when it is already stored).
pub fn uncovered_measure<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
    pixel: Pixel,
    t: S,
    exclude: &[PointId],
) -> S {
    let w = ((hyper.n_p - 1) / 2) as i64;
    let h = hyper.cuboid_halfdepth();
    let candidates = overlap_candidates(config, hyper, pixel, t, exclude);
    let mut uncovered = S::zero();
    let mut intervals: Vec<(S, S)> = Vec::new();
    for dr in -w..=w {
        for dc in -w..=w {
            let (col_r, col_c) = (pixel.r as i64 + dr, pixel.c as i64 + dc);
            intervals.clear();
            for &id in &candidates {
                let p = config.pixel_of(id);
                if (p.r as i64 - col_r).abs() <= w && (p.c as i64 - col_c).abs() <= w {
                    let tc = config.t_of(id);
                    let lo = (tc - h).max(t - h);
                    let hi = (tc + h).min(t + h);
                    if hi > lo {
                        intervals.push((lo, hi));
                    }
                }
            }
            uncovered += S::of(2.0) * h - union_length(&mut intervals);
        }
    }
    uncovered / hyper.cuboid_volume()
}

/// Measure of the union of all influence cuboids, in cuboid-volume units.
/// Used by from-scratch density evaluation; the sampler only ever needs the
/// increments above.
pub fn total_union_measure<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
) -> S {
    let w = ((hyper.n_p - 1) / 2) as i64;
    let h = hyper.cuboid_halfdepth();
    let mut columns = std::collections::BTreeMap::<(i64, i64), Vec<(S, S)>>::new();
    let mut ids = config.ids().to_vec();
    ids.sort_unstable();
    for id in ids {
        let p = config.pixel_of(id);
        let t = config.t_of(id);
        for dr in -w..=w {
            for dc in -w..=w {
                columns
                    .entry((p.r as i64 + dr, p.c as i64 + dc))
                    .or_default()
                    .push((t - h, t + h));
            }
        }
    }
    let mut total = S::zero();
    for (_, mut intervals) in columns {
        total += union_length(&mut intervals);
    }
    total / hyper.cuboid_volume()
}

/// Area-interaction log-density (up to its intractable constant):
/// `N log(lambda_a) - log(gamma_a) * m(union of cuboids)`.
pub fn area_log_density<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
) -> S {
    S::of_usize(config.len()) * hyper.lambda_a.ln()
        - hyper.gamma_a.ln() * total_union_measure(config, hyper)
}

/// Log-density change of adding a return at (`pixel`, `t`) to the current
/// configuration: `log lambda_a - log gamma_a * m(S(c) \ union of others)`.
pub fn area_interaction_add_delta<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
    pixel: Pixel,
    t: S,
) -> S {
    hyper.lambda_a.ln() - hyper.gamma_a.ln() * uncovered_measure(config, hyper, pixel, t, &[])
}

/// Log-density change of removing a stored return (negative of the add delta
/// in the configuration without it).
pub fn area_interaction_remove_delta<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
    id: PointId,
) -> S {
    let pixel = config.pixel_of(id);
    let t = config.t_of(id);
    -(hyper.lambda_a.ln()
        - hyper.gamma_a.ln() * uncovered_measure(config, hyper, pixel, t, &[id]))
}

/// Log-density change of moving a stored return to `t_new` within its pixel.
pub fn area_interaction_shift_delta<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
    id: PointId,
    t_new: S,
) -> S {
    let pixel = config.pixel_of(id);
    let old = uncovered_measure(config, hyper, pixel, config.t_of(id), &[id]);
    let new = uncovered_measure(config, hyper, pixel, t_new, &[id]);
    hyper.gamma_a.ln() * (old - new)
}

/// With `gamma_a = 1` the area-interaction density must depend on the count
/// only: checks `f2 == N log(lambda_a)` exactly.
pub fn gamma_a_one_reduction_check<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
) -> bool {
    hyper.gamma_a == S::one()
        && area_log_density(config, hyper) == S::of_usize(config.len()) * hyper.lambda_a.ln()
}

/// Unnormalized GMRF conditional log-density of mark `m` for a return at
/// (`pixel`, `t`) with the given neighbours:
/// `-(1/2 sigma^2) (sum (m - m')^2 / d + beta m^2)`.
pub fn gmrf_conditional_log_density<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
    pixel: Pixel,
    t: S,
    neighbours: &[PointId],
    m: S,
) -> S {
    let mut quad = hyper.beta * m * m;
    for &nb in neighbours {
        let d = distance(pixel, t, config.pixel_of(nb), config.t_of(nb), hyper.l_z);
        let diff = m - config.m_of(nb);
        quad += diff * diff / d;
    }
    -quad / (S::of(2.0) * hyper.sigma2)
}

/// Mean and variance of the GMRF conditional at (`pixel`, `t`) given the
/// neighbours; used as the dilation mark proposal.
pub fn gmrf_conditional_moments<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
    pixel: Pixel,
    t: S,
    neighbours: &[PointId],
) -> (S, S) {
    let mut precision = hyper.beta;
    let mut weighted = S::zero();
    for &nb in neighbours {
        let d = distance(pixel, t, config.pixel_of(nb), config.t_of(nb), hyper.l_z);
        precision += d.recip();
        weighted += config.m_of(nb) / d;
    }
    (weighted / precision, hyper.sigma2 / precision)
}

/// Log-density of a Gaussian with the given mean/variance at `x`.
pub fn gaussian_log_density<S: Real>(x: S, mean: S, variance: S) -> S {
    let diff = x - mean;
    -(diff * diff) / (S::of(2.0) * variance)
        - S::of(0.5) * (S::of(2.0) * S::PI() * variance).ln()
}

/// GMRF quadratic form `beta sum m^2 + sum_edges (m - m')^2 / d` of a whole
/// configuration (pairwise expansion of `m' P m`).
pub fn gmrf_quadratic_form<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
) -> S {
    let mut quad = S::zero();
    let mut ids = config.ids().to_vec();
    ids.sort_unstable();
    for &id in &ids {
        let m = config.m_of(id);
        quad += hyper.beta * m * m;
        for &nb in config.neighbours(id) {
            if nb > id {
                let diff = m - config.m_of(nb);
                quad += diff * diff / config.distance_between(id, nb);
            }
        }
    }
    quad
}

/// Unnormalized GMRF joint log-density without the determinant term:
/// `-quad/(2 sigma^2) - (N/2) log(2 pi sigma^2)`.
pub fn gmrf_log_density_no_det<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
) -> S {
    let n = S::of_usize(config.len());
    -gmrf_quadratic_form(config, hyper) / (S::of(2.0) * hyper.sigma2)
        - n / S::of(2.0) * (S::of(2.0) * S::PI() * hyper.sigma2).ln()
}

/// Log-determinant of the unscaled precision matrix restricted to `members`
/// (sorted, deduplicated internally). Diagonal entries use the true full
/// neighbour sums; off-diagonal couplings are kept only inside the window.
pub fn window_log_det<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
    members: &[PointId],
) -> S {
    let mut members: Vec<PointId> = members.to_vec();
    members.sort_unstable();
    members.dedup();
    let index = |id: PointId| members.binary_search(&id).ok();
    let mut mat = SymMatrix::zeros(members.len());
    for (i, &id) in members.iter().enumerate() {
        let mut diag = hyper.beta;
        for &nb in config.neighbours(id) {
            let d = config.distance_between(id, nb);
            diag += d.recip();
            if let Some(j) = index(nb) {
                if j > i {
                    mat.set(i, j, -d.recip());
                }
            }
        }
        mat.set(i, i, diag);
    }
    mat.log_det_spd()
}

/// Log-determinant of the full unscaled precision matrix (exact reference for
/// the windowed approximation; cost grows cubically with the point count).
pub fn full_precision_log_det<S: Real>(
    config: &PointConfiguration<S>,
    hyper: &HyperParameters<S>,
) -> S {
    let mut ids = config.ids().to_vec();
    ids.sort_unstable();
    window_log_det(config, hyper, &ids)
}

/// Marginal gamma-MRF log-density of the background image, up to a constant:
/// `sum (alpha-1) log b - alpha log(sum over the 5-cell neighbourhood of b)`.
/// Returns -inf for any non-positive level.
pub fn background_marginal_log_density<S: Real>(b: &Grid<S>, alpha: S) -> S {
    let mut total = S::zero();
    for (r, c, &v) in b.enumerate() {
        if v <= S::zero() {
            return S::neg_infinity();
        }
        let nbr_sum: S = b.cross_neighbourhood(r, c).map(|(rr, cc)| b[(rr, cc)]).sum();
        total += (alpha - S::one()) * v.ln() - alpha * nbr_sum.ln();
    }
    total
}

/// Exact change of the marginal background log-density when one pixel moves
/// from its current level to `b_new`: the pixel's own factor plus the
/// neighbourhood-sum factors it participates in.
pub fn background_marginal_delta<S: Real>(
    b: &Grid<S>,
    pixel: Pixel,
    b_new: S,
    alpha: S,
) -> S {
    let (r, c) = (pixel.r as usize, pixel.c as usize);
    let b_old = b[(r, c)];
    if b_new <= S::zero() {
        return S::neg_infinity();
    }
    let mut delta = (alpha - S::one()) * (b_new.ln() - b_old.ln());
    for (rr, cc) in b.cross_neighbourhood(r, c) {
        let sum_old: S = b.cross_neighbourhood(rr, cc).map(|(i, j)| b[(i, j)]).sum();
        let sum_new = sum_old - b_old + b_new;
        delta -= alpha * (sum_new.ln() - sum_old.ln());
    }
    delta
}
