//! Independent from-scratch evaluators for the acceptance suite: dense
//! log-likelihood over every histogram bin, brute-force union measure and
//! adjacency, full posterior assembly, move replay, and the Green-ratio
//! bookkeeping recomputed from plain state.

use lidarpp::grid::{Grid, Pixel};
use lidarpp::multires::AdmissibleSupport;
use lidarpp::photon_data::{ImpulseResponse, SparseLidarCube};
use lidarpp::point_cloud::{distance, PointConfiguration, PointId};
use lidarpp::priors::{
    background_marginal_log_density, gaussian_log_density, gmrf_conditional_moments,
    window_log_det, HyperParameters,
};
use lidarpp::sampler::{AuxRecord, EditRecord, MoveKind, MoveTable, Proposal};

/// Dense per-pixel Poisson log-likelihood: every bin of the histogram,
/// factorial terms dropped.
pub fn dense_log_likelihood(
    cube: &SparseLidarCube<f64>,
    irf: &ImpulseResponse<f64>,
    config: &PointConfiguration<f64>,
    levels: &Grid<f64>,
) -> f64 {
    let mut total = 0.0;
    for (pix, hist) in cube.pixels_iter() {
        let stored: std::collections::BTreeMap<u32, u32> = hist.iter().copied().collect();
        let g = cube.gain(pix);
        let b = levels[(pix.r as usize, pix.c as usize)];
        let returns: Vec<(f64, i64)> = config
            .points_in(pix)
            .iter()
            .map(|&id| (config.m_of(id).exp(), config.t_of(id).round() as i64))
            .collect();
        for bin in 1..=cube.n_bins() as i64 {
            let mut rate = b;
            for &(r, centre) in &returns {
                rate += r * irf.value_at(bin - centre);
            }
            let rate = g * rate;
            if let Some(&z) = stored.get(&(bin as u32)) {
                if rate <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += z as f64 * rate.ln();
            }
            total -= rate;
        }
    }
    total
}

/// Union measure of all influence cuboids in cuboid-volume units, via
/// per-pixel-column interval unions assembled from scratch.
pub fn union_measure(config: &PointConfiguration<f64>, hyper: &HyperParameters<f64>) -> f64 {
    let w = ((hyper.n_p - 1) / 2) as i64;
    let h = hyper.n_b + 0.5;
    let mut columns: std::collections::BTreeMap<(i64, i64), Vec<(f64, f64)>> = Default::default();
    let mut ids: Vec<PointId> = config.ids().to_vec();
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
    let mut total = 0.0;
    for (_, mut intervals) in columns {
        intervals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (mut lo, mut hi) = intervals[0];
        let mut covered = 0.0;
        for (a, b) in intervals.into_iter().skip(1) {
            if a > hi {
                covered += hi - lo;
                lo = a;
                hi = b;
            } else if b > hi {
                hi = b;
            }
        }
        total += covered + (hi - lo);
    }
    let volume = ((2 * w + 1) * (2 * w + 1)) as f64 * (2.0 * hyper.n_b + 1.0);
    total / volume
}

/// GMRF quadratic form from a brute-force pairwise pass over the adjacency.
fn gmrf_quadratic(config: &PointConfiguration<f64>, hyper: &HyperParameters<f64>) -> f64 {
    let mut quad = 0.0;
    let mut ids: Vec<PointId> = config.ids().to_vec();
    ids.sort_unstable();
    for &id in &ids {
        let m = config.m_of(id);
        quad += hyper.beta * m * m;
        for &nb in config.neighbours(id) {
            if nb > id {
                let d = distance(
                    config.pixel_of(id),
                    config.t_of(id),
                    config.pixel_of(nb),
                    config.t_of(nb),
                    hyper.l_z,
                );
                quad += (m - config.m_of(nb)).powi(2) / d;
            }
        }
    }
    quad
}

/// Full tracked log-posterior, assembled from the independent pieces above.
pub fn log_posterior(
    cube: &SparseLidarCube<f64>,
    irf: &ImpulseResponse<f64>,
    config: &PointConfiguration<f64>,
    levels: &Grid<f64>,
    hyper: &HyperParameters<f64>,
    reference_volume: f64,
) -> f64 {
    let n = config.len() as f64;
    dense_log_likelihood(cube, irf, config, levels)
        + n * hyper.lambda_a.ln()
        - hyper.gamma_a.ln() * union_measure(config, hyper)
        - n * reference_volume.ln()
        - gmrf_quadratic(config, hyper) / (2.0 * hyper.sigma2)
        - n / 2.0 * (2.0 * std::f64::consts::PI * hyper.sigma2).ln()
        + background_marginal_log_density(levels, hyper.alpha_b)
}

pub fn replay(
    config: &mut PointConfiguration<f64>,
    levels: &mut Grid<f64>,
    edit: &EditRecord<f64>,
) {
    match *edit {
        EditRecord::Add { pixel, t, m, b_new } => {
            config.insert(pixel, t, m).unwrap();
            levels[(pixel.r as usize, pixel.c as usize)] = b_new;
        }
        EditRecord::Remove { id, pixel, b_new } => {
            config.remove(id);
            levels[(pixel.r as usize, pixel.c as usize)] = b_new;
        }
        EditRecord::Shift { id, t_new } => {
            config.shift(id, t_new).unwrap();
        }
        EditRecord::Remark { id, m_new } => {
            config.set_mark(id, m_new);
        }
        EditRecord::Split { id, t1, m1, t2, m2 } => {
            let pixel = config.pixel_of(id);
            config.remove(id);
            config.insert(pixel, t1, m1).unwrap();
            config.insert(pixel, t2, m2).unwrap();
        }
        EditRecord::Merge { low, high, t, m } => {
            let pixel = config.pixel_of(low);
            config.remove(low);
            config.remove(high);
            config.insert(pixel, t, m).unwrap();
        }
    }
}

fn oracle_window_det(
    config: &PointConfiguration<f64>,
    hyper: &HyperParameters<f64>,
    core: &[PointId],
) -> f64 {
    let mut members = Vec::new();
    for &id in core {
        if config.contains(id) {
            members.push(id);
            members.extend_from_slice(config.neighbours(id));
        }
    }
    if members.is_empty() {
        0.0
    } else {
        window_log_det(config, hyper, &members)
    }
}

fn count_with_neighbours(config: &PointConfiguration<f64>) -> usize {
    config.ids().iter().filter(|&&id| config.degree(id) > 0).count()
}

fn mergeable_pairs_count(
    config: &PointConfiguration<f64>,
    hyper: &HyperParameters<f64>,
    irf: &ImpulseResponse<f64>,
) -> usize {
    let max_gap = (irf.attack() + irf.decay()) as f64;
    let mut count = 0;
    for r in 0..config.n_rows() {
        for c in 0..config.n_cols() {
            let ids = config.points_in(Pixel::new(r, c));
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    let gap = (config.t_of(ids[j]) - config.t_of(ids[i])).abs();
                    if gap > hyper.d_min && gap <= max_gap {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

fn dilation_density_log(
    config: &PointConfiguration<f64>,
    hyper: &HyperParameters<f64>,
    pixel: Pixel,
    t: f64,
) -> f64 {
    let max_degree = (hyper.n_p * hyper.n_p - 1) as usize;
    let eligible = config.ids().iter().filter(|&&id| config.degree(id) < max_degree).count();
    if eligible == 0 {
        return f64::NEG_INFINITY;
    }
    let half = hyper.n_b + 0.5;
    let mut weight = 0.0;
    for adj in config.adjacent_pixels(pixel) {
        for &a in config.points_in(adj) {
            if config.degree(a) >= max_degree || (config.t_of(a) - t).abs() > half {
                continue;
            }
            let n_adj = config.adjacent_pixels(config.pixel_of(a)).len();
            if n_adj > 0 {
                weight += 1.0 / n_adj as f64;
            }
        }
    }
    if weight <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (weight / (eligible as f64 * (2.0 * hyper.n_b + 1.0))).ln()
}

/// Green-ratio oracle: from-scratch posterior difference + proposal and
/// Jacobian terms recomputed from the two states + the exact-window
/// determinant ratio for the proposal's core.
#[allow(clippy::too_many_arguments)]
pub fn log_ratio(
    cube: &SparseLidarCube<f64>,
    irf: &ImpulseResponse<f64>,
    hyper: &HyperParameters<f64>,
    moves: &MoveTable<f64>,
    support: &AdmissibleSupport<f64>,
    before_config: &PointConfiguration<f64>,
    before_levels: &Grid<f64>,
    proposal: &Proposal<f64>,
) -> f64 {
    let mut after_config = before_config.clone();
    let mut after_levels = before_levels.clone();
    replay(&mut after_config, &mut after_levels, &proposal.record.edit);
    let volume = support.total_measure();

    let posterior_delta = log_posterior(cube, irf, &after_config, &after_levels, hyper, volume)
        - log_posterior(cube, irf, before_config, before_levels, hyper, volume);
    let det_term = 0.5
        * (oracle_window_det(&after_config, hyper, &proposal.window_core)
            - oracle_window_det(before_config, hyper, &proposal.window_core));

    let p = |kind: MoveKind| moves.probability(kind);
    let n_before = before_config.len() as f64;
    let span = (irf.attack() + irf.decay()) as f64 - hyper.d_min;
    let log_v = volume.ln();

    let proposal_terms = match (&proposal.record.edit, &proposal.record.aux) {
        (EditRecord::Add { .. }, AuxRecord::Birth { u }) => {
            log_v + (p(MoveKind::Death) / p(MoveKind::Birth)).ln()
                - (n_before + 1.0).ln()
                - (1.0 - u).ln()
        }
        (EditRecord::Remove { pixel, b_new, .. }, AuxRecord::Death) => {
            let b_old = before_levels[(pixel.r as usize, pixel.c as usize)];
            let u_rev = b_old / b_new;
            -log_v + (p(MoveKind::Birth) / p(MoveKind::Death)).ln()
                + n_before.ln()
                + (1.0 - u_rev).ln()
        }
        (EditRecord::Add { pixel, t, m, .. }, AuxRecord::Dilation) => {
            let new_id = *after_config
                .points_in(*pixel)
                .iter()
                .find(|&&id| after_config.t_of(id) == *t && after_config.m_of(id) == *m)
                .unwrap();
            let nbrs = after_config.neighbours(new_id).to_vec();
            let (mean, var) = gmrf_conditional_moments(&after_config, hyper, *pixel, *t, &nbrs);
            (p(MoveKind::Erosion) / p(MoveKind::Dilation)).ln()
                - (count_with_neighbours(&after_config) as f64).ln()
                - dilation_density_log(before_config, hyper, *pixel, *t)
                - gaussian_log_density(*m, mean, var)
        }
        (EditRecord::Remove { id, .. }, AuxRecord::Erosion) => {
            let nbrs = before_config.neighbours(*id).to_vec();
            let (mean, var) = gmrf_conditional_moments(
                before_config,
                hyper,
                before_config.pixel_of(*id),
                before_config.t_of(*id),
                &nbrs,
            );
            (p(MoveKind::Dilation) / p(MoveKind::Erosion)).ln()
                + (count_with_neighbours(before_config) as f64).ln()
                + dilation_density_log(
                    &after_config,
                    hyper,
                    before_config.pixel_of(*id),
                    before_config.t_of(*id),
                )
                + gaussian_log_density(before_config.m_of(*id), mean, var)
        }
        (EditRecord::Shift { .. }, AuxRecord::Shift) => 0.0,
        (EditRecord::Remark { .. }, AuxRecord::Mark) => 0.0,
        (EditRecord::Split { .. }, AuxRecord::Split { u, .. }) => {
            (p(MoveKind::Merge) / p(MoveKind::Split)).ln()
                - (mergeable_pairs_count(&after_config, hyper, irf) as f64).ln()
                + n_before.ln()
                + span.ln()
                - (u * (1.0 - u)).ln()
        }
        (EditRecord::Merge { low, high, .. }, AuxRecord::Merge) => {
            let r1 = before_config.m_of(*low).exp();
            let r2 = before_config.m_of(*high).exp();
            let u_rev = r1 / (r1 + r2);
            (p(MoveKind::Split) / p(MoveKind::Merge)).ln()
                - (after_config.len() as f64).ln()
                - span.ln()
                + (mergeable_pairs_count(before_config, hyper, irf) as f64).ln()
                + (u_rev * (1.0 - u_rev)).ln()
        }
        _ => unreachable!("edit/aux mismatch"),
    };

    posterior_delta + det_term + proposal_terms
}

/// Adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    fn simpson(_f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(f, a, m, fa, flm, fm);
        let right = simpson(f, m, b, fm, frm, fb);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (lo + hi);
    let (fa, fm, fb) = (f(lo), f(m), f(hi));
    let whole = simpson(f, lo, hi, fa, fm, fb);
    recurse(f, lo, hi, fa, fm, fb, whole, tol, 40)
}
