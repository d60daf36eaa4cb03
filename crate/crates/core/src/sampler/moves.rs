//! The eight reversible-jump proposals. Every move follows the same
//! transaction discipline: compute before-state quantities, tentatively apply
//! the structural edit to discover adjacency changes, measure the precision
//! windows on both sides by undoing and re-applying, and hand back an undo
//! list that restores the state bit for bit on rejection. Background-level
//! edits are deferred until acceptance.

use rand::Rng;

use crate::grid::Pixel;
use crate::likelihood::{delta_pixel_edit, PixelRateView, Return};
use crate::photon_data::round_bin;
use crate::point_cloud::{AdjacencyDiff, Point, PointId, RemovedPoint};
use crate::priors::{
    area_interaction_add_delta, area_interaction_remove_delta, area_interaction_shift_delta,
    background_marginal_delta, gaussian_log_density, gmrf_conditional_moments, window_log_det,
};
use crate::{normal_draw, Real};

use super::{MoveKind, Sampler};

/// Structural content of a proposal, sufficient to replay it on a clone of
/// the pre-move state (point ids are assigned deterministically).
#[derive(Debug, Clone)]
pub enum EditRecord<S> {
    Add { pixel: Pixel, t: S, m: S, b_new: S },
    Remove { id: PointId, pixel: Pixel, b_new: S },
    Shift { id: PointId, t_new: S },
    Remark { id: PointId, m_new: S },
    Split { id: PointId, t1: S, m1: S, t2: S, m2: S },
    Merge { low: PointId, high: PointId, t: S, m: S },
}

/// Auxiliary draws that enter proposal densities or Jacobians.
#[derive(Debug, Clone, Copy)]
pub enum AuxRecord<S> {
    Birth { u: S },
    Death,
    Dilation,
    Erosion,
    Shift,
    Mark,
    Split { u: S, gap: S },
    Merge,
}

#[derive(Debug, Clone)]
pub struct MoveRecord<S> {
    pub kind: MoveKind,
    pub edit: EditRecord<S>,
    pub aux: AuxRecord<S>,
}

/// A fully-evaluated proposal. `log_acceptance` is the complete Green ratio
/// (posterior delta + determinant window term + proposal terms + Jacobian);
/// `posterior_delta` is the part that updates the tracked log-posterior on
/// acceptance.
#[derive(Debug, Clone)]
pub struct Proposal<S> {
    pub record: MoveRecord<S>,
    pub log_acceptance: S,
    pub posterior_delta: S,
    /// Points whose precision rows changed; the determinant windows are these
    /// ids (where live) plus their neighbours, on each side of the move.
    pub window_core: Vec<PointId>,
}

/// Result of proposing a move without committing to it.
#[derive(Debug, Clone)]
pub enum Outcome<S> {
    /// No eligible proposal existed (counts as a rejection).
    Skipped,
    /// The proposal hit a zero-density condition (hard core, bounds,
    /// admissible support, negative background); counts as a rejection.
    Invalid,
    Proposed(Proposal<S>),
}

pub(crate) enum UndoOp<S> {
    RemoveInserted { id: PointId, grew: bool },
    Reinsert(RemovedPoint<S>),
    ShiftBack { id: PointId, t_old: S },
    MarkBack { id: PointId, m_old: S },
}

pub(crate) enum Applied<S> {
    Skipped,
    Invalid(Vec<UndoOp<S>>),
    Proposed { proposal: Proposal<S>, undo: Vec<UndoOp<S>> },
}

impl<'a, S: Real> Sampler<'a, S> {
    pub(crate) fn propose_applied(&mut self, kind: MoveKind) -> Applied<S> {
        match kind {
            MoveKind::Birth => self.propose_birth(),
            MoveKind::Death => self.propose_death(),
            MoveKind::Dilation => self.propose_dilation(),
            MoveKind::Erosion => self.propose_erosion(),
            MoveKind::Shift => self.propose_shift(),
            MoveKind::Mark => self.propose_mark(),
            MoveKind::Split => self.propose_split(),
            MoveKind::Merge => self.propose_merge(),
        }
    }

    pub(crate) fn undo(&mut self, ops: Vec<UndoOp<S>>) {
        for op in ops.into_iter().rev() {
            match op {
                UndoOp::RemoveInserted { id, grew } => {
                    self.config.retract(id, grew);
                }
                UndoOp::Reinsert(removed) => {
                    self.config.reinsert(&removed);
                }
                UndoOp::ShiftBack { id, t_old } => {
                    self.config.shift(id, t_old).expect("undo shift is valid");
                }
                UndoOp::MarkBack { id, m_old } => {
                    self.config.set_mark(id, m_old);
                }
            }
        }
    }

    pub(crate) fn replay_edit(&mut self, edit: &EditRecord<S>) {
        match *edit {
            EditRecord::Add { pixel, t, m, .. } => {
                self.config.insert(pixel, t, m).expect("replayed insert is valid");
            }
            EditRecord::Remove { id, .. } => {
                self.config.remove(id);
            }
            EditRecord::Shift { id, t_new } => {
                self.config.shift(id, t_new).expect("replayed shift is valid");
            }
            EditRecord::Remark { id, m_new } => {
                self.config.set_mark(id, m_new);
            }
            EditRecord::Split { id, t1, m1, t2, m2 } => {
                let pixel = self.config.pixel_of(id);
                self.config.remove(id);
                self.config.insert(pixel, t1, m1).expect("replayed split is valid");
                self.config.insert(pixel, t2, m2).expect("replayed split is valid");
            }
            EditRecord::Merge { low, high, t, m } => {
                let pixel = self.config.pixel_of(low);
                self.config.remove(low);
                self.config.remove(high);
                self.config.insert(pixel, t, m).expect("replayed merge is valid");
            }
        }
    }

    pub(crate) fn apply_field_edit(&mut self, edit: &EditRecord<S>) {
        match *edit {
            EditRecord::Add { pixel, b_new, .. } => self.field.set_level(pixel, b_new),
            EditRecord::Remove { pixel, b_new, .. } => self.field.set_level(pixel, b_new),
            _ => {}
        }
    }

    // ---- shared pieces -------------------------------------------------

    /// Response mass per histogram length: `sum h / T`.
    fn irf_mass_per_bin(&self) -> S {
        self.irf.total_sum() / S::of_usize(self.cube.n_bins())
    }

    fn loglik_delta(&self, before: &PixelRateView<S>, after: &PixelRateView<S>) -> S {
        if self.prior_only {
            S::zero()
        } else {
            delta_pixel_edit(self.cube, self.irf, before, after)
        }
    }

    fn quad_to_log(&self, quad_delta: S) -> S {
        -quad_delta / (S::of(2.0) * self.hyper.sigma2)
    }

    /// Log of the admissible reference volume; every extra point pays it
    /// through the Poisson reference measure.
    fn log_ref_volume(&self) -> S {
        self.support.total_measure().ln()
    }

    fn bg_marginal_delta(&self, pixel: Pixel, b_new: S) -> S {
        if self.prior_only {
            S::zero()
        } else {
            background_marginal_delta(self.field.levels(), pixel, b_new, self.hyper.alpha_b)
        }
    }

    fn dim_const(&self) -> S {
        S::of(0.5) * (S::of(2.0) * S::PI() * self.hyper.sigma2).ln()
    }

    fn edge_term(&self, a: PointId, b: PointId) -> S {
        let diff = self.config.m_of(a) - self.config.m_of(b);
        diff * diff / self.config.distance_between(a, b)
    }

    fn edge_term_ghost(&self, ghost: &Point<S>, other: PointId) -> S {
        let diff = ghost.m - self.config.m_of(other);
        let d = crate::point_cloud::distance(
            ghost.pixel,
            ghost.t,
            self.config.pixel_of(other),
            self.config.t_of(other),
            self.hyper.l_z,
        );
        diff * diff / d
    }

    /// Quadratic-form change of inserting `id` (evaluated on the state that
    /// already contains it).
    fn quad_delta_add(&self, id: PointId, diff: &AdjacencyDiff) -> S {
        let m = self.config.m_of(id);
        let mut dq = self.hyper.beta * m * m;
        for &(a, b) in &diff.added {
            dq += self.edge_term(a, b);
        }
        for &(a, b) in &diff.removed {
            dq -= self.edge_term(a, b);
        }
        dq
    }

    /// Quadratic-form change of a removal (evaluated on the state without the
    /// point; edges that touched it use its saved record).
    fn quad_delta_remove(&self, removed: &RemovedPoint<S>) -> S {
        let p = &removed.point;
        let mut dq = -self.hyper.beta * p.m * p.m;
        for &(a, b) in &removed.diff.removed {
            let term = if a == p.id {
                self.edge_term_ghost(p, b)
            } else if b == p.id {
                self.edge_term_ghost(p, a)
            } else {
                self.edge_term(a, b)
            };
            dq -= term;
        }
        for &(a, b) in &removed.diff.added {
            dq += self.edge_term(a, b);
        }
        dq
    }

    /// Quadratic-form change of shifting `id` from `t_old` (evaluated on the
    /// state holding the new position).
    fn quad_delta_shift(&self, id: PointId, t_old: S, diff: &AdjacencyDiff) -> S {
        let mut added_partners = Vec::new();
        let mut removed_partners = Vec::new();
        let mut dq = S::zero();
        for &(a, b) in &diff.added {
            if a == id || b == id {
                added_partners.push(if a == id { b } else { a });
            } else {
                dq += self.edge_term(a, b);
            }
        }
        for &(a, b) in &diff.removed {
            if a == id || b == id {
                removed_partners.push(if a == id { b } else { a });
            } else {
                dq -= self.edge_term(a, b);
            }
        }
        let ghost = Point {
            id,
            pixel: self.config.pixel_of(id),
            t: t_old,
            m: self.config.m_of(id),
        };
        for &q in self.config.neighbours(id) {
            dq += self.edge_term(id, q);
            if !added_partners.contains(&q) {
                dq -= self.edge_term_ghost(&ghost, q);
            }
        }
        for q in removed_partners {
            dq -= self.edge_term_ghost(&ghost, q);
        }
        dq
    }

    /// Log-determinant of the precision window spanned by the live members of
    /// `core` and their current neighbours.
    fn window_det(&self, core: &[PointId]) -> S {
        let mut members = Vec::new();
        for &id in core {
            if self.config.contains(id) {
                members.push(id);
                members.extend_from_slice(self.config.neighbours(id));
            }
        }
        if members.is_empty() {
            return S::zero();
        }
        window_log_det(&self.config, &self.hyper, &members)
    }

    fn returns_excluding(&self, pixel: Pixel, skip: &[PointId]) -> Vec<Return<S>> {
        self.config
            .points_in(pixel)
            .iter()
            .filter(|id| !skip.contains(id))
            .map(|&id| (self.config.m_of(id).exp(), round_bin(self.config.t_of(id))))
            .collect()
    }

    fn view(&self, pixel: Pixel, returns: Vec<Return<S>>, b: S) -> PixelRateView<S> {
        PixelRateView::new(self.cube, self.irf, pixel, returns, b)
    }

    fn count_with_neighbours(&self) -> usize {
        self.config.ids().iter().filter(|&&id| self.config.degree(id) > 0).count()
    }

    fn dilation_max_degree(&self) -> usize {
        (self.hyper.n_p * self.hyper.n_p - 1) as usize
    }

    fn dilation_eligible_count(&self) -> usize {
        let max_degree = self.dilation_max_degree();
        self.config
            .ids()
            .iter()
            .filter(|&&id| self.config.degree(id) < max_degree)
            .count()
    }

    /// Exact forward density of the dilation kernel landing a point at
    /// (`pixel`, `t`): sum over every anchor that could have proposed it
    /// (eligible, in an adjacent pixel, within the depth window) of
    /// `1/#eligible * 1/#adjacent(anchor) * 1/(2 N_b + 1)`. Everything is
    /// evaluated on the state WITHOUT the new point.
    fn dilation_log_pu1(&self, pixel: Pixel, t: S, eligible_count: usize) -> S {
        if eligible_count == 0 {
            return S::neg_infinity();
        }
        let max_degree = self.dilation_max_degree();
        let half = self.hyper.n_b + S::of(0.5);
        let mut weight = S::zero();
        for adj in self.config.adjacent_pixels(pixel) {
            for &a in self.config.points_in(adj) {
                if self.config.degree(a) >= max_degree {
                    continue;
                }
                if (self.config.t_of(a) - t).abs() > half {
                    continue;
                }
                let n_adj = self.config.adjacent_pixels(self.config.pixel_of(a)).len();
                if n_adj > 0 {
                    weight += S::of_usize(n_adj).recip();
                }
            }
        }
        if weight <= S::zero() {
            return S::neg_infinity();
        }
        let depth = S::of(2.0) * self.hyper.n_b + S::one();
        (weight / (S::of_usize(eligible_count) * depth)).ln()
    }

    fn mergeable_pairs(&self) -> Vec<(PointId, PointId)> {
        let max_gap = S::of_usize(self.irf.attack() + self.irf.decay());
        let mut pairs = Vec::new();
        for r in 0..self.config.n_rows() {
            for c in 0..self.config.n_cols() {
                let ids = self.config.points_in(Pixel::new(r, c));
                for i in 0..ids.len() {
                    for j in i + 1..ids.len() {
                        let gap = (self.config.t_of(ids[j]) - self.config.t_of(ids[i])).abs();
                        if gap > self.hyper.d_min && gap <= max_gap {
                            pairs.push((ids[i], ids[j]));
                        }
                    }
                }
            }
        }
        pairs
    }

    fn move_prob_log_ratio(&self, reverse: MoveKind, forward: MoveKind) -> S {
        self.moves.probability(reverse).ln() - self.moves.probability(forward).ln()
    }

    // ---- birth / death -------------------------------------------------

    /// Birth: position uniform over the admissible support, intensity taken
    /// from the pixel's background so that the total pixel intensity is
    /// preserved (`b' = u b`, `r = (1-u) b T / sum h`).
    ///
    /// In prior-only mode the background has no likelihood anchor, so the
    /// moves leave it untouched and the mark is drawn from the GMRF
    /// conditional instead (whose density then enters the ratio).
    fn propose_birth(&mut self) -> Applied<S> {
        let Some((pixel, t)) = self.support.sample(&mut self.rng) else {
            return Applied::Skipped;
        };
        let n_before = self.config.len();
        let b = self.field.level(pixel);
        if !self.config.hard_core_ok(pixel, t, &[]) {
            return Applied::Invalid(Vec::new());
        }

        let before_view = self.view(pixel, self.returns_excluding(pixel, &[]), b);
        let d_area = area_interaction_add_delta(&self.config, &self.hyper, pixel, t);

        let arena_before = self.config.arena_len();
        let (id, diff) = self.config.insert(pixel, t, S::zero()).expect("hard core pre-checked");
        let grew = self.config.arena_len() > arena_before;
        let (m, b_new, u, mark_terms) = if self.prior_only {
            let nbrs = self.config.neighbours(id).to_vec();
            let (mean, var) =
                gmrf_conditional_moments(&self.config, &self.hyper, pixel, t, &nbrs);
            let m = normal_draw(&mut self.rng, mean, var.sqrt());
            (m, b, S::zero(), -gaussian_log_density(m, mean, var))
        } else {
            let u = S::unit_open(&mut self.rng);
            let r_new = (S::one() - u) * b / self.irf_mass_per_bin();
            (r_new.ln(), u * b, u, -(S::one() - u).ln())
        };
        self.config.set_mark(id, m);

        let mut after_returns = before_view.returns.clone();
        after_returns.push((m.exp(), round_bin(t)));
        let after_view = self.view(pixel, after_returns, b_new);
        let d_lik = self.loglik_delta(&before_view, &after_view);
        let d_bg = self.bg_marginal_delta(pixel, b_new);

        let mut core = vec![id];
        core.extend(diff.touched());
        let d_quad = self.quad_delta_add(id, &diff);
        let det_after = self.window_det(&core);
        self.config.retract(id, grew);
        let det_before = self.window_det(&core);
        let (id_replayed, _) = self.config.insert(pixel, t, m).expect("replay");
        debug_assert_eq!(id_replayed, id);

        let posterior_delta = d_lik + d_area - self.log_ref_volume()
            + self.quad_to_log(d_quad)
            - self.dim_const()
            + d_bg;
        let log_acceptance = posterior_delta
            + self.log_ref_volume()
            + S::of(0.5) * (det_after - det_before)
            + self.move_prob_log_ratio(MoveKind::Death, MoveKind::Birth)
            - S::of_usize(n_before + 1).ln()
            + mark_terms;

        Applied::Proposed {
            proposal: Proposal {
                record: MoveRecord {
                    kind: MoveKind::Birth,
                    edit: EditRecord::Add { pixel, t, m, b_new },
                    aux: AuxRecord::Birth { u },
                },
                log_acceptance,
                posterior_delta,
                window_core: core,
            },
            undo: vec![UndoOp::RemoveInserted { id, grew }],
        }
    }

    /// Death: remove a uniformly chosen point, returning its intensity to the
    /// pixel background (`b' = b + r sum h / T`).
    fn propose_death(&mut self) -> Applied<S> {
        if self.config.is_empty() {
            return Applied::Skipped;
        }
        let n_before = self.config.len();
        let victim = self.config.id_at(self.rng.random_range(0..n_before));
        let point = self.config.point(victim);
        let pixel = point.pixel;
        let b = self.field.level(pixel);
        let mass = point.m.exp() * self.irf_mass_per_bin();
        let (b_new, mark_terms) = if self.prior_only {
            // reverse prior-only birth draws the mark from the conditional
            let nbrs = self.config.neighbours(victim).to_vec();
            let (mean, var) =
                gmrf_conditional_moments(&self.config, &self.hyper, pixel, point.t, &nbrs);
            (b, gaussian_log_density(point.m, mean, var))
        } else {
            let b_new = b + mass;
            (b_new, (mass / b_new).ln())
        };

        let before_view = self.view(pixel, self.returns_excluding(pixel, &[]), b);
        let after_view = self.view(pixel, self.returns_excluding(pixel, &[victim]), b_new);
        let d_lik = self.loglik_delta(&before_view, &after_view);
        let d_area = area_interaction_remove_delta(&self.config, &self.hyper, victim);
        let d_bg = self.bg_marginal_delta(pixel, b_new);

        let removed = self.config.remove(victim);
        let mut core = vec![victim];
        core.extend(removed.diff.touched());
        let d_quad = self.quad_delta_remove(&removed);
        let det_after = self.window_det(&core);
        self.config.reinsert(&removed);
        let det_before = self.window_det(&core);
        let removed = self.config.remove(victim);

        let posterior_delta = d_lik + d_area + self.log_ref_volume()
            + self.quad_to_log(d_quad)
            + self.dim_const()
            + d_bg;
        let log_acceptance = posterior_delta
            - self.log_ref_volume()
            + S::of(0.5) * (det_after - det_before)
            + self.move_prob_log_ratio(MoveKind::Birth, MoveKind::Death)
            + S::of_usize(n_before).ln()
            + mark_terms;

        Applied::Proposed {
            proposal: Proposal {
                record: MoveRecord {
                    kind: MoveKind::Death,
                    edit: EditRecord::Remove { id: victim, pixel, b_new },
                    aux: AuxRecord::Death,
                },
                log_acceptance,
                posterior_delta,
                window_core: core,
            },
            undo: vec![UndoOp::Reinsert(removed)],
        }
    }

    // ---- dilation / erosion ---------------------------------------------

    /// Dilation: grow a surface by one point next to a randomly chosen anchor
    /// with spare neighbour slots; the mark comes from the GMRF conditional
    /// and the pixel background absorbs the intensity (`b' = b - r sum h/T`,
    /// rejected when negative).
    fn propose_dilation(&mut self) -> Applied<S> {
        if self.config.is_empty() {
            return Applied::Skipped;
        }
        let max_degree = self.dilation_max_degree();
        let anchors: Vec<PointId> = self
            .config
            .ids()
            .iter()
            .copied()
            .filter(|&id| self.config.degree(id) < max_degree)
            .collect();
        if anchors.is_empty() {
            return Applied::Skipped;
        }
        let anchor = anchors[self.rng.random_range(0..anchors.len())];
        let adjacent = self.config.adjacent_pixels(self.config.pixel_of(anchor));
        if adjacent.is_empty() {
            return Applied::Skipped;
        }
        let pixel = adjacent[self.rng.random_range(0..adjacent.len())];
        let half_depth = self.hyper.n_b + S::of(0.5);
        let t = self.config.t_of(anchor) + S::uniform(&mut self.rng, -half_depth, half_depth);
        if !self.support.contains(pixel, t) || !self.config.hard_core_ok(pixel, t, &[]) {
            return Applied::Invalid(Vec::new());
        }
        let b = self.field.level(pixel);
        let before_view = self.view(pixel, self.returns_excluding(pixel, &[]), b);
        let d_area = area_interaction_add_delta(&self.config, &self.hyper, pixel, t);
        let log_pu1 = self.dilation_log_pu1(pixel, t, anchors.len());

        // Insert provisionally to discover the neighbours, then draw the mark
        // from the conditional they define.
        let arena_before = self.config.arena_len();
        let (id, diff) = self.config.insert(pixel, t, S::zero()).expect("hard core pre-checked");
        let grew = self.config.arena_len() > arena_before;
        let nbrs = self.config.neighbours(id).to_vec();
        let (mean, var) = gmrf_conditional_moments(&self.config, &self.hyper, pixel, t, &nbrs);
        let m = normal_draw(&mut self.rng, mean, var.sqrt());
        self.config.set_mark(id, m);
        let r_new = m.exp();
        let b_new = if self.prior_only {
            b
        } else {
            b - r_new * self.irf_mass_per_bin()
        };
        if b_new <= S::zero() || nbrs.is_empty() {
            return Applied::Invalid(vec![UndoOp::RemoveInserted { id, grew }]);
        }
        let log_pu2 = gaussian_log_density(m, mean, var);
        let log_pu_rev = -S::of_usize(self.count_with_neighbours()).ln();

        let mut after_returns = before_view.returns.clone();
        after_returns.push((r_new, round_bin(t)));
        let after_view = self.view(pixel, after_returns, b_new);
        let d_lik = self.loglik_delta(&before_view, &after_view);
        let d_bg = self.bg_marginal_delta(pixel, b_new);

        let mut core = vec![id];
        core.extend(diff.touched());
        let d_quad = self.quad_delta_add(id, &diff);
        let det_after = self.window_det(&core);
        self.config.retract(id, grew);
        let det_before = self.window_det(&core);
        let (id_replayed, _) = self.config.insert(pixel, t, m).expect("replay");
        debug_assert_eq!(id_replayed, id);

        let posterior_delta = d_lik + d_area - self.log_ref_volume()
            + self.quad_to_log(d_quad)
            - self.dim_const()
            + d_bg;
        let log_acceptance = posterior_delta
            + S::of(0.5) * (det_after - det_before)
            + self.move_prob_log_ratio(MoveKind::Erosion, MoveKind::Dilation)
            + log_pu_rev
            - log_pu1
            - log_pu2;

        Applied::Proposed {
            proposal: Proposal {
                record: MoveRecord {
                    kind: MoveKind::Dilation,
                    edit: EditRecord::Add { pixel, t, m, b_new },
                    aux: AuxRecord::Dilation,
                },
                log_acceptance,
                posterior_delta,
                window_core: core,
            },
            undo: vec![UndoOp::RemoveInserted { id, grew }],
        }
    }

    /// Erosion: remove a uniformly chosen point that has at least one
    /// neighbour, returning its intensity to the background.
    fn propose_erosion(&mut self) -> Applied<S> {
        let victims: Vec<PointId> = self
            .config
            .ids()
            .iter()
            .copied()
            .filter(|&id| self.config.degree(id) > 0)
            .collect();
        if victims.is_empty() {
            return Applied::Skipped;
        }
        let victim = victims[self.rng.random_range(0..victims.len())];
        let point = self.config.point(victim);
        let pixel = point.pixel;
        let b = self.field.level(pixel);
        let b_new = if self.prior_only {
            b
        } else {
            b + point.m.exp() * self.irf_mass_per_bin()
        };

        // Reverse-dilation bookkeeping: the mark conditional uses the point's
        // neighbours (their values do not depend on it); the kernel density
        // is evaluated on the state without it, after the removal below.
        let nbrs = self.config.neighbours(victim).to_vec();
        let (mean, var) =
            gmrf_conditional_moments(&self.config, &self.hyper, pixel, point.t, &nbrs);
        let log_pu2 = gaussian_log_density(point.m, mean, var);
        let log_pu_rev = -S::of_usize(self.count_with_neighbours()).ln();

        let before_view = self.view(pixel, self.returns_excluding(pixel, &[]), b);
        let after_view = self.view(pixel, self.returns_excluding(pixel, &[victim]), b_new);
        let d_lik = self.loglik_delta(&before_view, &after_view);
        let d_area = area_interaction_remove_delta(&self.config, &self.hyper, victim);
        let d_bg = self.bg_marginal_delta(pixel, b_new);

        let removed = self.config.remove(victim);
        let log_pu1 = self.dilation_log_pu1(pixel, point.t, self.dilation_eligible_count());
        let mut core = vec![victim];
        core.extend(removed.diff.touched());
        let d_quad = self.quad_delta_remove(&removed);
        let det_after = self.window_det(&core);
        self.config.reinsert(&removed);
        let det_before = self.window_det(&core);
        let removed = self.config.remove(victim);

        let posterior_delta = d_lik + d_area + self.log_ref_volume()
            + self.quad_to_log(d_quad)
            + self.dim_const()
            + d_bg;
        let log_acceptance = posterior_delta
            + S::of(0.5) * (det_after - det_before)
            + self.move_prob_log_ratio(MoveKind::Dilation, MoveKind::Erosion)
            - log_pu_rev
            + log_pu1
            + log_pu2;

        Applied::Proposed {
            proposal: Proposal {
                record: MoveRecord {
                    kind: MoveKind::Erosion,
                    edit: EditRecord::Remove { id: victim, pixel, b_new },
                    aux: AuxRecord::Erosion,
                },
                log_acceptance,
                posterior_delta,
                window_core: core,
            },
            undo: vec![UndoOp::Reinsert(removed)],
        }
    }

    // ---- shift / mark ----------------------------------------------------

    /// Random-walk depth shift within the pixel; symmetric proposal.
    fn propose_shift(&mut self) -> Applied<S> {
        if self.config.is_empty() {
            return Applied::Skipped;
        }
        let victim = self.config.id_at(self.rng.random_range(0..self.config.len()));
        let pixel = self.config.pixel_of(victim);
        let t_old = self.config.t_of(victim);
        let t_new = normal_draw(&mut self.rng, t_old, self.shift_std);
        if !self.support.contains(pixel, t_new)
            || !self.config.hard_core_ok(pixel, t_new, &[victim])
        {
            return Applied::Invalid(Vec::new());
        }
        let r_v = self.config.m_of(victim).exp();
        let before_view = self.view(pixel, self.returns_excluding(pixel, &[]), self.field.level(pixel));
        let mut after_returns = self.returns_excluding(pixel, &[victim]);
        after_returns.push((r_v, round_bin(t_new)));
        let after_view = self.view(pixel, after_returns, before_view.background);
        let d_lik = self.loglik_delta(&before_view, &after_view);
        let d_area = area_interaction_shift_delta(&self.config, &self.hyper, victim, t_new);

        let diff = self.config.shift(victim, t_new).expect("hard core pre-checked");
        let mut core = vec![victim];
        core.extend(diff.touched());
        let d_quad = self.quad_delta_shift(victim, t_old, &diff);
        let det_after = self.window_det(&core);
        self.config.shift(victim, t_old).expect("shift back");
        let det_before = self.window_det(&core);
        self.config.shift(victim, t_new).expect("shift forward");

        let posterior_delta = d_lik + d_area + self.quad_to_log(d_quad);
        let log_acceptance = posterior_delta + S::of(0.5) * (det_after - det_before);

        Applied::Proposed {
            proposal: Proposal {
                record: MoveRecord {
                    kind: MoveKind::Shift,
                    edit: EditRecord::Shift { id: victim, t_new },
                    aux: AuxRecord::Shift,
                },
                log_acceptance,
                posterior_delta,
                window_core: core,
            },
            undo: vec![UndoOp::ShiftBack { id: victim, t_old }],
        }
    }

    /// Random-walk log-intensity update; the precision matrix is unchanged,
    /// so no determinant term appears.
    fn propose_mark(&mut self) -> Applied<S> {
        if self.config.is_empty() {
            return Applied::Skipped;
        }
        let victim = self.config.id_at(self.rng.random_range(0..self.config.len()));
        let pixel = self.config.pixel_of(victim);
        let m_old = self.config.m_of(victim);
        let m_new = normal_draw(&mut self.rng, m_old, self.mark_std);

        let b = self.field.level(pixel);
        let before_view = self.view(pixel, self.returns_excluding(pixel, &[]), b);
        let mut after_returns = self.returns_excluding(pixel, &[victim]);
        after_returns.push((m_new.exp(), round_bin(self.config.t_of(victim))));
        let after_view = self.view(pixel, after_returns, b);
        let d_lik = self.loglik_delta(&before_view, &after_view);

        let mut d_quad = self.hyper.beta * (m_new * m_new - m_old * m_old);
        for &q in self.config.neighbours(victim) {
            let m_q = self.config.m_of(q);
            let d = self.config.distance_between(victim, q);
            d_quad += ((m_new - m_q) * (m_new - m_q) - (m_old - m_q) * (m_old - m_q)) / d;
        }
        self.config.set_mark(victim, m_new);

        let posterior_delta = d_lik + self.quad_to_log(d_quad);
        Applied::Proposed {
            proposal: Proposal {
                record: MoveRecord {
                    kind: MoveKind::Mark,
                    edit: EditRecord::Remark { id: victim, m_new },
                    aux: AuxRecord::Mark,
                },
                log_acceptance: posterior_delta,
                posterior_delta,
                window_core: vec![victim],
            },
            undo: vec![UndoOp::MarkBack { id: victim, m_old }],
        }
    }

    // ---- split / merge ---------------------------------------------------

    /// Split one return into two that preserve the total pixel intensity and
    /// straddle the original depth.
    fn propose_split(&mut self) -> Applied<S> {
        if self.config.is_empty() {
            return Applied::Skipped;
        }
        let max_gap = S::of_usize(self.irf.attack() + self.irf.decay());
        let span = max_gap - self.hyper.d_min;
        if span <= S::zero() {
            return Applied::Skipped;
        }
        let n_before = self.config.len();
        let victim = self.config.id_at(self.rng.random_range(0..n_before));
        let point = self.config.point(victim);
        let pixel = point.pixel;
        let u = S::unit_open(&mut self.rng);
        let gap = S::uniform(&mut self.rng, self.hyper.d_min, max_gap);
        let t1 = point.t - (S::one() - u) * gap;
        let t2 = point.t + u * gap;
        let m1 = point.m + u.ln();
        let m2 = point.m + (S::one() - u).ln();
        if !self.support.contains(pixel, t1)
            || !self.support.contains(pixel, t2)
            || !self.config.hard_core_ok(pixel, t1, &[victim])
            || !self.config.hard_core_ok(pixel, t2, &[victim])
        {
            return Applied::Invalid(Vec::new());
        }

        let b = self.field.level(pixel);
        let before_view = self.view(pixel, self.returns_excluding(pixel, &[]), b);
        let mut after_returns = self.returns_excluding(pixel, &[victim]);
        after_returns.push((m1.exp(), round_bin(t1)));
        after_returns.push((m2.exp(), round_bin(t2)));
        let after_view = self.view(pixel, after_returns, b);
        let d_lik = self.loglik_delta(&before_view, &after_view);

        let mut undo = Vec::new();
        let mut d_area = area_interaction_remove_delta(&self.config, &self.hyper, victim);
        let removed = self.config.remove(victim);
        let mut d_quad = self.quad_delta_remove(&removed);
        let mut core = vec![victim];
        core.extend(removed.diff.touched());
        undo.push(UndoOp::Reinsert(removed));

        d_area += area_interaction_add_delta(&self.config, &self.hyper, pixel, t1);
        let arena1 = self.config.arena_len();
        let (id1, diff1) = self.config.insert(pixel, t1, m1).expect("split insert 1");
        let grew1 = self.config.arena_len() > arena1;
        d_quad += self.quad_delta_add(id1, &diff1);
        core.push(id1);
        core.extend(diff1.touched());
        undo.push(UndoOp::RemoveInserted { id: id1, grew: grew1 });

        d_area += area_interaction_add_delta(&self.config, &self.hyper, pixel, t2);
        let arena2 = self.config.arena_len();
        let (id2, diff2) = self.config.insert(pixel, t2, m2).expect("split insert 2");
        let grew2 = self.config.arena_len() > arena2;
        d_quad += self.quad_delta_add(id2, &diff2);
        core.push(id2);
        core.extend(diff2.touched());
        undo.push(UndoOp::RemoveInserted { id: id2, grew: grew2 });

        let det_after = self.window_det(&core);
        // rewind to measure the before-window, then replay the forward edit
        self.config.retract(id2, grew2);
        self.config.retract(id1, grew1);
        let reinserted = match undo.first() {
            Some(UndoOp::Reinsert(r)) => r.clone(),
            _ => unreachable!(),
        };
        self.config.reinsert(&reinserted);
        let det_before = self.window_det(&core);
        let removed_again = self.config.remove(victim);
        undo[0] = UndoOp::Reinsert(removed_again);
        let (id1_replayed, _) = self.config.insert(pixel, t1, m1).expect("replay");
        let (id2_replayed, _) = self.config.insert(pixel, t2, m2).expect("replay");
        debug_assert_eq!((id1_replayed, id2_replayed), (id1, id2));

        let n_pairs_after = self.mergeable_pairs().len();
        let posterior_delta =
            d_lik + d_area - self.log_ref_volume() + self.quad_to_log(d_quad) - self.dim_const();
        let log_acceptance = posterior_delta
            + S::of(0.5) * (det_after - det_before)
            + self.move_prob_log_ratio(MoveKind::Merge, MoveKind::Split)
            - S::of_usize(n_pairs_after).ln()
            + S::of_usize(n_before).ln()
            + span.ln()
            - (u * (S::one() - u)).ln();

        Applied::Proposed {
            proposal: Proposal {
                record: MoveRecord {
                    kind: MoveKind::Split,
                    edit: EditRecord::Split { id: victim, t1, m1, t2, m2 },
                    aux: AuxRecord::Split { u, gap },
                },
                log_acceptance,
                posterior_delta,
                window_core: core,
            },
            undo,
        }
    }

    /// Merge a same-pixel pair within the response length into one return
    /// preserving the total pixel intensity (intensity-weighted position).
    fn propose_merge(&mut self) -> Applied<S> {
        let pairs = self.mergeable_pairs();
        if pairs.is_empty() {
            return Applied::Skipped;
        }
        let n_pairs_before = pairs.len();
        let (low, high) = pairs[self.rng.random_range(0..n_pairs_before)];
        let (p1, p2) = (self.config.point(low), self.config.point(high));
        let pixel = p1.pixel;
        let (r1, r2) = (p1.m.exp(), p2.m.exp());
        let r_merged = r1 + r2;
        let m = r_merged.ln();
        let t = (p1.t * r1 + p2.t * r2) / r_merged;
        let u_rev = r1 / r_merged;
        let max_gap = S::of_usize(self.irf.attack() + self.irf.decay());
        let span = max_gap - self.hyper.d_min;
        if !self.support.contains(pixel, t)
            || !self.config.hard_core_ok(pixel, t, &[low, high])
        {
            return Applied::Invalid(Vec::new());
        }

        let b = self.field.level(pixel);
        let before_view = self.view(pixel, self.returns_excluding(pixel, &[]), b);
        let mut after_returns = self.returns_excluding(pixel, &[low, high]);
        after_returns.push((r_merged, round_bin(t)));
        let after_view = self.view(pixel, after_returns, b);
        let d_lik = self.loglik_delta(&before_view, &after_view);

        let mut undo = Vec::new();
        let mut d_area = area_interaction_remove_delta(&self.config, &self.hyper, low);
        let removed_low = self.config.remove(low);
        let mut d_quad = self.quad_delta_remove(&removed_low);
        let mut core = vec![low, high];
        core.extend(removed_low.diff.touched());
        undo.push(UndoOp::Reinsert(removed_low));

        d_area += area_interaction_remove_delta(&self.config, &self.hyper, high);
        let removed_high = self.config.remove(high);
        d_quad += self.quad_delta_remove(&removed_high);
        core.extend(removed_high.diff.touched());
        undo.push(UndoOp::Reinsert(removed_high));

        d_area += area_interaction_add_delta(&self.config, &self.hyper, pixel, t);
        let arena_m = self.config.arena_len();
        let (id_m, diff_m) = self.config.insert(pixel, t, m).expect("merge insert");
        let grew_m = self.config.arena_len() > arena_m;
        d_quad += self.quad_delta_add(id_m, &diff_m);
        core.push(id_m);
        core.extend(diff_m.touched());
        undo.push(UndoOp::RemoveInserted { id: id_m, grew: grew_m });

        let det_after = self.window_det(&core);
        // rewind (reverse order), measure, replay
        self.config.retract(id_m, grew_m);
        let (re_low, re_high) = match (&undo[0], &undo[1]) {
            (UndoOp::Reinsert(a), UndoOp::Reinsert(b)) => (a.clone(), b.clone()),
            _ => unreachable!(),
        };
        self.config.reinsert(&re_high);
        self.config.reinsert(&re_low);
        let det_before = self.window_det(&core);
        let removed_low_again = self.config.remove(low);
        let removed_high_again = self.config.remove(high);
        undo[0] = UndoOp::Reinsert(removed_low_again);
        undo[1] = UndoOp::Reinsert(removed_high_again);
        let (id_replayed, _) = self.config.insert(pixel, t, m).expect("replay");
        debug_assert_eq!(id_replayed, id_m);

        let n_after = self.config.len();
        let posterior_delta =
            d_lik + d_area + self.log_ref_volume() + self.quad_to_log(d_quad) + self.dim_const();
        let log_acceptance = posterior_delta
            + S::of(0.5) * (det_after - det_before)
            + self.move_prob_log_ratio(MoveKind::Split, MoveKind::Merge)
            - S::of_usize(n_after).ln()
            - span.ln()
            + S::of_usize(n_pairs_before).ln()
            + (u_rev * (S::one() - u_rev)).ln();

        Applied::Proposed {
            proposal: Proposal {
                record: MoveRecord {
                    kind: MoveKind::Merge,
                    edit: EditRecord::Merge { low, high, t, m },
                    aux: AuxRecord::Merge,
                },
                log_acceptance,
                posterior_delta,
                window_core: core,
            },
            undo,
        }
    }
}
