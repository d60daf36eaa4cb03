//! The mutable point configuration: id-addressed points with log-intensity
//! marks, a per-pixel index sorted by depth, symmetric neighbour adjacency
//! and lazy connected-surface labels.
//!
//! Two points are neighbours when their pixels are distinct, within Chebyshev
//! distance `(N_p - 1) / 2`, their depths differ by at most `N_b` bins, and
//! each is the other's closest in-window candidate within the respective
//! pixel (mutual nearest). The mutual-nearest rule keeps adjacency symmetric
//! with at most one neighbour per adjacent pixel, so a point has at most
//! `N_p^2 - 1` neighbours.

use thiserror::Error;

use crate::grid::Pixel;
use crate::photon_data::io::PointRow;
use crate::Real;

/// Stable handle of a stored point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointId(pub u32);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HardCoreViolation {
    #[error("point at pixel ({r},{c}) closer than d_min to an existing same-pixel point")]
    TooClose { r: u32, c: u32 },
}

/// Geometric constants the configuration needs to maintain adjacency.
#[derive(Debug, Clone, Copy)]
pub struct Geometry<S> {
    /// Pixel Chebyshev half-width of the influence cuboid: `(N_p - 1) / 2`.
    pub pixel_halfwidth: u32,
    /// Depth half-width of the influence cuboid in bins.
    pub n_b: S,
    /// Hard-core minimum same-pixel depth separation.
    pub d_min: S,
    /// Depth bins per pixel pitch, for the anisotropic distance.
    pub l_z: S,
}

/// Distance between two returns: pixel offsets in pixel units, depth offset
/// normalized by `l_z`.
#[inline]
pub fn distance<S: Real>(a_pix: Pixel, a_t: S, b_pix: Pixel, b_t: S, l_z: S) -> S {
    let dr = S::of(a_pix.r as f64 - b_pix.r as f64);
    let dc = S::of(a_pix.c as f64 - b_pix.c as f64);
    let dt = (a_t - b_t) / l_z;
    (dr * dr + dc * dc + dt * dt).sqrt()
}

#[derive(Debug, Clone)]
struct Slot<S> {
    pixel: Pixel,
    t: S,
    m: S,
    /// Neighbour ids, sorted ascending (canonical order).
    nbrs: Vec<PointId>,
    /// Position in the dense live-id list.
    dense_idx: u32,
}

/// Adjacency edges touched by one structural edit.
#[derive(Debug, Clone, Default)]
pub struct AdjacencyDiff {
    pub added: Vec<(PointId, PointId)>,
    pub removed: Vec<(PointId, PointId)>,
}

impl AdjacencyDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    /// Ids whose neighbour set changed.
    pub fn touched(&self) -> Vec<PointId> {
        let mut ids: Vec<PointId> = self
            .added
            .iter()
            .chain(self.removed.iter())
            .flat_map(|&(a, b)| [a, b])
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// A full point record, as returned by removal (sufficient to re-insert).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<S> {
    pub id: PointId,
    pub pixel: Pixel,
    pub t: S,
    pub m: S,
}

/// Everything needed to undo a removal exactly, including the point's
/// position in the dense id list (so a rejected proposal restores the state
/// bit for bit).
#[derive(Debug, Clone)]
pub struct RemovedPoint<S> {
    pub point: Point<S>,
    dense_idx: u32,
    pub diff: AdjacencyDiff,
}

#[derive(Debug, Clone)]
pub struct PointConfiguration<S> {
    n_rows: usize,
    n_cols: usize,
    geometry: Geometry<S>,
    slots: Vec<Option<Slot<S>>>,
    free: Vec<u32>,
    dense: Vec<PointId>,
    /// Per pixel: live ids sorted by (t, id).
    pixel_index: Vec<Vec<PointId>>,
    labels_dirty: bool,
    /// Connected-component label per slot: the minimum point id in the component.
    labels: Vec<u32>,
}

impl<S: Real> PointConfiguration<S> {
    pub fn new(n_rows: usize, n_cols: usize, geometry: Geometry<S>) -> Self {
        Self {
            n_rows,
            n_cols,
            geometry,
            slots: Vec::new(),
            free: Vec::new(),
            dense: Vec::new(),
            pixel_index: vec![Vec::new(); n_rows * n_cols],
            labels_dirty: false,
            labels: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn geometry(&self) -> &Geometry<S> {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty()
    }

    /// Live ids in dense (deterministic, not sorted) order.
    pub fn ids(&self) -> &[PointId] {
        &self.dense
    }

    /// The id at a dense index, for uniform random choice.
    pub fn id_at(&self, dense_idx: usize) -> PointId {
        self.dense[dense_idx]
    }

    #[inline]
    fn slot(&self, id: PointId) -> &Slot<S> {
        self.slots[id.0 as usize].as_ref().expect("live point id")
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.slots
            .get(id.0 as usize)
            .map(|s| s.is_some())
            .unwrap_or(false)
    }

    pub fn point(&self, id: PointId) -> Point<S> {
        let s = self.slot(id);
        Point { id, pixel: s.pixel, t: s.t, m: s.m }
    }

    pub fn pixel_of(&self, id: PointId) -> Pixel {
        self.slot(id).pixel
    }

    pub fn t_of(&self, id: PointId) -> S {
        self.slot(id).t
    }

    pub fn m_of(&self, id: PointId) -> S {
        self.slot(id).m
    }

    pub fn neighbours(&self, id: PointId) -> &[PointId] {
        &self.slot(id).nbrs
    }

    pub fn degree(&self, id: PointId) -> usize {
        self.slot(id).nbrs.len()
    }

    /// Live ids in a pixel, sorted by (t, id).
    pub fn points_in(&self, pixel: Pixel) -> &[PointId] {
        &self.pixel_index[pixel.index(self.n_cols)]
    }

    pub fn distance_between(&self, a: PointId, b: PointId) -> S {
        let (sa, sb) = (self.slot(a), self.slot(b));
        distance(sa.pixel, sa.t, sb.pixel, sb.t, self.geometry.l_z)
    }

    /// Whether depth `t` respects the hard-core constraint in `pixel`,
    /// ignoring the `exclude` ids (the point being shifted, or the pair being
    /// merged).
    pub fn hard_core_ok(&self, pixel: Pixel, t: S, exclude: &[PointId]) -> bool {
        self.points_in(pixel).iter().all(|&other| {
            exclude.contains(&other) || (self.slot(other).t - t).abs() >= self.geometry.d_min
        })
    }

    fn pixel_insert(&mut self, id: PointId) {
        let pixel = self.slot(id).pixel;
        let key = (self.slot(id).t, id);
        let idx = pixel.index(self.n_cols);
        let pos = self.pixel_index[idx]
            .binary_search_by(|&probe| {
                let s = self.slots[probe.0 as usize].as_ref().unwrap();
                (s.t, probe).partial_cmp(&key).unwrap()
            })
            .unwrap_err();
        self.pixel_index[idx].insert(pos, id);
    }

    fn pixel_remove(&mut self, id: PointId, pixel: Pixel) {
        let list = &mut self.pixel_index[pixel.index(self.n_cols)];
        let pos = list.iter().position(|&x| x == id).expect("indexed point");
        list.remove(pos);
    }

    /// In-grid pixels within the cuboid pixel half-width, excluding `pixel`.
    pub fn adjacent_pixels(&self, pixel: Pixel) -> Vec<Pixel> {
        let w = self.geometry.pixel_halfwidth as i64;
        let mut out = Vec::with_capacity(8);
        for dr in -w..=w {
            for dc in -w..=w {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (r, c) = (pixel.r as i64 + dr, pixel.c as i64 + dc);
                if r >= 0 && (r as usize) < self.n_rows && c >= 0 && (c as usize) < self.n_cols {
                    out.push(Pixel { r: r as u32, c: c as u32 });
                }
            }
        }
        out
    }

    /// The closest in-window candidate to depth `t` among points of `pixel`;
    /// ties broken by (t, id).
    fn best_candidate(&self, pixel: Pixel, t: S) -> Option<PointId> {
        let mut best: Option<(S, S, PointId)> = None;
        for &cand in self.points_in(pixel) {
            let ct = self.slot(cand).t;
            let gap = (ct - t).abs();
            if gap <= self.geometry.n_b {
                let key = (gap, ct, cand);
                if best.is_none_or(|(bg, bt, bid)| key < (bg, bt, bid)) {
                    best = Some(key);
                }
            }
        }
        best.map(|(_, _, id)| id)
    }

    /// Recompute the mutual-nearest matching between `pixel` and each
    /// neighbouring pixel, recording edge changes in `diff`.
    fn rematch_around(&mut self, pixel: Pixel, diff: &mut AdjacencyDiff) {
        for other in self.adjacent_pixels(pixel) {
            self.rematch_pair(pixel, other, diff);
        }
    }

    fn rematch_pair(&mut self, a: Pixel, b: Pixel, diff: &mut AdjacencyDiff) {
        // Desired matching: p in a, q in b are matched iff q is p's best
        // candidate in b and p is q's best candidate in a.
        let a_ids: Vec<PointId> = self.points_in(a).to_vec();
        for p in a_ids {
            let pt = self.slot(p).t;
            let desired = self.best_candidate(b, pt).filter(|&q| {
                let qt = self.slot(q).t;
                self.best_candidate(a, qt) == Some(p)
            });
            let current = self
                .slot(p)
                .nbrs
                .iter()
                .copied()
                .find(|&q| self.slot(q).pixel == b);
            if desired == current {
                continue;
            }
            if let Some(q) = current {
                self.unlink(p, q);
                diff.removed.push(ordered(p, q));
            }
            if let Some(q) = desired {
                self.link(p, q);
                diff.added.push(ordered(p, q));
            }
        }
    }

    fn link(&mut self, a: PointId, b: PointId) {
        for (x, y) in [(a, b), (b, a)] {
            let nbrs = &mut self.slots[x.0 as usize].as_mut().unwrap().nbrs;
            let pos = nbrs.binary_search(&y).unwrap_err();
            nbrs.insert(pos, y);
        }
    }

    fn unlink(&mut self, a: PointId, b: PointId) {
        for (x, y) in [(a, b), (b, a)] {
            let nbrs = &mut self.slots[x.0 as usize].as_mut().unwrap().nbrs;
            let pos = nbrs.binary_search(&y).expect("linked edge");
            nbrs.remove(pos);
        }
    }

    /// Insert a point. Fails when the hard-core constraint against existing
    /// same-pixel points is violated (state untouched).
    pub fn insert(
        &mut self,
        pixel: Pixel,
        t: S,
        m: S,
    ) -> Result<(PointId, AdjacencyDiff), HardCoreViolation> {
        if !self.hard_core_ok(pixel, t, &[]) {
            return Err(HardCoreViolation::TooClose { r: pixel.r, c: pixel.c });
        }
        let id = match self.free.pop() {
            Some(idx) => PointId(idx),
            None => {
                self.slots.push(None);
                PointId(self.slots.len() as u32 - 1)
            }
        };
        let dense_idx = self.dense.len() as u32;
        self.dense.push(id);
        self.slots[id.0 as usize] =
            Some(Slot { pixel, t, m, nbrs: Vec::new(), dense_idx });
        self.pixel_insert(id);
        let mut diff = AdjacencyDiff::default();
        self.rematch_around(pixel, &mut diff);
        self.labels_dirty = true;
        Ok((id, diff))
    }

    /// Arena capacity, for detecting whether an insert grew it.
    pub fn arena_len(&self) -> usize {
        self.slots.len()
    }

    /// Exact undo of `insert`: like `remove`, but when the insert grew the
    /// slot arena (`grew`, as observed via `arena_len` around the insert) the
    /// arena shrinks back instead of freeing the slot, so the pre-insert
    /// state is restored bit for bit.
    pub fn retract(&mut self, id: PointId, grew: bool) -> RemovedPoint<S> {
        let removed = self.remove(id);
        if grew {
            debug_assert_eq!(id.0 as usize, self.slots.len() - 1);
            debug_assert_eq!(self.free.last(), Some(&id.0));
            self.free.pop();
            self.slots.pop();
        }
        removed
    }

    /// Undo of `remove`: re-insert under the original id and dense position.
    /// The adjacency is re-derived (it is a pure function of the point set).
    pub fn reinsert(&mut self, removed: &RemovedPoint<S>) -> AdjacencyDiff {
        let point = removed.point;
        let id = point.id;
        if id.0 as usize >= self.slots.len() {
            // the slot was retracted in the meantime; grow the arena back
            debug_assert_eq!(id.0 as usize, self.slots.len());
            self.slots.resize_with(id.0 as usize + 1, || None);
        } else {
            let pos = self
                .free
                .iter()
                .position(|&x| x == id.0)
                .expect("id must be free for reinsertion");
            self.free.swap_remove(pos);
        }
        let dense_idx = self.dense.len() as u32;
        self.dense.push(id);
        self.slots[id.0 as usize] = Some(Slot {
            pixel: point.pixel,
            t: point.t,
            m: point.m,
            nbrs: Vec::new(),
            dense_idx,
        });
        // Restore the dense position the point occupied before removal.
        let target = removed.dense_idx as usize;
        let last = self.dense.len() - 1;
        if target != last {
            self.dense.swap(target, last);
            let other = self.dense[last];
            self.slots[other.0 as usize].as_mut().unwrap().dense_idx = last as u32;
            self.slots[id.0 as usize].as_mut().unwrap().dense_idx = target as u32;
        }
        self.pixel_insert(id);
        let mut diff = AdjacencyDiff::default();
        self.rematch_around(point.pixel, &mut diff);
        self.labels_dirty = true;
        diff
    }

    /// Remove a point, returning its record and the adjacency changes.
    pub fn remove(&mut self, id: PointId) -> RemovedPoint<S> {
        let record = self.point(id);
        let mut diff = AdjacencyDiff::default();
        let nbrs: Vec<PointId> = self.slot(id).nbrs.clone();
        for q in nbrs {
            self.unlink(id, q);
            diff.removed.push(ordered(id, q));
        }
        self.pixel_remove(id, record.pixel);
        let slot = self.slots[id.0 as usize].take().unwrap();
        let dense_idx = slot.dense_idx;
        self.dense.swap_remove(dense_idx as usize);
        if let Some(&moved) = self.dense.get(dense_idx as usize) {
            self.slots[moved.0 as usize].as_mut().unwrap().dense_idx = dense_idx;
        }
        self.free.push(id.0);
        // Removing the point may restore matches among the remaining points.
        self.rematch_around(record.pixel, &mut diff);
        self.labels_dirty = true;
        RemovedPoint { point: record, dense_idx, diff }
    }

    /// Move a point to a new depth within its pixel.
    pub fn shift(&mut self, id: PointId, t_new: S) -> Result<AdjacencyDiff, HardCoreViolation> {
        let pixel = self.slot(id).pixel;
        if !self.hard_core_ok(pixel, t_new, &[id]) {
            return Err(HardCoreViolation::TooClose { r: pixel.r, c: pixel.c });
        }
        self.pixel_remove(id, pixel);
        self.slots[id.0 as usize].as_mut().unwrap().t = t_new;
        self.pixel_insert(id);
        let mut diff = AdjacencyDiff::default();
        self.rematch_around(pixel, &mut diff);
        if !diff.is_empty() {
            self.labels_dirty = true;
        }
        Ok(diff)
    }

    pub fn set_mark(&mut self, id: PointId, m: S) {
        self.slots[id.0 as usize].as_mut().unwrap().m = m;
    }

    /// Connected-surface label of each live point (the minimum point id in
    /// its adjacency component). Recomputed lazily after structural edits.
    pub fn surface_label(&mut self, id: PointId) -> u32 {
        self.refresh_labels();
        self.labels[id.0 as usize]
    }

    fn refresh_labels(&mut self) {
        if !self.labels_dirty && self.labels.len() == self.slots.len() {
            return;
        }
        self.labels = vec![u32::MAX; self.slots.len()];
        let mut order: Vec<PointId> = self.dense.clone();
        order.sort_unstable();
        for &seed in &order {
            if self.labels[seed.0 as usize] != u32::MAX {
                continue;
            }
            let label = seed.0;
            let mut stack = vec![seed];
            self.labels[seed.0 as usize] = label;
            while let Some(cur) = stack.pop() {
                let nbrs = self.slot(cur).nbrs.clone();
                for nb in nbrs {
                    if self.labels[nb.0 as usize] == u32::MAX {
                        self.labels[nb.0 as usize] = label;
                        stack.push(nb);
                    }
                }
            }
        }
        self.labels_dirty = false;
    }

    /// Number of distinct surfaces.
    pub fn n_surfaces(&mut self) -> usize {
        self.refresh_labels();
        let mut labels: Vec<u32> = self.dense.iter().map(|id| self.labels[id.0 as usize]).collect();
        labels.sort_unstable();
        labels.dedup();
        labels.len()
    }

    /// Export rows in raster order with surfaces renumbered by first
    /// appearance (deterministic output).
    pub fn export_rows(&mut self) -> Vec<PointRow<S>> {
        self.refresh_labels();
        let mut rows = Vec::with_capacity(self.len());
        let mut renumber = std::collections::BTreeMap::<u32, u32>::new();
        for pix_idx in 0..self.pixel_index.len() {
            for &id in &self.pixel_index[pix_idx] {
                let s = self.slot(id);
                let label = self.labels[id.0 as usize];
                let next = renumber.len() as u32;
                let surface_id = *renumber.entry(label).or_insert(next);
                rows.push(PointRow {
                    i: s.pixel.r + 1,
                    j: s.pixel.c + 1,
                    t: s.t,
                    intensity: s.m.exp(),
                    surface_id,
                });
            }
        }
        rows
    }

    /// All live points, sorted by id (for snapshots and oracles).
    pub fn points_sorted(&self) -> Vec<Point<S>> {
        let mut ids = self.dense.clone();
        ids.sort_unstable();
        ids.into_iter().map(|id| self.point(id)).collect()
    }
}

#[inline]
fn ordered(a: PointId, b: PointId) -> (PointId, PointId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Brute-force adjacency per the mutual-nearest definition, as a test oracle
/// and for documentation of the rule itself.
pub fn brute_force_adjacency<S: Real>(
    config: &PointConfiguration<S>,
) -> std::collections::BTreeSet<(PointId, PointId)> {
    let mut edges = std::collections::BTreeSet::new();
    let ids: Vec<PointId> = {
        let mut v = config.ids().to_vec();
        v.sort_unstable();
        v
    };
    let nearest = |t: S, in_pixel: Pixel| -> Option<PointId> {
        let mut best: Option<(S, S, PointId)> = None;
        for &cand in config.points_in(in_pixel) {
            let ct = config.t_of(cand);
            let gap = (ct - t).abs();
            if gap <= config.geometry().n_b {
                let key = (gap, ct, cand);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        }
        best.map(|(_, _, id)| id)
    };
    for &a in &ids {
        for &b in &ids {
            if b <= a {
                continue;
            }
            let (pa, pb) = (config.pixel_of(a), config.pixel_of(b));
            if pa == pb || pa.chebyshev(&pb) > config.geometry().pixel_halfwidth {
                continue;
            }
            let (ta, tb) = (config.t_of(a), config.t_of(b));
            if (ta - tb).abs() > config.geometry().n_b {
                continue;
            }
            if nearest(ta, pb) == Some(b) && nearest(tb, pa) == Some(a) {
                edges.insert((a, b));
            }
        }
    }
    edges
}

/// Adjacency edge set of a configuration (sorted), for oracle comparison.
pub fn edge_set<S: Real>(
    config: &PointConfiguration<S>,
) -> std::collections::BTreeSet<(PointId, PointId)> {
    let mut edges = std::collections::BTreeSet::new();
    for &id in config.ids() {
        for &nb in config.neighbours(id) {
            edges.insert(ordered(id, nb));
        }
    }
    edges
}

/// Expand a coarse configuration to the fine grid: each coarse point becomes
/// an `n_bin x n_bin` block of fine points, depths and log-intensities
/// interpolated per surface from that surface's coarse points, intensities
/// divided by `n_bin^2` (coarse histograms aggregate that many fine pixels).
/// Hard-core collisions keep the higher-intensity point.
pub fn upsample<S: Real>(
    coarse: &mut PointConfiguration<S>,
    n_bin: usize,
    fine_rows: usize,
    fine_cols: usize,
    fine_geometry: Geometry<S>,
) -> PointConfiguration<S> {
    let mut fine = PointConfiguration::new(fine_rows, fine_cols, fine_geometry);
    if n_bin == 1 {
        for p in coarse.points_sorted() {
            let _ = fine.insert(p.pixel, p.t, p.m);
        }
        return fine;
    }

    // Per surface: map coarse pixel -> (t, m).
    let mut surfaces = std::collections::BTreeMap::<u32, std::collections::BTreeMap<Pixel, (S, S)>>::new();
    for p in coarse.points_sorted() {
        let label = coarse.surface_label(p.id);
        surfaces.entry(label).or_default().insert(p.pixel, (p.t, p.m));
    }

    let mark_shift = S::of_usize(n_bin * n_bin).ln();
    for (_, surface) in surfaces {
        for &pixel in surface.keys() {
            for dr in 0..n_bin {
                for dc in 0..n_bin {
                    let fr = pixel.r as usize * n_bin + dr;
                    let fc = pixel.c as usize * n_bin + dc;
                    if fr >= fine_rows || fc >= fine_cols {
                        continue;
                    }
                    // Continuous coarse coordinates of the fine pixel centre.
                    let u = (S::of_usize(fr) + S::of(0.5)) / S::of_usize(n_bin) - S::of(0.5);
                    let v = (S::of_usize(fc) + S::of(0.5)) / S::of_usize(n_bin) - S::of(0.5);
                    let (t, m) = interpolate_surface(&surface, u, v);
                    let m = m - mark_shift;
                    let fine_pix = Pixel::new(fr, fc);
                    if fine.insert(fine_pix, t, m).is_err() {
                        // Hard-core conflict across surfaces: keep the brightest
                        // of the new point and everything it clashes with.
                        let clashes: Vec<PointId> = fine
                            .points_in(fine_pix)
                            .iter()
                            .copied()
                            .filter(|&q| (fine.t_of(q) - t).abs() < fine_geometry.d_min)
                            .collect();
                        if clashes.iter().all(|&q| fine.m_of(q) < m) {
                            for q in clashes {
                                fine.remove(q);
                            }
                            fine.insert(fine_pix, t, m).expect("clashes removed");
                        }
                    }
                }
            }
        }
    }
    fine
}

/// Bilinear interpolation over the 2x2 coarse cell around (u, v), restricted
/// to cell corners holding surface points (weights renormalized). The block
/// being expanded always contributes one corner, so a value always exists.
fn interpolate_surface<S: Real>(
    surface: &std::collections::BTreeMap<Pixel, (S, S)>,
    u: S,
    v: S,
) -> (S, S) {
    let base_r = u.floor();
    let base_c = v.floor();
    let fu = u - base_r;
    let fv = v - base_c;
    let mut acc_t = S::zero();
    let mut acc_m = S::zero();
    let mut acc_w = S::zero();
    for (dr, wr) in [(0i64, S::one() - fu), (1, fu)] {
        for (dc, wc) in [(0i64, S::one() - fv), (1, fv)] {
            let r = base_r.to_i64().unwrap_or(0) + dr;
            let c = base_c.to_i64().unwrap_or(0) + dc;
            if r < 0 || c < 0 {
                continue;
            }
            let key = Pixel { r: r as u32, c: c as u32 };
            if let Some(&(t, m)) = surface.get(&key) {
                let w = wr * wc;
                acc_t += w * t;
                acc_m += w * m;
                acc_w += w;
            }
        }
    }
    if acc_w > S::zero() {
        (acc_t / acc_w, acc_m / acc_w)
    } else {
        // All weighted corners empty (weights vanished on present corners):
        // fall back to the nearest surface point.
        let mut best: Option<(S, (S, S))> = None;
        for (&pix, &val) in surface {
            let dr = S::of(pix.r as f64) - u;
            let dc = S::of(pix.c as f64) - v;
            let d2 = dr * dr + dc * dc;
            if best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, val));
            }
        }
        best.expect("surface is non-empty").1
    }
}
