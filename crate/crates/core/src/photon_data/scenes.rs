//! Synthetic scene and instrument-response builders used by the generator
//! CLI, the evaluation sweep and the test suites.

use crate::grid::{Grid, Pixel};
use crate::photon_data::{GroundTruthScene, ImpulseResponse, TruthPoint};
use crate::Real;

/// Unit-peak response: linear rise over `attack` bins, exponential decay over
/// `decay` bins down to 1e-4 of the peak (well above the support threshold).
pub fn make_irf<S: Real>(attack: usize, decay: usize) -> ImpulseResponse<S> {
    assert!(attack >= 1 && decay >= 1);
    let mut raw = Vec::with_capacity(attack + decay + 1);
    for i in 0..attack {
        raw.push(S::of_usize(i + 1) / S::of_usize(attack + 1));
    }
    raw.push(S::one());
    let rate = S::of(1e-4).ln() / S::of_usize(decay);
    for j in 1..=decay {
        raw.push((rate * S::of_usize(j)).exp());
    }
    ImpulseResponse::new(raw).expect("constructed response is valid")
}

/// Parameters shared by the scene builders: photon budgets are per pixel and
/// translate to intensities through the response sum.
#[derive(Debug, Clone, Copy)]
pub struct SceneBudget<S> {
    /// Mean background photons per pixel over the whole depth range.
    pub background_photons: S,
    /// Photons contributed by one return of the main (back) surface.
    pub back_photons: S,
    /// Photons contributed by one return of the front surface, where present.
    pub front_photons: S,
}

impl<S: Real> Default for SceneBudget<S> {
    fn default() -> Self {
        // Roughly 11 photons per pixel with 4 due to surfaces.
        Self {
            background_photons: S::of(7.0),
            back_photons: S::of(3.0),
            front_photons: S::of(2.5),
        }
    }
}

fn ramp_background<S: Real>(n_rows: usize, n_cols: usize, n_bins: usize, photons: S) -> Grid<S> {
    // Linear ramp along columns from 0.5x to 1.5x the mean level.
    let mean = photons / S::of_usize(n_bins);
    Grid::from_fn(n_rows, n_cols, |_, c| {
        let frac = if n_cols > 1 {
            S::of_usize(c) / S::of_usize(n_cols - 1)
        } else {
            S::of(0.5)
        };
        mean * (S::of(0.5) + frac)
    })
}

/// Two planar surfaces: a full-frame back plane whose depth ramps across
/// rows, and a semi-transparent front plate over the central block, so the
/// covered pixels hold two returns.
pub fn two_surface_scene<S: Real>(
    n_rows: usize,
    n_cols: usize,
    n_bins: usize,
    irf_sum: S,
    budget: SceneBudget<S>,
) -> GroundTruthScene<S> {
    assert!(n_bins >= 8);
    let back_r = budget.back_photons / irf_sum;
    let front_r = budget.front_photons / irf_sum;
    let t_lo = S::of_usize(n_bins) * S::of(0.60);
    let t_hi = S::of_usize(n_bins) * S::of(0.73);
    let t_front = S::of_usize(n_bins) * S::of(0.27);
    let mut points = Vec::new();
    let (r0, r1) = (n_rows / 3, n_rows - n_rows / 3);
    let (c0, c1) = (n_cols / 3, n_cols - n_cols / 3);
    for r in 0..n_rows {
        for c in 0..n_cols {
            let frac = if n_rows > 1 {
                S::of_usize(r) / S::of_usize(n_rows - 1)
            } else {
                S::zero()
            };
            points.push(TruthPoint {
                pixel: Pixel::new(r, c),
                t: t_lo + (t_hi - t_lo) * frac,
                intensity: back_r,
                surface: 0,
            });
            if (r0..r1).contains(&r) && (c0..c1).contains(&c) {
                points.push(TruthPoint {
                    pixel: Pixel::new(r, c),
                    t: t_front + S::of_usize(c - c0) * S::of(0.2),
                    intensity: front_r,
                    surface: 1,
                });
            }
        }
    }
    GroundTruthScene {
        n_rows,
        n_cols,
        points,
        background: ramp_background(n_rows, n_cols, n_bins, budget.background_photons),
    }
}

/// Three tilted rectangular plates plus a paraboloid bowl, over a linear
/// background ramp.
pub fn plates_and_paraboloid_scene<S: Real>(
    n_rows: usize,
    n_cols: usize,
    n_bins: usize,
    irf_sum: S,
    budget: SceneBudget<S>,
) -> GroundTruthScene<S> {
    let r_plate = budget.back_photons / irf_sum;
    let r_ball = budget.front_photons / irf_sum;
    let t = |f: f64| S::of_usize(n_bins) * S::of(f);
    let mut points = Vec::new();

    // Plates: (row range, col range, base depth fraction, per-row slope in bins).
    let h = n_rows;
    let w = n_cols;
    let plates = [
        (0..h / 2, 0..w / 2, 0.25, 0.4),
        (h / 2..h, 0..w / 3, 0.55, -0.3),
        (h / 3..2 * h / 3, w / 2..w, 0.75, 0.2),
    ];
    for (surface, (rows, cols, base, slope)) in plates.into_iter().enumerate() {
        for r in rows.clone() {
            for c in cols.clone() {
                points.push(TruthPoint {
                    pixel: Pixel::new(r, c),
                    t: t(base) + S::of(slope) * S::of_usize(r - rows.start),
                    intensity: r_plate,
                    surface: surface as u32,
                });
            }
        }
    }

    // Paraboloid bowl in the lower-right quadrant.
    let (cr, cc) = (3 * h / 4, 3 * w / 4);
    let radius = (h.min(w) / 5).max(2);
    for r in cr.saturating_sub(radius)..(cr + radius).min(h) {
        for c in cc.saturating_sub(radius)..(cc + radius).min(w) {
            let dr = r as f64 - cr as f64;
            let dc = c as f64 - cc as f64;
            let d2 = dr * dr + dc * dc;
            if d2 <= (radius * radius) as f64 {
                points.push(TruthPoint {
                    pixel: Pixel::new(r, c),
                    t: t(0.40) + S::of(d2 * 0.5),
                    intensity: r_ball,
                    surface: 3,
                });
            }
        }
    }

    GroundTruthScene {
        n_rows,
        n_cols,
        points,
        background: ramp_background(n_rows, n_cols, n_bins, budget.background_photons),
    }
}

/// Flat single-surface scene used by the thresholding Monte Carlo and the
/// SBR sweep: one return per pixel at a fixed depth, uniform background.
pub fn flat_scene<S: Real>(
    n_rows: usize,
    n_cols: usize,
    n_bins: usize,
    depth_bin: S,
    irf_sum: S,
    signal_photons: S,
    background_photons: S,
) -> GroundTruthScene<S> {
    let intensity = signal_photons / irf_sum;
    let points = (0..n_rows)
        .flat_map(|r| (0..n_cols).map(move |c| (r, c)))
        .map(|(r, c)| TruthPoint { pixel: Pixel::new(r, c), t: depth_bin, intensity, surface: 0 })
        .collect();
    GroundTruthScene {
        n_rows,
        n_cols,
        points,
        background: Grid::fill(n_rows, n_cols, background_photons / S::of_usize(n_bins)),
    }
}
