//! Multi-surface 3D reconstruction from single-photon lidar timing histograms.
//!
//! The observation is a sparse per-pixel histogram cube of photon counts. The
//! scene is modelled as a marked spatial point process: each point is one
//! surface return in one pixel, carrying a log-intensity mark, repelled from
//! same-pixel points by a hard-core constraint and attracted to returns in
//! neighbouring pixels by an area-interaction term. Log-intensities follow a
//! Gaussian Markov random field over the induced surface graph and background
//! levels follow a hidden gamma Markov random field. Inference runs a
//! reversible-jump MCMC sampler (birth/death, dilation/erosion, shift, mark,
//! split/merge) with a data-augmented Gibbs update for the background, wrapped
//! in a coarse-to-fine multiresolution driver.
//!
//! Core numerics are generic over the scalar type through [`Real`]; the
//! `f64`-backed aliases at the crate root are what the CLI and most users
//! want.

pub mod background;
pub mod grid;
pub mod likelihood;
pub mod linalg;
pub mod metrics;
pub mod multires;
pub mod photon_data;
pub mod point_cloud;
pub mod priors;
pub mod sampler;

use std::fmt;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01, Poisson, StandardNormal};

/// Scalar type the numerical core is generic over: `f32` or `f64`.
///
/// Besides the usual float arithmetic this carries the distribution draws the
/// samplers need, so `rand_distr` trait bounds never leak into signatures.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` constant.
    fn of(v: f64) -> Self;

    /// Conversion from a count or index.
    fn of_usize(v: usize) -> Self;

    /// Parse from decimal text (file I/O).
    fn parse(s: &str) -> Option<Self>;

    /// Standard normal draw.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw on the open interval (0, 1).
    fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw on [lo, hi).
    fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;

    /// Gamma draw with the given shape and scale.
    fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self;

    /// Poisson count draw; `mean <= 0` yields 0.
    fn poisson_draw<R: Rng + ?Sized>(rng: &mut R, mean: Self) -> u64;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn of_usize(v: usize) -> Self {
                v as $t
            }

            #[inline]
            fn parse(s: &str) -> Option<Self> {
                s.parse::<$t>().ok()
            }

            #[inline]
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Open01.sample(rng)
            }

            #[inline]
            fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }

            #[inline]
            fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self {
                Gamma::new(shape, scale)
                    .expect("gamma: invalid shape/scale")
                    .sample(rng)
            }

            #[inline]
            fn poisson_draw<R: Rng + ?Sized>(rng: &mut R, mean: Self) -> u64 {
                if mean <= 0.0 {
                    return 0;
                }
                let draw: $t = Poisson::new(mean).expect("poisson: invalid mean").sample(rng);
                draw as u64
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Normal draw helper built on the [`Real`] hooks.
#[inline]
pub fn normal_draw<S: Real, R: Rng + ?Sized>(rng: &mut R, mean: S, std: S) -> S {
    mean + S::std_normal(rng) * std
}

/// Inverse-gamma draw with the given shape and scale (1/x of a gamma draw).
#[inline]
pub fn inverse_gamma_draw<S: Real, R: Rng + ?Sized>(rng: &mut R, shape: S, scale: S) -> S {
    S::gamma_draw(rng, shape, scale.recip()).recip()
}

/// Binomial draw; the probability is converted to `f64` internally
/// (`rand_distr`'s binomial is not generic over the float type).
#[inline]
pub fn binomial_draw<S: Real, R: Rng + ?Sized>(rng: &mut R, n: u64, p: S) -> u64 {
    let p = p.to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    rand_distr::Binomial::new(n, p)
        .expect("binomial: invalid parameters")
        .sample(rng)
}

/// Default `f64`-backed aliases.
pub type Cube = photon_data::SparseLidarCube<f64>;
pub type Irf = photon_data::ImpulseResponse<f64>;
pub type Scene = photon_data::GroundTruthScene<f64>;
pub type Config = point_cloud::PointConfiguration<f64>;
pub type Hyper = priors::HyperParameters<f64>;
pub type Background = background::BackgroundField<f64>;
