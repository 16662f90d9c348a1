//! Multiscale area-interaction processes.
//!
//! A model is a rate `λ` plus an ordered list of scale terms `(γ_t, G_t)` with
//! unnormalised density
//!
//! ```text
//! p(X) ∝ λ^{N(X)} ∏_t γ_t^{-m(X ⊕ G_t)}
//! ```
//!
//! `γ_t > 1` is attractive at scale `r_t`, `γ_t < 1` repulsive. The standard
//! area-interaction process is the one-term case and the two-scale model with
//! `γ₁ ≥ 1 ≥ γ₂` is built by [`MultiscaleModel::two_scale`]. All arithmetic is
//! done on the log scale, so `γ` as small as `1e-200` is harmless.
//!
//! Each term is a factor of the density whose conditional intensity is
//! monotone in the configuration, which is what the sandwiching sampler in
//! [`crate::cftp`] needs: see [`MultiscaleModel::birth_bounds`].

use std::f64::consts::LN_10;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AreaGrid, Boundary, GeometryError, Grain, Point, PointPattern, Window, DEFAULT_ROWS_PER_RADIUS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("rate lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("log10 gamma must be finite, got {0}")]
    InvalidGamma(f64),
    #[error("log10 gamma1 must be >= 0 (gamma1 >= 1), got {0}")]
    Gamma1OutOfRange(f64),
    #[error("log10 gamma2 must be <= 0 (gamma2 <= 1), got {0}")]
    Gamma2OutOfRange(f64),
    #[error("attractive and repulsive terms share radius {0}")]
    MixedDirectionSharedRadius(f64),
    #[error("point ({x}, {y}) is not a finite point of the window")]
    BadPoint { x: f64, y: f64 },
    #[error("lower pattern is not a subset of the upper pattern")]
    NotNested,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One interaction scale: `γ = 10^log10_gamma` acting on discs of radius `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleTerm {
    log10_gamma: f64,
    grain: Grain,
}

impl ScaleTerm {
    pub fn new(log10_gamma: f64, radius: f64) -> Result<Self, ModelError> {
        if !log10_gamma.is_finite() {
            return Err(ModelError::InvalidGamma(log10_gamma));
        }
        Ok(Self {
            log10_gamma,
            grain: Grain::new(radius)?,
        })
    }

    pub fn log10_gamma(&self) -> f64 {
        self.log10_gamma
    }

    pub fn ln_gamma(&self) -> f64 {
        self.log10_gamma * LN_10
    }

    pub fn grain(&self) -> &Grain {
        &self.grain
    }

    pub fn radius(&self) -> f64 {
        self.grain.radius()
    }
}

/// How a factor's conditional intensity `λ_f(u; X)` responds to growing `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensityTrend {
    /// `X ⊆ Y ⇒ λ_f(u; X) ≤ λ_f(u; Y)` (attractive or constant).
    NonDecreasing,
    /// `X ⊆ Y ⇒ λ_f(u; X) ≥ λ_f(u; Y)` (repulsive).
    NonIncreasing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorKind {
    /// `λ^{N(X)}`.
    Rate { ln_lambda: f64 },
    /// `γ^{-m(X ⊕ G)}`, measured on `grid`.
    Area {
        ln_gamma: f64,
        grain: Grain,
        grid: AreaGrid,
    },
}

/// A monotone factor of the density with uniformly bounded conditional intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneFactor {
    kind: FactorKind,
    trend: IntensityTrend,
    ln_min: f64,
    ln_max: f64,
}

impl MonotoneFactor {
    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn trend(&self) -> IntensityTrend {
        self.trend
    }

    pub fn intensity_min(&self) -> f64 {
        self.ln_min.exp()
    }

    pub fn intensity_max(&self) -> f64 {
        self.ln_max.exp()
    }

    pub fn ln_intensity_min(&self) -> f64 {
        self.ln_min
    }

    pub fn ln_intensity_max(&self) -> f64 {
        self.ln_max
    }

    /// `ln λ_f(u; X)` where `others` holds (at least) the points of `X` near `u`.
    pub fn ln_cond_intensity(&self, u: Point, others: &[Point]) -> f64 {
        match self.kind {
            FactorKind::Rate { ln_lambda } => ln_lambda,
            FactorKind::Area { ln_gamma, grain, grid } => {
                if ln_gamma == 0.0 {
                    0.0
                } else {
                    -grid.added_area(u, others, &grain) * ln_gamma
                }
            }
        }
    }

    pub fn cond_intensity(&self, u: Point, pattern: &PointPattern) -> f64 {
        self.ln_cond_intensity(u, pattern.points()).exp()
    }
}

/// Lower and upper acceptance thresholds for a birth in the coupled chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthBounds {
    pub lower: f64,
    pub upper: f64,
}

/// JSON model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lambda: f64,
    pub terms: Vec<TermConfig>,
    pub window: [f64; 4],
    #[serde(default)]
    pub boundary: Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermConfig {
    pub log10_gamma: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleModel {
    lambda: f64,
    terms: Vec<ScaleTerm>,
    window: Window,
    /// One area grid per term, `radius / rows_per_radius` rows high.
    grids: Vec<AreaGrid>,
    /// Per-term upper bound on the measured area of a single grain.
    grain_bounds: Vec<f64>,
}

impl MultiscaleModel {
    pub fn new(lambda: f64, terms: Vec<ScaleTerm>, window: Window) -> Result<Self, ModelError> {
        Self::with_resolution(lambda, terms, window, DEFAULT_ROWS_PER_RADIUS)
    }

    /// Same model with each term's area measured on rows `radius / rows_per_radius` high.
    pub fn with_resolution(
        lambda: f64,
        terms: Vec<ScaleTerm>,
        window: Window,
        rows_per_radius: f64,
    ) -> Result<Self, ModelError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ModelError::InvalidLambda(lambda));
        }
        let mut grids = Vec::with_capacity(terms.len());
        for (i, a) in terms.iter().enumerate() {
            let grid = AreaGrid::with_step(window, a.radius() / rows_per_radius)?;
            grid.check_grain(a.grain())?;
            grids.push(grid);
            for b in &terms[i + 1..] {
                let opposed = a.log10_gamma * b.log10_gamma < 0.0;
                if opposed && a.radius() == b.radius() {
                    return Err(ModelError::MixedDirectionSharedRadius(a.radius()));
                }
            }
        }
        let grain_bounds = terms
            .iter()
            .zip(&grids)
            .map(|(t, g)| g.grain_area_bound(t.grain()))
            .collect();
        Ok(Self {
            lambda,
            terms,
            window,
            grids,
            grain_bounds,
        })
    }

    /// The model with `γ₁ ∈ [1, ∞)` at radius `r1` and `γ₂ ∈ (0, 1]` at radius `r2`.
    pub fn two_scale(
        lambda: f64,
        log10_gamma1: f64,
        log10_gamma2: f64,
        r1: f64,
        r2: f64,
        window: Window,
    ) -> Result<Self, ModelError> {
        if log10_gamma1.is_nan() || log10_gamma1 < 0.0 {
            return Err(ModelError::Gamma1OutOfRange(log10_gamma1));
        }
        if log10_gamma2.is_nan() || log10_gamma2 > 0.0 {
            return Err(ModelError::Gamma2OutOfRange(log10_gamma2));
        }
        Self::new(
            lambda,
            vec![ScaleTerm::new(log10_gamma1, r1)?, ScaleTerm::new(log10_gamma2, r2)?],
            window,
        )
    }

    pub fn poisson(lambda: f64, window: Window) -> Result<Self, ModelError> {
        Self::new(lambda, Vec::new(), window)
    }

    pub fn from_config(config: &ModelConfig) -> Result<Self, ModelError> {
        let [xmin, xmax, ymin, ymax] = config.window;
        let window = Window::new(xmin, xmax, ymin, ymax, config.boundary)?;
        let terms = config
            .terms
            .iter()
            .map(|t| ScaleTerm::new(t.log10_gamma, t.radius))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(config.lambda, terms, window)
    }

    pub fn to_config(&self) -> ModelConfig {
        let w = &self.window;
        ModelConfig {
            lambda: self.lambda,
            terms: self
                .terms
                .iter()
                .map(|t| TermConfig {
                    log10_gamma: t.log10_gamma,
                    radius: t.radius(),
                })
                .collect(),
            window: [w.xmin(), w.xmax(), w.ymin(), w.ymax()],
            boundary: w.boundary(),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn terms(&self) -> &[ScaleTerm] {
        &self.terms
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    /// Area grid used for term `i`.
    pub fn term_grid(&self, i: usize) -> &AreaGrid {
        &self.grids[i]
    }

    /// Interaction range: the largest radius with a non-trivial `γ`.
    pub fn interaction_radius(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.log10_gamma != 0.0)
            .map(ScaleTerm::radius)
            .fold(0.0, f64::max)
    }

    fn check_point(&self, u: Point) -> Result<(), ModelError> {
        if !self.window.contains(u) {
            return Err(ModelError::BadPoint { x: u.x, y: u.y });
        }
        Ok(())
    }

    /// Added areas `m((u ⊕ G_t) \ (X ⊕ G_t))` for every term.
    pub fn added_areas(&self, u: Point, others: &[Point]) -> Vec<f64> {
        self.terms
            .iter()
            .zip(&self.grids)
            .map(|(t, g)| g.added_area(u, others, t.grain()))
            .collect()
    }

    /// `ln λ(u; X)`; `others` must contain every point of `X` within the
    /// interaction radius of `u` and must not contain `u` itself.
    pub fn ln_papangelou(&self, u: Point, others: &[Point]) -> f64 {
        self.lambda.ln() + self.ln_interaction(u, others)
    }

    /// `ln(λ(u; X) / λ)`.
    fn ln_interaction(&self, u: Point, others: &[Point]) -> f64 {
        let mut ln = 0.0;
        for (t, g) in self.terms.iter().zip(&self.grids) {
            let lg = t.ln_gamma();
            if lg != 0.0 {
                ln -= g.added_area(u, others, t.grain()) * lg;
            }
        }
        ln
    }

    /// Papangelou conditional intensity `λ(u; X)`.
    pub fn papangelou(&self, u: Point, pattern: &PointPattern) -> Result<f64, ModelError> {
        self.check_point(u)?;
        Ok(self.lambda * self.ln_interaction(u, pattern.points()).exp())
    }

    /// The rate factor followed by one area factor per term.
    pub fn factor_decomposition(&self) -> Vec<MonotoneFactor> {
        let ln_lambda = self.lambda.ln();
        let mut out = vec![MonotoneFactor {
            kind: FactorKind::Rate { ln_lambda },
            trend: IntensityTrend::NonDecreasing,
            ln_min: ln_lambda,
            ln_max: ln_lambda,
        }];
        for ((t, &bound), &grid) in self.terms.iter().zip(&self.grain_bounds).zip(&self.grids) {
            let lg = t.ln_gamma();
            // ln λ_f ranges over [-bound·lnγ, 0] (γ ≥ 1) or [0, -bound·lnγ] (γ ≤ 1)
            let extreme = -bound * lg;
            let (ln_min, ln_max, trend) = if lg >= 0.0 {
                (extreme, 0.0, IntensityTrend::NonDecreasing)
            } else {
                (0.0, extreme, IntensityTrend::NonIncreasing)
            };
            out.push(MonotoneFactor {
                kind: FactorKind::Area {
                    ln_gamma: lg,
                    grain: *t.grain(),
                    grid,
                },
                trend,
                ln_min,
                ln_max,
            });
        }
        out
    }

    /// Per-term `(ln min, ln max)` of the area factors' conditional intensities.
    fn term_log_ranges(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.terms.iter().zip(&self.grain_bounds).map(|(t, &bound)| {
            let extreme = -bound * t.ln_gamma();
            (extreme.min(0.0), extreme.max(0.0))
        })
    }

    pub fn ln_dominating_rate(&self) -> f64 {
        self.lambda.ln() + self.term_log_ranges().map(|(_, hi)| hi).sum::<f64>()
    }

    /// Rate per unit area of the dominating Poisson process: the product of
    /// the factor maxima.
    pub fn dominating_rate(&self) -> f64 {
        self.ln_dominating_rate().exp()
    }

    /// Probability with which a dominating point is kept in the initial lower
    /// configuration: `∏ min λ_f / ∏ max λ_f`.
    pub fn lower_thinning_probability(&self) -> f64 {
        self.term_log_ranges().map(|(lo, hi)| lo - hi).sum::<f64>().exp()
    }

    /// Acceptance thresholds for a birth at `u` given the upper and lower
    /// configurations (`lower ⊆ upper`). Per term, the larger and smaller of
    /// the two conditional intensities give the upper and lower thresholds.
    /// Exactly two area evaluations per non-trivial term.
    pub fn birth_bounds(&self, u: Point, upper: &[Point], lower: &[Point]) -> BirthBounds {
        let mut ln_hi = 0.0;
        let mut ln_lo = 0.0;
        for ((t, g), (_, max)) in self.terms.iter().zip(&self.grids).zip(self.term_log_ranges()) {
            let lg = t.ln_gamma();
            if lg == 0.0 {
                continue;
            }
            let on_upper = -g.added_area(u, upper, t.grain()) * lg;
            let on_lower = -g.added_area(u, lower, t.grain()) * lg;
            ln_hi += on_upper.max(on_lower) - max;
            ln_lo += on_upper.min(on_lower) - max;
        }
        BirthBounds {
            lower: ln_lo.min(0.0).exp(),
            upper: ln_hi.min(0.0).exp(),
        }
    }

    fn nested_bounds(&self, u: Point, upper: &PointPattern, lower: &PointPattern) -> Result<BirthBounds, ModelError> {
        self.check_point(u)?;
        if !lower.is_subset_of(upper) {
            return Err(ModelError::NotNested);
        }
        Ok(self.birth_bounds(u, upper.points(), lower.points()))
    }

    pub fn upper_birth_probability(
        &self,
        u: Point,
        upper: &PointPattern,
        lower: &PointPattern,
    ) -> Result<f64, ModelError> {
        Ok(self.nested_bounds(u, upper, lower)?.upper)
    }

    pub fn lower_birth_probability(
        &self,
        u: Point,
        upper: &PointPattern,
        lower: &PointPattern,
    ) -> Result<f64, ModelError> {
        Ok(self.nested_bounds(u, upper, lower)?.lower)
    }

    /// `ln p(X)` without the normalising constant.
    pub fn log_density_unnormalized(&self, pattern: &PointPattern) -> f64 {
        let mut ln = pattern.len() as f64 * self.lambda.ln();
        for (t, g) in self.terms.iter().zip(&self.grids) {
            let lg = t.ln_gamma();
            if lg != 0.0 {
                ln -= g.dilation_area(pattern.points(), t.grain()) * lg;
            }
        }
        ln
    }

    /// Metropolis–Hastings ratio for proposing a birth at uniform `u`:
    /// `λ(u; X) |W| / (N(X) + 1)`.
    pub fn birth_acceptance_ratio(&self, u: Point, others: &[Point]) -> f64 {
        (self.ln_papangelou(u, others) + self.window.area().ln() - ((others.len() + 1) as f64).ln()).exp()
    }
}

/// Approximate sampler used only as a test oracle: birth–death
/// Metropolis–Hastings started from the empty pattern.
pub fn mh_oracle_sample<R: Rng + ?Sized>(model: &MultiscaleModel, n_steps: usize, rng: &mut R) -> PointPattern {
    let pts = mh_oracle_run(model, Vec::new(), n_steps, rng);
    PointPattern::new(*model.window(), pts).expect("chain states stay inside the window")
}

/// Runs `n_steps` birth–death Metropolis–Hastings steps from `state`.
pub fn mh_oracle_run<R: Rng + ?Sized>(
    model: &MultiscaleModel,
    mut state: Vec<Point>,
    n_steps: usize,
    rng: &mut R,
) -> Vec<Point> {
    let area = model.window().area();
    for _ in 0..n_steps {
        if rng.random::<f64>() < 0.5 {
            let u = model.window().sample_uniform(rng);
            let ratio = model.birth_acceptance_ratio(u, &state);
            if rng.random::<f64>() < ratio {
                state.push(u);
            }
        } else if !state.is_empty() {
            let n = state.len();
            let k = rng.random_range(0..n);
            let x = state.swap_remove(k);
            // death ratio N / (|W| λ(x; X \ x))
            let ln_ratio = (n as f64).ln() - area.ln() - model.ln_papangelou(x, &state);
            if rng.random::<f64>() >= ln_ratio.exp() {
                state.push(x);
                let last = state.len() - 1;
                state.swap(k, last);
            }
        }
    }
    state
}
