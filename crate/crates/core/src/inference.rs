//! Maximum pseudo-likelihood fitting.
//!
//! The log pseudo-likelihood is approximated on a quadrature scheme
//! (data points plus a regular grid of dummy points, counting weights) by
//!
//! ```text
//! logPL(θ) = Σ_j w_j (y_j η_j − exp η_j),   y_j = z_j / w_j,
//! η_j = θ₀ − Σ_t θ_t a_t(u_j),
//! ```
//!
//! where `a_t(u)` is the area `u`'s grain of radius `r_t` adds to the union
//! of the other points' grains, and `θ = (ln λ, ln γ₁, …)`. This is a
//! weighted Poisson log-likelihood, maximised here by Newton's method
//! (equivalently iteratively reweighted least squares) with step halving.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    AreaGrid, CellIndex, GeometryError, Grain, Point, PointPattern, Window, DEFAULT_ROWS_PER_RADIUS,
};
use crate::models::{ModelError, MultiscaleModel, ScaleTerm};

/// Default dummy grid is 32 × 32.
pub const DEFAULT_DUMMY: (usize, usize) = (32, 32);
pub const MAX_ITERATIONS: usize = 100;
/// Relative change in logPL below which the iteration stops.
pub const TOLERANCE: f64 = 1e-8;
/// Relative spread below which a covariate counts as constant.
const GRID_NOISE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("dummy grid must be at least 1 x 1, got {nx} x {ny}")]
    InvalidGrid { nx: usize, ny: usize },
    #[error("cannot fit an empty pattern")]
    EmptyPattern,
    #[error("quadrature scheme does not match the pattern: {0}")]
    SchemeMismatch(&'static str),
    #[error("degenerate design: covariate {name} carries no information beyond the intercept")]
    DegenerateDesign { name: String },
    #[error("radius grid is empty")]
    EmptyRadiusGrid,
    #[error("every cell of the radius profile failed; first error: {0}")]
    AllCellsFailed(Box<InferenceError>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadNode {
    pub location: Point,
    pub weight: f64,
    /// Position in the pattern for data nodes, `None` for dummies.
    pub data_index: Option<usize>,
}

impl QuadNode {
    pub fn is_data(&self) -> bool {
        self.data_index.is_some()
    }

    /// The indicator `z_j`.
    pub fn z(&self) -> f64 {
        if self.is_data() {
            1.0
        } else {
            0.0
        }
    }
}

/// Data points plus one dummy point at the centre of each grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureScheme {
    window: Window,
    nodes: Vec<QuadNode>,
    grid: (usize, usize),
    n_data: usize,
}

impl QuadratureScheme {
    pub fn nodes(&self) -> &[QuadNode] {
        &self.nodes
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn data_count(&self) -> usize {
        self.n_data
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    fn check(&self, pattern: &PointPattern) -> Result<(), InferenceError> {
        if self.window != *pattern.window() {
            return Err(InferenceError::SchemeMismatch("different windows"));
        }
        if self.n_data != pattern.len() {
            return Err(InferenceError::SchemeMismatch("different number of data points"));
        }
        let pts = pattern.points();
        let all_present = self
            .nodes
            .iter()
            .filter_map(|n| n.data_index.map(|i| (i, n.location)))
            .all(|(i, p)| pts.get(i) == Some(&p));
        if !all_present {
            return Err(InferenceError::SchemeMismatch("data nodes differ from the pattern"));
        }
        Ok(())
    }
}

/// Counting-weight scheme: each cell's area is shared equally among its dummy
/// point and the data points falling in it.
pub fn make_quadrature(pattern: &PointPattern, nx: usize, ny: usize) -> Result<QuadratureScheme, InferenceError> {
    if nx == 0 || ny == 0 {
        return Err(InferenceError::InvalidGrid { nx, ny });
    }
    let w = *pattern.window();
    let (dx, dy) = (w.width() / nx as f64, w.height() / ny as f64);
    let cell_of = |p: Point| {
        let i = (((p.x - w.xmin()) / dx) as usize).min(nx - 1);
        let j = (((p.y - w.ymin()) / dy) as usize).min(ny - 1);
        j * nx + i
    };
    let mut occupancy = vec![1usize; nx * ny];
    let data_cells: Vec<usize> = pattern.points().iter().map(|&p| cell_of(p)).collect();
    for &c in &data_cells {
        occupancy[c] += 1;
    }
    let cell_area = dx * dy;
    let mut nodes = Vec::with_capacity(pattern.len() + nx * ny);
    for (i, (&p, &c)) in pattern.points().iter().zip(&data_cells).enumerate() {
        nodes.push(QuadNode {
            location: p,
            weight: cell_area / occupancy[c] as f64,
            data_index: Some(i),
        });
    }
    for j in 0..ny {
        for i in 0..nx {
            nodes.push(QuadNode {
                location: Point::new(w.xmin() + (i as f64 + 0.5) * dx, w.ymin() + (j as f64 + 0.5) * dy),
                weight: cell_area / occupancy[j * nx + i] as f64,
                data_index: None,
            });
        }
    }
    Ok(QuadratureScheme {
        window: w,
        nodes,
        grid: (nx, ny),
        n_data: pattern.len(),
    })
}

/// `Σ_j (y_j ln λ_j − λ_j) w_j` for a fixed model, with `λ_j` conditioned on
/// the pattern minus `u_j` at data nodes. Returns `-inf` when some data node
/// has zero conditional intensity.
pub fn log_pseudo_likelihood(
    model: &MultiscaleModel,
    pattern: &PointPattern,
    scheme: &QuadratureScheme,
) -> Result<f64, InferenceError> {
    scheme.check(pattern)?;
    let pts = pattern.points();
    let mut total = 0.0;
    for node in scheme.nodes() {
        let others = match node.data_index {
            Some(i) => pattern.points_except(i),
            None => pts.to_vec(),
        };
        let ln_lambda = model.ln_papangelou(node.location, &others);
        if node.is_data() {
            if ln_lambda == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            total += ln_lambda;
        }
        total -= ln_lambda.exp() * node.weight;
    }
    Ok(total)
}

/// Covariates `a_t(u_j)` for every node and term, with the weights and
/// indicators of the scheme. Column 0 of the design is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    radii: Vec<f64>,
    weights: Vec<f64>,
    z: Vec<f64>,
    /// `areas[j][t]`
    areas: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(pattern: &PointPattern, radii: &[f64], scheme: &QuadratureScheme) -> Result<Self, InferenceError> {
        if pattern.is_empty() {
            return Err(InferenceError::EmptyPattern);
        }
        scheme.check(pattern)?;
        let window = *pattern.window();
        let mut grids = Vec::with_capacity(radii.len());
        for &r in radii {
            let grain = Grain::new(r)?;
            let grid = AreaGrid::with_step(window, r / DEFAULT_ROWS_PER_RADIUS)?;
            grid.check_grain(&grain)?;
            grids.push((grain, grid));
        }
        let reach = 2.0 * radii.iter().copied().fold(0.0, f64::max);
        let mut index = CellIndex::new(window, reach.max(f64::MIN_POSITIVE));
        for (id, p) in pattern.iter() {
            index.insert(id, p);
        }
        let areas = scheme
            .nodes()
            .par_iter()
            .map(|node| {
                let mut near = Vec::new();
                index.neighbours(node.location, reach, &mut near);
                if node.is_data() {
                    // drop the node itself (exactly one copy, points are distinct)
                    if let Some(k) = near.iter().position(|q| *q == node.location) {
                        near.swap_remove(k);
                    }
                }
                grids
                    .iter()
                    .map(|(grain, grid)| grid.added_area(node.location, &near, grain))
                    .collect()
            })
            .collect();
        Ok(Self {
            radii: radii.to_vec(),
            weights: scheme.nodes().iter().map(|n| n.weight).collect(),
            z: scheme.nodes().iter().map(QuadNode::z).collect(),
            areas,
        })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Number of parameters, intercept included.
    pub fn dim(&self) -> usize {
        self.radii.len() + 1
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn row(&self, j: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim(), std::iter::once(1.0).chain(self.areas[j].iter().map(|a| -a)))
    }

    fn eta(&self, j: usize, theta: &DVector<f64>) -> f64 {
        theta[0]
            - self.areas[j]
                .iter()
                .zip(theta.iter().skip(1))
                .map(|(a, t)| a * t)
                .sum::<f64>()
    }

    pub fn log_pl(&self, theta: &[f64]) -> f64 {
        let theta = DVector::from_column_slice(theta);
        self.log_pl_vec(&theta)
    }

    fn log_pl_vec(&self, theta: &DVector<f64>) -> f64 {
        (0..self.len())
            .map(|j| {
                let eta = self.eta(j, theta);
                self.z[j] * eta - self.weights[j] * eta.exp()
            })
            .sum()
    }

    /// Analytic gradient `Σ_j (z_j − w_j λ_j) x_j`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let theta = DVector::from_column_slice(theta);
        self.gradient_and_information(&theta).0.as_slice().to_vec()
    }

    /// Gradient and Fisher information `Σ_j w_j λ_j x_j x_jᵀ`.
    fn gradient_and_information(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.dim();
        let mut g = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for j in 0..self.len() {
            let x = self.row(j);
            let mu = self.weights[j] * self.eta(j, theta).exp();
            g.axpy(self.z[j] - mu, &x, 1.0);
            info.ger(mu, &x, &x, 1.0);
        }
        (g, info)
    }

    /// Rejects covariates that are constant across nodes, or that are an
    /// affine function of the other columns.
    fn check_identifiable(&self) -> Result<(), InferenceError> {
        for t in 0..self.radii.len() {
            let (lo, hi) = self
                .areas
                .iter()
                .map(|a| a[t])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            // The measured area of an isolated grain varies with its row phase
            // by a few parts in 10^4, so spreads below that are grid noise.
            if hi - lo <= GRID_NOISE * hi.abs().max(1e-300) {
                return Err(InferenceError::DegenerateDesign {
                    name: covariate_name(t, self.radii[t]),
                });
            }
        }
        // Weighted Gram matrix of the centred, scaled columns.
        let p = self.dim();
        let mut gram = DMatrix::zeros(p, p);
        for j in 0..self.len() {
            let x = self.row(j);
            gram.ger(self.weights[j], &x, &x, 1.0);
        }
        let scale = DVector::from_iterator(p, (0..p).map(|i| gram[(i, i)].sqrt().recip()));
        let normed = DMatrix::from_fn(p, p, |a, b| gram[(a, b)] * scale[a] * scale[b]);
        let eig = normed.symmetric_eigen();
        let (k, min) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        if min < 1e-12 {
            // Name the covariate loading most heavily on the null direction.
            let v = eig.eigenvectors.column(k);
            let worst = (1..p).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
            let name = if worst == 0 {
                "intercept".to_string()
            } else {
                covariate_name(worst - 1, self.radii[worst - 1])
            };
            return Err(InferenceError::DegenerateDesign { name });
        }
        Ok(())
    }
}

fn covariate_name(t: usize, r: f64) -> String {
    format!("a{} (radius {r})", t + 1)
}

/// Sign restriction on `ln γ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    #[default]
    Free,
    /// `γ ≥ 1` (attraction).
    AtLeastOne,
    /// `γ ≤ 1` (repulsion).
    AtMostOne,
}

impl Constraint {
    fn admits(self, ln_gamma: f64) -> bool {
        match self {
            Constraint::Free => true,
            Constraint::AtLeastOne => ln_gamma >= 0.0,
            Constraint::AtMostOne => ln_gamma <= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitOptions {
    /// One entry per term; empty means unconstrained.
    pub constraints: Vec<Constraint>,
    pub max_iterations: Option<usize>,
}

impl FitOptions {
    /// `γ₁ ≥ 1, γ₂ ≤ 1`, the parameter space of the two-scale model.
    pub fn two_scale_constrained() -> Self {
        Self {
            constraints: vec![Constraint::AtLeastOne, Constraint::AtMostOne],
            max_iterations: None,
        }
    }

    fn constraint(&self, t: usize) -> Constraint {
        self.constraints.get(t).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub log10_lambda: f64,
    /// One per radius, in the order given.
    pub log10_gammas: Vec<f64>,
    pub radii: Vec<f64>,
    pub log_pl: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Standard errors of `(log10 λ, log10 γ₁, …)` from the inverse
    /// information; `NaN` for parameters held on a constraint boundary.
    pub std_errors: Vec<f64>,
    /// Whether sign constraints were imposed.
    pub constrained: bool,
    /// Whether every fitted `γ` satisfies the sign restriction of its term
    /// (with no constraints given, `γ₁ ≥ 1` and `γ₂ ≤ 1` are checked).
    pub in_parameter_space: bool,
    /// Natural-log parameters `(ln λ, ln γ₁, …)`.
    pub theta: Vec<f64>,
}

impl FitResult {
    /// The fitted model on `window`, with the same radii.
    pub fn model(&self, window: Window) -> Result<MultiscaleModel, ModelError> {
        let terms = self
            .log10_gammas
            .iter()
            .zip(&self.radii)
            .map(|(&g, &r)| ScaleTerm::new(g, r))
            .collect::<Result<Vec<_>, _>>()?;
        MultiscaleModel::new(10f64.powf(self.log10_lambda), terms, window)
    }
}

/// Fits `ln λ(u) = θ₀ − Σ_t θ_t a_t(u)` with one term per radius.
pub fn fit_mple(
    pattern: &PointPattern,
    radii: &[f64],
    scheme: &QuadratureScheme,
    options: &FitOptions,
) -> Result<FitResult, InferenceError> {
    let design = Design::new(pattern, radii, scheme)?;
    fit_design(&design, options)
}

pub fn fit_design(design: &Design, options: &FitOptions) -> Result<FitResult, InferenceError> {
    design.check_identifiable()?;
    let p = design.dim();
    let max_iter = options.max_iterations.unwrap_or(MAX_ITERATIONS);
    let n_data: f64 = design.z.iter().sum();
    let area: f64 = design.weights.iter().sum();

    // Poisson start: exact when there are no terms.
    let mut theta = DVector::zeros(p);
    theta[0] = (n_data / area).ln();
    // Coordinates held at zero by an active constraint.
    let mut held = vec![false; p];
    let mut value = design.log_pl_vec(&theta);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let (g, info) = design.gradient_and_information(&theta);
        let Some(step) = newton_step(&g, &info, &held) else {
            break;
        };
        // Largest feasible fraction of the step, then halve until logPL rises.
        let mut frac: f64 = 1.0;
        let mut blocking = None;
        for t in 1..p {
            let c = options.constraint(t - 1);
            if held[t] || c == Constraint::Free {
                continue;
            }
            let target = theta[t] + step[t];
            if !c.admits(target) {
                let f = -theta[t] / step[t];
                if f < frac {
                    frac = f.max(0.0);
                    blocking = Some(t);
                }
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &theta + &step * frac;
            let v = design.log_pl_vec(&trial);
            if v >= value {
                accepted = Some((trial, v));
                break;
            }
            frac *= 0.5;
            blocking = None;
        }
        let Some((mut next, next_value)) = accepted else {
            // No ascent possible along the Newton direction: at the optimum to rounding.
            converged = true;
            break;
        };
        let newly_held = blocking.is_some();
        if let Some(t) = blocking {
            next[t] = 0.0;
            held[t] = true;
        }
        let change = (next_value - value).abs() / value.abs().max(1e-300);
        theta = next;
        value = design.log_pl_vec(&theta);
        if !newly_held && change < TOLERANCE {
            // Release held coordinates whose gradient points into the feasible side.
            let (g, _) = design.gradient_and_information(&theta);
            let mut released = false;
            for t in 1..p {
                if held[t] {
                    let c = options.constraint(t - 1);
                    if c.admits(g[t]) && g[t] != 0.0 {
                        held[t] = false;
                        released = true;
                    }
                }
            }
            if !released {
                converged = true;
                break;
            }
        }
    }

    let (_, info) = design.gradient_and_information(&theta);
    let std_errors = standard_errors(&info, &held);
    let constrained = options.constraints.iter().any(|c| *c != Constraint::Free);
    let in_parameter_space = (1..p).all(|t| {
        let c = match options.constraint(t - 1) {
            Constraint::Free if p == 3 => [Constraint::AtLeastOne, Constraint::AtMostOne][t - 1],
            c => c,
        };
        c.admits(theta[t])
    });
    let ln10 = std::f64::consts::LN_10;
    Ok(FitResult {
        log10_lambda: theta[0] / ln10,
        log10_gammas: theta.iter().skip(1).map(|t| t / ln10).collect(),
        radii: design.radii.clone(),
        log_pl: value,
        converged,
        iterations,
        std_errors,
        constrained,
        in_parameter_space,
        theta: theta.as_slice().to_vec(),
    })
}

/// Newton direction on the free coordinates; `None` if the reduced
/// information is not positive definite.
fn newton_step(g: &DVector<f64>, info: &DMatrix<f64>, held: &[bool]) -> Option<DVector<f64>> {
    let free: Vec<usize> = (0..g.len()).filter(|&i| !held[i]).collect();
    let sub = DMatrix::from_fn(free.len(), free.len(), |a, b| info[(free[a], free[b])]);
    let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
    let sol = sub.cholesky()?.solve(&rhs);
    let mut step = DVector::zeros(g.len());
    for (k, &i) in free.iter().enumerate() {
        step[i] = sol[k];
    }
    Some(step)
}

fn standard_errors(info: &DMatrix<f64>, held: &[bool]) -> Vec<f64> {
    let free: Vec<usize> = (0..held.len()).filter(|&i| !held[i]).collect();
    let sub = DMatrix::from_fn(free.len(), free.len(), |a, b| info[(free[a], free[b])]);
    let mut out = vec![f64::NAN; held.len()];
    if let Some(inv) = sub.cholesky().map(|c| c.inverse()) {
        for (k, &i) in free.iter().enumerate() {
            out[i] = inv[(k, k)].sqrt() / std::f64::consts::LN_10;
        }
    }
    out
}

/// One cell of a radius profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCell {
    pub r1: f64,
    pub r2: f64,
    /// `None` when the fit at this cell failed.
    pub log_pl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub best: FitResult,
    /// Row-major in `r1`, then `r2`, in the order the grids were given.
    pub table: Vec<ProfileCell>,
}

impl fmt::Display for ProfileCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.log_pl {
            Some(v) => write!(f, "({}, {}): {v}", self.r1, self.r2),
            None => write!(f, "({}, {}): failed", self.r1, self.r2),
        }
    }
}

/// Fits the two-scale model at every `(r1, r2)` pair and keeps the best.
/// Ties in logPL go to the smaller `r1`, then the smaller `r2`.
pub fn profile_radii(
    pattern: &PointPattern,
    r1_grid: &[f64],
    r2_grid: &[f64],
    scheme: &QuadratureScheme,
    options: &FitOptions,
) -> Result<Profile, InferenceError> {
    if r1_grid.is_empty() || r2_grid.is_empty() {
        return Err(InferenceError::EmptyRadiusGrid);
    }
    let pairs: Vec<(f64, f64)> = r1_grid
        .iter()
        .flat_map(|&a| r2_grid.iter().map(move |&b| (a, b)))
        .collect();
    let fits: Vec<Result<FitResult, InferenceError>> = pairs
        .par_iter()
        .map(|&(r1, r2)| fit_mple(pattern, &[r1, r2], scheme, options))
        .collect();
    let table = pairs
        .iter()
        .zip(&fits)
        .map(|(&(r1, r2), fit)| ProfileCell {
            r1,
            r2,
            log_pl: fit.as_ref().ok().map(|f| f.log_pl),
        })
        .collect();
    let mut best: Option<&FitResult> = None;
    let mut first_error = None;
    for fit in &fits {
        match fit {
            Ok(f) => {
                let better = match best {
                    None => true,
                    Some(b) => {
                        f.log_pl > b.log_pl
                            || (f.log_pl == b.log_pl
                                && (f.radii[0], f.radii[1]).partial_cmp(&(b.radii[0], b.radii[1]))
                                    == Some(std::cmp::Ordering::Less))
                    }
                };
                if better {
                    best = Some(f);
                }
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    match best {
        Some(b) => Ok(Profile { best: b.clone(), table }),
        None => {
            let e = fits
                .into_iter()
                .find_map(Result::err)
                .expect("no successful fit implies an error");
            Err(InferenceError::AllCellsFailed(Box::new(e)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Boundary;
    use crate::rng::SeedPath;

    fn unit() -> Window {
        Window::unit_square(Boundary::Clip)
    }

    fn uniform(n: usize, seed: u64) -> PointPattern {
        let w = unit();
        let mut rng = SeedPath::new(seed).rng();
        PointPattern::new(w, (0..n).map(|_| w.sample_uniform(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn empty_pattern_scheme() {
        let s = make_quadrature(&PointPattern::empty(unit()), 2, 2).unwrap();
        assert_eq!(s.nodes().len(), 4);
        assert!(s.nodes().iter().all(|n| n.weight == 0.25 && n.z() == 0.0));
    }

    #[test]
    fn shared_cell_halves_weights() {
        let p = PointPattern::new(unit(), vec![Point::new(0.1, 0.2)]).unwrap();
        let s = make_quadrature(&p, 2, 2).unwrap();
        assert_eq!(s.nodes()[0].weight, 0.125);
        assert_eq!(s.nodes()[1].weight, 0.125);
        assert_eq!(s.nodes()[2].weight, 0.25);
    }

    #[test]
    fn weights_partition_the_window() {
        for (n, seed) in [(1, 1), (57, 2), (300, 3)] {
            let w = Window::new(-1.0, 2.0, 0.5, 1.5, Boundary::Clip).unwrap();
            let mut rng = SeedPath::new(seed).rng();
            let p = PointPattern::new(w, (0..n).map(|_| w.sample_uniform(&mut rng)).collect()).unwrap();
            let s = make_quadrature(&p, 7, 5).unwrap();
            assert!((s.total_weight() / w.area() - 1.0).abs() < 1e-9);
            assert_eq!(s.nodes().iter().filter(|n| n.is_data()).count(), n);
            assert!(s.nodes().iter().all(|n| n.weight > 0.0));
        }
        assert!(matches!(
            make_quadrature(&uniform(3, 1), 0, 4),
            Err(InferenceError::InvalidGrid { .. })
        ));
    }

    #[test]
    fn poisson_log_pl_closed_form() {
        let p = uniform(40, 4);
        let s = make_quadrature(&p, 16, 16).unwrap();
        let m = MultiscaleModel::poisson(30.0, unit()).unwrap();
        let v = log_pseudo_likelihood(&m, &p, &s).unwrap();
        let expected = 40.0 * 30f64.ln() - 30.0;
        assert!((v - expected).abs() < 1e-9);
    }

    #[test]
    fn poisson_fit_is_exact() {
        let p = uniform(73, 5);
        let s = make_quadrature(&p, 64, 64).unwrap();
        let fit = fit_mple(&p, &[], &s, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let lambda = 10f64.powf(fit.log10_lambda);
        assert!((lambda / 73.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fitted_log_pl_matches_direct_evaluation() {
        let p = uniform(60, 6);
        let s = make_quadrature(&p, 24, 24).unwrap();
        let fit = fit_mple(&p, &[0.06, 0.02], &s, &FitOptions::default()).unwrap();
        let model = fit.model(unit()).unwrap();
        let direct = log_pseudo_likelihood(&model, &p, &s).unwrap();
        assert!((direct - fit.log_pl).abs() < 1e-9 * fit.log_pl.abs().max(1.0));
    }

    #[test]
    fn gradient_vanishes_at_optimum_and_matches_differences() {
        let p = uniform(80, 7);
        let s = make_quadrature(&p, 32, 32).unwrap();
        let d = Design::new(&p, &[0.05, 0.02], &s).unwrap();
        let fit = fit_design(&d, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        for g in d.gradient(&fit.theta) {
            assert!(g.abs() < 1e-6, "{g}");
        }
        for theta in [[4.0, 1.0, -2.0], [3.5, -3.0, 5.0], [4.4, 0.0, 0.0]] {
            let g = d.gradient(&theta);
            for i in 0..3 {
                let h = 1e-5 * theta[i].abs().max(1.0);
                let mut up = theta;
                let mut dn = theta;
                up[i] += h;
                dn[i] -= h;
                let fd = (d.log_pl(&up) - d.log_pl(&dn)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn log_pl_ignores_node_order() {
        let p = uniform(30, 8);
        let s = make_quadrature(&p, 10, 10).unwrap();
        let mut shuffled = s.clone();
        shuffled.nodes.reverse();
        let m = MultiscaleModel::two_scale(30.0, 1.0, -1.0, 0.05, 0.02, unit()).unwrap();
        let a = log_pseudo_likelihood(&m, &p, &s).unwrap();
        let b = log_pseudo_likelihood(&m, &p, &shuffled).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn refinement_shrinks_log_pl_changes() {
        let p = uniform(50, 9);
        let m = MultiscaleModel::two_scale(50.0, 1.0, -0.5, 0.05, 0.02, unit()).unwrap();
        let lp = |k| log_pseudo_likelihood(&m, &p, &make_quadrature(&p, k, k).unwrap()).unwrap();
        let (a, b, c) = (lp(16), lp(32), lp(64));
        assert!((c - b).abs() < (b - a).abs());
    }

    #[test]
    fn degenerate_covariate_is_named() {
        let p = PointPattern::new(unit(), vec![Point::new(0.5, 0.5)]).unwrap();
        let s = make_quadrature(&p, 4, 4).unwrap();
        let err = fit_mple(&p, &[0.05, 0.05], &s, &FitOptions::default()).unwrap_err();
        match err {
            InferenceError::DegenerateDesign { name } => assert!(name.starts_with('a')),
            other => panic!("unexpected {other:?}"),
        }
        // a grain that never overlaps anything nor the boundary is constant
        let w = Window::new(0.0, 10.0, 0.0, 10.0, Boundary::Torus).unwrap();
        let p = PointPattern::new(w, vec![Point::new(1.0, 1.0)]).unwrap();
        let s = make_quadrature(&p, 3, 3).unwrap();
        let err = fit_mple(&p, &[0.01], &s, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, InferenceError::DegenerateDesign { ref name } if name.starts_with("a1")));
    }

    #[test]
    fn constraints_hold() {
        // CSR data: unconstrained estimates straddle zero, constraints clamp them.
        for seed in 0..6 {
            let p = uniform(60, 100 + seed);
            let s = make_quadrature(&p, 24, 24).unwrap();
            let fit = fit_mple(&p, &[0.06, 0.03], &s, &FitOptions::two_scale_constrained()).unwrap();
            assert!(fit.constrained && fit.in_parameter_space);
            assert!(fit.log10_gammas[0] >= 0.0 && fit.log10_gammas[1] <= 0.0);
            let free = fit_mple(&p, &[0.06, 0.03], &s, &FitOptions::default()).unwrap();
            assert!(free.log_pl >= fit.log_pl - 1e-9 * fit.log_pl.abs());
            assert!(!free.constrained);
        }
    }

    #[test]
    fn one_by_one_profile_equals_single_fit() {
        let p = uniform(40, 11);
        let s = make_quadrature(&p, 16, 16).unwrap();
        let opts = FitOptions::default();
        let prof = profile_radii(&p, &[0.05], &[0.02], &s, &opts).unwrap();
        assert_eq!(prof.best, fit_mple(&p, &[0.05, 0.02], &s, &opts).unwrap());
        assert_eq!(prof.table.len(), 1);
        let prof = profile_radii(&p, &[0.04, 0.05, 0.06], &[0.01, 0.02], &s, &opts).unwrap();
        assert_eq!(prof.table.len(), 6);
        let max = prof
            .table
            .iter()
            .filter_map(|c| c.log_pl)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(prof.best.log_pl, max);
    }

    #[test]
    fn profile_ties_prefer_smaller_radii() {
        let p = uniform(40, 12);
        let s = make_quadrature(&p, 16, 16).unwrap();
        // duplicated grid values give exactly tied cells
        let prof = profile_radii(&p, &[0.05, 0.05], &[0.02, 0.02], &s, &FitOptions::default()).unwrap();
        assert_eq!(prof.best.radii, vec![0.05, 0.02]);
        assert!(matches!(
            profile_radii(&p, &[], &[0.02], &s, &FitOptions::default()),
            Err(InferenceError::EmptyRadiusGrid)
        ));
    }
}
