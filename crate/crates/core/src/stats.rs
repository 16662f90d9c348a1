//! K, L and T summary functions and pointwise Monte Carlo envelopes.
//!
//! All three estimators share the same shape: count (weighted) pairs or
//! triples whose distances fall below each `r` of an ascending grid, then
//! normalise by an intensity estimate.
//!
//! * `K(r) = |W| / (n(n-1)) * sum_{i != j} w_ij 1[d_ij <= r]`
//! * `L(r) = sqrt(K(r) / pi)`
//! * `T(r) = |W|^2 / (n(n-1)(n-2)) * #{ordered distinct (i, j, k) : d_ij, d_ik, d_jk <= r}`
//!
//! `T` is a third-order analogue of `K`: under complete spatial randomness on
//! a torus its expectation is `pi (pi - 3 sqrt(3) / 4) r^4`, the measure of
//! pairs of offsets that form a triangle with all sides at most `r`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cftp::{perfect_sample, CftpError, Schedule};
use crate::geometry::{Point, PointPattern, Window};
use crate::models::MultiscaleModel;
use crate::rng::SeedPath;

/// Number of steps in the default distance grid.
pub const DEFAULT_R_STEPS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Statistic {
    K,
    L,
    T,
}

impl Statistic {
    /// Fewest points for which the estimator is defined.
    pub fn min_points(self) -> usize {
        match self {
            Statistic::K | Statistic::L => 2,
            Statistic::T => 3,
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::K => "K",
            Statistic::L => "L",
            Statistic::T => "T",
        })
    }
}

impl std::str::FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "K" | "k" => Ok(Statistic::K),
            "L" | "l" => Ok(Statistic::L),
            "T" | "t" => Ok(Statistic::T),
            other => Err(format!("unknown statistic `{other}` (expected K, L or T)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    /// Ripley's isotropic weights: inverse fraction of the circle through the
    /// partner point that lies inside the window.
    #[default]
    Ripley,
    /// Toroidal distances, unit weights.
    Torus,
    /// Euclidean distances, unit weights.
    None,
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correction::Ripley => "ripley",
            Correction::Torus => "torus",
            Correction::None => "none",
        })
    }
}

impl std::str::FromStr for Correction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ripley" | "isotropic" => Ok(Correction::Ripley),
            "torus" | "periodic" => Ok(Correction::Torus),
            "none" => Ok(Correction::None),
            other => Err(format!("unknown correction `{other}` (expected ripley, torus or none)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("the {statistic} function needs at least {needed} points, got {got}")]
    TooFewPoints {
        statistic: Statistic,
        needed: usize,
        got: usize,
    },
    #[error("distance grid must be non-empty, strictly increasing and inside (0, {limit}]")]
    InvalidGrid { limit: f64 },
    #[error("the {correction} correction is not available for the {statistic} function")]
    UnsupportedCorrection {
        statistic: Statistic,
        correction: Correction,
    },
    #[error("need at least 2 simulations for an envelope, got {0}")]
    TooFewSimulations(usize),
    #[error("simulation {index} failed: {source}")]
    Simulation { index: usize, source: CftpError },
    #[error("simulation {index}: {source}")]
    SimulatedCurve { index: usize, source: Box<StatsError> },
    #[error("data pattern and model use different windows")]
    WindowMismatch,
}

/// An estimated summary function on a distance grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCurve {
    pub statistic: Statistic,
    pub correction: Correction,
    pub r: Vec<f64>,
    pub values: Vec<f64>,
}

/// Pointwise min/mean/max of simulated curves together with the data curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeBand {
    pub statistic: Statistic,
    pub correction: Correction,
    pub r: Vec<f64>,
    pub lo: Vec<f64>,
    pub mean: Vec<f64>,
    pub hi: Vec<f64>,
    pub data: Vec<f64>,
    pub n_sim: usize,
}

impl EnvelopeBand {
    /// Fraction of grid points where the data curve lies in `[lo, hi]`.
    pub fn coverage(&self) -> f64 {
        let inside = self
            .data
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .filter(|(d, (lo, hi))| *lo <= *d && *d <= *hi)
            .count();
        inside as f64 / self.r.len() as f64
    }
}

/// `steps` equally spaced distances ending at `rmax` (the first is `rmax/steps`).
pub fn r_grid(rmax: f64, steps: usize) -> Vec<f64> {
    (1..=steps).map(|k| rmax * k as f64 / steps as f64).collect()
}

/// Default grid: 512 steps up to a quarter of the shorter window side.
pub fn default_r_grid(window: &Window) -> Vec<f64> {
    r_grid(window.shorter_side() / 4.0, DEFAULT_R_STEPS)
}

fn check_grid(r: &[f64], window: &Window) -> Result<(), StatsError> {
    let limit = window.shorter_side() / 2.0;
    let ok = !r.is_empty()
        && r[0] > 0.0
        && r.windows(2).all(|w| w[0] < w[1])
        && r.iter().all(|v| v.is_finite() && *v <= limit * (1.0 + 1e-12));
    if ok {
        Ok(())
    } else {
        Err(StatsError::InvalidGrid { limit })
    }
}

fn check_count(statistic: Statistic, n: usize) -> Result<(), StatsError> {
    let needed = statistic.min_points();
    if n < needed {
        return Err(StatsError::TooFewPoints {
            statistic,
            needed,
            got: n,
        });
    }
    Ok(())
}

/// Index of the first grid value `>= d`, or `r.len()` if `d` exceeds the grid.
fn bin(r: &[f64], d: f64) -> usize {
    r.partition_point(|&v| v < d)
}

fn pair_distance(window: &Window, correction: Correction, a: Point, b: Point) -> f64 {
    match correction {
        Correction::Torus => window.distance(a, b),
        Correction::Ripley | Correction::None => (a.x - b.x).hypot(a.y - b.y),
    }
}

/// Fraction of the circle of radius `d` about `p` that lies inside `window`.
///
/// Valid for `d` up to half the shorter side, where at most two adjacent
/// edges can cut the circle at once.
pub fn ripley_inside_fraction(window: &Window, p: Point, d: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    // Half-angles of the arcs beyond each edge, in cyclic order left, bottom, right, top.
    let edges = [
        p.x - window.xmin(),
        p.y - window.ymin(),
        window.xmax() - p.x,
        window.ymax() - p.y,
    ];
    let half = edges.map(|e| if e < d { (e.max(0.0) / d).acos() } else { 0.0 });
    let mut outside: f64 = half.iter().map(|a| 2.0 * a).sum();
    for i in 0..4 {
        let overlap = half[i] + half[(i + 1) % 4] - FRAC_PI_2;
        if overlap > 0.0 {
            outside -= overlap;
        }
    }
    (1.0 - outside / (2.0 * PI)).clamp(0.0, 1.0)
}

/// Ordered-pair weights `w_ij` for points within `rmax`, as `(d_ij, w_ij + w_ji)`.
fn close_pairs(pattern: &PointPattern, rmax: f64, correction: Correction) -> Vec<(f64, f64)> {
    let window = pattern.window();
    let pts = pattern.points();
    let mut out = Vec::new();
    // Sweep in x so that most distant pairs are skipped without computing distances.
    // Torus distances can wrap, so the sweep only applies to Euclidean corrections.
    let mut order: Vec<usize> = (0..pts.len()).collect();
    let sweep = correction != Correction::Torus;
    if sweep {
        order.sort_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x));
    }
    for (oi, &i) in order.iter().enumerate() {
        for &j in &order[oi + 1..] {
            if sweep && pts[j].x - pts[i].x > rmax {
                break;
            }
            let d = pair_distance(window, correction, pts[i], pts[j]);
            if d > rmax {
                continue;
            }
            let w = match correction {
                Correction::Ripley => {
                    1.0 / ripley_inside_fraction(window, pts[i], d) + 1.0 / ripley_inside_fraction(window, pts[j], d)
                }
                Correction::Torus | Correction::None => 2.0,
            };
            out.push((d, w));
        }
    }
    out
}

pub fn k_function(pattern: &PointPattern, r: &[f64], correction: Correction) -> Result<SummaryCurve, StatsError> {
    check_count(Statistic::K, pattern.len())?;
    check_grid(r, pattern.window())?;
    let rmax = *r.last().expect("grid checked non-empty");
    let mut increments = vec![0.0; r.len() + 1];
    for (d, w) in close_pairs(pattern, rmax, correction) {
        increments[bin(r, d)] += w;
    }
    let n = pattern.len() as f64;
    let scale = pattern.window().area() / (n * (n - 1.0));
    let mut acc = 0.0;
    let values = increments[..r.len()]
        .iter()
        .map(|w| {
            acc += w;
            scale * acc
        })
        .collect();
    Ok(SummaryCurve {
        statistic: Statistic::K,
        correction,
        r: r.to_vec(),
        values,
    })
}

pub fn l_function(pattern: &PointPattern, r: &[f64], correction: Correction) -> Result<SummaryCurve, StatsError> {
    let mut curve = k_function(pattern, r, correction)?;
    for v in &mut curve.values {
        *v = (*v / PI).sqrt();
    }
    curve.statistic = Statistic::L;
    Ok(curve)
}

/// Triangle-count function; Ripley weights have no standard third-order form,
/// so only the torus and uncorrected versions exist.
pub fn t_function(pattern: &PointPattern, r: &[f64], correction: Correction) -> Result<SummaryCurve, StatsError> {
    check_count(Statistic::T, pattern.len())?;
    check_grid(r, pattern.window())?;
    if correction == Correction::Ripley {
        return Err(StatsError::UnsupportedCorrection {
            statistic: Statistic::T,
            correction,
        });
    }
    let rmax = *r.last().expect("grid checked non-empty");
    let window = pattern.window();
    let pts = pattern.points();
    let n = pts.len();

    // Neighbour lists restricted to higher indices, each with its distance.
    let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let d = pair_distance(window, correction, pts[i], pts[j]);
            if d <= rmax {
                nbrs[i].push((j, d));
            }
        }
    }
    let mut counts = vec![0u64; r.len() + 1];
    let mut dist_from_i = vec![f64::INFINITY; n];
    for i in 0..n {
        for &(j, d) in &nbrs[i] {
            dist_from_i[j] = d;
        }
        for &(j, dij) in &nbrs[i] {
            for &(k, djk) in &nbrs[j] {
                let dik = dist_from_i[k];
                if dik.is_finite() {
                    counts[bin(r, dij.max(djk).max(dik))] += 1;
                }
            }
        }
        for &(j, _) in &nbrs[i] {
            dist_from_i[j] = f64::INFINITY;
        }
    }
    let nf = n as f64;
    // Each unordered triple stands for 3! ordered ones.
    let scale = 6.0 * window.area().powi(2) / (nf * (nf - 1.0) * (nf - 2.0));
    let mut acc = 0u64;
    let values = counts[..r.len()]
        .iter()
        .map(|c| {
            acc += c;
            scale * acc as f64
        })
        .collect();
    Ok(SummaryCurve {
        statistic: Statistic::T,
        correction,
        r: r.to_vec(),
        values,
    })
}

pub fn summary(
    statistic: Statistic,
    pattern: &PointPattern,
    r: &[f64],
    correction: Correction,
) -> Result<SummaryCurve, StatsError> {
    match statistic {
        Statistic::K => k_function(pattern, r, correction),
        Statistic::L => l_function(pattern, r, correction),
        Statistic::T => t_function(pattern, r, correction),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeConfig {
    pub statistic: Statistic,
    pub correction: Correction,
    pub r: Vec<f64>,
    pub n_sim: usize,
    pub schedule: Schedule,
}

/// Pointwise envelope of `n_sim` perfect samples from `model`, with the curve
/// of `data` alongside. Replicate `i` uses `seed.replicate(i)`, so the band
/// does not depend on how replicates are scheduled across threads.
pub fn envelope(
    model: &MultiscaleModel,
    data: &PointPattern,
    config: &EnvelopeConfig,
    seed: SeedPath,
) -> Result<EnvelopeBand, StatsError> {
    if config.n_sim < 2 {
        return Err(StatsError::TooFewSimulations(config.n_sim));
    }
    if data.window() != model.window() {
        return Err(StatsError::WindowMismatch);
    }
    let data_curve = summary(config.statistic, data, &config.r, config.correction)?;
    let sims: Vec<Vec<f64>> = (0..config.n_sim)
        .into_par_iter()
        .map(|index| {
            let run = perfect_sample(model, seed.replicate(index as u64), &config.schedule)
                .map_err(|source| StatsError::Simulation { index, source })?;
            summary(config.statistic, &run.sample, &config.r, config.correction)
                .map(|c| c.values)
                .map_err(|e| StatsError::SimulatedCurve {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_, _>>()?;
    let m = config.r.len();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    let mut sum = vec![0.0; m];
    for curve in &sims {
        for k in 0..m {
            lo[k] = lo[k].min(curve[k]);
            hi[k] = hi[k].max(curve[k]);
            sum[k] += curve[k];
        }
    }
    // Rounding can push the mean of identical values a hair outside [lo, hi].
    let mean = (0..m)
        .map(|k| (sum[k] / config.n_sim as f64).clamp(lo[k], hi[k]))
        .collect();
    Ok(EnvelopeBand {
        statistic: config.statistic,
        correction: config.correction,
        r: config.r.clone(),
        lo,
        mean,
        hi,
        data: data_curve.values,
        n_sim: config.n_sim,
    })
}
