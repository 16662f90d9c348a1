//! Planar geometry: observation windows, point patterns, disc grains and the
//! dilation-area functional `m(X ⊕ G)`.
//!
//! Areas are measured with a scanline rule. The window is cut into horizontal
//! rows of height `dy`; on each row centre line the covered set is a union of
//! intervals whose length is computed exactly, and the area is `dy` times the
//! sum of those lengths. This is a genuine measure (Lebesgue in `x`, counting
//! in `y`), so additivity and monotonicity in the pattern hold exactly and not
//! just to within the discretisation error.

use std::cell::Cell;
use std::collections::HashSet;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rows per grain radius used when no explicit step is given.
pub const DEFAULT_ROWS_PER_RADIUS: f64 = 100.0;

pub type PointId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("coordinates must be finite, got ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
    #[error("invalid window [{xmin}, {xmax}] x [{ymin}, {ymax}]")]
    InvalidWindow { xmin: f64, xmax: f64, ymin: f64, ymax: f64 },
    #[error("point ({x}, {y}) lies outside the window")]
    OutsideWindow { x: f64, y: f64 },
    #[error("duplicate point id {0}")]
    DuplicateId(PointId),
    #[error("grain radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("torus boundary needs grain diameter {diameter} <= shorter window side {side}")]
    GrainTooLarge { diameter: f64, side: f64 },
    #[error("row step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Areas are clipped to the window, distances are Euclidean.
    #[default]
    Clip,
    /// Opposite edges are identified.
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    boundary: Boundary,
}

impl Window {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64, boundary: Boundary) -> Result<Self, GeometryError> {
        let finite = [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(GeometryError::InvalidWindow { xmin, xmax, ymin, ymax });
        }
        Ok(Self {
            xmin,
            xmax,
            ymin,
            ymax,
            boundary,
        })
    }

    pub fn unit_square(boundary: Boundary) -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0, boundary).expect("unit square is valid")
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn shorter_side(&self) -> f64 {
        self.width().min(self.height())
    }

    pub fn contains(&self, p: Point) -> bool {
        p.is_finite() && p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    /// Displacement `to - from`, using the minimal image under torus boundary.
    pub fn offset(&self, from: Point, to: Point) -> (f64, f64) {
        let dx = to.x - from.x;
        let dy = to.y - from.y;
        match self.boundary {
            Boundary::Clip => (dx, dy),
            Boundary::Torus => (wrap_centered(dx, self.width()), wrap_centered(dy, self.height())),
        }
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        let (dx, dy) = self.offset(a, b);
        dx.hypot(dy)
    }

    /// Maps a point back into the window (identity under clip boundary).
    pub fn wrap(&self, p: Point) -> Point {
        match self.boundary {
            Boundary::Clip => p,
            Boundary::Torus => Point::new(
                self.xmin + (p.x - self.xmin).rem_euclid(self.width()),
                self.ymin + (p.y - self.ymin).rem_euclid(self.height()),
            ),
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        Point::new(self.xmin + u * self.width(), self.ymin + v * self.height())
    }
}

fn wrap_centered(d: f64, period: f64) -> f64 {
    let w = (d + 0.5 * period).rem_euclid(period) - 0.5 * period;
    // rem_euclid can return `period` itself for tiny negative inputs
    if w >= 0.5 * period {
        w - period
    } else {
        w
    }
}

/// A finite configuration of points in a window. Every point carries an id
/// that is unique within the pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    window: Window,
    ids: Vec<PointId>,
    points: Vec<Point>,
}

impl PointPattern {
    pub fn empty(window: Window) -> Self {
        Self {
            window,
            ids: Vec::new(),
            points: Vec::new(),
        }
    }

    /// Builds a pattern, numbering the points `0..n` in order.
    pub fn new(window: Window, points: Vec<Point>) -> Result<Self, GeometryError> {
        Self::with_ids(window, points.into_iter().enumerate().map(|(i, p)| (i as PointId, p)))
    }

    pub fn with_ids<I>(window: Window, items: I) -> Result<Self, GeometryError>
    where
        I: IntoIterator<Item = (PointId, Point)>,
    {
        let mut pattern = Self::empty(window);
        let mut seen = HashSet::new();
        for (id, p) in items {
            if !p.is_finite() {
                return Err(GeometryError::NonFinite { x: p.x, y: p.y });
            }
            if !window.contains(p) {
                return Err(GeometryError::OutsideWindow { x: p.x, y: p.y });
            }
            if !seen.insert(id) {
                return Err(GeometryError::DuplicateId(id));
            }
            pattern.ids.push(id);
            pattern.points.push(p);
        }
        Ok(pattern)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (PointId, Point)> + '_ {
        self.ids.iter().copied().zip(self.points.iter().copied())
    }

    pub fn contains_id(&self, id: PointId) -> bool {
        self.ids.contains(&id)
    }

    pub fn get(&self, id: PointId) -> Option<Point> {
        self.ids.iter().position(|&i| i == id).map(|k| self.points[k])
    }

    pub fn insert(&mut self, id: PointId, p: Point) -> Result<(), GeometryError> {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite { x: p.x, y: p.y });
        }
        if !self.window.contains(p) {
            return Err(GeometryError::OutsideWindow { x: p.x, y: p.y });
        }
        if self.contains_id(id) {
            return Err(GeometryError::DuplicateId(id));
        }
        self.ids.push(id);
        self.points.push(p);
        Ok(())
    }

    pub fn remove(&mut self, id: PointId) -> Option<Point> {
        let k = self.ids.iter().position(|&i| i == id)?;
        self.ids.remove(k);
        Some(self.points.remove(k))
    }

    /// The points other than the one at position `index`.
    pub fn points_except(&self, index: usize) -> Vec<Point> {
        self.points
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != index)
            .map(|(_, &p)| p)
            .collect()
    }

    /// Id-set inclusion `self ⊆ other`.
    pub fn is_subset_of(&self, other: &PointPattern) -> bool {
        let theirs: HashSet<PointId> = other.ids.iter().copied().collect();
        self.ids.iter().all(|id| theirs.contains(id))
    }

    /// Next id not used by this pattern.
    pub fn next_id(&self) -> PointId {
        self.ids.iter().max().map_or(0, |m| m + 1)
    }
}

/// A disc grain centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grain {
    radius: f64,
    area: f64,
}

impl Grain {
    pub fn new(radius: f64) -> Result<Self, GeometryError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GeometryError::InvalidRadius(radius));
        }
        Ok(Self {
            radius,
            area: PI * radius * radius,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Closed-form disc area `π r²`.
    pub fn area(&self) -> f64 {
        self.area
    }
}

thread_local! {
    static ADDED_AREA_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `added_area` evaluations made on the current thread so far.
pub fn added_area_evaluations() -> u64 {
    ADDED_AREA_CALLS.with(|c| c.get())
}

/// Scanline area measure over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaGrid {
    window: Window,
    rows: usize,
    row_step: f64,
}

impl AreaGrid {
    /// Rows of height at most `step`, evenly dividing the window height.
    pub fn with_step(window: Window, step: f64) -> Result<Self, GeometryError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(GeometryError::InvalidStep(step));
        }
        let rows = (window.height() / step).ceil().max(1.0) as usize;
        Ok(Self {
            window,
            rows,
            row_step: window.height() / rows as f64,
        })
    }

    /// Default resolution: step = smallest radius / [`DEFAULT_ROWS_PER_RADIUS`].
    pub fn for_radii(window: Window, radii: &[f64]) -> Result<Self, GeometryError> {
        let rmin = radii.iter().copied().fold(f64::INFINITY, f64::min);
        if !rmin.is_finite() {
            // no grains: any resolution will do
            return Self::with_step(window, window.height() / 64.0);
        }
        Self::with_step(window, rmin / DEFAULT_ROWS_PER_RADIUS)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row_step(&self) -> f64 {
        self.row_step
    }

    /// Torus boundary requires discs that do not wrap onto themselves.
    pub fn check_grain(&self, grain: &Grain) -> Result<(), GeometryError> {
        let side = self.window.shorter_side();
        if self.window.boundary == Boundary::Torus && 2.0 * grain.radius() > side {
            return Err(GeometryError::GrainTooLarge {
                diameter: 2.0 * grain.radius(),
                side,
            });
        }
        Ok(())
    }

    fn row_center(&self, k: i64) -> f64 {
        self.window.ymin + (k as f64 + 0.5) * self.row_step
    }

    /// Row indices whose centre line lies within `r` of `cy`, unclamped.
    fn row_span(&self, cy: f64, r: f64) -> (i64, i64) {
        let lo = ((cy - r - self.window.ymin) / self.row_step - 0.5).floor() as i64;
        let hi = ((cy + r - self.window.ymin) / self.row_step - 0.5).ceil() as i64;
        match self.window.boundary {
            Boundary::Clip => (lo.max(0), hi.min(self.rows as i64 - 1)),
            Boundary::Torus => (lo, hi),
        }
    }

    /// Neighbour disc centres relative to `u` that can overlap the disc at `u`.
    fn neighbour_offsets(&self, u: Point, others: &[Point], r: f64, out: &mut Vec<(f64, f64)>) {
        let reach2 = 4.0 * r * r;
        let (w, h) = (self.window.width(), self.window.height());
        for &p in others {
            let (dx, dy) = self.window.offset(u, p);
            match self.window.boundary {
                Boundary::Clip => {
                    if dx * dx + dy * dy < reach2 {
                        out.push((dx, dy));
                    }
                }
                Boundary::Torus => {
                    for i in -1..=1 {
                        for j in -1..=1 {
                            let (ex, ey) = (dx + i as f64 * w, dy + j as f64 * h);
                            if ex * ex + ey * ey < reach2 {
                                out.push((ex, ey));
                            }
                        }
                    }
                }
            }
        }
    }

    /// `m((u ⊕ G) \ (X ⊕ G))`: area the disc at `u` adds to the dilation of `others`.
    pub fn added_area(&self, u: Point, others: &[Point], grain: &Grain) -> f64 {
        ADDED_AREA_CALLS.with(|c| c.set(c.get() + 1));
        let r = grain.radius();
        let mut neighbours = Vec::new();
        self.neighbour_offsets(u, others, r, &mut neighbours);
        let (left, right) = match self.window.boundary {
            Boundary::Clip => (self.window.xmin - u.x, self.window.xmax - u.x),
            Boundary::Torus => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let (k0, k1) = self.row_span(u.y, r);
        let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(neighbours.len());
        let mut total = 0.0;
        for k in k0..=k1 {
            let t = self.row_center(k) - u.y;
            if t.abs() >= r {
                continue;
            }
            let c = (r * r - t * t).sqrt();
            let a = (-c).max(left);
            let b = c.min(right);
            if b <= a {
                continue;
            }
            intervals.clear();
            for &(dx, dy) in &neighbours {
                let s = t - dy;
                if s.abs() < r {
                    let cn = (r * r - s * s).sqrt();
                    intervals.push((dx - cn, dx + cn));
                }
            }
            let covered = covered_length(a, b, &mut intervals);
            total += (b - a - covered).max(0.0);
        }
        total * self.row_step
    }

    /// `m(X ⊕ G)`, clipped to the window or on the torus.
    pub fn dilation_area(&self, points: &[Point], grain: &Grain) -> f64 {
        match points.len() {
            0 => return 0.0,
            1 => return self.added_area(points[0], &[], grain),
            _ => {}
        }
        let r = grain.radius();
        let (w, h) = (self.window.width(), self.window.height());
        let mut sorted: Vec<Point> = points.to_vec();
        sorted.sort_unstable_by(|a, b| a.y.total_cmp(&b.y));
        let ys: Vec<f64> = sorted.iter().map(|p| p.y).collect();
        let shifts: &[f64] = match self.window.boundary {
            Boundary::Clip => &[0.0],
            Boundary::Torus => &[-h, 0.0, h],
        };
        let (xmin, xmax) = (self.window.xmin, self.window.xmax);
        let mut intervals = Vec::new();
        let mut total = 0.0;
        for k in 0..self.rows as i64 {
            let yc = self.row_center(k);
            intervals.clear();
            for &shift in shifts {
                // points whose shifted y lies in (yc - r, yc + r)
                let lo = ys.partition_point(|&y| y + shift <= yc - r);
                let hi = ys.partition_point(|&y| y + shift < yc + r);
                for p in &sorted[lo..hi] {
                    let t = yc - (p.y + shift);
                    if t.abs() >= r {
                        continue;
                    }
                    let c = (r * r - t * t).sqrt();
                    let (s, e) = (p.x - c, p.x + c);
                    match self.window.boundary {
                        Boundary::Clip => intervals.push((s, e)),
                        Boundary::Torus => {
                            intervals.push((s, e));
                            if s < xmin {
                                intervals.push((s + w, e + w));
                            }
                            if e > xmax {
                                intervals.push((s - w, e - w));
                            }
                        }
                    }
                }
            }
            total += covered_length(xmin, xmax, &mut intervals);
        }
        total * self.row_step
    }

    /// Largest area a single disc can be assigned by this grid, over all
    /// vertical placements relative to the rows. Upper bound for `added_area`.
    pub fn grain_area_bound(&self, grain: &Grain) -> f64 {
        let r = grain.radius();
        let dy = self.row_step;
        // measured area of a lone disc whose centre sits `phase` above a row centre
        let area_at = |phase: f64| -> f64 {
            let k0 = ((-r - phase) / dy).floor() as i64;
            let k1 = ((r - phase) / dy).ceil() as i64;
            let mut s = 0.0;
            for k in k0..=k1 {
                let t = phase + k as f64 * dy;
                if t.abs() < r {
                    s += 2.0 * (r * r - t * t).sqrt();
                }
            }
            s * dy
        };
        // Between the phases where a row touches the disc boundary the
        // measured area is concave in the phase, so golden-section search on
        // each piece finds the supremum.
        let mut cuts = [0.0, r.rem_euclid(dy), (-r).rem_euclid(dy), dy];
        cuts.sort_by(f64::total_cmp);
        let mut best: f64 = 0.0;
        for pair in cuts.windows(2) {
            let (mut a, mut b) = (pair[0], pair[1]);
            best = best.max(area_at(a)).max(area_at(b));
            if b - a <= 0.0 {
                continue;
            }
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..200 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if area_at(c) >= area_at(d) {
                    b = d;
                } else {
                    a = c;
                }
                if b - a < 1e-15 * dy {
                    break;
                }
            }
            best = best.max(area_at(0.5 * (a + b)));
        }
        best
    }
}

/// Length of `[a, b] ∩ ⋃ intervals`. Reorders `intervals`.
fn covered_length(a: f64, b: f64, intervals: &mut [(f64, f64)]) -> f64 {
    intervals.sort_unstable_by(|p, q| p.0.total_cmp(&q.0));
    let mut total = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for &(s, e) in intervals.iter() {
        let (s, e) = (s.max(a), e.min(b));
        if e <= s {
            continue;
        }
        current = match current {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = current {
        total += ce - cs;
    }
    total.min(b - a)
}

/// `m(X ⊕ G)` at the default resolution for `grain`.
pub fn dilation_area(pattern: &PointPattern, grain: &Grain) -> f64 {
    default_grid(pattern.window(), grain).dilation_area(pattern.points(), grain)
}

/// `m((u ⊕ G) \ (X ⊕ G))` at the default resolution for `grain`.
pub fn added_area(candidate: Point, pattern: &PointPattern, grain: &Grain) -> f64 {
    default_grid(pattern.window(), grain).added_area(candidate, pattern.points(), grain)
}

fn default_grid(window: &Window, grain: &Grain) -> AreaGrid {
    AreaGrid::for_radii(*window, &[grain.radius()]).expect("grain radius already validated")
}

/// Uniform cell index for fixed-reach neighbour queries on a mutable point set.
#[derive(Debug, Clone)]
pub struct CellIndex {
    window: Window,
    nx: usize,
    ny: usize,
    cell_w: f64,
    cell_h: f64,
    cells: Vec<Vec<(PointId, Point)>>,
    len: usize,
}

impl CellIndex {
    /// Cells are at least `reach` wide so a query only visits the 3×3 block.
    pub fn new(window: Window, reach: f64) -> Self {
        let reach = if reach.is_finite() && reach > 0.0 {
            reach
        } else {
            window.shorter_side()
        };
        let nx = ((window.width() / reach).floor() as usize).clamp(1, 4096);
        let ny = ((window.height() / reach).floor() as usize).clamp(1, 4096);
        Self {
            window,
            nx,
            ny,
            cell_w: window.width() / nx as f64,
            cell_h: window.height() / ny as f64,
            cells: vec![Vec::new(); nx * ny],
            len: 0,
        }
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let i = ((p.x - self.window.xmin) / self.cell_w).floor() as isize;
        let j = ((p.y - self.window.ymin) / self.cell_h).floor() as isize;
        (
            i.clamp(0, self.nx as isize - 1) as usize,
            j.clamp(0, self.ny as isize - 1) as usize,
        )
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, id: PointId, p: Point) {
        let (i, j) = self.cell_of(p);
        self.cells[j * self.nx + i].push((id, p));
        self.len += 1;
    }

    pub fn remove(&mut self, id: PointId, p: Point) -> bool {
        let (i, j) = self.cell_of(p);
        let cell = &mut self.cells[j * self.nx + i];
        match cell.iter().position(|&(q, _)| q == id) {
            Some(k) => {
                cell.swap_remove(k);
                self.len -= 1;
                true
            }
            None => false,
        }
    }

    /// Appends to `out` every stored point within `reach` of `u`
    /// (`reach` must not exceed the cell size given at construction).
    pub fn neighbours(&self, u: Point, reach: f64, out: &mut Vec<Point>) {
        let (ci, cj) = self.cell_of(u);
        let torus = self.window.boundary == Boundary::Torus;
        let mut visited: [usize; 9] = [usize::MAX; 9];
        let mut nvisited = 0;
        for dj in -1isize..=1 {
            for di in -1isize..=1 {
                let (mut i, mut j) = (ci as isize + di, cj as isize + dj);
                if torus {
                    i = i.rem_euclid(self.nx as isize);
                    j = j.rem_euclid(self.ny as isize);
                } else if i < 0 || j < 0 || i >= self.nx as isize || j >= self.ny as isize {
                    continue;
                }
                let idx = j as usize * self.nx + i as usize;
                if visited[..nvisited].contains(&idx) {
                    continue;
                }
                visited[nvisited] = idx;
                nvisited += 1;
                for &(_, p) in &self.cells[idx] {
                    if self.window.distance(u, p) < reach {
                        out.push(p);
                    }
                }
            }
        }
    }
}
