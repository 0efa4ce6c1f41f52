//! Finite-difference stream function on a rectangular airspace.
//!
//! The rectangle is sampled on a uniform `nx × ny` node lattice. Nodes on the
//! rectangle edges and nodes inside an unsafe disk carry fixed stream values;
//! the remaining interior nodes are unknowns of the discrete Laplace equation.

pub mod contour;
pub mod field_file;
mod linsolve;

pub use contour::{contour_polylines, ContourLine};
pub use field_file::{read_field_file, write_field_file, FieldFileError};

use crate::flowfield::{ObstacleSpec, PlanarPoint};
use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};
use thiserror::Error;

/// Free-node count above which the reduced system is solved with conjugate
/// gradients instead of a sparse LDLᵀ factorization.
pub const DIRECT_SOLVE_MAX_NODES: usize = 40_000;
pub const CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid obstacle set: {0}")]
    InvalidObstacles(String),
    #[error("obstacle {0} touches or crosses the domain boundary")]
    ObstacleTouchesBoundary(usize),
    #[error("obstacle {0} contains no grid node; refine the grid")]
    ObstacleUnresolved(usize),
    #[error("boundary gain must be positive, got {0}")]
    InvalidGain(f64),
    #[error("expected {expected} obstacle stream values, got {got}")]
    ObstacleValueCount { expected: usize, got: usize },
    #[error("boundary values do not match the node classification at node {0}")]
    BoundaryMismatch(usize),
    #[error("grid has no free interior node")]
    NoFreeNodes,
    #[error("linear solver did not converge: residual {residual:e} after {iterations} iterations")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("point ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },
    #[error("point ({x}, {y}) lies inside obstacle {obstacle}")]
    InsideObstacle { x: f64, y: f64, obstacle: usize },
    #[error("stagnation point at ({x}, {y}): |grad psi| = {magnitude:e}")]
    StagnationPoint { x: f64, y: f64, magnitude: f64 },
}

/// Uniform node lattice over `[x_min, x_max] × [y_min, y_max]`.
///
/// Node `(row, col)` sits at `(x_min + col·Δx, y_min + row·Δy)`; the flat
/// index is `row·nx + col`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        nx: usize,
        ny: usize,
    ) -> Result<Self, FieldError> {
        let grid = Self {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let bounds = [self.x_min, self.x_max, self.y_min, self.y_max];
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(FieldError::InvalidGrid("bounds must be finite".into()));
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(FieldError::InvalidGrid("empty rectangle".into()));
        }
        if self.nx < 3 || self.ny < 3 {
            return Err(FieldError::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.nx + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.nx, index % self.nx)
    }

    pub fn node_position(&self, row: usize, col: usize) -> PlanarPoint {
        PlanarPoint::new(
            self.x_min + col as f64 * self.dx(),
            self.y_min + row as f64 * self.dy(),
        )
    }

    pub fn is_edge(&self, row: usize, col: usize) -> bool {
        row == 0 || col == 0 || row == self.ny - 1 || col == self.nx - 1
    }

    pub fn contains(&self, p: &PlanarPoint) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    Boundary,
    FailedInterior,
    FreeInterior,
}

/// Partition of the lattice into boundary, failed-interior and free-interior
/// nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeClassification {
    grid: GridSpec,
    obstacles: Vec<ObstacleSpec>,
    labels: Vec<NodeClass>,
    owner: Vec<Option<usize>>,
}

impl NodeClassification {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn obstacles(&self) -> &[ObstacleSpec] {
        &self.obstacles
    }

    pub fn labels(&self) -> &[NodeClass] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> NodeClass {
        self.labels[index]
    }

    /// Obstacle enclosing a failed-interior node.
    pub fn owner(&self, index: usize) -> Option<usize> {
        self.owner[index]
    }

    fn count(&self, class: NodeClass) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn boundary_count(&self) -> usize {
        self.count(NodeClass::Boundary)
    }

    pub fn failed_count(&self) -> usize {
        self.count(NodeClass::FailedInterior)
    }

    pub fn free_count(&self) -> usize {
        self.count(NodeClass::FreeInterior)
    }

    /// `(row, col)` of every failed-interior node, in index order.
    pub fn failed_nodes(&self) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == NodeClass::FailedInterior)
            .map(|(i, _)| self.grid.row_col(i))
            .collect()
    }
}

/// Classifies every lattice node. Obstacle disks are closed, so a node lying
/// exactly on a circle is failed.
pub fn discretize(
    grid: &GridSpec,
    obstacles: &[ObstacleSpec],
) -> Result<NodeClassification, FieldError> {
    grid.validate()?;
    crate::flowfield::validate_obstacles(obstacles).map_err(FieldError::InvalidObstacles)?;
    for (h, o) in obstacles.iter().enumerate() {
        let inside = o.center.x - o.radius > grid.x_min
            && o.center.x + o.radius < grid.x_max
            && o.center.y - o.radius > grid.y_min
            && o.center.y + o.radius < grid.y_max;
        if !inside {
            return Err(FieldError::ObstacleTouchesBoundary(h));
        }
    }

    let m = grid.node_count();
    let mut labels = vec![NodeClass::FreeInterior; m];
    let mut owner = vec![None; m];
    let mut resolved = vec![false; obstacles.len()];
    for row in 0..grid.ny {
        for col in 0..grid.nx {
            let i = grid.index(row, col);
            if grid.is_edge(row, col) {
                labels[i] = NodeClass::Boundary;
                continue;
            }
            let p = grid.node_position(row, col);
            if let Some(h) = obstacles.iter().position(|o| o.contains(&p)) {
                labels[i] = NodeClass::FailedInterior;
                owner[i] = Some(h);
                resolved[h] = true;
            }
        }
    }
    if let Some(h) = resolved.iter().position(|r| !r) {
        return Err(FieldError::ObstacleUnresolved(h));
    }
    Ok(NodeClassification {
        grid: *grid,
        obstacles: obstacles.to_vec(),
        labels,
        owner,
    })
}

/// Edge weights `(w_x, w_y)` of the 5-point stencil, normalized so that
/// `w_x = 1`. On a square lattice both are 1 and the stencil is the plain
/// graph Laplacian with diagonal 4.
fn stencil_weights(grid: &GridSpec) -> (f64, f64) {
    let ratio = grid.dx() / grid.dy();
    (1.0, ratio * ratio)
}

/// Graph Laplacian of the stencil graph. Fixed-value nodes have empty rows;
/// each free-interior row has its (weighted) in-degree on the diagonal and
/// `−w` towards each of its four neighbors.
pub fn assemble_laplacian(classification: &NodeClassification) -> CsMat<f64> {
    let grid = classification.grid();
    let m = grid.node_count();
    let (wx, wy) = stencil_weights(grid);
    let mut tri = TriMat::with_capacity((m, m), 5 * classification.free_count());
    for (i, &label) in classification.labels().iter().enumerate() {
        if label != NodeClass::FreeInterior {
            continue;
        }
        let (row, col) = grid.row_col(i);
        tri.add_triplet(i, i, 2.0 * (wx + wy));
        tri.add_triplet(i, grid.index(row, col - 1), -wx);
        tri.add_triplet(i, grid.index(row, col + 1), -wx);
        tri.add_triplet(i, grid.index(row - 1, col), -wy);
        tri.add_triplet(i, grid.index(row + 1, col), -wy);
    }
    tri.to_csr()
}

/// Stream value imposed on failed-interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum ObstacleStreamValue {
    /// Every unsafe zone is held at Ψ = 0.
    #[default]
    Zero,
    /// Each unsafe zone is held at `K·y_h`, the undisturbed stream value
    /// through its center.
    CenterHeight,
    /// One explicit value per obstacle.
    PerObstacle(Vec<f64>),
}

/// Prescribed values on fixed nodes: `K·y_j` on the rectangle edges and the
/// obstacle value on failed nodes. Free nodes map to `None`.
pub fn boundary_values(
    classification: &NodeClassification,
    k: f64,
    obstacle_values: &ObstacleStreamValue,
) -> Result<Vec<Option<f64>>, FieldError> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(FieldError::InvalidGain(k));
    }
    let obstacles = classification.obstacles();
    let per_obstacle: Vec<f64> = match obstacle_values {
        ObstacleStreamValue::Zero => vec![0.0; obstacles.len()],
        ObstacleStreamValue::CenterHeight => obstacles.iter().map(|o| k * o.center.y).collect(),
        ObstacleStreamValue::PerObstacle(v) => {
            if v.len() != obstacles.len() {
                return Err(FieldError::ObstacleValueCount {
                    expected: obstacles.len(),
                    got: v.len(),
                });
            }
            v.clone()
        }
    };
    let grid = classification.grid();
    Ok(classification
        .labels()
        .iter()
        .enumerate()
        .map(|(i, label)| match label {
            NodeClass::Boundary => {
                let (row, col) = grid.row_col(i);
                Some(k * grid.node_position(row, col).y)
            }
            NodeClass::FailedInterior => {
                Some(per_obstacle[classification.owner(i).expect("failed node has an owner")])
            }
            NodeClass::FreeInterior => None,
        })
        .collect())
}

/// Prescribed values on fixed nodes taken from an arbitrary function of
/// node position, e.g. an analytic reference field. Free nodes map to `None`.
pub fn dirichlet_values_from<F>(classification: &NodeClassification, mut value: F) -> Vec<Option<f64>>
where
    F: FnMut(PlanarPoint) -> f64,
{
    let grid = classification.grid();
    classification
        .labels()
        .iter()
        .enumerate()
        .map(|(i, label)| match label {
            NodeClass::FreeInterior => None,
            _ => {
                let (row, col) = grid.row_col(i);
                Some(value(grid.node_position(row, col)))
            }
        })
        .collect()
}

/// Solved nodal stream function.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFieldGrid {
    classification: NodeClassification,
    psi: Vec<f64>,
    boundary_gain: f64,
}

/// Eliminates the fixed nodes from `LΨ = 0` and solves
/// `L_cc Ψ_c = −L_cf Ψ_fixed` for the free interior.
pub fn solve_stream(
    classification: &NodeClassification,
    laplacian: &CsMat<f64>,
    fixed: &[Option<f64>],
    boundary_gain: f64,
) -> Result<StreamFieldGrid, FieldError> {
    let m = classification.grid().node_count();
    if fixed.len() != m || laplacian.rows() != m || laplacian.cols() != m {
        return Err(FieldError::BoundaryMismatch(fixed.len().min(m)));
    }
    if !(boundary_gain > 0.0 && boundary_gain.is_finite()) {
        return Err(FieldError::InvalidGain(boundary_gain));
    }
    for (i, (label, value)) in classification.labels().iter().zip(fixed).enumerate() {
        let is_free = *label == NodeClass::FreeInterior;
        match value {
            Some(v) if !is_free && v.is_finite() => {}
            None if is_free => {}
            _ => return Err(FieldError::BoundaryMismatch(i)),
        }
    }

    // Position of each node in the reduced unknown vector.
    let mut reduced = vec![usize::MAX; m];
    let mut free_nodes = Vec::new();
    for (i, label) in classification.labels().iter().enumerate() {
        if *label == NodeClass::FreeInterior {
            reduced[i] = free_nodes.len();
            free_nodes.push(i);
        }
    }
    let n = free_nodes.len();
    if n == 0 {
        return Err(FieldError::NoFreeNodes);
    }

    let mut tri = TriMat::with_capacity((n, n), laplacian.nnz());
    let mut rhs = vec![0.0; n];
    for (r, &i) in free_nodes.iter().enumerate() {
        if let Some(row) = laplacian.outer_view(i) {
            for (j, &value) in row.iter() {
                match fixed[j] {
                    Some(v) => rhs[r] -= value * v,
                    None => tri.add_triplet(r, reduced[j], value),
                }
            }
        }
    }
    let reduced_matrix: CsMat<f64> = tri.to_csr();
    let solution = if n <= DIRECT_SOLVE_MAX_NODES {
        linsolve::solve_direct(&reduced_matrix, &rhs)?
    } else {
        linsolve::solve_cg(&reduced_matrix, &rhs, CG_TOLERANCE, 20 * n)?
    };

    let mut psi: Vec<f64> = fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
    for (r, &i) in free_nodes.iter().enumerate() {
        psi[i] = solution[r];
    }
    Ok(StreamFieldGrid {
        classification: classification.clone(),
        psi,
        boundary_gain,
    })
}

impl StreamFieldGrid {
    /// Discretize, assemble, apply boundary values and solve in one call.
    pub fn solve(
        grid: &GridSpec,
        obstacles: &[ObstacleSpec],
        k: f64,
        obstacle_values: &ObstacleStreamValue,
    ) -> Result<Self, FieldError> {
        let classification = discretize(grid, obstacles)?;
        let laplacian = assemble_laplacian(&classification);
        let fixed = boundary_values(&classification, k, obstacle_values)?;
        solve_stream(&classification, &laplacian, &fixed, k)
    }

    /// Rebuilds a field from stored nodal values, e.g. when reading a field
    /// file. Values are taken as given.
    pub fn from_nodal_values(
        classification: NodeClassification,
        psi: Vec<f64>,
        boundary_gain: f64,
    ) -> Result<Self, FieldError> {
        if psi.len() != classification.grid().node_count() {
            return Err(FieldError::BoundaryMismatch(psi.len()));
        }
        if !(boundary_gain > 0.0 && boundary_gain.is_finite()) {
            return Err(FieldError::InvalidGain(boundary_gain));
        }
        if let Some(i) = psi.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::BoundaryMismatch(i));
        }
        Ok(Self {
            classification,
            psi,
            boundary_gain,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.classification.grid()
    }

    pub fn classification(&self) -> &NodeClassification {
        &self.classification
    }

    pub fn obstacles(&self) -> &[ObstacleSpec] {
        self.classification.obstacles()
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn node_psi(&self, row: usize, col: usize) -> f64 {
        self.psi[self.grid().index(row, col)]
    }

    pub fn boundary_gain(&self) -> f64 {
        self.boundary_gain
    }

    /// Largest `|Ψ_E + Ψ_W + Ψ_N + Ψ_S − 4Ψ_i|` over free nodes (weighted
    /// form on non-square lattices).
    pub fn max_stencil_residual(&self) -> f64 {
        let grid = self.grid();
        let (wx, wy) = stencil_weights(grid);
        let mut worst: f64 = 0.0;
        for (i, label) in self.classification.labels().iter().enumerate() {
            if *label != NodeClass::FreeInterior {
                continue;
            }
            let (row, col) = grid.row_col(i);
            let r = wx * (self.node_psi(row, col - 1) + self.node_psi(row, col + 1))
                + wy * (self.node_psi(row - 1, col) + self.node_psi(row + 1, col))
                - 2.0 * (wx + wy) * self.psi[i];
            worst = worst.max(r.abs());
        }
        worst
    }

    /// Stagnation threshold on `|∇Ψ|`.
    pub fn stagnation_threshold(&self) -> f64 {
        1e-6 * self.boundary_gain * self.grid().dy()
    }

    /// Stream value held on each obstacle's failed nodes.
    pub fn obstacle_stream_values(&self) -> Vec<f64> {
        let c = &self.classification;
        let mut values = vec![f64::NAN; c.obstacles().len()];
        for i in 0..self.psi.len() {
            if let Some(h) = c.owner(i) {
                if values[h].is_nan() {
                    values[h] = self.psi[i];
                }
            }
        }
        values
    }

    /// Bilinear interpolation without domain or obstacle checks; the query is
    /// clamped into the rectangle.
    fn interpolate(&self, x: f64, y: f64) -> f64 {
        let g = self.grid();
        let fx = ((x - g.x_min) / g.dx()).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((y - g.y_min) / g.dy()).clamp(0.0, (g.ny - 1) as f64);
        let col = (fx.floor() as usize).min(g.nx - 2);
        let row = (fy.floor() as usize).min(g.ny - 2);
        let tx = fx - col as f64;
        let ty = fy - row as f64;
        let p00 = self.node_psi(row, col);
        let p01 = self.node_psi(row, col + 1);
        let p10 = self.node_psi(row + 1, col);
        let p11 = self.node_psi(row + 1, col + 1);
        (1.0 - ty) * ((1.0 - tx) * p00 + tx * p01) + ty * ((1.0 - tx) * p10 + tx * p11)
    }

    fn check_point(&self, p: &PlanarPoint) -> Result<(), FieldError> {
        if !p.is_finite() || !self.grid().contains(p) {
            return Err(FieldError::OutOfDomain { x: p.x, y: p.y });
        }
        if let Some(h) = self.obstacles().iter().position(|o| o.strictly_contains(p)) {
            return Err(FieldError::InsideObstacle {
                x: p.x,
                y: p.y,
                obstacle: h,
            });
        }
        Ok(())
    }

    /// Bilinearly interpolated stream value.
    pub fn sample_psi(&self, p: &PlanarPoint) -> Result<f64, FieldError> {
        self.check_point(p)?;
        Ok(self.interpolate(p.x, p.y))
    }

    /// Central-difference gradient `(∂Ψ/∂x, ∂Ψ/∂y)` of the interpolant with
    /// step `min(Δx, Δy)/2`, one-sided at the rectangle edges.
    fn gradient(&self, p: &PlanarPoint) -> (f64, f64) {
        let g = self.grid();
        let h = 0.5 * g.dx().min(g.dy());
        let (x0, x1) = ((p.x - h).max(g.x_min), (p.x + h).min(g.x_max));
        let (y0, y1) = ((p.y - h).max(g.y_min), (p.y + h).min(g.y_max));
        let gx = (self.interpolate(x1, p.y) - self.interpolate(x0, p.y)) / (x1 - x0);
        let gy = (self.interpolate(p.x, y1) - self.interpolate(p.x, y0)) / (y1 - y0);
        (gx, gy)
    }

    /// Unit flow direction `(∂Ψ/∂y, −∂Ψ/∂x) / |∇Ψ|`.
    pub fn sample_velocity_direction(&self, p: &PlanarPoint) -> Result<(f64, f64), FieldError> {
        self.check_point(p)?;
        let (gx, gy) = self.gradient(p);
        let magnitude = gx.hypot(gy);
        if !(magnitude >= self.stagnation_threshold()) {
            return Err(FieldError::StagnationPoint {
                x: p.x,
                y: p.y,
                magnitude,
            });
        }
        Ok((gy / magnitude, -gx / magnitude))
    }
}
