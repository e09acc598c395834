//! Seikkala endpoint pipeline. The fuzzy PDE splits into a pair of crisp
//! equations for the alpha-cut endpoints; a negative diffusion coefficient
//! couples each endpoint to the other's curvature. The pair is integrated
//! by method of lines per alpha level, and the levels are then screened for
//! genuine fuzzy-number structure to produce the validity region.

use std::fmt;

use expr::{Environment, Expr};
use fuzzy_core::{from_endpoint_samples, AlphaLevelFuzzyNumber, FuzzyError};
use thiserror::Error;

use crate::bfs::{bind_endpoints, BfsError, Sign, SignInfo, SignProfile, Witness};
use crate::grid::{sample_spatial_plane, Axis, GridError, GridFunction, GridSpec};
use crate::problem::{HeatLikeProblem, ProblemError};
use crate::spatial::{self, SpatialError, SpatialOperator};

/// Target |step * rate| for the explicit fourth-order stepper, safely inside
/// its real-axis stability interval (which reaches about 2.78).
pub const RK4_STABILITY_TARGET: f64 = 2.5;
/// Refusal threshold for substeps per grid step.
pub const MAX_SUBSTEPS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SsError {
    #[error(
        "coefficient on the {axis} axis changes sign over the domain \
         (positive {positive}; negative {negative}); the endpoint system needs a definite sign"
    )]
    IndefiniteCoefficient {
        axis: String,
        positive: Witness,
        negative: Witness,
    },
    #[error(
        "stability would need {needed} substeps per grid step (limit {limit}); \
         estimated stiffness rate {rate:.3e} — refine the operator or shrink the domain"
    )]
    StabilityViolation {
        needed: usize,
        limit: usize,
        rate: f64,
    },
    #[error("integration produced a non-finite value at time index {t_index} (alpha {alpha})")]
    NumericalFailure { t_index: usize, alpha: f64 },
    #[error("endpoints do not form a fuzzy number at this node (alpha {alpha}): {detail}")]
    NotFuzzyAtNode { alpha: f64, detail: String },
    #[error("validity screening needs at least 3 alpha levels, got {got}")]
    TooFewLevels { got: usize },
    #[error("alpha {got} outside [0, 1]")]
    InvalidAlpha { got: f64 },
    #[error(transparent)]
    Bfs(#[from] BfsError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    Uncoupled,
    CrossCoupledX,
    CrossCoupledY,
    CrossCoupledBoth,
}

impl Coupling {
    pub fn crosses_x(self) -> bool {
        matches!(self, Coupling::CrossCoupledX | Coupling::CrossCoupledBoth)
    }

    pub fn crosses_y(self) -> bool {
        matches!(self, Coupling::CrossCoupledY | Coupling::CrossCoupledBoth)
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Coupling::Uncoupled => "uncoupled",
            Coupling::CrossCoupledX => "cross-coupled-x",
            Coupling::CrossCoupledY => "cross-coupled-y",
            Coupling::CrossCoupledBoth => "cross-coupled-both",
        };
        write!(f, "{s}")
    }
}

/// The endpoint pair as expressions in t, x[, y] and alpha. Index 1 feeds
/// the lower-endpoint equation, index 2 the upper; a crossed axis applies
/// the index-1 coefficient to the index-2 curvature and vice versa.
#[derive(Debug, Clone)]
pub struct SeikkalaSystem {
    pub coupling: Coupling,
    pub px1: Expr,
    pub px2: Expr,
    pub py1: Option<Expr>,
    pub py2: Option<Expr>,
    pub f1: Expr,
    pub f2: Expr,
    pub ic1: Expr,
    pub ic2: Expr,
}

/// Endpoint fields per stored alpha level, lowest alpha first.
#[derive(Debug, Clone)]
pub struct SsSolution {
    pub alphas: Vec<f64>,
    pub lower: Vec<GridFunction>,
    pub upper: Vec<GridFunction>,
}

impl SsSolution {
    pub fn level_count(&self) -> usize {
        self.alphas.len()
    }

    pub fn spec(&self) -> &GridSpec {
        self.lower[0].spec()
    }
}

/// Node-wise fuzzy-validity flags over the space-time grid.
#[derive(Debug, Clone)]
pub struct ValidityMask {
    spec: GridSpec,
    mask: Vec<bool>,
}

impl ValidityMask {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn at(&self, it: usize, ix: usize, iy: usize) -> bool {
        self.mask[self.spec.index(it, ix, iy)]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn flags(&self) -> &[bool] {
        &self.mask
    }
}

/// Largest axis-aligned valid box anchored at the t = 0 edge.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBox {
    pub t_end_index: usize,
    /// Time value at `t_end_index`; 0 when the region is empty.
    pub t_extent: f64,
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub node_count: usize,
}

impl RegionBox {
    fn empty() -> Self {
        RegionBox {
            t_end_index: 0,
            t_extent: 0.0,
            x_range: None,
            y_range: None,
            node_count: 0,
        }
    }
}

fn axis_crossing(axis: &str, info: &SignInfo) -> Result<bool, SsError> {
    match info.sign {
        Sign::Positive | Sign::Zero => Ok(false),
        Sign::Negative => Ok(true),
        Sign::Mixed => Err(SsError::IndefiniteCoefficient {
            axis: axis.to_string(),
            positive: info
                .positive
                .clone()
                .expect("mixed sign carries a positive witness"),
            negative: info
                .negative
                .clone()
                .expect("mixed sign carries a negative witness"),
        }),
    }
}

/// Build the endpoint system from the coefficient sign profile.
pub fn assemble_system(
    p: &HeatLikeProblem,
    profile: &SignProfile,
) -> Result<SeikkalaSystem, SsError> {
    let cross_x = axis_crossing("x", &profile.p)?;
    let cross_y = match &profile.q {
        Some(info) => Some(axis_crossing("y", info)?),
        None => None,
    };
    let coupling = match (cross_x, cross_y.unwrap_or(false)) {
        (false, false) => Coupling::Uncoupled,
        (true, false) => Coupling::CrossCoupledX,
        (false, true) => Coupling::CrossCoupledY,
        (true, true) => Coupling::CrossCoupledBoth,
    };

    let (py1, py2) = match p.y_coefficient() {
        Some(q) => (
            Some(bind_endpoints(q, p, &profile.q_partials, true)?),
            Some(bind_endpoints(q, p, &profile.q_partials, false)?),
        ),
        None => (None, None),
    };
    Ok(SeikkalaSystem {
        coupling,
        px1: bind_endpoints(p.x_coefficient(), p, &profile.p_partials, true)?,
        px2: bind_endpoints(p.x_coefficient(), p, &profile.p_partials, false)?,
        py1,
        py2,
        f1: bind_endpoints(&p.f, p, &profile.f_partials, true)?,
        f2: bind_endpoints(&p.f, p, &profile.f_partials, false)?,
        ic1: bind_endpoints(&p.initial_condition, p, &profile.ic_partials, true)?,
        ic2: bind_endpoints(&p.initial_condition, p, &profile.ic_partials, false)?,
    })
}

struct Operators {
    sx: SpatialOperator,
    sy: Option<SpatialOperator>,
}

impl Operators {
    fn build(p: &HeatLikeProblem, spec: &GridSpec) -> Result<Self, SsError> {
        Ok(Operators {
            sx: spatial::build(p, spec, Axis::X)?,
            sy: match spec.is_two_dim() {
                true => Some(spatial::build(p, spec, Axis::Y)?),
                false => None,
            },
        })
    }
}

/// One coefficient or source field, re-sampled per stage only when it
/// actually depends on time.
struct PlaneField {
    expr: Expr,
    time_dependent: bool,
    plane: Vec<f64>,
}

impl PlaneField {
    fn new(e: Expr, spec: &GridSpec) -> Result<Self, GridError> {
        let time_dependent = e.free_symbols().contains("t");
        let plane = if time_dependent {
            vec![0.0; spec.plane_count()]
        } else {
            sample_spatial_plane(spec, &e, &Environment::new())?
        };
        Ok(PlaneField {
            expr: e,
            time_dependent,
            plane,
        })
    }

    fn at_time(&mut self, spec: &GridSpec, t: f64) -> Result<&[f64], GridError> {
        if self.time_dependent {
            let env = Environment::new().with("t", t);
            self.plane = sample_spatial_plane(spec, &self.expr, &env)?;
        }
        Ok(&self.plane)
    }

    /// Largest |value| over the plane at a few time samples, for the
    /// stability estimate.
    fn sup_abs(&mut self, spec: &GridSpec, times: &[f64]) -> Result<f64, GridError> {
        let mut sup: f64 = 0.0;
        if self.time_dependent {
            for &t in times {
                let plane = self.at_time(spec, t)?;
                sup = plane.iter().fold(sup, |m, v| m.max(v.abs()));
            }
        } else {
            sup = self.plane.iter().fold(sup, |m, v| m.max(v.abs()));
        }
        Ok(sup)
    }
}

fn bind_alpha(e: &Expr, alpha: f64) -> Expr {
    e.substitute("alpha", &Expr::Const(alpha)).simplify()
}

struct LevelFields {
    px1: PlaneField,
    px2: PlaneField,
    py1: Option<PlaneField>,
    py2: Option<PlaneField>,
    f1: PlaneField,
    f2: PlaneField,
}

impl LevelFields {
    fn bind(sys: &SeikkalaSystem, spec: &GridSpec, alpha: f64) -> Result<Self, GridError> {
        let mk = |e: &Expr| PlaneField::new(bind_alpha(e, alpha), spec);
        Ok(LevelFields {
            px1: mk(&sys.px1)?,
            px2: mk(&sys.px2)?,
            py1: sys.py1.as_ref().map(&mk).transpose()?,
            py2: sys.py2.as_ref().map(&mk).transpose()?,
            f1: mk(&sys.f1)?,
            f2: mk(&sys.f2)?,
        })
    }
}

struct StepBuffers {
    k: [Vec<f64>; 8],
    stage1: Vec<f64>,
    stage2: Vec<f64>,
    curv: Vec<f64>,
}

impl StepBuffers {
    fn new(plane: usize) -> Self {
        StepBuffers {
            k: std::array::from_fn(|_| vec![0.0; plane]),
            stage1: vec![0.0; plane],
            stage2: vec![0.0; plane],
            curv: vec![0.0; plane],
        }
    }
}

/// du1/dt and du2/dt at time t for endpoint planes (w1, w2).
#[allow(clippy::too_many_arguments)]
fn endpoint_rhs(
    fields: &mut LevelFields,
    ops: &Operators,
    coupling: Coupling,
    spec: &GridSpec,
    t: f64,
    w1: &[f64],
    w2: &[f64],
    out1: &mut [f64],
    out2: &mut [f64],
    curv: &mut [f64],
) -> Result<(), GridError> {
    let (nx, ny) = (spec.x.n, spec.ny());
    out1.copy_from_slice(fields.f1.at_time(spec, t)?);
    out2.copy_from_slice(fields.f2.at_time(spec, t)?);

    let src1 = if coupling.crosses_x() { w2 } else { w1 };
    ops.sx.apply_plane(src1, curv, nx, ny);
    let p1 = fields.px1.at_time(spec, t)?;
    for i in 0..out1.len() {
        out1[i] -= p1[i] * curv[i];
    }
    let src2 = if coupling.crosses_x() { w1 } else { w2 };
    ops.sx.apply_plane(src2, curv, nx, ny);
    let p2 = fields.px2.at_time(spec, t)?;
    for i in 0..out2.len() {
        out2[i] -= p2[i] * curv[i];
    }

    if let Some(sy) = &ops.sy {
        let src1 = if coupling.crosses_y() { w2 } else { w1 };
        sy.apply_plane(src1, curv, nx, ny);
        let q1 = fields
            .py1
            .as_mut()
            .expect("2-d system has a y coefficient")
            .at_time(spec, t)?;
        for i in 0..out1.len() {
            out1[i] -= q1[i] * curv[i];
        }
        let src2 = if coupling.crosses_y() { w1 } else { w2 };
        sy.apply_plane(src2, curv, nx, ny);
        let q2 = fields
            .py2
            .as_mut()
            .expect("2-d system has a y coefficient")
            .at_time(spec, t)?;
        for i in 0..out2.len() {
            out2[i] -= q2[i] * curv[i];
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rk4_substep(
    fields: &mut LevelFields,
    ops: &Operators,
    coupling: Coupling,
    spec: &GridSpec,
    t: f64,
    h: f64,
    w1: &mut [f64],
    w2: &mut [f64],
    bufs: &mut StepBuffers,
) -> Result<(), GridError> {
    let n = w1.len();
    // Split the k array so each stage has distinct slopes per endpoint.
    let [k1a, k1b, k2a, k2b, k3a, k3b, k4a, k4b] = &mut bufs.k;

    endpoint_rhs(fields, ops, coupling, spec, t, w1, w2, k1a, k1b, &mut bufs.curv)?;
    for i in 0..n {
        bufs.stage1[i] = w1[i] + 0.5 * h * k1a[i];
        bufs.stage2[i] = w2[i] + 0.5 * h * k1b[i];
    }
    endpoint_rhs(
        fields,
        ops,
        coupling,
        spec,
        t + 0.5 * h,
        &bufs.stage1,
        &bufs.stage2,
        k2a,
        k2b,
        &mut bufs.curv,
    )?;
    for i in 0..n {
        bufs.stage1[i] = w1[i] + 0.5 * h * k2a[i];
        bufs.stage2[i] = w2[i] + 0.5 * h * k2b[i];
    }
    endpoint_rhs(
        fields,
        ops,
        coupling,
        spec,
        t + 0.5 * h,
        &bufs.stage1,
        &bufs.stage2,
        k3a,
        k3b,
        &mut bufs.curv,
    )?;
    for i in 0..n {
        bufs.stage1[i] = w1[i] + h * k3a[i];
        bufs.stage2[i] = w2[i] + h * k3b[i];
    }
    endpoint_rhs(
        fields,
        ops,
        coupling,
        spec,
        t + h,
        &bufs.stage1,
        &bufs.stage2,
        k4a,
        k4b,
        &mut bufs.curv,
    )?;
    let w = h / 6.0;
    for i in 0..n {
        w1[i] += w * (k1a[i] + 2.0 * k2a[i] + 2.0 * k3a[i] + k4a[i]);
        w2[i] += w * (k1b[i] + 2.0 * k2b[i] + 2.0 * k3b[i] + k4b[i]);
    }
    Ok(())
}

fn solve_level(
    sys: &SeikkalaSystem,
    spec: &GridSpec,
    ops: &Operators,
    alpha: f64,
) -> Result<(GridFunction, GridFunction), SsError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SsError::InvalidAlpha { got: alpha });
    }
    let mut fields = LevelFields::bind(sys, spec, alpha)?;

    // Stability: explicit stepping must resolve the fastest coefficient
    // times the operator's row scale on every axis.
    let probe_times = [spec.t.start, 0.5 * (spec.t.start + spec.t.end), spec.t.end];
    let mut rate = ops.sx.max_row_sum()
        * fields
            .px1
            .sup_abs(spec, &probe_times)?
            .max(fields.px2.sup_abs(spec, &probe_times)?);
    if let Some(sy) = &ops.sy {
        let q1 = fields
            .py1
            .as_mut()
            .expect("2-d system has a y coefficient")
            .sup_abs(spec, &probe_times)?;
        let q2 = fields
            .py2
            .as_mut()
            .expect("2-d system has a y coefficient")
            .sup_abs(spec, &probe_times)?;
        rate += sy.max_row_sum() * q1.max(q2);
    }
    let dt = spec.t.spacing();
    let substeps = ((dt * rate / RK4_STABILITY_TARGET).ceil() as usize).max(1);
    if substeps > MAX_SUBSTEPS {
        return Err(SsError::StabilityViolation {
            needed: substeps,
            limit: MAX_SUBSTEPS,
            rate,
        });
    }

    let plane = spec.plane_count();
    let ic_env = Environment::new().with("t", spec.t.start);
    let ic1 = sample_spatial_plane(spec, &bind_alpha(&sys.ic1, alpha), &ic_env)?;
    let ic2 = sample_spatial_plane(spec, &bind_alpha(&sys.ic2, alpha), &ic_env)?;

    let mut u1 = GridFunction::zeros(spec.clone());
    let mut u2 = GridFunction::zeros(spec.clone());
    u1.values_mut()[..plane].copy_from_slice(&ic1);
    u2.values_mut()[..plane].copy_from_slice(&ic2);

    let mut w1 = ic1;
    let mut w2 = ic2;
    let mut bufs = StepBuffers::new(plane);
    let h = dt / substeps as f64;
    for step in 0..spec.t.n - 1 {
        let t0 = spec.t.node(step);
        for sub in 0..substeps {
            let t = t0 + h * sub as f64;
            rk4_substep(
                &mut fields,
                ops,
                sys.coupling,
                spec,
                t,
                h,
                &mut w1,
                &mut w2,
                &mut bufs,
            )?;
        }
        let offset = (step + 1) * plane;
        if !w1.iter().chain(w2.iter()).all(|v| v.is_finite()) {
            return Err(SsError::NumericalFailure {
                t_index: step + 1,
                alpha,
            });
        }
        u1.values_mut()[offset..offset + plane].copy_from_slice(&w1);
        u2.values_mut()[offset..offset + plane].copy_from_slice(&w2);
    }
    Ok((u1, u2))
}

/// Integrate the endpoint pair at one alpha level on the problem's grid.
pub fn solve_ss(
    sys: &SeikkalaSystem,
    p: &HeatLikeProblem,
    alpha: f64,
) -> Result<(GridFunction, GridFunction), SsError> {
    let spec = p.grid_spec()?;
    let ops = Operators::build(p, &spec)?;
    solve_level(sys, &spec, &ops, alpha)
}

/// Integrate every stored alpha level, reusing one pair of spatial
/// operators across levels.
pub fn solve_all_levels(
    sys: &SeikkalaSystem,
    p: &HeatLikeProblem,
) -> Result<SsSolution, SsError> {
    let spec = p.grid_spec()?;
    let ops = Operators::build(p, &spec)?;
    let alphas = p.alpha_levels();
    let mut lower = Vec::with_capacity(alphas.len());
    let mut upper = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        let (u1, u2) = solve_level(sys, &spec, &ops, alpha)?;
        lower.push(u1);
        upper.push(u2);
    }
    Ok(SsSolution {
        alphas,
        lower,
        upper,
    })
}

/// Clamped-index derivative of the level stack at level j, node flat index.
fn alpha_derivative(values: &[GridFunction], alphas: &[f64], j: usize, flat: usize) -> f64 {
    let last = alphas.len() - 1;
    let (a, b) = match j {
        0 => (0, 1),
        _ if j == last => (last - 1, last),
        _ => (j - 1, j + 1),
    };
    (values[b].values()[flat] - values[a].values()[flat]) / (alphas[b] - alphas[a])
}

/// Screen the level stack for fuzzy-number structure and locate the largest
/// valid box anchored at the t = 0 edge.
pub fn validity_region(sol: &SsSolution) -> Result<(ValidityMask, RegionBox), SsError> {
    let levels = sol.level_count();
    if levels < 3 {
        return Err(SsError::TooFewLevels { got: levels });
    }
    let spec = sol.spec().clone();
    let n = spec.node_count();
    let mut mask = vec![false; n];
    for flat in 0..n {
        let mut scale: f64 = 0.0;
        for j in 0..levels {
            scale = scale
                .max(sol.lower[j].values()[flat].abs())
                .max(sol.upper[j].values()[flat].abs());
        }
        let tol = 1e-8 * (1.0 + scale);
        let mut valid = true;
        for j in 0..levels {
            let d_lo = alpha_derivative(&sol.lower, &sol.alphas, j, flat);
            let d_hi = alpha_derivative(&sol.upper, &sol.alphas, j, flat);
            let lo = sol.lower[j].values()[flat];
            let hi = sol.upper[j].values()[flat];
            if d_lo < -tol || d_hi > tol || lo > hi + tol {
                valid = false;
                break;
            }
        }
        mask[flat] = valid;
    }
    let region = largest_anchored_box(&spec, &mask);
    Ok((ValidityMask { spec, mask }, region))
}

/// Largest (by node count) box [0, t_k] x [x_a, x_b] (x [y_a, y_b]) of
/// valid nodes. The spatial rectangle is recomputed for each prefix length
/// against the running intersection of time planes.
fn largest_anchored_box(spec: &GridSpec, mask: &[bool]) -> RegionBox {
    let (nx, ny) = (spec.x.n, spec.ny());
    let plane = nx * ny;
    let mut common = vec![true; plane];
    let mut best = RegionBox::empty();
    for k in 0..spec.t.n {
        for i in 0..plane {
            common[i] &= mask[k * plane + i];
        }
        let Some((area, xr, yr)) = largest_rectangle(&common, nx, ny) else {
            break; // the intersection only shrinks with k
        };
        let count = (k + 1) * area;
        if count > best.node_count {
            best = RegionBox {
                t_end_index: k,
                t_extent: spec.t.node(k),
                x_range: Some((spec.x.node(xr.0), spec.x.node(xr.1))),
                y_range: spec
                    .y
                    .map(|axis| {
                        let yr = yr.expect("2-d rectangle carries a y range");
                        (axis.node(yr.0), axis.node(yr.1))
                    }),
                node_count: count,
            };
        }
    }
    best
}

/// Largest all-true axis-aligned rectangle in a nx-by-ny flag plane
/// (row-major with y fastest). Returns node count and inclusive index
/// ranges, or None when no flag is set.
#[allow(clippy::type_complexity)]
fn largest_rectangle(
    flags: &[bool],
    nx: usize,
    ny: usize,
) -> Option<(usize, (usize, usize), Option<(usize, usize)>)> {
    if ny == 1 {
        // One spatial axis: the longest run of set flags.
        let mut best: Option<(usize, (usize, usize))> = None;
        let mut run_start = None;
        for i in 0..=nx {
            let on = i < nx && flags[i];
            match (on, run_start) {
                (true, None) => run_start = Some(i),
                (false, Some(s)) => {
                    let len = i - s;
                    if best.map_or(true, |(b, _)| len > b) {
                        best = Some((len, (s, i - 1)));
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        return best.map(|(len, xr)| (len, xr, None));
    }

    // Histogram-of-heights sweep over rows of constant x.
    let mut heights = vec![0usize; ny];
    let mut best: Option<(usize, (usize, usize), (usize, usize))> = None;
    for ix in 0..nx {
        for iy in 0..ny {
            heights[iy] = if flags[ix * ny + iy] {
                heights[iy] + 1
            } else {
                0
            };
        }
        // Largest rectangle in histogram, tracking the column span.
        let mut stack: Vec<usize> = Vec::new();
        for iy in 0..=ny {
            let h = if iy < ny { heights[iy] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] <= h {
                    break;
                }
                stack.pop();
                let height = heights[top];
                let left = stack.last().map_or(0, |&l| l + 1);
                let width = iy - left;
                let area = height * width;
                if best.map_or(true, |(b, _, _)| area > b) {
                    best = Some((area, (ix + 1 - height, ix), (left, iy - 1)));
                }
            }
            stack.push(iy);
        }
    }
    best.map(|(area, xr, yr)| (area, xr, Some(yr)))
}

/// Promote the endpoint stack at one grid node to a fuzzy number.
/// Panics if the node indices are outside the grid, like `GridFunction::at`.
pub fn ss_fuzzy_solution(
    sol: &SsSolution,
    mask: &ValidityMask,
    it: usize,
    ix: usize,
    iy: usize,
) -> Result<AlphaLevelFuzzyNumber, SsError> {
    let levels = sol.level_count();
    if !mask.at(it, ix, iy) {
        // Locate a violating level for the diagnostic.
        let flat = mask.spec().index(it, ix, iy);
        for j in 0..levels {
            let lo = sol.lower[j].values()[flat];
            let hi = sol.upper[j].values()[flat];
            let d_lo = alpha_derivative(&sol.lower, &sol.alphas, j, flat);
            let d_hi = alpha_derivative(&sol.upper, &sol.alphas, j, flat);
            let detail = if lo > hi {
                Some(format!("lower endpoint {lo:.6e} exceeds upper {hi:.6e}"))
            } else if d_lo < 0.0 {
                Some(format!("lower endpoint decreasing in alpha ({d_lo:.3e})"))
            } else if d_hi > 0.0 {
                Some(format!("upper endpoint increasing in alpha ({d_hi:.3e})"))
            } else {
                None
            };
            if let Some(detail) = detail {
                return Err(SsError::NotFuzzyAtNode {
                    alpha: sol.alphas[j],
                    detail,
                });
            }
        }
        return Err(SsError::NotFuzzyAtNode {
            alpha: sol.alphas[0],
            detail: "node is outside the validity mask".to_string(),
        });
    }

    let pick = |alpha: f64| ((levels - 1) as f64 * alpha).round() as usize;
    from_endpoint_samples(
        |a| sol.lower[pick(a)].at(it, ix, iy),
        |a| sol.upper[pick(a)].at(it, ix, iy),
        levels,
    )
    .map_err(|e| match e {
        FuzzyError::InvalidStack { index, detail } => SsError::NotFuzzyAtNode {
            alpha: sol.alphas[index],
            detail,
        },
        other => SsError::Fuzzy(other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfs::coefficient_signs;
    use crate::problem::load_problem;

    const EX2_STYLE: &str = r#"
[pde]
dimension = 1
p = "(g/2)*x^2"
f = "k"
[initial]
expression = "c*x^2"
[params.c]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[params.g]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[params.k]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[domain]
m1 = 1.0
m2 = 15.0
nt = 101
nx = 101
[alpha]
level_count = 21
"#;

    const EX5_SMALL: &str = r#"
[pde]
dimension = 1
p = "-g"
f = "-k*cos(x)"
[initial]
expression = "c*sin(x)"
[params.c]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[params.g]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[params.k]
shape = [-1.5, -1.0, -0.5]
range = [-3.0, -0.1]
[domain]
m1 = 1.0
m2 = 1.5707963267948966
nt = 41
nx = 41
[alpha]
level_count = 5
"#;

    fn ex2_system(p: &crate::problem::HeatLikeProblem) -> SeikkalaSystem {
        let profile = coefficient_signs(p).unwrap();
        assemble_system(p, &profile).unwrap()
    }

    #[test]
    fn example_two_stays_uncoupled_and_matches_the_closed_form() {
        let p = load_problem(EX2_STYLE).unwrap();
        let sys = ex2_system(&p);
        assert_eq!(sys.coupling, Coupling::Uncoupled);
        let (u1, u2) = solve_ss(&sys, &p, 0.5).unwrap();
        // Index-matched endpoints: u_i = c_i x^2 exp(-g_i t) + k_i t with
        // c_1 = g_1 = k_1 = 0.75 and c_2 = g_2 = k_2 = 1.25 at alpha = 0.5.
        let spec = p.grid_spec().unwrap();
        let mut worst: f64 = 0.0;
        for it in 0..spec.t.n {
            let t = spec.t.node(it);
            for ix in 0..spec.x.n {
                let x = spec.x.node(ix);
                let want1 = 0.75 * x * x * (-0.75 * t).exp() + 0.75 * t;
                let want2 = 1.25 * x * x * (-1.25 * t).exp() + 1.25 * t;
                worst = worst.max((u1.at(it, ix, 0) - want1).abs());
                worst = worst.max((u2.at(it, ix, 0) - want2).abs());
            }
        }
        assert!(worst < 5e-4, "sup error {worst}");
    }

    #[test]
    fn alpha_one_collapses_to_a_single_trajectory() {
        let p = load_problem(EX2_STYLE).unwrap();
        let sys = ex2_system(&p);
        let (u1, u2) = solve_ss(&sys, &p, 1.0).unwrap();
        assert_eq!(u1.values(), u2.values());
    }

    #[test]
    fn example_five_cross_couples_and_respects_endpoint_exchange() {
        let p = load_problem(EX5_SMALL).unwrap();
        let profile = coefficient_signs(&p).unwrap();
        let sys = assemble_system(&p, &profile).unwrap();
        assert_eq!(sys.coupling, Coupling::CrossCoupledX);
        // Relabeling (u1, u2) -> (u2, u1) swaps every endpoint role; the
        // integrator must reproduce the same pair in the opposite slots.
        let swapped = SeikkalaSystem {
            coupling: sys.coupling,
            px1: sys.px2.clone(),
            px2: sys.px1.clone(),
            py1: None,
            py2: None,
            f1: sys.f2.clone(),
            f2: sys.f1.clone(),
            ic1: sys.ic2.clone(),
            ic2: sys.ic1.clone(),
        };
        let (a1, a2) = solve_ss(&sys, &p, 0.3).unwrap();
        let (b1, b2) = solve_ss(&swapped, &p, 0.3).unwrap();
        assert_eq!(a1.values(), b2.values());
        assert_eq!(a2.values(), b1.values());
    }

    #[test]
    fn example_two_region_ends_near_the_support_bound() {
        let p = load_problem(EX2_STYLE).unwrap();
        let sys = ex2_system(&p);
        let sol = solve_all_levels(&sys, &p).unwrap();
        assert_eq!(sol.level_count(), 21);
        let (mask, region) = validity_region(&sol).unwrap();
        // The upper endpoint stays alpha-monotone only while
        // x^2 exp(-g_2 t) (c_2 t - 1) <= t; on this box that caps the
        // anchored region near t = 1 / c_2(0) = 2/3.
        assert!(region.node_count > 0);
        let dt = p.grid_spec().unwrap().t.spacing();
        assert!(
            (region.t_extent - 2.0 / 3.0).abs() <= dt + 1e-9,
            "t extent {} vs 2/3",
            region.t_extent
        );
        assert!(region.y_range.is_none());

        // Promotion: a node inside the box yields a stacked fuzzy number.
        let fz = ss_fuzzy_solution(&sol, &mask, 10, 50, 0).unwrap();
        assert_eq!(fz.level_count(), 21);
        let levels = fz.levels();
        let support = levels[0].1;
        let core = levels[20].1;
        assert!(support.lo <= core.lo && core.hi <= support.hi);

        // The far corner violates upper-endpoint monotonicity at small alpha.
        let err = ss_fuzzy_solution(&sol, &mask, 100, 100, 0).unwrap_err();
        match err {
            SsError::NotFuzzyAtNode { alpha, ref detail } => {
                assert!(alpha < 0.5, "violation should surface at small alpha, got {alpha}");
                assert!(detail.contains("increasing"), "{detail}");
            }
            other => panic!("expected NotFuzzyAtNode, got {other}"),
        }
    }

    #[test]
    fn crisp_parameters_validate_the_whole_domain() {
        let text = EX2_STYLE
            .replace("shape = [0.5, 1.0, 1.5]", "shape = [1.0, 1.0, 1.0]")
            .replace("level_count = 21", "level_count = 5")
            .replace("nt = 101", "nt = 51")
            .replace("nx = 101", "nx = 51");
        let p = load_problem(&text).unwrap();
        let sys = ex2_system(&p);
        let sol = solve_all_levels(&sys, &p).unwrap();
        let (mask, region) = validity_region(&sol).unwrap();
        let total = 51 * 51;
        assert_eq!(mask.valid_count(), total);
        assert_eq!(region.node_count, total);
        assert_eq!(region.t_end_index, 50);
    }

    #[test]
    fn sign_indefinite_coefficient_is_rejected() {
        // Widening the advection-style domain makes P = g (0.5 - x) change
        // sign inside the interval, which the endpoint system cannot host.
        let text = r#"
[pde]
dimension = 1
p = "g*(0.5-x)"
f = "-k*x^2*t^2"
[initial]
expression = "c*x^2"
[params.k]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[params.c]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[params.g]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[domain]
m1 = 1.0
m2 = 1.0
nt = 21
nx = 21
[alpha]
level_count = 3
"#;
        let p = load_problem(text).unwrap();
        let profile = coefficient_signs(&p).unwrap();
        let err = assemble_system(&p, &profile).unwrap_err();
        match err {
            SsError::IndefiniteCoefficient { ref axis, .. } => assert_eq!(axis, "x"),
            other => panic!("expected IndefiniteCoefficient, got {other}"),
        }
    }

    #[test]
    fn two_level_stacks_cannot_support_a_region() {
        let text = EX2_STYLE
            .replace("level_count = 21", "level_count = 2")
            .replace("nt = 101", "nt = 11")
            .replace("nx = 101", "nx = 11");
        let p = load_problem(&text).unwrap();
        let sys = ex2_system(&p);
        let sol = solve_all_levels(&sys, &p).unwrap();
        let err = validity_region(&sol).unwrap_err();
        assert!(matches!(err, SsError::TooFewLevels { got: 2 }), "{err}");
    }

    #[test]
    fn out_of_range_alpha_is_rejected() {
        let p = load_problem(EX5_SMALL).unwrap();
        let profile = coefficient_signs(&p).unwrap();
        let sys = assemble_system(&p, &profile).unwrap();
        let err = solve_ss(&sys, &p, 1.5).unwrap_err();
        assert!(matches!(err, SsError::InvalidAlpha { .. }), "{err}");
    }

    #[test]
    fn initial_plane_matches_the_bound_initial_condition() {
        let p = load_problem(EX2_STYLE).unwrap();
        let sys = ex2_system(&p);
        let (u1, u2) = solve_ss(&sys, &p, 0.0).unwrap();
        let spec = p.grid_spec().unwrap();
        for ix in [0, 27, 50, 100] {
            let x = spec.x.node(ix);
            // c_1(0) = 0.5 and c_2(0) = 1.5.
            assert!((u1.at(0, ix, 0) - 0.5 * x * x).abs() < 1e-12);
            assert!((u2.at(0, ix, 0) - 1.5 * x * x).abs() < 1e-12);
        }
    }
}
