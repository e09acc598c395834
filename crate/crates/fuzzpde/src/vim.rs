//! Variational iteration for a crisp parameter assignment. With the
//! multiplier fixed at -1 the correction of an iterate U is
//!
//!   U  <-  U - integral_0^t [ U_s + P U_xx (+ Q U_yy) - F ] ds,
//!
//! evaluated on the full space-time grid with second-order time differences
//! and the trapezoid rule. A single `correction_step` takes the curvature
//! from the finite-difference stencils. The solve loop does not: repeated
//! corrections amplify broadband rounding noise through the raw stencils at
//! a rate of roughly (max|P| * 4/h^2)^n / n!, which outruns any tolerance
//! long before 50 iterations. The loop therefore computes curvature through
//! the profile-span operator of `spatial`, which is exact on the functions
//! the iteration can actually produce, and the final residual is measured
//! with the plain stencils as an independent check.

use thiserror::Error;

use crate::grid::{
    cumulative_time_integral_in_place, sample_spatial_plane, second_derivative_into,
    sup_norm_diff, time_derivative_into, Axis, GridError, GridFunction, GridSpec,
};
use crate::problem::{CrispInstance, ProblemError, VimOverrides};
use crate::spatial::{self, SpatialError, SpatialOperator};

#[derive(Debug, Error)]
pub enum VimError {
    #[error("bad solver configuration: {detail}")]
    BadConfig { detail: String },
    #[error(
        "iteration diverged: correction {delta:.3e} exceeded the guard {guard:.1e} \
         at iteration {iteration}"
    )]
    Diverged {
        iteration: usize,
        delta: f64,
        guard: f64,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VimConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub divergence_guard: f64,
}

impl Default for VimConfig {
    fn default() -> Self {
        VimConfig {
            max_iterations: 50,
            tolerance: 1e-8,
            divergence_guard: 1e12,
        }
    }
}

impl VimConfig {
    pub fn validate(&self) -> Result<(), VimError> {
        if self.max_iterations == 0 {
            return Err(VimError::BadConfig {
                detail: "max_iterations must be at least 1".into(),
            });
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(VimError::BadConfig {
                detail: format!("tolerance {} must be positive and finite", self.tolerance),
            });
        }
        if !(self.divergence_guard > 0.0 && self.divergence_guard.is_finite()) {
            return Err(VimError::BadConfig {
                detail: format!(
                    "divergence_guard {} must be positive and finite",
                    self.divergence_guard
                ),
            });
        }
        Ok(())
    }

    /// Fold in per-problem overrides, where present.
    pub fn with_overrides(mut self, o: &VimOverrides) -> Self {
        if let Some(tol) = o.tolerance {
            self.tolerance = tol;
        }
        if let Some(n) = o.max_iterations {
            self.max_iterations = n;
        }
        self
    }
}

#[derive(Debug)]
pub struct VimResult {
    pub solution: GridFunction,
    pub iterations_used: usize,
    pub final_delta: f64,
    pub residual_sup: f64,
    pub converged: bool,
    /// Correction size per iteration, in application order.
    pub deltas: Vec<f64>,
}

/// How the curvature terms are computed.
enum Curvature {
    /// Finite-difference stencils, the single-step contract.
    Stencils,
    /// Profile-span operators, the solve-loop contract.
    Projected {
        sx: SpatialOperator,
        sy: Option<SpatialOperator>,
    },
}

/// Everything the correction needs that does not change between iterations.
struct StepContext {
    spec: GridSpec,
    /// P on one spatial plane (P never depends on t).
    p_plane: Vec<f64>,
    q_plane: Option<Vec<f64>>,
    /// F on the full grid when it depends on t, otherwise one plane.
    f_values: Vec<f64>,
    f_is_plane: bool,
    curvature: Curvature,
}

impl StepContext {
    fn new(inst: &CrispInstance, spec: &GridSpec, projected: bool) -> Result<Self, VimError> {
        let p = inst.problem();
        if spec.is_two_dim() != (p.dimension == 2) {
            return Err(GridError::SpecMismatch {
                detail: format!(
                    "grid is {}-dimensional in space but the problem has dimension {}",
                    if spec.is_two_dim() { 2 } else { 1 },
                    p.dimension
                ),
            }
            .into());
        }
        let env = inst.bindings();
        let p_plane = sample_spatial_plane(spec, p.x_coefficient(), env)?;
        let q_plane = match p.y_coefficient() {
            Some(q) => Some(sample_spatial_plane(spec, q, env)?),
            None => None,
        };
        let f_is_plane = !p.f.free_symbols().contains("t");
        let f_values = if f_is_plane {
            sample_spatial_plane(spec, &p.f, env)?
        } else {
            GridFunction::sample(spec, &p.f, env)?.values().to_vec()
        };
        let curvature = if projected {
            let sx = spatial::build(p, spec, Axis::X)?;
            let sy = if p.dimension == 2 {
                Some(spatial::build(p, spec, Axis::Y)?)
            } else {
                None
            };
            Curvature::Projected { sx, sy }
        } else {
            Curvature::Stencils
        };
        Ok(StepContext {
            spec: spec.clone(),
            p_plane,
            q_plane,
            f_values,
            f_is_plane,
            curvature,
        })
    }

    /// scratch <- second derivative of u along `axis`.
    fn curvature_into(&self, u: &[f64], axis: Axis, scratch: &mut [f64]) {
        let spec = &self.spec;
        match &self.curvature {
            Curvature::Stencils => second_derivative_into(u, spec, axis, scratch),
            Curvature::Projected { sx, sy } => {
                let op = match axis {
                    Axis::X => sx,
                    Axis::Y => sy.as_ref().expect("y operator built for 2-d problems"),
                };
                let plane = spec.plane_count();
                let (nx, ny) = (spec.x.n, spec.ny());
                for it in 0..spec.t.n {
                    let off = it * plane;
                    op.apply_plane(&u[off..off + plane], &mut scratch[off..off + plane], nx, ny);
                }
            }
        }
    }

    /// residual <- U_t + P U_xx (+ Q U_yy) - F, curvature per `self`.
    fn equation_lhs_minus_f(&self, u: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let spec = &self.spec;
        let plane = spec.plane_count();
        let nt = spec.t.n;

        time_derivative_into(u, spec, out);

        self.curvature_into(u, Axis::X, scratch);
        for it in 0..nt {
            let off = it * plane;
            for j in 0..plane {
                out[off + j] += self.p_plane[j] * scratch[off + j];
            }
        }
        if let Some(q_plane) = &self.q_plane {
            self.curvature_into(u, Axis::Y, scratch);
            for it in 0..nt {
                let off = it * plane;
                for j in 0..plane {
                    out[off + j] += q_plane[j] * scratch[off + j];
                }
            }
        }
        if self.f_is_plane {
            for it in 0..nt {
                let off = it * plane;
                for j in 0..plane {
                    out[off + j] -= self.f_values[j];
                }
            }
        } else {
            for (c, f) in out.iter_mut().zip(&self.f_values) {
                *c -= f;
            }
        }
    }

    /// Write the correction integral for `u` into `correction`, using
    /// `scratch` for the spatial derivative. Returns sup |correction|.
    fn correction(&self, u: &[f64], correction: &mut [f64], scratch: &mut [f64]) -> f64 {
        self.equation_lhs_minus_f(u, correction, scratch);
        cumulative_time_integral_in_place(correction, &self.spec);
        correction.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Residual of `u` under the equation, measured with the public
    /// stencils regardless of how the iteration ran, restricted to
    /// interior nodes.
    fn residual_sup(&self, u: &[f64], residual: &mut [f64], scratch: &mut [f64]) -> f64 {
        let spec = &self.spec;
        let plane = spec.plane_count();
        let nt = spec.t.n;
        time_derivative_into(u, spec, residual);
        second_derivative_into(u, spec, Axis::X, scratch);
        for it in 0..nt {
            let off = it * plane;
            for j in 0..plane {
                residual[off + j] += self.p_plane[j] * scratch[off + j];
            }
        }
        if let Some(q_plane) = &self.q_plane {
            second_derivative_into(u, spec, Axis::Y, scratch);
            for it in 0..nt {
                let off = it * plane;
                for j in 0..plane {
                    residual[off + j] += q_plane[j] * scratch[off + j];
                }
            }
        }
        if self.f_is_plane {
            for it in 0..nt {
                let off = it * plane;
                for j in 0..plane {
                    residual[off + j] -= self.f_values[j];
                }
            }
        } else {
            for (r, f) in residual.iter_mut().zip(&self.f_values) {
                *r -= f;
            }
        }

        let (nx, ny) = (spec.x.n, spec.ny());
        let y_range = if spec.is_two_dim() { 1..ny - 1 } else { 0..1 };
        let mut best: f64 = 0.0;
        for it in 1..nt - 1 {
            for ix in 1..nx - 1 {
                for iy in y_range.clone() {
                    best = best.max(residual[spec.index(it, ix, iy)].abs());
                }
            }
        }
        best
    }
}

/// One correction applied to `un` under the instance's parameter values.
/// The grid comes from `un`, so refined studies can reuse one instance.
pub fn correction_step(un: &GridFunction, inst: &CrispInstance) -> Result<GridFunction, VimError> {
    let ctx = StepContext::new(inst, un.spec(), false)?;
    let n = un.values().len();
    let mut correction = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    ctx.correction(un.values(), &mut correction, &mut scratch);
    let mut values = un.values().to_vec();
    for (v, c) in values.iter_mut().zip(&correction) {
        *v -= c;
    }
    Ok(GridFunction::from_values(un.spec().clone(), values)?)
}

/// Iterate from the initial-condition seed until the applied correction
/// falls below the tolerance. Running out of iterations is reported through
/// `converged`, not as an error; only tripping the divergence guard fails.
pub fn solve_crisp(inst: &CrispInstance, cfg: &VimConfig) -> Result<VimResult, VimError> {
    cfg.validate()?;
    let spec = inst.problem().grid_spec()?;
    solve_crisp_on(inst, cfg, &spec)
}

/// `solve_crisp` on a caller-chosen grid (refinement studies, envelopes).
pub fn solve_crisp_on(
    inst: &CrispInstance,
    cfg: &VimConfig,
    spec: &GridSpec,
) -> Result<VimResult, VimError> {
    cfg.validate()?;
    let ctx = StepContext::new(inst, spec, true)?;
    let p = inst.problem();
    let mut u = GridFunction::sample(spec, &p.initial_condition, inst.bindings())?;
    let n = u.values().len();
    let mut correction = vec![0.0; n];
    let mut scratch = vec![0.0; n];

    let mut deltas = Vec::new();
    let mut converged = false;
    let mut iterations_used = 0;
    for iteration in 1..=cfg.max_iterations {
        let delta = ctx.correction(u.values(), &mut correction, &mut scratch);
        if !(delta <= cfg.divergence_guard) {
            return Err(VimError::Diverged {
                iteration,
                delta,
                guard: cfg.divergence_guard,
            });
        }
        for (v, c) in u.values_mut().iter_mut().zip(&correction) {
            *v -= c;
        }
        deltas.push(delta);
        iterations_used = iteration;
        if delta <= cfg.tolerance {
            converged = true;
            break;
        }
    }

    let residual_sup = ctx.residual_sup(u.values(), &mut correction, &mut scratch);
    let final_delta = deltas.last().copied().unwrap_or(0.0);
    Ok(VimResult {
        solution: u,
        iterations_used,
        final_delta,
        residual_sup,
        converged,
        deltas,
    })
}

/// The first `n` iterates, seed included: the returned vector holds
/// U_0, ..., U_n. No convergence test; the divergence guard still applies.
pub fn iterate_trace(inst: &CrispInstance, n: usize) -> Result<Vec<GridFunction>, VimError> {
    let spec = inst.problem().grid_spec()?;
    iterate_trace_on(inst, n, &spec)
}

/// `iterate_trace` on a caller-chosen grid.
pub fn iterate_trace_on(
    inst: &CrispInstance,
    n: usize,
    spec: &GridSpec,
) -> Result<Vec<GridFunction>, VimError> {
    let ctx = StepContext::new(inst, spec, true)?;
    let p = inst.problem();
    let guard = VimConfig::default().divergence_guard;
    let mut trace = Vec::with_capacity(n + 1);
    let mut u = GridFunction::sample(spec, &p.initial_condition, inst.bindings())?;
    let len = u.values().len();
    let mut correction = vec![0.0; len];
    let mut scratch = vec![0.0; len];
    for iteration in 1..=n {
        trace.push(u.clone());
        let delta = ctx.correction(u.values(), &mut correction, &mut scratch);
        if !(delta <= guard) {
            return Err(VimError::Diverged {
                iteration,
                delta,
                guard,
            });
        }
        for (v, c) in u.values_mut().iter_mut().zip(&correction) {
            *v -= c;
        }
    }
    trace.push(u);
    Ok(trace)
}

/// Convenience: sup-norm distance between a solve's solution and a sampled
/// reference expression on the same grid.
pub fn sup_error_against(
    result: &VimResult,
    reference: &GridFunction,
) -> Result<f64, VimError> {
    Ok(sup_norm_diff(&result.solution, reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{load_problem, peak_instance};
    use expr::Environment;

    const EX1_STYLE: &str = r#"
[pde]
dimension = 1
p = "(g/2)*x^2"
f = "k"
[initial]
expression = "c*x^2"
[params.c]
shape = [-1.5, -1.0, -0.5]
range = [-3.0, -0.1]
[params.g]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[params.k]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[domain]
m1 = 1.0
m2 = 2.0
nt = 101
nx = 101
[alpha]
level_count = 11
"#;

    #[test]
    fn first_correction_matches_the_hand_computed_iterate() {
        // With U0 = c x^2 the integrand is constant in t, so one step gives
        // c x^2 (1 - g t) + k t exactly, up to roundoff.
        let text = EX1_STYLE
            .replace("shape = [-1.5, -1.0, -0.5]", "shape = [1.5, 2.0, 2.5]")
            .replace("range = [-3.0, -0.1]", "range = [0.1, 3.0]");
        let p = load_problem(&text).unwrap();
        let inst = peak_instance(&p).unwrap();
        let spec = p.grid_spec().unwrap();
        let u0 = GridFunction::sample(&spec, &p.initial_condition, inst.bindings()).unwrap();
        let u1 = correction_step(&u0, &inst).unwrap();
        // c=2, g=1, k=1 at t=0.5 (it=50), x=1 (ix=50): 2*1*(1-0.5) + 0.5.
        assert!((u1.at(50, 50, 0) - 1.5).abs() < 1e-9, "{}", u1.at(50, 50, 0));
    }

    #[test]
    fn exact_solution_is_a_fixed_point_on_a_fine_time_grid() {
        let p = load_problem(EX1_STYLE).unwrap();
        let inst = peak_instance(&p).unwrap();
        let spec = p.grid_spec_with(2001, 101, None).unwrap();
        let g = expr::parse("c*x^2*exp(-g*t) + k*t").unwrap();
        let seed = GridFunction::sample(&spec, &g, inst.bindings()).unwrap();
        let stepped = correction_step(&seed, &inst).unwrap();
        let moved = sup_norm_diff(&stepped, &seed).unwrap();
        assert!(moved <= 1e-6, "fixed point moved by {moved}");
    }

    #[test]
    fn zero_sources_leave_a_constant_seed_bitwise_unchanged() {
        let p = load_problem(
            r#"
[pde]
dimension = 1
p = "0"
f = "0"
[initial]
expression = "c"
[params.c]
shape = [0.5, 1.0, 1.5]
range = [0.1, 3.0]
[domain]
m1 = 1.0
m2 = 1.0
nt = 11
nx = 11
[alpha]
level_count = 11
"#,
        )
        .unwrap();
        let inst = peak_instance(&p).unwrap();
        let spec = p.grid_spec().unwrap();
        let u0 = GridFunction::sample(&spec, &p.initial_condition, inst.bindings()).unwrap();
        let u1 = correction_step(&u0, &inst).unwrap();
        assert_eq!(u0.values(), u1.values());
    }

    #[test]
    fn solve_reaches_the_closed_form_with_grid_accuracy() {
        let p = load_problem(EX1_STYLE).unwrap();
        let inst = peak_instance(&p).unwrap();
        let result = solve_crisp(&inst, &VimConfig::default()).unwrap();
        assert!(result.converged, "deltas: {:?}", result.deltas);
        let g = expr::parse("c*x^2*exp(-g*t) + k*t").unwrap();
        let reference =
            GridFunction::sample(result.solution.spec(), &g, inst.bindings()).unwrap();
        let err = sup_norm_diff(&result.solution, &reference).unwrap();
        assert!(err <= 5e-4, "error {err}");
        assert!(result.residual_sup.is_finite());
    }

    #[test]
    fn loose_tolerance_converges_in_a_few_iterations_on_a_polynomial_problem() {
        // Polynomial closed form: the analytic iteration terminates, so the
        // grid iteration settles as soon as deltas hit discretization scale.
        let p = load_problem(
            r#"
[pde]
dimension = 1
p = "g*(0.5-x)"
f = "-k*x^2*t^2"
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
m2 = 0.5
nt = 101
nx = 101
[alpha]
level_count = 11
"#,
        )
        .unwrap();
        let inst = peak_instance(&p).unwrap();
        let cfg = VimConfig {
            tolerance: 1e-4,
            ..VimConfig::default()
        };
        let result = solve_crisp(&inst, &cfg).unwrap();
        assert!(result.converged);
        assert!(
            result.iterations_used <= 3,
            "took {} iterations, deltas {:?}",
            result.iterations_used,
            result.deltas
        );
    }

    #[test]
    fn divergence_guard_reports_the_iteration() {
        // A huge negative diffusion coefficient blows the iteration up fast.
        let p = load_problem(
            &EX1_STYLE.replace("p = \"(g/2)*x^2\"", "p = \"-6000*g*x^2\""),
        )
        .unwrap();
        let inst = peak_instance(&p).unwrap();
        let cfg = VimConfig {
            divergence_guard: 1e6,
            ..VimConfig::default()
        };
        match solve_crisp(&inst, &cfg) {
            Err(VimError::Diverged { delta, guard, .. }) => {
                assert!(delta > guard);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trace_holds_seed_and_iterates() {
        let p = load_problem(EX1_STYLE).unwrap();
        let inst = peak_instance(&p).unwrap();
        let trace = iterate_trace(&inst, 2).unwrap();
        assert_eq!(trace.len(), 3);
        let seed = GridFunction::sample(
            trace[0].spec(),
            &p.initial_condition,
            inst.bindings(),
        )
        .unwrap();
        assert_eq!(trace[0].values(), seed.values());
        // n = 0 is allowed and returns just the seed.
        let only_seed = iterate_trace(&inst, 0).unwrap();
        assert_eq!(only_seed.len(), 1);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let bad = VimConfig {
            tolerance: -1.0,
            ..VimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(VimError::BadConfig { .. })));
        let bad = VimConfig {
            max_iterations: 0,
            ..VimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(VimError::BadConfig { .. })));
    }

    #[test]
    fn grid_dimension_mismatch_is_rejected() {
        let p = load_problem(EX1_STYLE).unwrap();
        let inst = peak_instance(&p).unwrap();
        let two_d = GridSpec::two_dim(
            1.0,
            5,
            crate::grid::AxisSpec::new("x", 0.0, 1.0, 5).unwrap(),
            crate::grid::AxisSpec::new("y", 0.0, 1.0, 5).unwrap(),
        )
        .unwrap();
        let seed = GridFunction::sample(&two_d, &expr::parse("x").unwrap(), &Environment::new())
            .unwrap();
        assert!(matches!(
            correction_step(&seed, &inst),
            Err(VimError::Grid(GridError::SpecMismatch { .. }))
        ));
    }
}
