//! Space-time tensor grids plus the finite-difference and quadrature kernels
//! the iteration and endpoint solvers run on. Grids are uniform and closed;
//! the time axis always starts at 0.

use expr::{Environment, EvalError, Expr};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid {axis} axis: {detail}")]
    InvalidAxis { axis: &'static str, detail: String },
    #[error("grid has no {axis} axis")]
    MissingAxis { axis: &'static str },
    #[error("grid specs differ: {detail}")]
    SpecMismatch { detail: String },
    #[error("values do not fit the grid: {detail}")]
    ShapeMismatch { detail: String },
    #[error("evaluating expression at node ({location}): {source}")]
    EvalAt {
        location: String,
        source: EvalError,
    },
}

/// One uniformly spaced closed axis with at least 3 nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub start: f64,
    pub end: f64,
    pub n: usize,
}

impl AxisSpec {
    pub fn new(axis: &'static str, start: f64, end: f64, n: usize) -> Result<Self, GridError> {
        if !start.is_finite() || !end.is_finite() {
            return Err(GridError::InvalidAxis {
                axis,
                detail: format!("bounds ({start}, {end}) must be finite"),
            });
        }
        if end <= start {
            return Err(GridError::InvalidAxis {
                axis,
                detail: format!("bounds ({start}, {end}) must be increasing"),
            });
        }
        if n < 3 {
            return Err(GridError::InvalidAxis {
                axis,
                detail: format!("needs at least 3 nodes, got {n}"),
            });
        }
        Ok(Self { start, end, n })
    }

    pub fn spacing(&self) -> f64 {
        (self.end - self.start) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.start + self.spacing() * i as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }
}

/// Spatial axis selector for derivative operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

/// Full space-time grid. `y` is present only for two-dimensional problems.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub t: AxisSpec,
    pub x: AxisSpec,
    pub y: Option<AxisSpec>,
}

impl GridSpec {
    pub fn one_dim(t_end: f64, nt: usize, x: AxisSpec) -> Result<Self, GridError> {
        Ok(Self {
            t: AxisSpec::new("t", 0.0, t_end, nt)?,
            x,
            y: None,
        })
    }

    pub fn two_dim(t_end: f64, nt: usize, x: AxisSpec, y: AxisSpec) -> Result<Self, GridError> {
        Ok(Self {
            t: AxisSpec::new("t", 0.0, t_end, nt)?,
            x,
            y: Some(y),
        })
    }

    pub fn ny(&self) -> usize {
        self.y.as_ref().map_or(1, |a| a.n)
    }

    pub fn node_count(&self) -> usize {
        self.t.n * self.x.n * self.ny()
    }

    pub fn plane_count(&self) -> usize {
        self.x.n * self.ny()
    }

    pub fn is_two_dim(&self) -> bool {
        self.y.is_some()
    }

    /// Flat index of node (it, ix, iy); iy must be 0 on 1-d grids.
    pub fn index(&self, it: usize, ix: usize, iy: usize) -> usize {
        (it * self.x.n + ix) * self.ny() + iy
    }
}

/// Dense scalar field over a grid. Values are laid out (t, x, y) row-major
/// and are immutable from outside the crate once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.node_count();
        Self {
            spec,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != spec.node_count() {
            return Err(GridError::ShapeMismatch {
                detail: format!(
                    "expected {} values for the grid, got {}",
                    spec.node_count(),
                    values.len()
                ),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(GridError::ShapeMismatch {
                detail: format!("non-finite entry {bad}"),
            });
        }
        Ok(Self { spec, values })
    }

    /// Evaluate an expression at every node. Bindings for symbols other than
    /// t, x, y come from `base`. Expressions that do not mention t are
    /// evaluated on one time plane and tiled, which keeps large 2-d setups
    /// cheap.
    pub fn sample(spec: &GridSpec, e: &Expr, base: &Environment) -> Result<Self, GridError> {
        let free = e.free_symbols();
        if free.contains("t") {
            let mut values = vec![0.0; spec.node_count()];
            let mut env = base.clone();
            let mut idx = 0;
            for it in 0..spec.t.n {
                env.set("t", spec.t.node(it));
                sample_plane(spec, e, &mut env, Some(spec.t.node(it)), &mut values[idx..])?;
                idx += spec.plane_count();
            }
            Ok(Self {
                spec: spec.clone(),
                values,
            })
        } else {
            let mut env = base.clone();
            let mut plane = vec![0.0; spec.plane_count()];
            sample_plane(spec, e, &mut env, None, &mut plane)?;
            let mut values = Vec::with_capacity(spec.node_count());
            for _ in 0..spec.t.n {
                values.extend_from_slice(&plane);
            }
            Ok(Self {
                spec: spec.clone(),
                values,
            })
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, it: usize, ix: usize, iy: usize) -> f64 {
        self.values[self.spec.index(it, ix, iy)]
    }

    /// Largest absolute value over nodes interior in every present axis.
    pub fn max_abs_interior(&self) -> f64 {
        let spec = &self.spec;
        let (nt, nx, ny) = (spec.t.n, spec.x.n, spec.ny());
        let y_range = if spec.is_two_dim() { 1..ny - 1 } else { 0..1 };
        let mut best: f64 = 0.0;
        for it in 1..nt - 1 {
            for ix in 1..nx - 1 {
                for iy in y_range.clone() {
                    best = best.max(self.values[spec.index(it, ix, iy)].abs());
                }
            }
        }
        best
    }
}

/// Sample a t-independent expression on one spatial plane.
pub(crate) fn sample_spatial_plane(
    spec: &GridSpec,
    e: &Expr,
    base: &Environment,
) -> Result<Vec<f64>, GridError> {
    let mut env = base.clone();
    let mut out = vec![0.0; spec.plane_count()];
    sample_plane(spec, e, &mut env, None, &mut out)?;
    Ok(out)
}

fn sample_plane(
    spec: &GridSpec,
    e: &Expr,
    env: &mut Environment,
    t_for_error: Option<f64>,
    out: &mut [f64],
) -> Result<(), GridError> {
    let ny = spec.ny();
    let mut idx = 0;
    for ix in 0..spec.x.n {
        let xv = spec.x.node(ix);
        env.set("x", xv);
        for iy in 0..ny {
            let yv = spec.y.as_ref().map(|a| a.node(iy));
            if let Some(y) = yv {
                env.set("y", y);
            }
            out[idx] = e.evaluate(env).map_err(|source| GridError::EvalAt {
                location: node_location(t_for_error, xv, yv),
                source,
            })?;
            idx += 1;
        }
    }
    Ok(())
}

fn node_location(t: Option<f64>, x: f64, y: Option<f64>) -> String {
    let mut s = String::new();
    if let Some(t) = t {
        s.push_str(&format!("t={t}, "));
    }
    s.push_str(&format!("x={x}"));
    if let Some(y) = y {
        s.push_str(&format!(", y={y}"));
    }
    s
}

/// Central second difference in the interior, one-sided second-order
/// stencils on the two boundary planes of the chosen spatial axis.
pub fn second_derivative(f: &GridFunction, axis: Axis) -> Result<GridFunction, GridError> {
    let spec = f.spec().clone();
    if axis == Axis::Y && !spec.is_two_dim() {
        return Err(GridError::MissingAxis { axis: "y" });
    }
    let mut out = vec![0.0; f.values().len()];
    second_derivative_into(f.values(), &spec, axis, &mut out);
    Ok(GridFunction { spec, values: out })
}

pub(crate) fn second_derivative_into(values: &[f64], spec: &GridSpec, axis: Axis, out: &mut [f64]) {
    let (nt, nx, ny) = (spec.t.n, spec.x.n, spec.ny());
    match axis {
        Axis::X => {
            let h = spec.x.spacing();
            for it in 0..nt {
                for iy in 0..ny {
                    let start = (it * nx) * ny + iy;
                    second_diff_line(values, out, start, ny, nx, h);
                }
            }
        }
        Axis::Y => {
            let h = spec.y.as_ref().expect("checked by caller").spacing();
            for it in 0..nt {
                for ix in 0..nx {
                    let start = (it * nx + ix) * ny;
                    second_diff_line(values, out, start, 1, ny, h);
                }
            }
        }
    }
}

fn second_diff_line(u: &[f64], out: &mut [f64], start: usize, stride: usize, n: usize, h: f64) {
    let at = |i: usize| u[start + i * stride];
    let inv_h2 = 1.0 / (h * h);
    for i in 1..n - 1 {
        out[start + i * stride] = (at(i - 1) - 2.0 * at(i) + at(i + 1)) * inv_h2;
    }
    if n >= 4 {
        out[start] = (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) * inv_h2;
        out[start + (n - 1) * stride] =
            (2.0 * at(n - 1) - 5.0 * at(n - 2) + 4.0 * at(n - 3) - at(n - 4)) * inv_h2;
    } else {
        // Three nodes: the centered value is the only second-order choice.
        let v = (at(0) - 2.0 * at(1) + at(2)) * inv_h2;
        out[start] = v;
        out[start + (n - 1) * stride] = v;
    }
}

/// Second-order first derivative along t: central in the interior, one-sided
/// three-point stencils at the two ends.
pub(crate) fn time_derivative_into(values: &[f64], spec: &GridSpec, out: &mut [f64]) {
    let (nt, plane) = (spec.t.n, spec.plane_count());
    let dt = spec.t.spacing();
    let inv_2dt = 1.0 / (2.0 * dt);
    for p in 0..plane {
        let at = |i: usize| values[i * plane + p];
        out[p] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv_2dt;
        for i in 1..nt - 1 {
            out[i * plane + p] = (at(i + 1) - at(i - 1)) * inv_2dt;
        }
        out[(nt - 1) * plane + p] =
            (3.0 * at(nt - 1) - 4.0 * at(nt - 2) + at(nt - 3)) * inv_2dt;
    }
}

#[cfg(test)]
pub(crate) fn time_derivative(f: &GridFunction) -> GridFunction {
    let mut out = vec![0.0; f.values().len()];
    time_derivative_into(f.values(), f.spec(), &mut out);
    GridFunction {
        spec: f.spec().clone(),
        values: out,
    }
}

/// Trapezoidal cumulative integral along t; the t=0 plane is 0.
pub fn cumulative_time_integral(f: &GridFunction) -> GridFunction {
    let mut out = f.values().to_vec();
    cumulative_time_integral_in_place(&mut out, f.spec());
    GridFunction {
        spec: f.spec().clone(),
        values: out,
    }
}

/// In-place variant: `values` holds the integrand on entry and the
/// cumulative integral on exit.
pub(crate) fn cumulative_time_integral_in_place(values: &mut [f64], spec: &GridSpec) {
    let (nt, plane) = (spec.t.n, spec.plane_count());
    let half_dt = 0.5 * spec.t.spacing();
    for p in 0..plane {
        let mut prev_f = values[p];
        values[p] = 0.0;
        for i in 1..nt {
            let idx = i * plane + p;
            let f_here = values[idx];
            values[idx] = values[(i - 1) * plane + p] + half_dt * (prev_f + f_here);
            prev_f = f_here;
        }
    }
}

/// Max over all nodes of |a - b|. The two fields must share a spec.
pub fn sup_norm_diff(a: &GridFunction, b: &GridFunction) -> Result<f64, GridError> {
    if a.spec() != b.spec() {
        return Err(GridError::SpecMismatch {
            detail: format!("{:?} vs {:?}", a.spec(), b.spec()),
        });
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_1d(t_end: f64, nt: usize, x0: f64, x1: f64, nx: usize) -> GridSpec {
        GridSpec::one_dim(t_end, nt, AxisSpec::new("x", x0, x1, nx).unwrap()).unwrap()
    }

    fn fill(spec: &GridSpec, f: impl Fn(f64, f64, f64) -> f64) -> GridFunction {
        let ny = spec.ny();
        let mut values = Vec::with_capacity(spec.node_count());
        for it in 0..spec.t.n {
            for ix in 0..spec.x.n {
                for iy in 0..ny {
                    let y = spec.y.as_ref().map_or(0.0, |a| a.node(iy));
                    values.push(f(spec.t.node(it), spec.x.node(ix), y));
                }
            }
        }
        GridFunction::from_values(spec.clone(), values).unwrap()
    }

    #[test]
    fn axis_rejects_bad_bounds_and_counts() {
        assert!(AxisSpec::new("x", 0.0, 0.0, 5).is_err());
        assert!(AxisSpec::new("x", 0.0, 1.0, 2).is_err());
        assert!(AxisSpec::new("x", 0.0, f64::NAN, 5).is_err());
        let a = AxisSpec::new("x", 0.0, 1.0, 101).unwrap();
        assert!((a.spacing() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn second_derivative_is_exact_on_quadratics() {
        let spec = spec_1d(1.0, 5, 0.0, 2.0, 17);
        let f = fill(&spec, |_, x, _| x * x);
        let d2 = second_derivative(&f, Axis::X).unwrap();
        for v in d2.values() {
            assert!((v - 2.0).abs() < 1e-11, "got {v}");
        }
    }

    #[test]
    fn second_derivative_sine_within_tolerance() {
        let spec = spec_1d(
            1.0,
            3,
            0.0,
            std::f64::consts::FRAC_PI_2,
            201,
        );
        let f = fill(&spec, |_, x, _| x.sin());
        let d2 = second_derivative(&f, Axis::X).unwrap();
        let mut worst: f64 = 0.0;
        for ix in 0..spec.x.n {
            let err = (d2.at(0, ix, 0) + spec.x.node(ix).sin()).abs();
            worst = worst.max(err);
        }
        assert!(worst <= 1e-3, "worst error {worst}");
    }

    #[test]
    fn second_derivative_of_constant_is_zero() {
        let spec = spec_1d(1.0, 4, 0.0, 1.0, 31);
        let f = fill(&spec, |_, _, _| 7.25);
        let d2 = second_derivative(&f, Axis::X).unwrap();
        assert!(d2.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn second_derivative_refines_at_second_order() {
        let err_for = |nx: usize| {
            let spec = spec_1d(1.0, 3, 0.0, 2.0, nx);
            let f = fill(&spec, |_, x, _| (x).exp());
            let d2 = second_derivative(&f, Axis::X).unwrap();
            let mut worst: f64 = 0.0;
            for ix in 0..nx {
                worst = worst.max((d2.at(0, ix, 0) - spec.x.node(ix).exp()).abs());
            }
            worst
        };
        let ratio = err_for(101) / err_for(201);
        assert!(
            ratio > 3.0 && ratio < 5.5,
            "expected roughly fourfold drop, got {ratio}"
        );
    }

    #[test]
    fn missing_y_axis_is_an_error() {
        let spec = spec_1d(1.0, 3, 0.0, 1.0, 5);
        let f = fill(&spec, |_, x, _| x);
        match second_derivative(&f, Axis::Y) {
            Err(GridError::MissingAxis { axis }) => assert_eq!(axis, "y"),
            other => panic!("expected missing-axis error, got {other:?}"),
        }
    }

    #[test]
    fn cumulative_integral_of_one_is_t() {
        let spec = spec_1d(2.0, 41, 0.0, 1.0, 3);
        let f = fill(&spec, |_, _, _| 1.0);
        let int = cumulative_time_integral(&f);
        for it in 0..spec.t.n {
            assert!((int.at(it, 1, 0) - spec.t.node(it)).abs() < 1e-13);
        }
    }

    #[test]
    fn cumulative_integral_linear_integrand_is_exact() {
        let spec = spec_1d(1.0, 11, 0.0, 1.0, 3);
        let f = fill(&spec, |t, _, _| t);
        let int = cumulative_time_integral(&f);
        for it in 0..spec.t.n {
            let t = spec.t.node(it);
            assert!((int.at(it, 0, 0) - 0.5 * t * t).abs() < 1e-14);
        }
    }

    #[test]
    fn cumulative_integral_quadratic_within_tolerance() {
        let spec = spec_1d(1.0, 101, 0.0, 1.0, 3);
        let f = fill(&spec, |t, _, _| t * t);
        let int = cumulative_time_integral(&f);
        let mut worst: f64 = 0.0;
        for it in 0..spec.t.n {
            let t = spec.t.node(it);
            worst = worst.max((int.at(it, 0, 0) - t * t * t / 3.0).abs());
        }
        assert!(worst <= 1e-4, "worst error {worst}");
    }

    #[test]
    fn cumulative_integral_is_linear_in_the_integrand() {
        let spec = spec_1d(1.5, 37, 0.0, 1.0, 5);
        let f = fill(&spec, |t, x, _| (t * 3.0).sin() + x);
        let g = fill(&spec, |t, x, _| t * t - 0.5 * x);
        let combo = GridFunction::from_values(
            spec.clone(),
            f.values()
                .iter()
                .zip(g.values())
                .map(|(a, b)| 2.5 * a - 1.25 * b)
                .collect(),
        )
        .unwrap();
        let lhs = cumulative_time_integral(&combo);
        let fi = cumulative_time_integral(&f);
        let gi = cumulative_time_integral(&g);
        for i in 0..spec.node_count() {
            let rhs = 2.5 * fi.values()[i] - 1.25 * gi.values()[i];
            assert!((lhs.values()[i] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn sup_norm_cases() {
        let spec = spec_1d(1.0, 5, 0.0, 1.0, 5);
        let a = fill(&spec, |t, x, _| t + x);
        assert_eq!(sup_norm_diff(&a, &a).unwrap(), 0.0);
        let b = fill(&spec, |t, x, _| t + x + 0.5);
        assert!((sup_norm_diff(&a, &b).unwrap() - 0.5).abs() < 1e-14);
        let other = spec_1d(1.0, 5, 0.0, 1.0, 7);
        let c = fill(&other, |t, x, _| t + x);
        assert!(matches!(
            sup_norm_diff(&a, &c),
            Err(GridError::SpecMismatch { .. })
        ));
    }

    #[test]
    fn time_derivative_is_exact_on_quadratics() {
        let spec = spec_1d(2.0, 21, 0.0, 1.0, 3);
        let f = fill(&spec, |t, _, _| 3.0 * t * t - t + 1.0);
        let d = time_derivative(&f);
        for it in 0..spec.t.n {
            let t = spec.t.node(it);
            assert!((d.at(it, 1, 0) - (6.0 * t - 1.0)).abs() < 1e-11);
        }
    }

    #[test]
    fn sample_tiles_time_independent_expressions() {
        let spec = spec_1d(1.0, 7, 0.0, 2.0, 9);
        let e = expr::parse("c*x^2").unwrap();
        let env = Environment::new().with("c", -1.0);
        let f = GridFunction::sample(&spec, &e, &env).unwrap();
        for it in 0..spec.t.n {
            for ix in 0..spec.x.n {
                let x = spec.x.node(ix);
                assert!((f.at(it, ix, 0) + x * x).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sample_reports_node_coordinates_on_failure() {
        let spec = spec_1d(1.0, 3, 0.0, 2.0, 3);
        let e = expr::parse("k/x").unwrap();
        let env = Environment::new().with("k", 1.0);
        match GridFunction::sample(&spec, &e, &env) {
            Err(GridError::EvalAt { location, .. }) => {
                assert!(location.contains("x=0"), "location was {location}");
            }
            other => panic!("expected eval error, got {other:?}"),
        }
    }

    #[test]
    fn two_dim_second_derivative_along_y() {
        let x = AxisSpec::new("x", 0.0, 1.0, 5).unwrap();
        let y = AxisSpec::new("y", 0.0, 2.0, 9).unwrap();
        let spec = GridSpec::two_dim(1.0, 3, x, y).unwrap();
        let f = fill(&spec, |_, x, y| x + 3.0 * y * y);
        let d2 = second_derivative(&f, Axis::Y).unwrap();
        for v in d2.values() {
            assert!((v - 6.0).abs() < 1e-10);
        }
    }
}
