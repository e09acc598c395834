//! Declarative model of a heat-like problem with triangular fuzzy
//! parameters: file loading, validation, and crisp instantiation.

use std::collections::BTreeMap;

use expr::{Environment, Expr};
use fuzzy_core::{Interval, TriangularFuzzy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{AxisSpec, GridError, GridSpec};

/// Names that may never be used for parameters: grid variables, the level
/// variable, and the recognized function names.
const RESERVED: &[&str] = &[
    "t", "x", "y", "alpha", "exp", "sin", "cos", "sinh", "cosh", "sqrt",
];

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("problem file is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("field {field}: {source}")]
    BadExpression {
        field: String,
        source: expr::ParseError,
    },
    #[error("field {field} references undeclared symbol '{symbol}'")]
    UndeclaredSymbol { field: String, symbol: String },
    #[error("field {field} must not depend on '{symbol}': {why}")]
    ForbiddenSymbol {
        field: String,
        symbol: String,
        why: &'static str,
    },
    #[error("parameter {name}: {detail}")]
    BadParameter { name: String, detail: String },
    #[error("schema: {detail}")]
    Schema { detail: String },
    #[error("alpha {alpha} is outside [0, 1]")]
    BadAlpha { alpha: f64 },
    #[error("no corner assigned to parameter {name}")]
    UnassignedParameter { name: String },
    #[error("corner assignment names unknown parameter {name}")]
    UnknownParameter { name: String },
    #[error(
        "explicit value {value} for {name} lies outside its alpha={alpha} cut [{lo}, {hi}]"
    )]
    ValueOutsideCut {
        name: String,
        value: f64,
        alpha: f64,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Fuzzy(#[from] fuzzy_core::FuzzyError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One independently fuzzified scalar constant.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyParameter {
    pub name: String,
    pub shape: TriangularFuzzy,
    pub admissible_range: Interval,
}

/// For 2-d problems: whether P multiplies U_xx (`Eq2`) or U_yy (`Eq3`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Eq2,
    Eq3,
}

/// Space-time box extents and default grid counts. The domain is always
/// [0, m1] x [0, m2] (x [0, m3] in 2-d).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub m1: f64,
    pub m2: f64,
    pub m3: Option<f64>,
    pub nt: usize,
    pub nx: usize,
    pub ny: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatLikeProblem {
    pub dimension: u8,
    pub p: Expr,
    pub q: Option<Expr>,
    pub f: Expr,
    pub initial_condition: Expr,
    pub parameters: Vec<FuzzyParameter>,
    pub domain: DomainSpec,
    pub orientation: Orientation,
    pub alpha_level_count: usize,
}

impl HeatLikeProblem {
    pub fn param(&self, name: &str) -> Option<&FuzzyParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.parameters.iter().map(|p| p.name.as_str()).collect()
    }

    /// Coefficient that multiplies U_xx, honoring the orientation.
    pub fn x_coefficient(&self) -> &Expr {
        if self.dimension == 2 && self.orientation == Orientation::Eq3 {
            self.q.as_ref().expect("2-d problems carry q")
        } else {
            &self.p
        }
    }

    /// Coefficient that multiplies U_yy, if the problem is 2-d.
    pub fn y_coefficient(&self) -> Option<&Expr> {
        if self.dimension != 2 {
            return None;
        }
        if self.orientation == Orientation::Eq3 {
            Some(&self.p)
        } else {
            self.q.as_ref()
        }
    }

    /// The uniform alpha grid this problem stores fuzzy results on.
    pub fn alpha_levels(&self) -> Vec<f64> {
        let n = self.alpha_level_count;
        (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
    }

    /// Environment binding every parameter to its peak.
    pub fn peak_environment(&self) -> Environment {
        let mut env = Environment::new();
        for p in &self.parameters {
            env.set(&p.name, p.shape.peak());
        }
        env
    }

    /// Discretization of the domain. Spatial axes nominally span the closed
    /// box; an axis end moves inward by one spacing only when some problem
    /// expression is singular there (the open-interval reading matters only
    /// at such ends).
    pub fn grid_spec(&self) -> Result<GridSpec, ProblemError> {
        self.grid_spec_with(self.domain.nt, self.domain.nx, self.domain.ny)
    }

    /// Same as `grid_spec` but with overridden node counts.
    pub fn grid_spec_with(
        &self,
        nt: usize,
        nx: usize,
        ny: Option<usize>,
    ) -> Result<GridSpec, ProblemError> {
        let x = self.spatial_axis("x", self.domain.m2, nx)?;
        if self.dimension == 2 {
            let m3 = self.domain.m3.ok_or_else(|| ProblemError::Schema {
                detail: "2-d problem without m3".into(),
            })?;
            let ny = ny.ok_or_else(|| ProblemError::Schema {
                detail: "2-d problem without ny".into(),
            })?;
            let y = self.spatial_axis("y", m3, ny)?;
            Ok(GridSpec::two_dim(self.domain.m1, nt, x, y)?)
        } else {
            Ok(GridSpec::one_dim(self.domain.m1, nt, x)?)
        }
    }

    fn spatial_axis(
        &self,
        name: &'static str,
        extent: f64,
        n: usize,
    ) -> Result<AxisSpec, ProblemError> {
        let nominal = AxisSpec::new(name, 0.0, extent, n)?;
        let h = nominal.spacing();
        let mut start = 0.0;
        let mut end = extent;
        if self.any_expression_singular_at(name, 0.0) {
            start = h;
        }
        if self.any_expression_singular_at(name, extent) {
            end = extent - h;
        }
        Ok(AxisSpec::new(name, start, end, n)?)
    }

    /// Probe every problem expression with `var` pinned at `value` and the
    /// other coordinates mid-domain at peak parameters; a division-by-zero
    /// or overflow there marks the boundary as singular.
    fn any_expression_singular_at(&self, var: &str, value: f64) -> bool {
        let mut env = self.peak_environment();
        env.set("t", 0.5 * self.domain.m1);
        env.set("x", 0.5 * self.domain.m2);
        if let Some(m3) = self.domain.m3 {
            env.set("y", 0.5 * m3);
        }
        env.set(var, value);
        let mut exprs: Vec<&Expr> = vec![&self.p, &self.f, &self.initial_condition];
        if let Some(q) = &self.q {
            exprs.push(q);
        }
        exprs.into_iter().any(|e| e.evaluate(&env).is_err())
    }
}

/// Optional per-problem overrides for the iteration driver.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VimOverrides {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
}

/// Optional reference data shipped alongside a problem: a closed-form
/// solution and the expected classification outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSection {
    pub g: Option<Expr>,
    pub verdict: Option<String>,
    pub notes: Option<String>,
}

/// A parsed problem file: the problem itself plus optional sections.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub problem: HeatLikeProblem,
    pub vim: Option<VimOverrides>,
    pub oracle: Option<OracleSection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawProblemFile {
    pde: RawPde,
    initial: RawInitial,
    params: BTreeMap<String, RawParam>,
    domain: RawDomain,
    alpha: RawAlpha,
    #[serde(skip_serializing_if = "Option::is_none")]
    vim: Option<RawVim>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<RawOracle>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPde {
    dimension: u8,
    p: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<String>,
    f: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    orientation: Option<Orientation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawInitial {
    expression: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawParam {
    shape: [f64; 3],
    range: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDomain {
    m1: f64,
    m2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    m3: Option<f64>,
    nt: usize,
    nx: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    ny: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAlpha {
    level_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawVim {
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iterations: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawOracle {
    #[serde(skip_serializing_if = "Option::is_none")]
    g: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
}

fn parse_field(field: &str, src: &str) -> Result<Expr, ProblemError> {
    expr::parse(src).map_err(|source| ProblemError::BadExpression {
        field: field.to_string(),
        source,
    })
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Symbols an expression may reference: spatial and (optionally) time
/// variables plus the declared parameters. `alpha` is always reserved.
fn check_symbols(
    field: &str,
    e: &Expr,
    params: &BTreeMap<String, RawParam>,
    allow_t: bool,
    allow_y: bool,
) -> Result<(), ProblemError> {
    for sym in e.free_symbols() {
        match sym.as_str() {
            "t" if allow_t => {}
            "t" => {
                return Err(ProblemError::ForbiddenSymbol {
                    field: field.into(),
                    symbol: sym,
                    why: "time-dependent coefficients and initial data are not supported",
                })
            }
            "x" => {}
            "y" if allow_y => {}
            "y" => {
                return Err(ProblemError::ForbiddenSymbol {
                    field: field.into(),
                    symbol: sym,
                    why: "the problem is one-dimensional",
                })
            }
            "alpha" => {
                return Err(ProblemError::ForbiddenSymbol {
                    field: field.into(),
                    symbol: sym,
                    why: "alpha is reserved for cut levels",
                })
            }
            _ if params.contains_key(&sym) => {}
            _ => {
                return Err(ProblemError::UndeclaredSymbol {
                    field: field.into(),
                    symbol: sym,
                })
            }
        }
    }
    Ok(())
}

/// Load just the problem from TOML text.
pub fn load_problem(text: &str) -> Result<HeatLikeProblem, ProblemError> {
    Ok(load_problem_file(text)?.problem)
}

/// Load a full problem file (problem plus optional vim/oracle sections).
pub fn load_problem_file(text: &str) -> Result<ProblemFile, ProblemError> {
    let raw: RawProblemFile = toml::from_str(text)?;

    if raw.pde.dimension != 1 && raw.pde.dimension != 2 {
        return Err(ProblemError::Schema {
            detail: format!("dimension must be 1 or 2, got {}", raw.pde.dimension),
        });
    }
    let two_dim = raw.pde.dimension == 2;
    if two_dim != raw.pde.q.is_some() {
        return Err(ProblemError::Schema {
            detail: "q must be present exactly when dimension = 2".into(),
        });
    }
    if two_dim != raw.domain.m3.is_some() || two_dim != raw.domain.ny.is_some() {
        return Err(ProblemError::Schema {
            detail: "m3 and ny must be present exactly when dimension = 2".into(),
        });
    }
    let orientation = match (two_dim, raw.pde.orientation) {
        (_, None) => Orientation::Eq2,
        (true, Some(o)) => o,
        (false, Some(Orientation::Eq2)) => Orientation::Eq2,
        (false, Some(Orientation::Eq3)) => {
            return Err(ProblemError::Schema {
                detail: "orientation eq3 is meaningful only for 2-d problems".into(),
            })
        }
    };

    let mut parameters = Vec::new();
    for (name, rp) in &raw.params {
        if !is_identifier(name) {
            return Err(ProblemError::BadParameter {
                name: name.clone(),
                detail: "name is not a valid identifier".into(),
            });
        }
        if RESERVED.contains(&name.as_str()) {
            return Err(ProblemError::BadParameter {
                name: name.clone(),
                detail: "name is reserved".into(),
            });
        }
        let shape = TriangularFuzzy::new(rp.shape[0], rp.shape[1], rp.shape[2]).map_err(
            |e| ProblemError::BadParameter {
                name: name.clone(),
                detail: e.to_string(),
            },
        )?;
        let range = Interval::new(rp.range[0], rp.range[1]).map_err(|e| {
            ProblemError::BadParameter {
                name: name.clone(),
                detail: format!("admissible range: {e}"),
            }
        })?;
        if !shape.support().within(range) {
            return Err(ProblemError::BadParameter {
                name: name.clone(),
                detail: format!(
                    "support {:?} is not inside the admissible range {:?}",
                    shape.support(),
                    range
                ),
            });
        }
        parameters.push(FuzzyParameter {
            name: name.clone(),
            shape,
            admissible_range: range,
        });
    }

    let p = parse_field("pde.p", &raw.pde.p)?;
    let q = raw
        .pde
        .q
        .as_deref()
        .map(|s| parse_field("pde.q", s))
        .transpose()?;
    let f = parse_field("pde.f", &raw.pde.f)?;
    let initial = parse_field("initial.expression", &raw.initial.expression)?;

    check_symbols("pde.p", &p, &raw.params, false, two_dim)?;
    if let Some(q) = &q {
        check_symbols("pde.q", q, &raw.params, false, two_dim)?;
    }
    check_symbols("pde.f", &f, &raw.params, true, two_dim)?;
    check_symbols("initial.expression", &initial, &raw.params, false, two_dim)?;

    let positive = |name: &str, v: f64| -> Result<(), ProblemError> {
        if !(v.is_finite() && v > 0.0) {
            return Err(ProblemError::Schema {
                detail: format!("{name} must be positive and finite, got {v}"),
            });
        }
        Ok(())
    };
    positive("m1", raw.domain.m1)?;
    positive("m2", raw.domain.m2)?;
    if let Some(m3) = raw.domain.m3 {
        positive("m3", m3)?;
    }
    let count_ok = |name: &str, n: usize| -> Result<(), ProblemError> {
        if n < 3 {
            return Err(ProblemError::Schema {
                detail: format!("{name} must be at least 3, got {n}"),
            });
        }
        Ok(())
    };
    count_ok("nt", raw.domain.nt)?;
    count_ok("nx", raw.domain.nx)?;
    if let Some(ny) = raw.domain.ny {
        count_ok("ny", ny)?;
    }
    if raw.alpha.level_count < 2 {
        return Err(ProblemError::Schema {
            detail: format!(
                "alpha.level_count must be at least 2, got {}",
                raw.alpha.level_count
            ),
        });
    }

    let oracle = match &raw.oracle {
        None => None,
        Some(o) => {
            let g = o
                .g
                .as_deref()
                .map(|s| parse_field("oracle.g", s))
                .transpose()?;
            if let Some(g) = &g {
                check_symbols("oracle.g", g, &raw.params, true, two_dim)?;
            }
            if let Some(v) = &o.verdict {
                if !["bfs", "ss_only", "none"].contains(&v.as_str()) {
                    return Err(ProblemError::Schema {
                        detail: format!("oracle.verdict must be bfs, ss_only or none, got {v}"),
                    });
                }
            }
            Some(OracleSection {
                g,
                verdict: o.verdict.clone(),
                notes: o.notes.clone(),
            })
        }
    };

    let vim = raw.vim.as_ref().map(|v| {
        if let Some(tol) = v.tolerance {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(ProblemError::Schema {
                    detail: format!("vim.tolerance must be positive, got {tol}"),
                });
            }
        }
        if v.max_iterations == Some(0) {
            return Err(ProblemError::Schema {
                detail: "vim.max_iterations must be at least 1".into(),
            });
        }
        Ok(VimOverrides {
            tolerance: v.tolerance,
            max_iterations: v.max_iterations,
        })
    });
    let vim = vim.transpose()?;

    let problem = HeatLikeProblem {
        dimension: raw.pde.dimension,
        p,
        q,
        f,
        initial_condition: initial,
        parameters,
        domain: DomainSpec {
            m1: raw.domain.m1,
            m2: raw.domain.m2,
            m3: raw.domain.m3,
            nt: raw.domain.nt,
            nx: raw.domain.nx,
            ny: raw.domain.ny,
        },
        orientation,
        alpha_level_count: raw.alpha.level_count,
    };
    // Surface unusable grids (for example a domain made empty by singular
    // boundaries) at load time rather than at first solve.
    problem.grid_spec()?;

    Ok(ProblemFile {
        problem,
        vim,
        oracle,
    })
}

/// Render a problem back to the TOML schema `load_problem` reads.
pub fn serialize_problem(p: &HeatLikeProblem) -> String {
    let mut params = BTreeMap::new();
    for fp in &p.parameters {
        params.insert(
            fp.name.clone(),
            RawParam {
                shape: [fp.shape.lower(), fp.shape.peak(), fp.shape.upper()],
                range: [fp.admissible_range.lo, fp.admissible_range.hi],
            },
        );
    }
    let raw = RawProblemFile {
        pde: RawPde {
            dimension: p.dimension,
            p: p.p.to_string(),
            q: p.q.as_ref().map(|q| q.to_string()),
            f: p.f.to_string(),
            orientation: if p.dimension == 2 {
                Some(p.orientation)
            } else {
                None
            },
        },
        initial: RawInitial {
            expression: p.initial_condition.to_string(),
        },
        params,
        domain: RawDomain {
            m1: p.domain.m1,
            m2: p.domain.m2,
            m3: p.domain.m3,
            nt: p.domain.nt,
            nx: p.domain.nx,
            ny: p.domain.ny,
        },
        alpha: RawAlpha {
            level_count: p.alpha_level_count,
        },
        vim: None,
        oracle: None,
    };
    toml::to_string(&raw).expect("problem serialization cannot fail")
}

/// Which end of a parameter's alpha-cut a crisp instance should use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CornerChoice {
    Lower,
    Peak,
    Upper,
    Explicit(f64),
}

/// One crisp realization of a fuzzy problem: every parameter bound to a
/// real number inside its alpha-cut.
#[derive(Debug, Clone)]
pub struct CrispInstance {
    problem: HeatLikeProblem,
    bindings: Environment,
    alpha: f64,
}

impl CrispInstance {
    pub fn problem(&self) -> &HeatLikeProblem {
        &self.problem
    }

    pub fn bindings(&self) -> &Environment {
        &self.bindings
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn binding(&self, name: &str) -> Option<f64> {
        self.bindings.get(name)
    }
}

/// Bind every parameter to a chosen endpoint of its alpha-cut (or to an
/// explicit value inside that cut).
pub fn instantiate(
    p: &HeatLikeProblem,
    corners: &BTreeMap<String, CornerChoice>,
    alpha: f64,
) -> Result<CrispInstance, ProblemError> {
    if !(alpha.is_finite() && (0.0..=1.0).contains(&alpha)) {
        return Err(ProblemError::BadAlpha { alpha });
    }
    for name in corners.keys() {
        if p.param(name).is_none() {
            return Err(ProblemError::UnknownParameter { name: name.clone() });
        }
    }
    let mut bindings = Environment::new();
    for fp in &p.parameters {
        let choice = corners
            .get(&fp.name)
            .ok_or_else(|| ProblemError::UnassignedParameter {
                name: fp.name.clone(),
            })?;
        let cut = fp.shape.cut(alpha);
        let value = match choice {
            CornerChoice::Lower => cut.lo,
            CornerChoice::Upper => cut.hi,
            CornerChoice::Peak => fp.shape.peak(),
            CornerChoice::Explicit(v) => {
                let slack = 1e-12 * (1.0 + cut.lo.abs().max(cut.hi.abs()));
                if !v.is_finite() || *v < cut.lo - slack || *v > cut.hi + slack {
                    return Err(ProblemError::ValueOutsideCut {
                        name: fp.name.clone(),
                        value: *v,
                        alpha,
                        lo: cut.lo,
                        hi: cut.hi,
                    });
                }
                *v
            }
        };
        bindings.set(&fp.name, value);
    }
    Ok(CrispInstance {
        problem: p.clone(),
        bindings,
        alpha,
    })
}

/// Corner map assigning the same choice to every parameter.
pub fn uniform_corners(p: &HeatLikeProblem, choice: CornerChoice) -> BTreeMap<String, CornerChoice> {
    p.parameters
        .iter()
        .map(|fp| (fp.name.clone(), choice))
        .collect()
}

/// The crisp core instance: all parameters at their peaks.
pub fn peak_instance(p: &HeatLikeProblem) -> Result<CrispInstance, ProblemError> {
    instantiate(p, &uniform_corners(p, CornerChoice::Peak), 1.0)
}
