//! Buckley-Feuring analysis. Given a crisp closed-form solution G, the
//! fuzzification's alpha-cut endpoints are monotone rebindings of G's
//! parameters when the relevant partial derivatives keep one sign. This
//! module samples those signs, builds the endpoint functions, checks the
//! differentiability conditions on the endpoint equation, measures the
//! residual, and reduces everything to a verdict: BFS, SS_only, or none.

use std::collections::BTreeMap;
use std::fmt;

use expr::{EvalError, Environment, Expr};
use fuzzy_core::Interval;
use thiserror::Error;

use crate::problem::HeatLikeProblem;
use crate::ss::{self, RegionBox};

/// A sampled value is treated as signed only beyond this margin; the
/// theorem's inequalities are strict, so a zero sample blocks "definite".
pub const SIGN_MARGIN: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BfsError {
    #[error("expression '{field}' references undeclared symbol '{symbol}'")]
    UndeclaredSymbol { field: String, symbol: String },
    #[error(
        "parameter '{param}' is not monotone in '{expression}' on the sampled box; \
         use brute_force_endpoints for interval bounds"
    )]
    NotMonotone { param: String, expression: String },
    #[error("invalid argument: {detail}")]
    InvalidArgument { detail: String },
    #[error("evaluating '{expression}' at {location}: {source}")]
    Sampling {
        expression: String,
        location: String,
        source: EvalError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    /// Every sample beyond the margin on the positive side.
    Positive,
    /// Every sample beyond the margin on the negative side.
    Negative,
    /// Some sample inside the margin, no sign disagreement.
    Zero,
    /// Positive and negative witnesses both present.
    Mixed,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sign::Positive => "positive",
            Sign::Negative => "negative",
            Sign::Zero => "zero",
            Sign::Mixed => "mixed",
        };
        write!(f, "{s}")
    }
}

/// A sampled point: space-time coordinates, alpha where relevant, and the
/// parameter corner, together with the value seen there.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub location: BTreeMap<String, f64>,
    pub value: f64,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6e} at ", self.value)?;
        let mut first = true;
        // Coordinates first, parameters after, both in a stable order.
        for key in ["t", "x", "y", "alpha"] {
            if let Some(v) = self.location.get(key) {
                if !first {
                    write!(f, ", ")?;
                }
                write!(f, "{key}={v:.6}")?;
                first = false;
            }
        }
        for (key, v) in &self.location {
            if matches!(key.as_str(), "t" | "x" | "y" | "alpha") {
                continue;
            }
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{key}={v:.6}")?;
            first = false;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignInfo {
    pub sign: Sign,
    /// Largest positive sample, most negative sample, smallest-magnitude
    /// sample within the margin, where each exists.
    pub positive: Option<Witness>,
    pub negative: Option<Witness>,
    pub zero: Option<Witness>,
}

impl SignInfo {
    fn has_positive(&self) -> bool {
        self.positive.is_some()
    }
    fn has_negative(&self) -> bool {
        self.negative.is_some()
    }
}

/// Theorem products for one parameter: (dP/ds)(dG/ds), (dQ/ds)(dG/ds),
/// (dG/ds)(dF/ds); present only where the parameter enters P, Q, or F.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSigns {
    pub with_p: Option<SignInfo>,
    pub with_q: Option<SignInfo>,
    pub with_f: Option<SignInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignProfile {
    pub p: SignInfo,
    pub q: Option<SignInfo>,
    /// Partial-derivative signs keyed by parameter, one map per expression;
    /// a parameter appears only if the expression references it.
    pub g_partials: BTreeMap<String, SignInfo>,
    pub f_partials: BTreeMap<String, SignInfo>,
    pub p_partials: BTreeMap<String, SignInfo>,
    pub q_partials: BTreeMap<String, SignInfo>,
    pub ic_partials: BTreeMap<String, SignInfo>,
    pub products: BTreeMap<String, ProductSigns>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingConfig {
    pub nodes_per_axis: usize,
    pub alpha_levels: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            nodes_per_axis: 21,
            alpha_levels: 11,
        }
    }
}

impl SamplingConfig {
    pub fn with_density(nodes_per_axis: usize, alpha_levels: usize) -> Self {
        SamplingConfig {
            nodes_per_axis,
            alpha_levels,
        }
    }

    fn alphas(&self) -> Vec<f64> {
        let n = self.alpha_levels.max(2);
        (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
    }
}

/// Endpoint functions of the fuzzification: expressions in t, x[, y] and
/// alpha, with every parameter bound to a cut endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointFunctions {
    pub z1: Expr,
    pub z2: Expr,
    pub f1: Expr,
    pub f2: Expr,
    pub p1: Expr,
    pub p2: Expr,
    pub q1: Option<Expr>,
    pub q2: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub passed: bool,
    /// Worst violation, when the condition failed.
    pub worst: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferentiabilityReport {
    /// (i) lower endpoint of Gamma nondecreasing in alpha.
    pub lower_monotone: ConditionReport,
    /// (ii) upper endpoint of Gamma nonincreasing in alpha.
    pub upper_monotone: ConditionReport,
    /// (iii) lower <= upper at alpha = 1.
    pub ordered_at_one: ConditionReport,
}

impl DifferentiabilityReport {
    pub fn all_pass(&self) -> bool {
        self.lower_monotone.passed && self.upper_monotone.passed && self.ordered_at_one.passed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Bfs,
    SsOnly,
    Neither,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Bfs => "BFS",
            Verdict::SsOnly => "SS_only",
            Verdict::Neither => "none",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug)]
pub struct ClassificationReport {
    pub verdict: Verdict,
    pub sign_profile: SignProfile,
    pub differentiability: Option<DifferentiabilityReport>,
    pub residual_sup: Option<f64>,
    pub ic_endpoints_match: Option<bool>,
    pub region: Option<RegionBox>,
    pub notes: Vec<String>,
}

/// Open-interior sample coordinates for one axis: a + (b-a) i/(n+1).
fn open_samples(start: f64, end: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| start + (end - start) * i as f64 / (n + 1) as f64)
        .collect()
}

struct SampleBox {
    t: Vec<f64>,
    x: Vec<f64>,
    y: Option<Vec<f64>>,
}

impl SampleBox {
    fn new(p: &HeatLikeProblem, cfg: &SamplingConfig) -> Result<Self, BfsError> {
        let spec = p.grid_spec().map_err(|e| BfsError::InvalidArgument {
            detail: format!("problem grid: {e}"),
        })?;
        Ok(SampleBox {
            t: open_samples(spec.t.start, spec.t.end, cfg.nodes_per_axis),
            x: open_samples(spec.x.start, spec.x.end, cfg.nodes_per_axis),
            y: spec
                .y
                .map(|a| open_samples(a.start, a.end, cfg.nodes_per_axis)),
        })
    }

    /// Visit every space-time sample, with y fixed to None in 1-d.
    fn visit(&self, mut f: impl FnMut(f64, f64, Option<f64>) -> Result<(), BfsError>) -> Result<(), BfsError> {
        for &t in &self.t {
            for &x in &self.x {
                match &self.y {
                    Some(ys) => {
                        for &y in ys {
                            f(t, x, Some(y))?;
                        }
                    }
                    None => f(t, x, None)?,
                }
            }
        }
        Ok(())
    }
}

/// Parameter corner assignments: every low/high combination of the alpha=0
/// cut for the referenced parameters, plus the all-peaks point.
fn parameter_corners(p: &HeatLikeProblem, referenced: &[String]) -> Vec<BTreeMap<String, f64>> {
    let mut corners = vec![BTreeMap::new()];
    for name in referenced {
        let shape = p.param(name).expect("caller filtered to declared").shape;
        let mut next = Vec::with_capacity(corners.len() * 2);
        for corner in &corners {
            for v in [shape.lower(), shape.upper()] {
                let mut c = corner.clone();
                c.insert(name.clone(), v);
                next.push(c);
            }
        }
        corners = next;
    }
    let mut peak = BTreeMap::new();
    for name in referenced {
        peak.insert(name.clone(), p.param(name).unwrap().shape.peak());
    }
    corners.push(peak);
    corners
}

struct SignAccumulator {
    positive: Option<Witness>,
    negative: Option<Witness>,
    zero: Option<Witness>,
}

impl SignAccumulator {
    fn new() -> Self {
        SignAccumulator {
            positive: None,
            negative: None,
            zero: None,
        }
    }

    fn record(&mut self, value: f64, location: &BTreeMap<String, f64>) {
        if value > SIGN_MARGIN {
            if self.positive.as_ref().map_or(true, |w| value > w.value) {
                self.positive = Some(Witness {
                    location: location.clone(),
                    value,
                });
            }
        } else if value < -SIGN_MARGIN {
            if self.negative.as_ref().map_or(true, |w| value < w.value) {
                self.negative = Some(Witness {
                    location: location.clone(),
                    value,
                });
            }
        } else if self
            .zero
            .as_ref()
            .map_or(true, |w| value.abs() < w.value.abs())
        {
            self.zero = Some(Witness {
                location: location.clone(),
                value,
            });
        }
    }

    fn finish(self) -> SignInfo {
        let sign = match (&self.positive, &self.negative, &self.zero) {
            (Some(_), Some(_), _) => Sign::Mixed,
            (_, _, Some(_)) => Sign::Zero,
            (Some(_), None, None) => Sign::Positive,
            (None, Some(_), None) => Sign::Negative,
            (None, None, None) => Sign::Zero,
        };
        SignInfo {
            sign,
            positive: self.positive,
            negative: self.negative,
            zero: self.zero,
        }
    }
}

/// Sample the sign of `e` over the open space-time box crossed with the
/// alpha=0 corners (plus peak) of the parameters `e` references.
fn sample_signs(
    e: &Expr,
    p: &HeatLikeProblem,
    cfg: &SamplingConfig,
) -> Result<SignInfo, BfsError> {
    let boxed = SampleBox::new(p, cfg)?;
    let free = e.free_symbols();
    let referenced: Vec<String> = p
        .param_names()
        .into_iter()
        .filter(|n| free.contains(*n))
        .map(str::to_string)
        .collect();
    let corners = parameter_corners(p, &referenced);

    let mut acc = SignAccumulator::new();
    for corner in &corners {
        let mut env = Environment::new();
        for (k, v) in corner {
            env.set(k, *v);
        }
        boxed.visit(|t, x, y| {
            env.set("t", t);
            env.set("x", x);
            if let Some(y) = y {
                env.set("y", y);
            }
            let value = e.evaluate(&env).map_err(|source| BfsError::Sampling {
                expression: e.to_string(),
                location: format!("t={t}, x={x}{}", y.map_or(String::new(), |y| format!(", y={y}"))),
                source,
            })?;
            let mut location = corner.clone();
            location.insert("t".into(), t);
            location.insert("x".into(), x);
            if let Some(y) = y {
                location.insert("y".into(), y);
            }
            acc.record(value, &location);
            Ok(())
        })?;
    }
    Ok(acc.finish())
}

fn check_expression_symbols(
    e: &Expr,
    p: &HeatLikeProblem,
    field: &str,
) -> Result<(), BfsError> {
    for sym in e.free_symbols() {
        let is_coord = matches!(sym.as_str(), "t" | "x" | "y");
        let is_y_ok = sym != "y" || p.dimension == 2;
        if (is_coord && is_y_ok) || p.param(&sym).is_some() {
            continue;
        }
        return Err(BfsError::UndeclaredSymbol {
            field: field.to_string(),
            symbol: sym,
        });
    }
    Ok(())
}

fn partial_signs_for(
    e: &Expr,
    p: &HeatLikeProblem,
    cfg: &SamplingConfig,
) -> Result<BTreeMap<String, SignInfo>, BfsError> {
    let free = e.free_symbols();
    let mut out = BTreeMap::new();
    for name in p.param_names() {
        if !free.contains(name) {
            continue;
        }
        let d = e.differentiate(name).simplify();
        out.insert(name.to_string(), sample_signs(&d, p, cfg)?);
    }
    Ok(out)
}

/// Sign profile of the problem against a crisp closed form G.
pub fn sign_profile(p: &HeatLikeProblem, g: &Expr) -> Result<SignProfile, BfsError> {
    sign_profile_with(p, g, &SamplingConfig::default())
}

pub fn sign_profile_with(
    p: &HeatLikeProblem,
    g: &Expr,
    cfg: &SamplingConfig,
) -> Result<SignProfile, BfsError> {
    check_expression_symbols(g, p, "G")?;
    let mut profile = coefficient_signs_with(p, cfg)?;
    profile.g_partials = partial_signs_for(g, p, cfg)?;

    // Theorem products, sampled as product expressions so regional sign
    // structure (not just the two factor signs) is visible.
    let mut products: BTreeMap<String, ProductSigns> = BTreeMap::new();
    let mut add_product = |name: &str,
                           slot: fn(&mut ProductSigns) -> &mut Option<SignInfo>,
                           coef: &Expr|
     -> Result<(), BfsError> {
        let dg = g.differentiate(name).simplify();
        let dc = coef.differentiate(name).simplify();
        let product = Expr::Mul(Box::new(dc), Box::new(dg)).simplify();
        let info = sample_signs(&product, p, cfg)?;
        let entry = products.entry(name.to_string()).or_insert(ProductSigns {
            with_p: None,
            with_q: None,
            with_f: None,
        });
        *slot(entry) = Some(info);
        Ok(())
    };

    let p_free = p.x_coefficient().free_symbols();
    let q_free = p.y_coefficient().map(|q| q.free_symbols());
    let f_free = p.f.free_symbols();
    for name in p.param_names() {
        if p_free.contains(name) {
            add_product(name, |ps| &mut ps.with_p, p.x_coefficient())?;
        }
        if let (Some(free), Some(q)) = (&q_free, p.y_coefficient()) {
            if free.contains(name) {
                add_product(name, |ps| &mut ps.with_q, q)?;
            }
        }
        if f_free.contains(name) {
            add_product(name, |ps| &mut ps.with_f, &p.f)?;
        }
    }
    profile.products = products;
    Ok(profile)
}

/// The G-independent part of the profile: coefficient and data signs, used
/// by the Seikkala assembly when no closed form is available.
pub fn coefficient_signs(p: &HeatLikeProblem) -> Result<SignProfile, BfsError> {
    coefficient_signs_with(p, &SamplingConfig::default())
}

pub fn coefficient_signs_with(
    p: &HeatLikeProblem,
    cfg: &SamplingConfig,
) -> Result<SignProfile, BfsError> {
    Ok(SignProfile {
        p: sample_signs(p.x_coefficient(), p, cfg)?,
        q: match p.y_coefficient() {
            Some(q) => Some(sample_signs(q, p, cfg)?),
            None => None,
        },
        g_partials: BTreeMap::new(),
        f_partials: partial_signs_for(&p.f, p, cfg)?,
        p_partials: partial_signs_for(p.x_coefficient(), p, cfg)?,
        q_partials: match p.y_coefficient() {
            Some(q) => partial_signs_for(q, p, cfg)?,
            None => BTreeMap::new(),
        },
        ic_partials: partial_signs_for(&p.initial_condition, p, cfg)?,
        products: BTreeMap::new(),
    })
}

/// Alpha-cut endpoint expressions for a triangular parameter:
/// s1(alpha) = lo + (peak-lo) alpha, s2(alpha) = hi - (hi-peak) alpha.
pub(crate) fn cut_endpoint_exprs(p: &HeatLikeProblem, name: &str) -> (Expr, Expr) {
    let shape = p.param(name).expect("declared parameter").shape;
    let (lo, peak, hi) = (shape.lower(), shape.peak(), shape.upper());
    let alpha = Expr::Param("alpha".to_string());
    let s1 = Expr::Add(
        Box::new(Expr::Const(lo)),
        Box::new(Expr::Mul(
            Box::new(Expr::Const(peak - lo)),
            Box::new(alpha.clone()),
        )),
    )
    .simplify();
    let s2 = Expr::Sub(
        Box::new(Expr::Const(hi)),
        Box::new(Expr::Mul(Box::new(Expr::Const(hi - peak)), Box::new(alpha))),
    )
    .simplify();
    (s1, s2)
}

/// Bind every parameter of `e` to a cut endpoint according to the sampled
/// monotonicity in `partials`. `lower` selects the min-endpoint assignment.
pub(crate) fn bind_endpoints(
    e: &Expr,
    p: &HeatLikeProblem,
    partials: &BTreeMap<String, SignInfo>,
    lower: bool,
) -> Result<Expr, BfsError> {
    let free = e.free_symbols();
    let mut out = e.clone();
    for fp in &p.parameters {
        if !free.contains(&fp.name) {
            continue;
        }
        let info = partials
            .get(&fp.name)
            .ok_or_else(|| BfsError::InvalidArgument {
                detail: format!("sign profile has no entry for parameter '{}'", fp.name),
            })?;
        let increasing = match (info.has_positive(), info.has_negative()) {
            (true, true) => {
                return Err(BfsError::NotMonotone {
                    param: fp.name.clone(),
                    expression: e.to_string(),
                })
            }
            (true, false) => true,
            (false, true) => false,
            (false, false) => {
                // Derivative vanished everywhere sampled: the value does not
                // depend on this parameter; bind the peak.
                out = out.substitute(&fp.name, &Expr::Const(fp.shape.peak()));
                continue;
            }
        };
        let (s1, s2) = cut_endpoint_exprs(p, &fp.name);
        let chosen = if increasing == lower { s1 } else { s2 };
        out = out.substitute(&fp.name, &chosen);
    }
    Ok(out.simplify())
}

/// Build the endpoint functions from a definite sign profile.
pub fn endpoint_functions(
    p: &HeatLikeProblem,
    g: &Expr,
    profile: &SignProfile,
) -> Result<EndpointFunctions, BfsError> {
    check_expression_symbols(g, p, "G")?;
    let z1 = bind_endpoints(g, p, &profile.g_partials, true)?;
    let z2 = bind_endpoints(g, p, &profile.g_partials, false)?;
    let f1 = bind_endpoints(&p.f, p, &profile.f_partials, true)?;
    let f2 = bind_endpoints(&p.f, p, &profile.f_partials, false)?;
    let p1 = bind_endpoints(p.x_coefficient(), p, &profile.p_partials, true)?;
    let p2 = bind_endpoints(p.x_coefficient(), p, &profile.p_partials, false)?;
    let (q1, q2) = match p.y_coefficient() {
        Some(q) => (
            Some(bind_endpoints(q, p, &profile.q_partials, true)?),
            Some(bind_endpoints(q, p, &profile.q_partials, false)?),
        ),
        None => (None, None),
    };
    Ok(EndpointFunctions {
        z1,
        z2,
        f1,
        f2,
        p1,
        p2,
        q1,
        q2,
    })
}

/// Gamma endpoints: (z_i)_t + P_i (z_i)_xx (+ Q_i (z_i)_yy), symbolically.
pub fn gamma_endpoints(ep: &EndpointFunctions, p: &HeatLikeProblem) -> (Expr, Expr) {
    let two_dim = p.dimension == 2;
    let build = |z: &Expr, pc: &Expr, qc: Option<&Expr>| -> Expr {
        let zt = z.differentiate("t").simplify();
        let zxx = z
            .differentiate("x")
            .simplify()
            .differentiate("x")
            .simplify();
        let mut out = Expr::Add(
            Box::new(zt),
            Box::new(Expr::Mul(Box::new(pc.clone()), Box::new(zxx))),
        );
        if let (true, Some(q)) = (two_dim, qc) {
            let zyy = z
                .differentiate("y")
                .simplify()
                .differentiate("y")
                .simplify();
            out = Expr::Add(
                Box::new(out),
                Box::new(Expr::Mul(Box::new(q.clone()), Box::new(zyy))),
            );
        }
        out.simplify()
    };
    (
        build(&ep.z1, &ep.p1, ep.q1.as_ref()),
        build(&ep.z2, &ep.p2, ep.q2.as_ref()),
    )
}

fn eval_at(
    e: &Expr,
    t: f64,
    x: f64,
    y: Option<f64>,
    alpha: f64,
) -> Result<f64, BfsError> {
    let mut env = Environment::new();
    env.set("t", t);
    env.set("x", x);
    if let Some(y) = y {
        env.set("y", y);
    }
    env.set("alpha", alpha);
    e.evaluate(&env).map_err(|source| BfsError::Sampling {
        expression: e.to_string(),
        location: format!(
            "t={t}, x={x}{}, alpha={alpha}",
            y.map_or(String::new(), |y| format!(", y={y}"))
        ),
        source,
    })
}

fn location_map(t: f64, x: f64, y: Option<f64>, alpha: f64) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("t".into(), t);
    m.insert("x".into(), x);
    if let Some(y) = y {
        m.insert("y".into(), y);
    }
    m.insert("alpha".into(), alpha);
    m
}

/// Differentiability conditions (i)-(iii) on the Gamma endpoints.
pub fn differentiability_check(
    ep: &EndpointFunctions,
    p: &HeatLikeProblem,
) -> Result<DifferentiabilityReport, BfsError> {
    differentiability_check_with(ep, p, &SamplingConfig::default())
}

pub fn differentiability_check_with(
    ep: &EndpointFunctions,
    p: &HeatLikeProblem,
    cfg: &SamplingConfig,
) -> Result<DifferentiabilityReport, BfsError> {
    let (g1, g2) = gamma_endpoints(ep, p);
    let boxed = SampleBox::new(p, cfg)?;
    let alphas = cfg.alphas();

    // Tolerance scales with the magnitude of the sampled Gamma values.
    let mut scale: f64 = 0.0;
    boxed.visit(|t, x, y| {
        for &a in &alphas {
            scale = scale.max(eval_at(&g1, t, x, y, a)?.abs());
            scale = scale.max(eval_at(&g2, t, x, y, a)?.abs());
        }
        Ok(())
    })?;
    let tol = 1e-8 * (1.0 + scale);

    let mut worst_i: Option<Witness> = None;
    let mut worst_ii: Option<Witness> = None;
    let mut worst_iii: Option<Witness> = None;
    boxed.visit(|t, x, y| {
        for w in alphas.windows(2) {
            let (a0, a1) = (w[0], w[1]);
            let rise = eval_at(&g1, t, x, y, a1)? - eval_at(&g1, t, x, y, a0)?;
            if rise < -tol && worst_i.as_ref().map_or(true, |b| rise < b.value) {
                worst_i = Some(Witness {
                    location: location_map(t, x, y, a1),
                    value: rise,
                });
            }
            let fall = eval_at(&g2, t, x, y, a1)? - eval_at(&g2, t, x, y, a0)?;
            if fall > tol && worst_ii.as_ref().map_or(true, |b| fall > b.value) {
                worst_ii = Some(Witness {
                    location: location_map(t, x, y, a1),
                    value: fall,
                });
            }
        }
        let gap = eval_at(&g1, t, x, y, 1.0)? - eval_at(&g2, t, x, y, 1.0)?;
        if gap > tol && worst_iii.as_ref().map_or(true, |b| gap > b.value) {
            worst_iii = Some(Witness {
                location: location_map(t, x, y, 1.0),
                value: gap,
            });
        }
        Ok(())
    })?;

    Ok(DifferentiabilityReport {
        lower_monotone: ConditionReport {
            passed: worst_i.is_none(),
            worst: worst_i,
        },
        upper_monotone: ConditionReport {
            passed: worst_ii.is_none(),
            worst: worst_ii,
        },
        ordered_at_one: ConditionReport {
            passed: worst_iii.is_none(),
            worst: worst_iii,
        },
    })
}

/// Sup over samples of |Gamma_i - F_i|, the endpoint-equation residual.
pub fn bfs_residual(ep: &EndpointFunctions, p: &HeatLikeProblem) -> Result<f64, BfsError> {
    bfs_residual_with(ep, p, &SamplingConfig::default())
}

pub fn bfs_residual_with(
    ep: &EndpointFunctions,
    p: &HeatLikeProblem,
    cfg: &SamplingConfig,
) -> Result<f64, BfsError> {
    let (g1, g2) = gamma_endpoints(ep, p);
    let r1 = Expr::Sub(Box::new(g1), Box::new(ep.f1.clone())).simplify();
    let r2 = Expr::Sub(Box::new(g2), Box::new(ep.f2.clone())).simplify();
    let boxed = SampleBox::new(p, cfg)?;
    let alphas = cfg.alphas();
    let mut sup: f64 = 0.0;
    boxed.visit(|t, x, y| {
        for &a in &alphas {
            sup = sup.max(eval_at(&r1, t, x, y, a)?.abs());
            sup = sup.max(eval_at(&r2, t, x, y, a)?.abs());
        }
        Ok(())
    })?;
    Ok(sup)
}

/// Min/max of G over a dense lattice of the parameter alpha-cut box: the
/// independent oracle the monotone endpoints are checked against.
pub fn brute_force_endpoints(
    p: &HeatLikeProblem,
    g: &Expr,
    alpha: f64,
    point: (f64, f64, Option<f64>),
    samples_per_axis: usize,
) -> Result<Interval, BfsError> {
    if samples_per_axis < 3 {
        return Err(BfsError::InvalidArgument {
            detail: format!("samples_per_axis must be at least 3, got {samples_per_axis}"),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(BfsError::InvalidArgument {
            detail: format!("alpha {alpha} outside [0, 1]"),
        });
    }
    check_expression_symbols(g, p, "G")?;
    let free = g.free_symbols();
    let referenced: Vec<&str> = p
        .param_names()
        .into_iter()
        .filter(|n| free.contains(*n))
        .collect();

    let (t, x, y) = point;
    let mut env = Environment::new();
    env.set("t", t);
    env.set("x", x);
    if let Some(y) = y {
        env.set("y", y);
    }

    let mut lattices = Vec::with_capacity(referenced.len());
    for name in &referenced {
        let cut = p.param(name).unwrap().shape.cut(alpha);
        let values: Vec<f64> = (0..samples_per_axis)
            .map(|i| {
                cut.lo + (cut.hi - cut.lo) * i as f64 / (samples_per_axis - 1) as f64
            })
            .collect();
        lattices.push(values);
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let total: usize = samples_per_axis.pow(referenced.len() as u32);
    for flat in 0..total {
        let mut rest = flat;
        for (k, name) in referenced.iter().enumerate() {
            env.set(name, lattices[k][rest % samples_per_axis]);
            rest /= samples_per_axis;
        }
        let v = g.evaluate(&env).map_err(|source| BfsError::Sampling {
            expression: g.to_string(),
            location: format!("t={t}, x={x}, alpha={alpha}"),
            source,
        })?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Interval::new(lo, hi).map_err(|e| BfsError::InvalidArgument {
        detail: format!("brute-force enumeration produced no interval: {e}"),
    })
}

/// Check z_i(0, .) against the interval-arithmetic endpoints of the initial
/// condition; returns the pass flag and the worst deviation.
fn initial_condition_match(
    ep: &EndpointFunctions,
    p: &HeatLikeProblem,
    profile: &SignProfile,
    cfg: &SamplingConfig,
) -> Result<(bool, f64), BfsError> {
    let ic1 = bind_endpoints(&p.initial_condition, p, &profile.ic_partials, true)?;
    let ic2 = bind_endpoints(&p.initial_condition, p, &profile.ic_partials, false)?;
    let z1_at0 = ep.z1.substitute("t", &Expr::Const(0.0)).simplify();
    let z2_at0 = ep.z2.substitute("t", &Expr::Const(0.0)).simplify();

    let boxed = SampleBox::new(p, cfg)?;
    let alphas = cfg.alphas();
    let mut scale: f64 = 0.0;
    let mut worst: f64 = 0.0;
    boxed.visit(|_t, x, y| {
        for &a in &alphas {
            let lo_ref = eval_at(&ic1, 0.0, x, y, a)?;
            let hi_ref = eval_at(&ic2, 0.0, x, y, a)?;
            let lo_got = eval_at(&z1_at0, 0.0, x, y, a)?;
            let hi_got = eval_at(&z2_at0, 0.0, x, y, a)?;
            scale = scale.max(lo_ref.abs()).max(hi_ref.abs());
            worst = worst.max((lo_got - lo_ref).abs()).max((hi_got - hi_ref).abs());
        }
        Ok(())
    })?;
    Ok((worst <= 1e-8 * (1.0 + scale), worst))
}

fn describe_positive_subregion(info: &SignInfo) -> Option<String> {
    match (&info.positive, &info.negative) {
        (Some(pos), Some(neg)) => Some(format!(
            "positive near [{pos}] but negative near [{neg}]"
        )),
        _ => None,
    }
}

/// Mixed-sign products still carry regional structure worth reporting: the
/// bounding box of the positively sampled sub-region, per axis.
fn positive_region_note(
    product: &Expr,
    p: &HeatLikeProblem,
    cfg: &SamplingConfig,
    label: &str,
) -> Result<Option<String>, BfsError> {
    let boxed = SampleBox::new(p, cfg)?;
    let free = product.free_symbols();
    let referenced: Vec<String> = p
        .param_names()
        .into_iter()
        .filter(|n| free.contains(*n))
        .map(str::to_string)
        .collect();
    let corners = parameter_corners(p, &referenced);
    let mut t_rng: Option<(f64, f64)> = None;
    let mut x_rng: Option<(f64, f64)> = None;
    let mut y_rng: Option<(f64, f64)> = None;
    for corner in &corners {
        let mut env = Environment::new();
        for (k, v) in corner {
            env.set(k, *v);
        }
        boxed.visit(|t, x, y| {
            env.set("t", t);
            env.set("x", x);
            if let Some(y) = y {
                env.set("y", y);
            }
            let v = product.evaluate(&env).map_err(|source| BfsError::Sampling {
                expression: product.to_string(),
                location: format!("t={t}, x={x}"),
                source,
            })?;
            if v > SIGN_MARGIN {
                let upd = |r: &mut Option<(f64, f64)>, v: f64| {
                    *r = Some(match *r {
                        None => (v, v),
                        Some((lo, hi)) => (lo.min(v), hi.max(v)),
                    });
                };
                upd(&mut t_rng, t);
                upd(&mut x_rng, x);
                if let Some(y) = y {
                    upd(&mut y_rng, y);
                }
            }
            Ok(())
        })?;
    }
    Ok(t_rng.map(|(t0, t1)| {
        let (x0, x1) = x_rng.unwrap();
        let mut s = format!(
            "{label} is positive only on a sub-region (sampled bounding box: \
             t in [{t0:.4}, {t1:.4}], x in [{x0:.4}, {x1:.4}]"
        );
        if let Some((y0, y1)) = y_rng {
            s.push_str(&format!(", y in [{y0:.4}, {y1:.4}]"));
        }
        s.push(')');
        s
    }))
}

/// Full Buckley-Feuring classification against a crisp closed form G,
/// falling back to the Seikkala pipeline when any condition fails.
pub fn classify(p: &HeatLikeProblem, g: &Expr) -> Result<ClassificationReport, BfsError> {
    classify_with(p, g, &SamplingConfig::default())
}

pub fn classify_with(
    p: &HeatLikeProblem,
    g: &Expr,
    cfg: &SamplingConfig,
) -> Result<ClassificationReport, BfsError> {
    let profile = sign_profile_with(p, g, cfg)?;
    let mut notes = Vec::new();
    let mut bfs_ok = true;

    match profile.p.sign {
        Sign::Positive => {}
        Sign::Negative => {
            bfs_ok = false;
            notes.push(format!(
                "P < 0 on the sampled domain (witness {})",
                profile.p.negative.as_ref().expect("negative sign has witness")
            ));
        }
        Sign::Zero => {
            bfs_ok = false;
            notes.push("P touches zero on the sampled domain; the strict positivity hypothesis fails".into());
        }
        Sign::Mixed => {
            bfs_ok = false;
            notes.push(format!(
                "P changes sign: {}",
                describe_positive_subregion(&profile.p)
                    .unwrap_or_else(|| "mixed witnesses".into())
            ));
        }
    }
    if let Some(q) = &profile.q {
        if q.sign != Sign::Positive {
            bfs_ok = false;
            notes.push(format!("Q is {} rather than strictly positive", q.sign));
        }
    }

    for (name, prods) in &profile.products {
        let rows: [(&str, &Option<SignInfo>, Option<&Expr>); 3] = [
            ("(dP/ds)(dG/ds)", &prods.with_p, Some(p.x_coefficient())),
            ("(dQ/ds)(dG/ds)", &prods.with_q, p.y_coefficient()),
            ("(dG/ds)(dF/ds)", &prods.with_f, Some(&p.f)),
        ];
        for (label, info, coef) in rows {
            let Some(info) = info else { continue };
            if info.sign == Sign::Positive {
                continue;
            }
            bfs_ok = false;
            notes.push(format!(
                "theorem product {label} for parameter '{name}' is {}",
                info.sign
            ));
            if info.sign == Sign::Mixed {
                if let Some(coef) = coef {
                    let dg = g.differentiate(name).simplify();
                    let dc = coef.differentiate(name).simplify();
                    let product = Expr::Mul(Box::new(dc), Box::new(dg)).simplify();
                    if let Some(note) = positive_region_note(
                        &product,
                        p,
                        cfg,
                        &format!("product {label} for '{name}'"),
                    )? {
                        notes.push(note);
                    }
                }
            }
        }
    }

    let mut differentiability = None;
    let mut residual_sup = None;
    let mut ic_match = None;
    match endpoint_functions(p, g, &profile) {
        Ok(ep) => {
            let report = differentiability_check_with(&ep, p, cfg)?;
            if !report.all_pass() {
                bfs_ok = false;
                for (name, cond) in [
                    ("(i) lower Gamma endpoint nondecreasing", &report.lower_monotone),
                    ("(ii) upper Gamma endpoint nonincreasing", &report.upper_monotone),
                    ("(iii) endpoints ordered at alpha=1", &report.ordered_at_one),
                ] {
                    if !cond.passed {
                        notes.push(format!(
                            "differentiability condition {name} fails (worst violation {})",
                            cond.worst.as_ref().expect("failed condition has witness")
                        ));
                    }
                }
            }
            let residual = bfs_residual_with(&ep, p, cfg)?;
            let f_scale = sample_sup(&[&ep.f1, &ep.f2], p, cfg)?;
            if residual > 1e-8 * (1.0 + f_scale) {
                bfs_ok = false;
                notes.push(format!(
                    "endpoint-equation residual {residual:.3e} exceeds tolerance {:.3e}",
                    1e-8 * (1.0 + f_scale)
                ));
            }
            let (matched, worst) = initial_condition_match(&ep, p, &profile, cfg)?;
            if !matched {
                bfs_ok = false;
                notes.push(format!(
                    "endpoints do not satisfy the fuzzy initial condition (worst deviation {worst:.3e})"
                ));
            }
            differentiability = Some(report);
            residual_sup = Some(residual);
            ic_match = Some(matched);
        }
        Err(BfsError::NotMonotone { param, expression }) => {
            bfs_ok = false;
            notes.push(format!(
                "cannot bind monotone endpoints: parameter '{param}' is not monotone in '{expression}'"
            ));
        }
        Err(other) => return Err(other),
    }

    if bfs_ok {
        return Ok(ClassificationReport {
            verdict: Verdict::Bfs,
            sign_profile: profile,
            differentiability,
            residual_sup,
            ic_endpoints_match: ic_match,
            region: None,
            notes,
        });
    }

    // BFS failed: ask the Seikkala pipeline whether a valid region exists.
    let (verdict, region) = match attempt_ss(p, &profile) {
        Ok((region, ss_notes)) => {
            notes.extend(ss_notes);
            if region.node_count > 0 {
                (Verdict::SsOnly, Some(region))
            } else {
                notes.push("Seikkala system solved but the validity region is empty".into());
                (Verdict::Neither, Some(region))
            }
        }
        Err(e) => {
            notes.push(format!("Seikkala pipeline unavailable: {e}"));
            (Verdict::Neither, None)
        }
    };

    Ok(ClassificationReport {
        verdict,
        sign_profile: profile,
        differentiability,
        residual_sup,
        ic_endpoints_match: ic_match,
        region,
        notes,
    })
}

fn attempt_ss(
    p: &HeatLikeProblem,
    profile: &SignProfile,
) -> Result<(RegionBox, Vec<String>), ss::SsError> {
    let system = ss::assemble_system(p, profile)?;
    let mut notes = Vec::new();
    notes.push(format!(
        "Seikkala endpoint system assembled with {} coupling",
        system.coupling
    ));
    let solution = ss::solve_all_levels(&system, p)?;
    let (_mask, region) = ss::validity_region(&solution)?;
    if region.node_count > 0 {
        notes.push(format!(
            "Seikkala solution is a valid fuzzy number on {} nodes (t extent {:.4})",
            region.node_count, region.t_extent
        ));
    }
    Ok((region, notes))
}

fn sample_sup(
    exprs: &[&Expr],
    p: &HeatLikeProblem,
    cfg: &SamplingConfig,
) -> Result<f64, BfsError> {
    let boxed = SampleBox::new(p, cfg)?;
    let alphas = cfg.alphas();
    let mut sup: f64 = 0.0;
    for e in exprs {
        boxed.visit(|t, x, y| {
            for &a in &alphas {
                sup = sup.max(eval_at(e, t, x, y, a)?.abs());
            }
            Ok(())
        })?;
    }
    Ok(sup)
}
