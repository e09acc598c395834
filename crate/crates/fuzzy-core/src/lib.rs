//! Triangular fuzzy numbers represented as stacks of alpha-cut intervals,
//! with the standard interval arithmetic on each cut.
//!
//! A fuzzy quantity is stored level-wise: a grid of membership levels
//! `0 = alpha_0 < ... < alpha_{n-1} = 1` and one closed interval per level,
//! nested downward from the support (alpha = 0) to the core (alpha = 1).
//! Arithmetic combines equal-alpha cuts and never resamples: operands on
//! different alpha grids are a usage error.

use std::fmt;

use thiserror::Error;

/// Slack applied to ordering and nesting comparisons, absolute plus
/// relative in the magnitudes involved.
pub const ORDERING_SLACK: f64 = 1e-12;

fn slack_for(a: f64, b: f64) -> f64 {
    ORDERING_SLACK * (1.0 + a.abs().max(b.abs()))
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FuzzyError {
    #[error("invalid interval: {context}")]
    InvalidInterval { context: String },
    #[error("invalid triangular shape: {context}")]
    InvalidTriangular { context: String },
    #[error("level count must be at least 2, got {got}")]
    BadLevelCount { got: usize },
    #[error("invalid alpha-cut stack at level {index}: {detail}")]
    InvalidStack { index: usize, detail: String },
    #[error("alpha grids differ: {detail}")]
    MismatchedGrids { detail: String },
    #[error("division by a fuzzy number whose support [{lo}, {hi}] contains zero")]
    DivisorContainsZero { lo: f64, hi: f64 },
    #[error("scale factor must be finite, got {got}")]
    BadScaleFactor { got: f64 },
}

/// A closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// # Errors
    ///
    /// Rejects non-finite endpoints and `lo > hi`.
    pub fn new(lo: f64, hi: f64) -> Result<Interval, FuzzyError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(FuzzyError::InvalidInterval {
                context: format!("endpoints must be finite, got [{lo}, {hi}]"),
            });
        }
        if lo > hi {
            return Err(FuzzyError::InvalidInterval {
                context: format!("lower endpoint {lo} exceeds upper endpoint {hi}"),
            });
        }
        Ok(Interval { lo, hi })
    }

    /// Degenerate interval holding a single value.
    pub fn point(v: f64) -> Interval {
        Interval { lo: v, hi: v }
    }

    pub fn width(self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Set inclusion `self` within `other`, up to ordering slack.
    pub fn within(self, other: Interval) -> bool {
        self.lo >= other.lo - slack_for(self.lo, other.lo)
            && self.hi <= other.hi + slack_for(self.hi, other.hi)
    }

    pub fn add(self, o: Interval) -> Interval {
        Interval {
            lo: self.lo + o.lo,
            hi: self.hi + o.hi,
        }
    }

    /// Interval difference `[a,b] - [c,d] = [a-d, b-c]`.
    pub fn sub(self, o: Interval) -> Interval {
        Interval {
            lo: self.lo - o.hi,
            hi: self.hi - o.lo,
        }
    }

    /// Scaling by a real; a negative factor swaps the endpoints.
    pub fn scale(self, k: f64) -> Interval {
        if k >= 0.0 {
            Interval {
                lo: k * self.lo,
                hi: k * self.hi,
            }
        } else {
            Interval {
                lo: k * self.hi,
                hi: k * self.lo,
            }
        }
    }

    /// Product interval: extremes over the four endpoint products.
    pub fn mul(self, o: Interval) -> Interval {
        let c = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        Interval {
            lo: c.iter().copied().fold(f64::INFINITY, f64::min),
            hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Quotient interval, defined only when the divisor excludes zero.
    ///
    /// # Errors
    ///
    /// `DivisorContainsZero` when `0` lies in `o`.
    pub fn div(self, o: Interval) -> Result<Interval, FuzzyError> {
        if o.contains(0.0) {
            return Err(FuzzyError::DivisorContainsZero { lo: o.lo, hi: o.hi });
        }
        let c = [
            self.lo / o.lo,
            self.lo / o.hi,
            self.hi / o.lo,
            self.hi / o.hi,
        ];
        Ok(Interval {
            lo: c.iter().copied().fold(f64::INFINITY, f64::min),
            hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Shape parameters `(u1, u2, u3)` of a triangular fuzzy number: support
/// `[u1, u3]`, peak `u2`. Equal entries give a crisp embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularFuzzy {
    u1: f64,
    u2: f64,
    u3: f64,
}

impl TriangularFuzzy {
    /// # Errors
    ///
    /// Rejects non-finite entries and violations of `u1 <= u2 <= u3`.
    pub fn new(u1: f64, u2: f64, u3: f64) -> Result<TriangularFuzzy, FuzzyError> {
        if !(u1.is_finite() && u2.is_finite() && u3.is_finite()) {
            return Err(FuzzyError::InvalidTriangular {
                context: format!("entries must be finite, got ({u1}, {u2}, {u3})"),
            });
        }
        if !(u1 <= u2 && u2 <= u3) {
            return Err(FuzzyError::InvalidTriangular {
                context: format!("entries must satisfy u1 <= u2 <= u3, got ({u1}, {u2}, {u3})"),
            });
        }
        Ok(TriangularFuzzy { u1, u2, u3 })
    }

    pub fn crisp(v: f64) -> Result<TriangularFuzzy, FuzzyError> {
        TriangularFuzzy::new(v, v, v)
    }

    pub fn lower(self) -> f64 {
        self.u1
    }

    pub fn peak(self) -> f64 {
        self.u2
    }

    pub fn upper(self) -> f64 {
        self.u3
    }

    pub fn support(self) -> Interval {
        Interval {
            lo: self.u1,
            hi: self.u3,
        }
    }

    /// The alpha-cut `[u1 + alpha (u2 - u1), u3 - alpha (u3 - u2)]`.
    pub fn cut(self, alpha: f64) -> Interval {
        Interval {
            lo: self.u1 + alpha * (self.u2 - self.u1),
            hi: self.u3 - alpha * (self.u3 - self.u2),
        }
    }
}

/// What `validate_fuzzy` found wrong with a candidate stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Fewer than two levels.
    TooFewLevels,
    /// A non-finite alpha or endpoint.
    NonFinite,
    /// Alphas not strictly increasing, or first/last not 0/1.
    AlphaGrid,
    /// A cut with `lo > hi` beyond slack.
    EndpointOrder,
    /// A cut not contained in the one below it, beyond slack.
    NotNested,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::TooFewLevels => "too few levels",
            ViolationKind::NonFinite => "non-finite entry",
            ViolationKind::AlphaGrid => "alpha grid not strictly increasing from 0 to 1",
            ViolationKind::EndpointOrder => "cut endpoints out of order",
            ViolationKind::NotNested => "cut not nested in the level below",
        };
        f.write_str(s)
    }
}

/// Verdict of [`validate_fuzzy`]: valid, or the first violated invariant
/// together with the level index where it occurred.
#[derive(Debug, Clone, PartialEq)]
pub enum Validity {
    Valid,
    Invalid {
        index: usize,
        kind: ViolationKind,
        detail: String,
    },
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Check the alpha-cut stack invariants on a candidate level list.
///
/// Invariants, with [`ORDERING_SLACK`] tolerance on the interval
/// comparisons: at least two levels; alphas strictly increasing with
/// `alpha_0 = 0` and `alpha_last = 1`; every cut ordered (`lo <= hi`);
/// every cut contained in its predecessor.
pub fn validate_fuzzy(levels: &[(f64, Interval)]) -> Validity {
    if levels.len() < 2 {
        return Validity::Invalid {
            index: 0,
            kind: ViolationKind::TooFewLevels,
            detail: format!("need at least 2 levels, got {}", levels.len()),
        };
    }
    for (i, (alpha, cut)) in levels.iter().enumerate() {
        if !alpha.is_finite() || !cut.lo.is_finite() || !cut.hi.is_finite() {
            return Validity::Invalid {
                index: i,
                kind: ViolationKind::NonFinite,
                detail: format!("alpha = {alpha}, cut = {cut}"),
            };
        }
    }
    if levels[0].0 != 0.0 {
        return Validity::Invalid {
            index: 0,
            kind: ViolationKind::AlphaGrid,
            detail: format!("first alpha must be 0, got {}", levels[0].0),
        };
    }
    if levels[levels.len() - 1].0 != 1.0 {
        return Validity::Invalid {
            index: levels.len() - 1,
            kind: ViolationKind::AlphaGrid,
            detail: format!("last alpha must be 1, got {}", levels[levels.len() - 1].0),
        };
    }
    for i in 1..levels.len() {
        if levels[i].0 <= levels[i - 1].0 {
            return Validity::Invalid {
                index: i,
                kind: ViolationKind::AlphaGrid,
                detail: format!(
                    "alpha {} at level {} does not exceed {} below it",
                    levels[i].0,
                    i,
                    levels[i - 1].0
                ),
            };
        }
    }
    for (i, (alpha, cut)) in levels.iter().enumerate() {
        if cut.lo > cut.hi + slack_for(cut.lo, cut.hi) {
            return Validity::Invalid {
                index: i,
                kind: ViolationKind::EndpointOrder,
                detail: format!("cut {cut} at alpha = {alpha}"),
            };
        }
    }
    for i in 1..levels.len() {
        let (alpha, cut) = levels[i];
        let (_, below) = levels[i - 1];
        if !cut.within(below) {
            return Validity::Invalid {
                index: i,
                kind: ViolationKind::NotNested,
                detail: format!("cut {cut} at alpha = {alpha} escapes {below} below it"),
            };
        }
    }
    Validity::Valid
}

/// A fuzzy number stored as nested alpha-cuts on an explicit level grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaLevelFuzzyNumber {
    levels: Vec<(f64, Interval)>,
}

impl AlphaLevelFuzzyNumber {
    /// Build from an explicit stack, checking all invariants.
    ///
    /// # Errors
    ///
    /// `InvalidStack` carrying the level index and the violated invariant.
    pub fn from_levels(levels: Vec<(f64, Interval)>) -> Result<Self, FuzzyError> {
        match validate_fuzzy(&levels) {
            Validity::Valid => Ok(AlphaLevelFuzzyNumber { levels }),
            Validity::Invalid {
                index,
                kind,
                detail,
            } => Err(FuzzyError::InvalidStack {
                index,
                detail: format!("{kind}: {detail}"),
            }),
        }
    }

    pub fn levels(&self) -> &[(f64, Interval)] {
        &self.levels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// The alpha = 0 cut.
    pub fn support(&self) -> Interval {
        self.levels[0].1
    }

    /// The alpha = 1 cut.
    pub fn core(&self) -> Interval {
        self.levels[self.levels.len() - 1].1
    }

    /// Cut at an exact grid value, if present.
    pub fn cut_at(&self, alpha: f64) -> Option<Interval> {
        self.levels
            .iter()
            .find(|(a, _)| *a == alpha)
            .map(|(_, c)| *c)
    }

    fn same_grid(&self, o: &AlphaLevelFuzzyNumber) -> Result<(), FuzzyError> {
        if self.levels.len() != o.levels.len() {
            return Err(FuzzyError::MismatchedGrids {
                detail: format!(
                    "{} levels vs {}; operands are never resampled",
                    self.levels.len(),
                    o.levels.len()
                ),
            });
        }
        for (i, ((a, _), (b, _))) in self.levels.iter().zip(o.levels.iter()).enumerate() {
            if a != b {
                return Err(FuzzyError::MismatchedGrids {
                    detail: format!(
                        "alpha {} vs {} at level {}; operands are never resampled",
                        a, b, i
                    ),
                });
            }
        }
        Ok(())
    }

    fn zip_cuts(
        &self,
        o: &AlphaLevelFuzzyNumber,
        f: impl Fn(Interval, Interval) -> Result<Interval, FuzzyError>,
    ) -> Result<AlphaLevelFuzzyNumber, FuzzyError> {
        self.same_grid(o)?;
        let mut levels = Vec::with_capacity(self.levels.len());
        for ((alpha, a), (_, b)) in self.levels.iter().zip(o.levels.iter()) {
            levels.push((*alpha, f(*a, *b)?));
        }
        AlphaLevelFuzzyNumber::from_levels(levels)
    }

    pub fn add(&self, o: &AlphaLevelFuzzyNumber) -> Result<AlphaLevelFuzzyNumber, FuzzyError> {
        self.zip_cuts(o, |a, b| Ok(a.add(b)))
    }

    pub fn sub(&self, o: &AlphaLevelFuzzyNumber) -> Result<AlphaLevelFuzzyNumber, FuzzyError> {
        self.zip_cuts(o, |a, b| Ok(a.sub(b)))
    }

    pub fn mul(&self, o: &AlphaLevelFuzzyNumber) -> Result<AlphaLevelFuzzyNumber, FuzzyError> {
        self.zip_cuts(o, |a, b| Ok(a.mul(b)))
    }

    /// # Errors
    ///
    /// `DivisorContainsZero` when the divisor's support contains zero
    /// (then so does every one of its cuts that matters, the widest).
    pub fn div(&self, o: &AlphaLevelFuzzyNumber) -> Result<AlphaLevelFuzzyNumber, FuzzyError> {
        let support = o.support();
        if support.contains(0.0) {
            return Err(FuzzyError::DivisorContainsZero {
                lo: support.lo,
                hi: support.hi,
            });
        }
        self.zip_cuts(o, |a, b| a.div(b))
    }

    /// # Errors
    ///
    /// `BadScaleFactor` on a non-finite factor.
    pub fn scale(&self, k: f64) -> Result<AlphaLevelFuzzyNumber, FuzzyError> {
        if !k.is_finite() {
            return Err(FuzzyError::BadScaleFactor { got: k });
        }
        let levels = self
            .levels
            .iter()
            .map(|(alpha, cut)| (*alpha, cut.scale(k)))
            .collect();
        AlphaLevelFuzzyNumber::from_levels(levels)
    }
}

/// Operation selector for [`fuzzy_arithmetic`].
#[derive(Debug, Clone, Copy)]
pub enum FuzzyOp<'a> {
    Add(&'a AlphaLevelFuzzyNumber),
    Sub(&'a AlphaLevelFuzzyNumber),
    Mul(&'a AlphaLevelFuzzyNumber),
    Div(&'a AlphaLevelFuzzyNumber),
    Scale(f64),
}

/// Level-wise arithmetic dispatcher over a shared alpha grid.
///
/// # Errors
///
/// Mismatched grids, division by a zero-containing divisor, or a
/// non-finite scale factor.
pub fn fuzzy_arithmetic(
    a: &AlphaLevelFuzzyNumber,
    op: FuzzyOp<'_>,
) -> Result<AlphaLevelFuzzyNumber, FuzzyError> {
    match op {
        FuzzyOp::Add(b) => a.add(b),
        FuzzyOp::Sub(b) => a.sub(b),
        FuzzyOp::Mul(b) => a.mul(b),
        FuzzyOp::Div(b) => a.div(b),
        FuzzyOp::Scale(k) => a.scale(k),
    }
}

/// Discretize a triangular shape onto a uniform alpha grid.
///
/// # Errors
///
/// `BadLevelCount` when `level_count < 2`.
pub fn make_triangular(
    shape: TriangularFuzzy,
    level_count: usize,
) -> Result<AlphaLevelFuzzyNumber, FuzzyError> {
    if level_count < 2 {
        return Err(FuzzyError::BadLevelCount { got: level_count });
    }
    let n = level_count;
    let mut levels = Vec::with_capacity(n);
    for j in 0..n {
        let alpha = j as f64 / (n - 1) as f64;
        levels.push((alpha, shape.cut(alpha)));
    }
    AlphaLevelFuzzyNumber::from_levels(levels)
}

/// Assemble a fuzzy number from endpoint functions sampled on a uniform
/// alpha grid, checking the stack invariants on the way.
///
/// This is the ingestion point for solver output: `lower`/`upper` give the
/// cut endpoints at each alpha, and any ordering or nesting violation is
/// reported rather than repaired.
///
/// # Errors
///
/// `BadLevelCount` for `level_count < 2`; `InvalidStack` naming the level
/// and invariant when the samples do not form a fuzzy number.
pub fn from_endpoint_samples(
    lower: impl Fn(f64) -> f64,
    upper: impl Fn(f64) -> f64,
    level_count: usize,
) -> Result<AlphaLevelFuzzyNumber, FuzzyError> {
    if level_count < 2 {
        return Err(FuzzyError::BadLevelCount { got: level_count });
    }
    let n = level_count;
    let mut levels = Vec::with_capacity(n);
    for j in 0..n {
        let alpha = j as f64 / (n - 1) as f64;
        levels.push((
            alpha,
            Interval {
                lo: lower(alpha),
                hi: upper(alpha),
            },
        ));
    }
    AlphaLevelFuzzyNumber::from_levels(levels)
}
