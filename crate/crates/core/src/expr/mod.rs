//! Expression-tree scalar fields on the flat models.
//!
//! A [`ScalarField`] is an immutable expression tree over the coordinates of
//! a [`Space`], with exact symbolic differentiation.  The norm `|xi|` of the
//! fiber block is a first-class node so that its derivative `xi_i/|xi|`
//! stays exact instead of going through a sqrt chain.  Simplification is
//! best-effort (constant folding, 0/1 elimination); equality of fields is
//! always judged by sampled evaluation, never by tree identity.
//!
//! The fiber origin `xi = 0` is outside the domain of every field.

mod parse;

pub use parse::ParseError;

use num_rational::Rational64;
use rand::Rng;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Index of a coordinate inside a [`Space`].
pub type VarId = usize;

#[derive(Debug, PartialEq, Eq)]
struct SpaceInner {
    names: Vec<String>,
    /// Start of the fiber block; the block runs to the end of `names`.
    xi_start: Option<usize>,
}

/// A coordinate model: an ordered list of variable names, with an optional
/// trailing "fiber" block that carries the homogeneity structure.
#[derive(Clone, Debug)]
pub struct Space(Arc<SpaceInner>);

impl PartialEq for Space {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}
impl Eq for Space {}

impl Space {
    /// The punctured cotangent model `T*R^n \ 0` with coordinates
    /// `x1..xn, xi1..xin`.
    pub fn cotangent(n: usize) -> Space {
        assert!(n > 0, "cotangent model needs n >= 1");
        let mut names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        names.extend((1..=n).map(|i| format!("xi{i}")));
        Space(Arc::new(SpaceInner {
            names,
            xi_start: Some(n),
        }))
    }

    /// The flat contact model `R^{2n+1}` with coordinates
    /// `x1..xn, y1..yn, z`.
    pub fn contact(n: usize) -> Space {
        assert!(n > 0, "contact model needs n >= 1");
        let mut names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        names.extend((1..=n).map(|i| format!("y{i}")));
        names.push("z".to_string());
        Space(Arc::new(SpaceInner {
            names,
            xi_start: None,
        }))
    }

    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        self.0.names.len()
    }

    /// Base dimension `n` of a cotangent model, if this is one.
    pub fn cotangent_n(&self) -> Option<usize> {
        match self.0.xi_start {
            Some(s) if self.dim() == 2 * s => Some(s),
            _ => None,
        }
    }

    /// Range of the fiber block, when present.
    pub fn xi_range(&self) -> Option<std::ops::Range<usize>> {
        self.0.xi_start.map(|s| s..self.dim())
    }

    pub fn var_name(&self, id: VarId) -> &str {
        &self.0.names[id]
    }

    pub fn var_index(&self, name: &str) -> Option<VarId> {
        self.0.names.iter().position(|n| n == name)
    }

    /// Draws a random point; fiber coordinates are kept away from the
    /// excluded origin (radius in `[0.5, 2]`).
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p: Vec<f64> = (0..self.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if let Some(range) = self.xi_range() {
            let dir: Vec<f64> = range.clone().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            let radius = rng.gen_range(0.5..2.0);
            for (k, i) in range.enumerate() {
                p[i] = dir[k] / norm * radius;
            }
        }
        p
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of negative value {0}")]
    SqrtNegative(f64),
    #[error("fractional power of negative base {0}")]
    FractionalPowerNegative(f64),
    #[error("point has {got} coordinates, space has {want}")]
    DimensionMismatch { got: usize, want: usize },
}

#[derive(Debug)]
pub(crate) enum Expr {
    Const(f64),
    Var(VarId),
    /// Euclidean norm of the fiber block.
    NormXi,
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, Rational64),
    Neg(Arc<Expr>),
    Exp(Arc<Expr>),
    Sin(Arc<Expr>),
    Cos(Arc<Expr>),
    Sqrt(Arc<Expr>),
}

fn as_const(e: &Arc<Expr>) -> Option<f64> {
    match **e {
        Expr::Const(c) => Some(c),
        _ => None,
    }
}

fn is_zero(e: &Arc<Expr>) -> bool {
    matches!(**e, Expr::Const(c) if c == 0.0)
}

fn is_one(e: &Arc<Expr>) -> bool {
    matches!(**e, Expr::Const(c) if c == 1.0)
}

// Smart constructors: constant folding and 0/1 elimination only.
pub(crate) fn e_const(c: f64) -> Arc<Expr> {
    Arc::new(Expr::Const(c))
}

pub(crate) fn e_add(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
    if is_zero(&a) {
        return b;
    }
    if is_zero(&b) {
        return a;
    }
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        return e_const(x + y);
    }
    Arc::new(Expr::Add(a, b))
}

pub(crate) fn e_sub(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
    if is_zero(&b) {
        return a;
    }
    if is_zero(&a) {
        return e_neg(b);
    }
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        return e_const(x - y);
    }
    Arc::new(Expr::Sub(a, b))
}

pub(crate) fn e_mul(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
    if is_zero(&a) || is_zero(&b) {
        return e_const(0.0);
    }
    if is_one(&a) {
        return b;
    }
    if is_one(&b) {
        return a;
    }
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        return e_const(x * y);
    }
    Arc::new(Expr::Mul(a, b))
}

pub(crate) fn e_div(a: Arc<Expr>, b: Arc<Expr>) -> Arc<Expr> {
    if is_one(&b) {
        return a;
    }
    if is_zero(&a) && !is_zero(&b) {
        return e_const(0.0);
    }
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        if y != 0.0 {
            return e_const(x / y);
        }
    }
    Arc::new(Expr::Div(a, b))
}

pub(crate) fn e_neg(a: Arc<Expr>) -> Arc<Expr> {
    if let Some(x) = as_const(&a) {
        return e_const(-x);
    }
    if let Expr::Neg(inner) = &*a {
        return inner.clone();
    }
    Arc::new(Expr::Neg(a))
}

pub(crate) fn e_pow(a: Arc<Expr>, r: Rational64) -> Arc<Expr> {
    if r == Rational64::from_integer(0) {
        return e_const(1.0);
    }
    if r == Rational64::from_integer(1) {
        return a;
    }
    if let Some(x) = as_const(&a) {
        if let Ok(v) = pow_value(x, r) {
            return e_const(v);
        }
    }
    Arc::new(Expr::Pow(a, r))
}

pub(crate) fn e_exp(a: Arc<Expr>) -> Arc<Expr> {
    if let Some(x) = as_const(&a) {
        return e_const(x.exp());
    }
    Arc::new(Expr::Exp(a))
}

pub(crate) fn e_sin(a: Arc<Expr>) -> Arc<Expr> {
    if let Some(x) = as_const(&a) {
        return e_const(x.sin());
    }
    Arc::new(Expr::Sin(a))
}

pub(crate) fn e_cos(a: Arc<Expr>) -> Arc<Expr> {
    if let Some(x) = as_const(&a) {
        return e_const(x.cos());
    }
    Arc::new(Expr::Cos(a))
}

pub(crate) fn e_sqrt(a: Arc<Expr>) -> Arc<Expr> {
    if let Some(x) = as_const(&a) {
        if x >= 0.0 {
            return e_const(x.sqrt());
        }
    }
    Arc::new(Expr::Sqrt(a))
}

fn pow_value(base: f64, r: Rational64) -> Result<f64, EvalError> {
    if r.is_integer() {
        let k = *r.numer();
        if base == 0.0 && k < 0 {
            return Err(EvalError::DivisionByZero);
        }
        if k.unsigned_abs() <= i32::MAX as u64 {
            return Ok(base.powi(k as i32));
        }
        return Ok(base.powf(k as f64));
    }
    if base < 0.0 {
        return Err(EvalError::FractionalPowerNegative(base));
    }
    let e = *r.numer() as f64 / *r.denom() as f64;
    if base == 0.0 && e < 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    Ok(base.powf(e))
}

/// Per-point evaluation cache keyed by node identity; valid for a single
/// evaluation point only.
pub(crate) type EvalCache = HashMap<*const Expr, f64>;

impl Expr {
    fn eval(&self, point: &[f64], xi_range: &Option<std::ops::Range<usize>>) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => point[*i],
            Expr::NormXi => {
                let range = xi_range.clone().expect("norm_xi outside a fibered space");
                point[range].iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            Expr::Add(a, b) => a.eval(point, xi_range)? + b.eval(point, xi_range)?,
            Expr::Sub(a, b) => a.eval(point, xi_range)? - b.eval(point, xi_range)?,
            Expr::Mul(a, b) => a.eval(point, xi_range)? * b.eval(point, xi_range)?,
            Expr::Div(a, b) => {
                let den = b.eval(point, xi_range)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval(point, xi_range)? / den
            }
            Expr::Pow(a, r) => pow_value(a.eval(point, xi_range)?, *r)?,
            Expr::Neg(a) => -a.eval(point, xi_range)?,
            Expr::Exp(a) => a.eval(point, xi_range)?.exp(),
            Expr::Sin(a) => a.eval(point, xi_range)?.sin(),
            Expr::Cos(a) => a.eval(point, xi_range)?.cos(),
            Expr::Sqrt(a) => {
                let v = a.eval(point, xi_range)?;
                if v < 0.0 {
                    return Err(EvalError::SqrtNegative(v));
                }
                v.sqrt()
            }
        })
    }

    fn eval_cached(
        self: &Arc<Expr>,
        point: &[f64],
        xi_range: &Option<std::ops::Range<usize>>,
        cache: &mut EvalCache,
    ) -> Result<f64, EvalError> {
        let key = Arc::as_ptr(self);
        if let Some(v) = cache.get(&key) {
            return Ok(*v);
        }
        let v = match &**self {
            Expr::Add(a, b) => a.eval_cached(point, xi_range, cache)? + b.eval_cached(point, xi_range, cache)?,
            Expr::Sub(a, b) => a.eval_cached(point, xi_range, cache)? - b.eval_cached(point, xi_range, cache)?,
            Expr::Mul(a, b) => a.eval_cached(point, xi_range, cache)? * b.eval_cached(point, xi_range, cache)?,
            Expr::Div(a, b) => {
                let den = b.eval_cached(point, xi_range, cache)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval_cached(point, xi_range, cache)? / den
            }
            Expr::Pow(a, r) => pow_value(a.eval_cached(point, xi_range, cache)?, *r)?,
            Expr::Neg(a) => -a.eval_cached(point, xi_range, cache)?,
            Expr::Exp(a) => a.eval_cached(point, xi_range, cache)?.exp(),
            Expr::Sin(a) => a.eval_cached(point, xi_range, cache)?.sin(),
            Expr::Cos(a) => a.eval_cached(point, xi_range, cache)?.cos(),
            Expr::Sqrt(a) => {
                let v = a.eval_cached(point, xi_range, cache)?;
                if v < 0.0 {
                    return Err(EvalError::SqrtNegative(v));
                }
                v.sqrt()
            }
            leaf => leaf.eval(point, xi_range)?,
        };
        cache.insert(key, v);
        Ok(v)
    }

    fn derivative(self: &Arc<Expr>, var: VarId, xi_range: &Option<std::ops::Range<usize>>) -> Arc<Expr> {
        match &**self {
            Expr::Const(_) => e_const(0.0),
            Expr::Var(i) => e_const(if *i == var { 1.0 } else { 0.0 }),
            Expr::NormXi => {
                let in_fiber = xi_range.as_ref().is_some_and(|r| r.contains(&var));
                if in_fiber {
                    e_div(Arc::new(Expr::Var(var)), Arc::new(Expr::NormXi))
                } else {
                    e_const(0.0)
                }
            }
            Expr::Add(a, b) => e_add(a.derivative(var, xi_range), b.derivative(var, xi_range)),
            Expr::Sub(a, b) => e_sub(a.derivative(var, xi_range), b.derivative(var, xi_range)),
            Expr::Mul(a, b) => e_add(
                e_mul(a.derivative(var, xi_range), b.clone()),
                e_mul(a.clone(), b.derivative(var, xi_range)),
            ),
            Expr::Div(a, b) => {
                let num = e_sub(
                    e_mul(a.derivative(var, xi_range), b.clone()),
                    e_mul(a.clone(), b.derivative(var, xi_range)),
                );
                e_div(num, e_pow(b.clone(), Rational64::from_integer(2)))
            }
            Expr::Pow(a, r) => {
                let da = a.derivative(var, xi_range);
                let coeff = e_const(*r.numer() as f64 / *r.denom() as f64);
                e_mul(e_mul(coeff, e_pow(a.clone(), r - Rational64::from_integer(1))), da)
            }
            Expr::Neg(a) => e_neg(a.derivative(var, xi_range)),
            Expr::Exp(a) => e_mul(a.derivative(var, xi_range), self.clone()),
            Expr::Sin(a) => e_mul(a.derivative(var, xi_range), e_cos(a.clone())),
            Expr::Cos(a) => e_neg(e_mul(a.derivative(var, xi_range), e_sin(a.clone()))),
            Expr::Sqrt(a) => e_div(
                a.derivative(var, xi_range),
                e_mul(e_const(2.0), e_sqrt(a.clone())),
            ),
        }
    }

    fn substitute(self: &Arc<Expr>, vars: &[Arc<Expr>], norm_xi: &Arc<Expr>) -> Arc<Expr> {
        match &**self {
            Expr::Const(_) => self.clone(),
            Expr::Var(i) => vars[*i].clone(),
            Expr::NormXi => norm_xi.clone(),
            Expr::Add(a, b) => e_add(a.substitute(vars, norm_xi), b.substitute(vars, norm_xi)),
            Expr::Sub(a, b) => e_sub(a.substitute(vars, norm_xi), b.substitute(vars, norm_xi)),
            Expr::Mul(a, b) => e_mul(a.substitute(vars, norm_xi), b.substitute(vars, norm_xi)),
            Expr::Div(a, b) => e_div(a.substitute(vars, norm_xi), b.substitute(vars, norm_xi)),
            Expr::Pow(a, r) => e_pow(a.substitute(vars, norm_xi), *r),
            Expr::Neg(a) => e_neg(a.substitute(vars, norm_xi)),
            Expr::Exp(a) => e_exp(a.substitute(vars, norm_xi)),
            Expr::Sin(a) => e_sin(a.substitute(vars, norm_xi)),
            Expr::Cos(a) => e_cos(a.substitute(vars, norm_xi)),
            Expr::Sqrt(a) => e_sqrt(a.substitute(vars, norm_xi)),
        }
    }
}

/// An immutable scalar field on a [`Space`], represented as an expression
/// tree.  All operations are pure; values are safe to share across threads.
#[derive(Clone)]
pub struct ScalarField {
    pub(crate) expr: Arc<Expr>,
    space: Space,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({self})")
    }
}

impl ScalarField {
    pub(crate) fn from_expr(expr: Arc<Expr>, space: Space) -> ScalarField {
        ScalarField { expr, space }
    }

    /// Parses an infix expression over the coordinates of `space`.
    pub fn parse_in(text: &str, space: &Space) -> Result<ScalarField, ParseError> {
        parse::parse(text, space)
    }

    /// Parses an expression over `x1..xn, xi1..xin, norm_xi` on the
    /// punctured cotangent model of base dimension `dim`.
    pub fn parse(text: &str, dim: usize) -> Result<ScalarField, ParseError> {
        parse::parse(text, &Space::cotangent(dim))
    }

    pub fn constant(space: &Space, value: f64) -> ScalarField {
        ScalarField::from_expr(e_const(value), space.clone())
    }

    pub fn zero(space: &Space) -> ScalarField {
        ScalarField::constant(space, 0.0)
    }

    pub fn one(space: &Space) -> ScalarField {
        ScalarField::constant(space, 1.0)
    }

    pub fn var(space: &Space, id: VarId) -> ScalarField {
        assert!(id < space.dim(), "variable index out of range");
        ScalarField::from_expr(Arc::new(Expr::Var(id)), space.clone())
    }

    /// The fiber norm `|xi|`; only meaningful on fibered spaces.
    pub fn norm_xi(space: &Space) -> ScalarField {
        assert!(space.xi_range().is_some(), "space has no fiber block");
        ScalarField::from_expr(Arc::new(Expr::NormXi), space.clone())
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        if point.len() != self.space.dim() {
            return Err(EvalError::DimensionMismatch {
                got: point.len(),
                want: self.space.dim(),
            });
        }
        self.expr.eval(point, &self.space.xi_range())
    }

    /// Evaluation sharing a per-point cache across fields of the same space.
    pub(crate) fn eval_cached(&self, point: &[f64], cache: &mut EvalCache) -> Result<f64, EvalError> {
        self.expr.eval_cached(point, &self.space.xi_range(), cache)
    }

    /// Exact symbolic partial derivative with respect to coordinate `var`.
    pub fn differentiate(&self, var: VarId) -> ScalarField {
        assert!(var < self.space.dim(), "variable index out of range");
        ScalarField::from_expr(self.expr.derivative(var, &self.space.xi_range()), self.space.clone())
    }

    /// Structural test for the literal zero tree (used for term pruning;
    /// semantic zero detection is always done by sampling).
    pub fn is_const_zero(&self) -> bool {
        is_zero(&self.expr)
    }

    pub fn as_const(&self) -> Option<f64> {
        as_const(&self.expr)
    }

    /// Replaces each coordinate by the corresponding field.  All entries of
    /// `subs` must share one space, which becomes the space of the result.
    pub fn substitute(&self, subs: &[ScalarField]) -> ScalarField {
        assert_eq!(subs.len(), self.space.dim(), "one substitute per coordinate");
        let target = subs[0].space().clone();
        assert!(subs.iter().all(|s| *s.space() == target));
        let vars: Vec<Arc<Expr>> = subs.iter().map(|s| s.expr.clone()).collect();
        // |xi| turns into the norm of the substituted fiber block.
        let norm = match self.space.xi_range() {
            Some(range) => {
                let mut sum = e_const(0.0);
                for i in range {
                    sum = e_add(sum, e_pow(vars[i].clone(), Rational64::from_integer(2)));
                }
                e_sqrt(sum)
            }
            None => e_const(f64::NAN),
        };
        ScalarField::from_expr(self.expr.substitute(&vars, &norm), target)
    }

    /// Restriction to the cosphere `|xi| = 1`, represented as the degree-zero
    /// extension `f(x, xi/|xi|)` on the full space.
    pub fn restrict_to_sphere(&self) -> ScalarField {
        let range = self.space.xi_range().expect("restriction needs a fiber block");
        let norm = Arc::new(Expr::NormXi);
        let vars: Vec<Arc<Expr>> = (0..self.space.dim())
            .map(|i| {
                if range.contains(&i) {
                    e_div(Arc::new(Expr::Var(i)), norm.clone())
                } else {
                    Arc::new(Expr::Var(i))
                }
            })
            .collect();
        ScalarField::from_expr(self.expr.substitute(&vars, &e_const(1.0)), self.space.clone())
    }

    /// `|F(x,l*xi) - l^m F(x,xi)| <= 1e-9 (1+|F|)` over `samples` random
    /// points and `l` in `{0.5, 2, 10}`.
    pub fn check_homogeneity<R: Rng + ?Sized>(&self, degree: i64, samples: usize, rng: &mut R) -> bool {
        assert!(samples >= 1);
        let range = match self.space.xi_range() {
            Some(r) => r,
            None => return false,
        };
        for _ in 0..samples {
            let p = self.space.sample_point(rng);
            let base = match self.eval(&p) {
                Ok(v) => v,
                Err(_) => continue,
            };
            for lambda in [0.5, 2.0, 10.0] {
                let mut q = p.clone();
                for i in range.clone() {
                    q[i] *= lambda;
                }
                let scaled = match self.eval(&q) {
                    Ok(v) => v,
                    Err(_) => return false,
                };
                let expected = lambda.powi(degree as i32) * base;
                let tol = 1e-9 * (1.0 + scaled.abs().max(expected.abs()));
                if (scaled - expected).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

macro_rules! field_binop {
    ($trait:ident, $method:ident, $ctor:ident) => {
        impl std::ops::$trait for &ScalarField {
            type Output = ScalarField;
            fn $method(self, rhs: &ScalarField) -> ScalarField {
                assert!(self.space == *rhs.space(), "fields live on different spaces");
                ScalarField::from_expr($ctor(self.expr.clone(), rhs.expr.clone()), self.space.clone())
            }
        }
        impl std::ops::$trait for ScalarField {
            type Output = ScalarField;
            fn $method(self, rhs: ScalarField) -> ScalarField {
                (&self).$method(&rhs)
            }
        }
    };
}

field_binop!(Add, add, e_add);
field_binop!(Sub, sub, e_sub);
field_binop!(Mul, mul, e_mul);
field_binop!(Div, div, e_div);

impl std::ops::Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        ScalarField::from_expr(e_neg(self.expr.clone()), self.space.clone())
    }
}
impl std::ops::Neg for ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        -&self
    }
}

impl ScalarField {
    pub fn scale(&self, c: f64) -> ScalarField {
        ScalarField::from_expr(e_mul(e_const(c), self.expr.clone()), self.space.clone())
    }

    pub fn powr(&self, r: Rational64) -> ScalarField {
        ScalarField::from_expr(e_pow(self.expr.clone(), r), self.space.clone())
    }

    pub fn powi(&self, k: i64) -> ScalarField {
        self.powr(Rational64::from_integer(k))
    }

    pub fn exp(&self) -> ScalarField {
        ScalarField::from_expr(e_exp(self.expr.clone()), self.space.clone())
    }

    pub fn sin(&self) -> ScalarField {
        ScalarField::from_expr(e_sin(self.expr.clone()), self.space.clone())
    }

    pub fn cos(&self) -> ScalarField {
        ScalarField::from_expr(e_cos(self.expr.clone()), self.space.clone())
    }

    pub fn sqrt(&self) -> ScalarField {
        ScalarField::from_expr(e_sqrt(self.expr.clone()), self.space.clone())
    }
}

/// A scalar field positively homogeneous of a declared integer degree in the
/// fiber variables.
#[derive(Clone, Debug)]
pub struct HomogeneousField {
    base: ScalarField,
    degree: i64,
}

#[derive(Debug, Error)]
#[error("field is not homogeneous of degree {degree} (sampled check failed)")]
pub struct HomogeneityError {
    pub degree: i64,
}

impl HomogeneousField {
    /// Wraps `base` after verifying the declared degree by random sampling.
    pub fn new<R: Rng + ?Sized>(
        base: ScalarField,
        degree: i64,
        samples: usize,
        rng: &mut R,
    ) -> Result<HomogeneousField, HomogeneityError> {
        if !base.check_homogeneity(degree, samples, rng) {
            return Err(HomogeneityError { degree });
        }
        Ok(HomogeneousField { base, degree })
    }

    /// Wraps without the sampled check; for fields homogeneous by
    /// construction.
    pub fn new_unchecked(base: ScalarField, degree: i64) -> HomogeneousField {
        HomogeneousField { base, degree }
    }

    pub fn base(&self) -> &ScalarField {
        &self.base
    }

    pub fn degree(&self) -> i64 {
        self.degree
    }

    pub fn space(&self) -> &Space {
        self.base.space()
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        self.base.eval(point)
    }

    /// Restriction to `|xi| = 1` as a degree-zero representative.
    pub fn restrict_to_sphere(&self) -> ScalarField {
        self.base.restrict_to_sphere()
    }

    /// Homogeneous extension of a sphere function: `|xi|^m h(x, xi/|xi|)`.
    pub fn extend_homogeneous(h: &ScalarField, degree: i64) -> HomogeneousField {
        let restricted = h.restrict_to_sphere();
        let norm_pow = ScalarField::norm_xi(h.space()).powi(degree);
        HomogeneousField::new_unchecked(&norm_pow * &restricted, degree)
    }
}

impl fmt::Display for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, &self.expr, &self.space, 0)
    }
}

/// Precedence levels: 1 additive, 2 multiplicative, 3 prefix minus, 4 power.
fn write_expr(f: &mut fmt::Formatter<'_>, e: &Arc<Expr>, space: &Space, min_prec: u8) -> fmt::Result {
    let prec = match **e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(..) => 3,
        Expr::Pow(..) => 4,
        Expr::Const(c) if c < 0.0 => 3,
        _ => 5,
    };
    let parens = prec < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match &**e {
        Expr::Const(c) => write!(f, "{c}")?,
        Expr::Var(i) => write!(f, "{}", space.var_name(*i))?,
        Expr::NormXi => write!(f, "norm_xi")?,
        Expr::Add(a, b) => {
            write_expr(f, a, space, 1)?;
            write!(f, " + ")?;
            write_expr(f, b, space, 2)?;
        }
        Expr::Sub(a, b) => {
            write_expr(f, a, space, 1)?;
            write!(f, " - ")?;
            write_expr(f, b, space, 2)?;
        }
        Expr::Mul(a, b) => {
            write_expr(f, a, space, 2)?;
            write!(f, "*")?;
            write_expr(f, b, space, 3)?;
        }
        Expr::Div(a, b) => {
            write_expr(f, a, space, 2)?;
            write!(f, "/")?;
            write_expr(f, b, space, 3)?;
        }
        Expr::Pow(a, r) => {
            write_expr(f, a, space, 5)?;
            if r.is_integer() && *r.numer() >= 0 {
                write!(f, "^{}", r.numer())?;
            } else if r.is_integer() {
                write!(f, "^({})", r.numer())?;
            } else {
                write!(f, "^({}/{})", r.numer(), r.denom())?;
            }
        }
        Expr::Neg(a) => {
            write!(f, "-")?;
            write_expr(f, a, space, 3)?;
        }
        Expr::Exp(a) => {
            write!(f, "exp(")?;
            write_expr(f, a, space, 0)?;
            write!(f, ")")?;
        }
        Expr::Sin(a) => {
            write!(f, "sin(")?;
            write_expr(f, a, space, 0)?;
            write!(f, ")")?;
        }
        Expr::Cos(a) => {
            write!(f, "cos(")?;
            write_expr(f, a, space, 0)?;
            write!(f, ")")?;
        }
        Expr::Sqrt(a) => {
            write!(f, "sqrt(")?;
            write_expr(f, a, space, 0)?;
            write!(f, ")")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}
