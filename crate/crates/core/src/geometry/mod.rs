//! Flat-model exterior calculus and contact geometry.
//!
//! Forms are stored sparsely: a map from strictly increasing coordinate
//! tuples to coefficient fields, so antisymmetry is structural.  Three-forms
//! are the ceiling; nothing of higher degree appears in the deformation
//! complex.

mod model;

pub use model::{
    associated_metric, random_smooth_field, reeb_field, verify_associated, AssociatedMetric,
    AssociatedReport, ContactModel, MetricTensor, PhiTensor,
};

use crate::expr::{EvalError, HomogeneousField, ScalarField, Space, VarId};
use std::collections::BTreeMap;
use thiserror::Error;

/// Highest form degree the calculus stores.
pub const MAX_DEGREE: usize = 3;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("resulting degree {0} exceeds the supported ceiling {MAX_DEGREE}")]
    DegreeOverflow(usize),
    #[error("expected a {want}-form, got a {got}-form")]
    DegreeMismatch { want: usize, got: usize },
    #[error("interior product of a 0-form is not defined")]
    InteriorOfFunction,
    #[error("operands live on different spaces")]
    SpaceMismatch,
    #[error("not a supported contact form: {0}")]
    NonContact(String),
    #[error("metric is not positive definite at a sampled point")]
    NotPositiveDefinite,
    #[error("polar decomposition failed: d(theta) is degenerate on ker(theta)")]
    PolarDegenerate,
    #[error("flow left the domain: fiber norm collapsed to {0:.3e}")]
    FiberCollapse(f64),
}

/// A vector field with one component per coordinate of its space.
#[derive(Clone, Debug)]
pub struct VectorField {
    space: Space,
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(space: &Space, components: Vec<ScalarField>) -> VectorField {
        assert_eq!(components.len(), space.dim(), "one component per coordinate");
        assert!(components.iter().all(|c| c.space() == space));
        VectorField {
            space: space.clone(),
            components,
        }
    }

    pub fn zero(space: &Space) -> VectorField {
        VectorField::new(space, vec![ScalarField::zero(space); space.dim()])
    }

    /// The coordinate vector field `d/du_i`.
    pub fn coordinate(space: &Space, i: VarId) -> VectorField {
        let mut components = vec![ScalarField::zero(space); space.dim()];
        components[i] = ScalarField::one(space);
        VectorField::new(space, components)
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.components[i]
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.components.iter().map(|c| c.eval(point)).collect()
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField::new(&self.space, self.components.iter().map(|f| f.scale(c)).collect())
    }

    /// Directional derivative `X(f)`.
    pub fn apply_to(&self, f: &ScalarField) -> ScalarField {
        let mut acc = ScalarField::zero(&self.space);
        for (i, xi) in self.components.iter().enumerate() {
            acc = &acc + &(xi * &f.differentiate(i));
        }
        acc
    }

    /// Coordinate Lie bracket `[X,Y]^k = X^i d_i Y^k - Y^i d_i X^k`.
    pub fn lie_bracket(&self, other: &VectorField) -> VectorField {
        assert!(self.space == *other.space());
        let comps = (0..self.space.dim())
            .map(|k| &self.apply_to(&other.components[k]) - &other.apply_to(&self.components[k]))
            .collect();
        VectorField::new(&self.space, comps)
    }
}

/// A differential form of degree 0..=3 with expression-tree coefficients.
#[derive(Clone, Debug)]
pub struct DifferentialForm {
    space: Space,
    degree: usize,
    terms: BTreeMap<Vec<VarId>, ScalarField>,
}

impl DifferentialForm {
    pub fn zero(space: &Space, degree: usize) -> DifferentialForm {
        assert!(degree <= MAX_DEGREE);
        DifferentialForm {
            space: space.clone(),
            degree,
            terms: BTreeMap::new(),
        }
    }

    /// A 0-form.
    pub fn function(f: ScalarField) -> DifferentialForm {
        let space = f.space().clone();
        let mut form = DifferentialForm::zero(&space, 0);
        form.add_term(vec![], f);
        form
    }

    /// The 1-form `sum_i c_i du_i`.
    pub fn one_form(space: &Space, coeffs: Vec<ScalarField>) -> DifferentialForm {
        assert_eq!(coeffs.len(), space.dim());
        let mut form = DifferentialForm::zero(space, 1);
        for (i, c) in coeffs.into_iter().enumerate() {
            form.add_term(vec![i], c);
        }
        form
    }

    /// Single-term form `c * du_{i1} ^ ... ^ du_{ik}`; indices must be
    /// strictly increasing.
    pub fn monomial(space: &Space, indices: &[VarId], coeff: ScalarField) -> DifferentialForm {
        assert!(indices.windows(2).all(|w| w[0] < w[1]), "indices must increase");
        assert!(indices.len() <= MAX_DEGREE);
        let mut form = DifferentialForm::zero(space, indices.len());
        form.add_term(indices.to_vec(), coeff);
        form
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[VarId], &ScalarField)> {
        self.terms.iter().map(|(k, v)| (k.as_slice(), v))
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, indices: &[VarId]) -> Option<&ScalarField> {
        self.terms.get(indices)
    }

    fn add_term(&mut self, key: Vec<VarId>, coeff: ScalarField) {
        if coeff.is_const_zero() {
            return;
        }
        debug_assert_eq!(key.len(), self.degree);
        match self.terms.remove(&key) {
            Some(existing) => {
                let sum = &existing + &coeff;
                if !sum.is_const_zero() {
                    self.terms.insert(key, sum);
                }
            }
            None => {
                self.terms.insert(key, coeff);
            }
        }
    }

    pub fn add(&self, other: &DifferentialForm) -> DifferentialForm {
        assert_eq!(self.degree, other.degree, "cannot add forms of different degree");
        assert!(self.space == other.space);
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(k.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &DifferentialForm) -> DifferentialForm {
        self.add(&other.scale_const(-1.0))
    }

    pub fn scale_const(&self, c: f64) -> DifferentialForm {
        let mut out = DifferentialForm::zero(&self.space, self.degree);
        for (k, coeff) in &self.terms {
            out.add_term(k.clone(), coeff.scale(c));
        }
        out
    }

    /// Pointwise multiplication by a scalar field.
    pub fn scale(&self, f: &ScalarField) -> DifferentialForm {
        let mut out = DifferentialForm::zero(&self.space, self.degree);
        for (k, coeff) in &self.terms {
            out.add_term(k.clone(), f * coeff);
        }
        out
    }

    /// Evaluates the form at `point` on the given tangent vectors.
    pub fn apply(&self, point: &[f64], vectors: &[&[f64]]) -> Result<f64, GeomError> {
        assert_eq!(vectors.len(), self.degree, "one vector per form degree");
        let mut total = 0.0;
        for (key, coeff) in &self.terms {
            let c = coeff.eval(point)?;
            total += c * minor_det(vectors, key);
        }
        Ok(total)
    }

    /// Largest coefficient magnitude at a point; a cheap residual measure.
    pub fn max_coeff_at(&self, point: &[f64]) -> Result<f64, GeomError> {
        let mut best: f64 = 0.0;
        for coeff in self.terms.values() {
            best = best.max(coeff.eval(point)?.abs());
        }
        Ok(best)
    }
}

/// det of the k x k matrix `vectors[a][key[b]]`.
fn minor_det(vectors: &[&[f64]], key: &[VarId]) -> f64 {
    match key.len() {
        0 => 1.0,
        1 => vectors[0][key[0]],
        2 => vectors[0][key[0]] * vectors[1][key[1]] - vectors[0][key[1]] * vectors[1][key[0]],
        3 => {
            let m = |a: usize, b: usize| vectors[a][key[b]];
            m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
        }
        _ => unreachable!("degree ceiling is {MAX_DEGREE}"),
    }
}

/// Coordinate exterior derivative; errors when the result would exceed
/// degree 3.
pub fn exterior_derivative(form: &DifferentialForm) -> Result<DifferentialForm, GeomError> {
    if form.degree() + 1 > MAX_DEGREE {
        return Err(GeomError::DegreeOverflow(form.degree() + 1));
    }
    let space = form.space().clone();
    let mut out = DifferentialForm::zero(&space, form.degree() + 1);
    for (key, coeff) in &form.terms {
        for v in 0..space.dim() {
            if key.contains(&v) {
                continue;
            }
            let d = coeff.differentiate(v);
            if d.is_const_zero() {
                continue;
            }
            let before = key.iter().filter(|&&i| i < v).count();
            let sign = if before % 2 == 0 { 1.0 } else { -1.0 };
            let mut new_key = key.clone();
            new_key.insert(before, v);
            out.add_term(new_key, d.scale(sign));
        }
    }
    Ok(out)
}

/// Wedge product; errors when the result would exceed degree 3.
pub fn wedge(a: &DifferentialForm, b: &DifferentialForm) -> Result<DifferentialForm, GeomError> {
    let degree = a.degree() + b.degree();
    if degree > MAX_DEGREE {
        return Err(GeomError::DegreeOverflow(degree));
    }
    assert!(a.space == b.space);
    let mut out = DifferentialForm::zero(&a.space, degree);
    for (ka, ca) in &a.terms {
        'next: for (kb, cb) in &b.terms {
            // Merge index tuples, tracking the permutation sign.
            let mut inversions = 0;
            for &j in kb {
                if ka.contains(&j) {
                    continue 'next;
                }
                inversions += ka.iter().filter(|&&i| i > j).count();
            }
            let mut key: Vec<VarId> = ka.iter().chain(kb.iter()).copied().collect();
            key.sort_unstable();
            let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
            out.add_term(key, (ca * cb).scale(sign));
        }
    }
    Ok(out)
}

/// Interior product `i_X omega`; contraction in the first slot.
pub fn interior_product(x: &VectorField, form: &DifferentialForm) -> Result<DifferentialForm, GeomError> {
    if form.degree() == 0 {
        return Err(GeomError::InteriorOfFunction);
    }
    if *x.space() != form.space {
        return Err(GeomError::SpaceMismatch);
    }
    let mut out = DifferentialForm::zero(&form.space, form.degree() - 1);
    for (key, coeff) in &form.terms {
        for (slot, &i) in key.iter().enumerate() {
            let sign = if slot % 2 == 0 { 1.0 } else { -1.0 };
            let mut new_key = key.clone();
            new_key.remove(slot);
            out.add_term(new_key, (coeff * x.component(i)).scale(sign));
        }
    }
    Ok(out)
}

/// Lie derivative through the Cartan formula `L_X = i_X d + d i_X`
/// (`i_X d` alone on functions).
pub fn lie_derivative(x: &VectorField, form: &DifferentialForm) -> Result<DifferentialForm, GeomError> {
    if form.degree() > 2 {
        return Err(GeomError::DegreeOverflow(form.degree() + 1));
    }
    let d_form = exterior_derivative(form)?;
    let first = interior_product(x, &d_form)?;
    if form.degree() == 0 {
        return Ok(first);
    }
    let second = exterior_derivative(&interior_product(x, form)?)?;
    Ok(first.add(&second))
}

/// First deformation operator: `A(u, X) = (u theta + L_X theta,
/// d(u theta) + d(i_X d theta))`.
pub fn operator_a(
    u: &ScalarField,
    x: &VectorField,
    model: &ContactModel,
) -> Result<(DifferentialForm, DifferentialForm), GeomError> {
    let theta = model.theta();
    let u_theta = theta.scale(u);
    let first = u_theta.add(&lie_derivative(x, theta)?);
    let second = exterior_derivative(&u_theta)?
        .add(&exterior_derivative(&interior_product(x, model.d_theta())?)?);
    Ok((first, second))
}

/// Second deformation operator: `B(rho, sigma) = (d rho - sigma, d sigma)`.
/// `BA = 0` as operators.
pub fn operator_b(
    rho: &DifferentialForm,
    sigma: &DifferentialForm,
) -> Result<(DifferentialForm, DifferentialForm), GeomError> {
    if rho.degree() != 1 {
        return Err(GeomError::DegreeMismatch { want: 1, got: rho.degree() });
    }
    if sigma.degree() != 2 {
        return Err(GeomError::DegreeMismatch { want: 2, got: sigma.degree() });
    }
    Ok((exterior_derivative(rho)?.sub(sigma), exterior_derivative(sigma)?))
}

/// The canonical 1-form `theta = sum_i xi_i dx_i` on `T*R^n`.
pub fn canonical_one_form(space: &Space) -> DifferentialForm {
    let n = space.cotangent_n().expect("canonical form needs a cotangent model");
    let mut coeffs = vec![ScalarField::zero(space); space.dim()];
    for i in 0..n {
        coeffs[i] = ScalarField::var(space, n + i);
    }
    DifferentialForm::one_form(space, coeffs)
}

/// The symplectic form `omega = -d theta` on `T*R^n`.
pub fn symplectic_form(space: &Space) -> DifferentialForm {
    exterior_derivative(&canonical_one_form(space))
        .expect("theta is a 1-form")
        .scale_const(-1.0)
}

/// Hamiltonian vector field of a fiber-homogeneous `H` on `T*R^n`, with the
/// sign fixed so that `i_{X_H} omega = dH` and `theta(X_H) = H` for degree
/// one: `X_H = (dH/dxi, -dH/dx)`.
pub fn hamiltonian_vector_field(h: &HomogeneousField) -> VectorField {
    let space = h.space().clone();
    let n = space.cotangent_n().expect("Hamiltonian fields live on T*R^n");
    let mut comps = Vec::with_capacity(2 * n);
    for i in 0..n {
        comps.push(h.base().differentiate(n + i));
    }
    for i in 0..n {
        comps.push(-h.base().differentiate(i));
    }
    VectorField::new(&space, comps)
}

/// The bracket `[(X,u),(Y,v)] = ([X,Y], X(v) - Y(u))` on pairs of a vector
/// field and a conformal factor.
pub fn contact_bracket(
    x: &VectorField,
    u: &ScalarField,
    y: &VectorField,
    v: &ScalarField,
) -> (VectorField, ScalarField) {
    (x.lie_bracket(y), &x.apply_to(v) - &y.apply_to(u))
}

/// Classic fourth-order Runge-Kutta flow of a vector field.  Fails if the
/// fiber block of a cotangent model collapses toward the excluded origin.
pub fn rk4_flow(field: &VectorField, start: &[f64], t: f64, steps: usize) -> Result<Vec<f64>, GeomError> {
    assert!(steps > 0);
    let space = field.space().clone();
    let h = t / steps as f64;
    let mut p = start.to_vec();
    for _ in 0..steps {
        let k1 = field.eval(&p)?;
        let k2 = field.eval(&axpy(&p, 0.5 * h, &k1))?;
        let k3 = field.eval(&axpy(&p, 0.5 * h, &k2))?;
        let k4 = field.eval(&axpy(&p, h, &k3))?;
        for i in 0..p.len() {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(range) = space.xi_range() {
            let norm = p[range].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                return Err(GeomError::FiberCollapse(norm));
            }
        }
    }
    Ok(p)
}

fn axpy(p: &[f64], a: f64, v: &[f64]) -> Vec<f64> {
    p.iter().zip(v).map(|(x, y)| x + a * y).collect()
}
