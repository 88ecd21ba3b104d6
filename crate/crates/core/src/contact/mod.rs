//! Degree-one homogeneous contact transformations of `T*R^n \ 0`.
//!
//! A [`ContactDiffeo`] stores both directions of the map, each either in
//! closed form, as a Hamiltonian flow descriptor, or as the solution of the
//! stationarity system of a generating phase.  The chart correspondence is
//!
//! * `diffeo_to_phase`: `H_f(x, a) = -<a, pos(f^{-1}(x, a)) - x>`,
//! * `phase_to_diffeo`: with the flat generating phase
//!   `phi_H(a_x, y) = <a, x - y> + H(x, a)`, the graph relations are
//!   `eta = a`, `y = x + dH/da`, `xi = a + dH/dx`.
//!
//! The sign of `phi_0` is fixed so that both round trips are the identity
//! on the closed-form anchors (translations and the cogeodesic flow); the
//! chart's smallness constants are replaced by an operational contraction
//! guard on the fixed-point solves.

use crate::expr::{EvalError, HomogeneousField, ScalarField, Space};
use crate::geometry::{hamiltonian_vector_field, GeomError, VectorField};
use nalgebra::DMatrix;
use rand::Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContactError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("hamiltonian must be homogeneous of degree one, got degree {0}")]
    WrongDegree(i64),
    #[error("fixed-point solve did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("fixed-point iteration is not contracting (measured ratio {0:.3})")]
    NotContracting(f64),
    #[error("flow step failed: fiber norm collapsed to {0:.3e}")]
    StepFailure(f64),
    #[error("displacement {got:.3e} exceeds the smallness threshold {threshold:.3e}")]
    DisplacementTooLarge { got: f64, threshold: f64 },
    #[error("smallness guard: sphere sup of |H| and |dH| is {got:.3e}, threshold {threshold:.3e}")]
    SmallnessViolated { got: f64, threshold: f64 },
}

/// Numerical guards for the chart solves.  The chart neighborhood is
/// delimited operationally: solves must contract, or they fail loudly.
#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    pub contact_tol: f64,
    pub fixed_point_tol: f64,
    pub max_iterations: usize,
    pub smallness_threshold: f64,
    pub rk4_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            contact_tol: 1e-6,
            fixed_point_tol: 1e-10,
            max_iterations: 100,
            smallness_threshold: 2.0,
            rk4_steps: 1000,
        }
    }
}

impl SolverConfig {
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.rk4_steps = steps;
        self
    }
}

/// How a diffeomorphism was constructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Identity,
    ClosedForm,
    Flow,
    PhaseSolved,
    Composed,
}

#[derive(Clone, Debug)]
enum PhaseDir {
    /// Solve the fiber fixed point `a = xi - dH/dx(x, a)`; maps `(x, xi)`
    /// to `(y, eta)`.
    Forward,
    /// Solve the base fixed point `x = y - dH/da(x, eta)`; maps `(y, eta)`
    /// to `(x, xi)`.
    Inverse,
}

/// One direction of a homogeneous map of `T*R^n \ 0`.
#[derive(Clone, Debug)]
pub enum DiffeoMap {
    Identity {
        n: usize,
    },
    /// 2n closed-form components on the cotangent space, with their exact
    /// Jacobian trees.
    ClosedForm {
        components: Vec<ScalarField>,
        jacobian: Arc<Vec<Vec<ScalarField>>>,
    },
    /// Time-`t` Hamiltonian flow, integrated by RK4 together with its
    /// variational equation.
    Flow {
        field: VectorField,
        field_jacobian: Arc<Vec<Vec<ScalarField>>>,
        time: f64,
        steps: usize,
    },
    /// Stationarity solve of the generating phase of `hamiltonian`.
    PhaseSolved {
        hamiltonian: Arc<Hamiltonian>,
        dir: PhaseDir,
        cfg: SolverConfig,
    },
    /// `outer` after `inner`.
    Composed {
        inner: Arc<DiffeoMap>,
        outer: Arc<DiffeoMap>,
    },
}

impl DiffeoMap {
    fn closed_form(space: &Space, components: Vec<ScalarField>) -> DiffeoMap {
        assert_eq!(components.len(), space.dim());
        let jac = components
            .iter()
            .map(|c| (0..space.dim()).map(|v| c.differentiate(v)).collect())
            .collect();
        DiffeoMap::ClosedForm {
            components,
            jacobian: Arc::new(jac),
        }
    }

    fn from_flow(field: VectorField, time: f64, steps: usize) -> DiffeoMap {
        let d = field.space().dim();
        let jac = (0..d)
            .map(|i| (0..d).map(|v| field.component(i).differentiate(v)).collect())
            .collect();
        DiffeoMap::Flow {
            field,
            field_jacobian: Arc::new(jac),
            time,
            steps,
        }
    }

    fn dim(&self) -> usize {
        match self {
            DiffeoMap::Identity { n } => 2 * n,
            DiffeoMap::ClosedForm { components, .. } => components.len(),
            DiffeoMap::Flow { field, .. } => field.space().dim(),
            DiffeoMap::PhaseSolved { hamiltonian, .. } => 2 * hamiltonian.base_dim(),
            DiffeoMap::Composed { inner, .. } => inner.dim(),
        }
    }

    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>, ContactError> {
        match self {
            DiffeoMap::Identity { .. } => Ok(p.to_vec()),
            DiffeoMap::ClosedForm { components, .. } => Ok(components
                .iter()
                .map(|c| c.eval(p))
                .collect::<Result<_, _>>()?),
            DiffeoMap::Flow {
                field, time, steps, ..
            } => crate::geometry::rk4_flow(field, p, *time, *steps).map_err(|e| match e {
                GeomError::FiberCollapse(v) => ContactError::StepFailure(v),
                other => ContactError::Geom(other),
            }),
            DiffeoMap::PhaseSolved {
                hamiltonian,
                dir,
                cfg,
            } => phase_solve(hamiltonian, dir, cfg, p),
            DiffeoMap::Composed { inner, outer } => outer.apply(&inner.apply(p)?),
        }
    }

    pub fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>, ContactError> {
        let d = self.dim();
        match self {
            DiffeoMap::Identity { .. } => Ok(DMatrix::identity(d, d)),
            DiffeoMap::ClosedForm { jacobian, .. } => {
                let mut m = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in 0..d {
                        m[(i, j)] = jacobian[i][j].eval(p)?;
                    }
                }
                Ok(m)
            }
            DiffeoMap::Flow {
                field,
                field_jacobian,
                time,
                steps,
            } => variational_rk4(field, field_jacobian, p, *time, *steps).map(|(_, j)| j),
            DiffeoMap::PhaseSolved { .. } => {
                // Central differences over the solved map; the solves
                // themselves run to fixed_point_tol.
                let h = 1e-6;
                let mut m = DMatrix::zeros(d, d);
                for j in 0..d {
                    let mut pp = p.to_vec();
                    let mut pm = p.to_vec();
                    pp[j] += h;
                    pm[j] -= h;
                    let fp = self.apply(&pp)?;
                    let fm = self.apply(&pm)?;
                    for i in 0..d {
                        m[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
                Ok(m)
            }
            DiffeoMap::Composed { inner, outer } => {
                let mid = inner.apply(p)?;
                Ok(outer.jacobian(&mid)? * inner.jacobian(p)?)
            }
        }
    }
}

/// RK4 on the state together with its variational equation
/// `J' = DX(p(t)) J`.
fn variational_rk4(
    field: &VectorField,
    field_jacobian: &[Vec<ScalarField>],
    start: &[f64],
    t: f64,
    steps: usize,
) -> Result<(Vec<f64>, DMatrix<f64>), ContactError> {
    let d = start.len();
    let h = t / steps as f64;
    let mut p = start.to_vec();
    let mut jac = DMatrix::identity(d, d);
    let eval_dx = |q: &[f64]| -> Result<DMatrix<f64>, ContactError> {
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = field_jacobian[i][j].eval(q)?;
            }
        }
        Ok(m)
    };
    let axpy = |p: &[f64], a: f64, v: &[f64]| -> Vec<f64> {
        p.iter().zip(v).map(|(x, y)| x + a * y).collect()
    };
    for _ in 0..steps {
        let k1 = field.eval(&p)?;
        let m1 = eval_dx(&p)? * &jac;
        let p2 = axpy(&p, 0.5 * h, &k1);
        let k2 = field.eval(&p2)?;
        let m2 = eval_dx(&p2)? * (&jac + &m1 * (0.5 * h));
        let p3 = axpy(&p, 0.5 * h, &k2);
        let k3 = field.eval(&p3)?;
        let m3 = eval_dx(&p3)? * (&jac + &m2 * (0.5 * h));
        let p4 = axpy(&p, h, &k3);
        let k4 = field.eval(&p4)?;
        let m4 = eval_dx(&p4)? * (&jac + &m3 * h);
        for i in 0..d {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        jac += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);
        let norm = p[d / 2..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(ContactError::StepFailure(norm));
        }
    }
    Ok((p, jac))
}

/// A degree-one homogeneous Hamiltonian on `T*R^n \ 0`, backed either by an
/// expression tree or by the chart formula over a stored inverse map.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    n: usize,
    kind: HamKind,
}

#[derive(Clone, Debug)]
enum HamKind {
    Symbolic {
        base: ScalarField,
        grad: Vec<ScalarField>,
    },
    /// Chart coordinate of a stored map: `H(x, a) = <a, pos(f(x, s)) - x>`
    /// where `s` solves `fiber(f(x, s)) = a`.  For a contact `f` this is
    /// the exact inverse of the stationarity relations, and the gradient
    /// identities `dH/dx = s - a`, `dH/da = pos(f(x, s)) - x` hold.
    OfDiffeo {
        forward: Arc<DiffeoMap>,
        cfg: SolverConfig,
    },
}

impl Hamiltonian {
    pub fn symbolic(field: HomogeneousField) -> Result<Hamiltonian, ContactError> {
        if field.degree() != 1 {
            return Err(ContactError::WrongDegree(field.degree()));
        }
        let n = field
            .space()
            .cotangent_n()
            .expect("Hamiltonians live on T*R^n");
        let grad = (0..2 * n).map(|v| field.base().differentiate(v)).collect();
        Ok(Hamiltonian {
            n,
            kind: HamKind::Symbolic {
                base: field.base().clone(),
                grad,
            },
        })
    }

    pub fn zero(n: usize) -> Hamiltonian {
        let space = Space::cotangent(n);
        Hamiltonian::symbolic(HomogeneousField::new_unchecked(ScalarField::zero(&space), 1))
            .expect("degree 1")
    }

    /// `H = <c, xi>`, the translation generator.
    pub fn translation(c: &[f64]) -> Hamiltonian {
        let n = c.len();
        let space = Space::cotangent(n);
        let mut base = ScalarField::zero(&space);
        for (i, ci) in c.iter().enumerate() {
            base = &base + &ScalarField::var(&space, n + i).scale(*ci);
        }
        Hamiltonian::symbolic(HomogeneousField::new_unchecked(base, 1)).expect("degree 1")
    }

    /// `H = |xi|`, the cogeodesic generator.
    pub fn cogeodesic(n: usize) -> Hamiltonian {
        let space = Space::cotangent(n);
        Hamiltonian::symbolic(HomogeneousField::new_unchecked(
            ScalarField::norm_xi(&space),
            1,
        ))
        .expect("degree 1")
    }

    pub fn base_dim(&self) -> usize {
        self.n
    }

    /// The symbolic base field, when this Hamiltonian has one.
    pub fn symbolic_base(&self) -> Option<&ScalarField> {
        match &self.kind {
            HamKind::Symbolic { base, .. } => Some(base),
            HamKind::OfDiffeo { .. } => None,
        }
    }

    /// Solves `fiber(f(x, s)) = alpha` for `s` and returns `(s, f(x, s))`.
    fn fiber_match(
        forward: &DiffeoMap,
        cfg: &SolverConfig,
        n: usize,
        x: &[f64],
        alpha: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), ContactError> {
        let s = fixed_point(
            alpha,
            |s| {
                let q = forward.apply(&[x, s].concat())?;
                Ok((0..n).map(|i| s[i] + alpha[i] - q[n + i]).collect())
            },
            cfg,
        )?;
        let image = forward.apply(&[x, &s].concat())?;
        Ok((s, image))
    }

    pub fn value(&self, x: &[f64], alpha: &[f64]) -> Result<f64, ContactError> {
        match &self.kind {
            HamKind::Symbolic { base, .. } => {
                let p = [x, alpha].concat();
                Ok(base.eval(&p)?)
            }
            HamKind::OfDiffeo { forward, cfg } => {
                let (_, image) = Self::fiber_match(forward, cfg, self.n, x, alpha)?;
                let mut acc = 0.0;
                for i in 0..self.n {
                    acc += alpha[i] * (image[i] - x[i]);
                }
                Ok(acc)
            }
        }
    }

    /// Gradient in the base variables.
    pub fn grad_x(&self, x: &[f64], alpha: &[f64]) -> Result<Vec<f64>, ContactError> {
        match &self.kind {
            HamKind::Symbolic { grad, .. } => {
                let p = [x, alpha].concat();
                Ok(grad[..self.n]
                    .iter()
                    .map(|g| g.eval(&p))
                    .collect::<Result<_, _>>()?)
            }
            HamKind::OfDiffeo { forward, cfg } => {
                let (s, _) = Self::fiber_match(forward, cfg, self.n, x, alpha)?;
                Ok((0..self.n).map(|i| s[i] - alpha[i]).collect())
            }
        }
    }

    /// Gradient in the fiber variables.
    pub fn grad_alpha(&self, x: &[f64], alpha: &[f64]) -> Result<Vec<f64>, ContactError> {
        match &self.kind {
            HamKind::Symbolic { grad, .. } => {
                let p = [x, alpha].concat();
                Ok(grad[self.n..]
                    .iter()
                    .map(|g| g.eval(&p))
                    .collect::<Result<_, _>>()?)
            }
            HamKind::OfDiffeo { forward, cfg } => {
                let (_, image) = Self::fiber_match(forward, cfg, self.n, x, alpha)?;
                Ok((0..self.n).map(|i| image[i] - x[i]).collect())
            }
        }
    }

    /// Sup of `|H|`, `|dH/dx|`, `|dH/da|` over sampled unit covectors.
    pub fn sphere_sup<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<f64, ContactError> {
        let space = Space::cotangent(self.n);
        let mut sup: f64 = 0.0;
        for _ in 0..samples {
            let p = space.sample_point(rng);
            let (x, mut alpha) = (p[..self.n].to_vec(), p[self.n..].to_vec());
            let norm = alpha.iter().map(|v| v * v).sum::<f64>().sqrt();
            alpha.iter_mut().for_each(|v| *v /= norm);
            sup = sup.max(self.value(&x, &alpha)?.abs());
            for g in self.grad_x(&x, &alpha)? {
                sup = sup.max(g.abs());
            }
            for g in self.grad_alpha(&x, &alpha)? {
                sup = sup.max(g.abs());
            }
        }
        Ok(sup)
    }
}

/// Damped fixed-point iteration with an operational contraction guard.
fn fixed_point<F>(initial: &[f64], step: F, cfg: &SolverConfig) -> Result<Vec<f64>, ContactError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, ContactError>,
{
    let mut last_ratio = f64::INFINITY;
    for damping in [1.0, 0.5] {
        let mut cur = initial.to_vec();
        let mut prev_delta = f64::INFINITY;
        let mut worst_ratio: f64 = 0.0;
        let scale = 1.0 + initial.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut diverged = false;
        for _ in 0..cfg.max_iterations {
            let target = step(&cur)?;
            let mut delta: f64 = 0.0;
            for i in 0..cur.len() {
                let next = cur[i] + damping * (target[i] - cur[i]);
                delta = delta.max((next - cur[i]).abs());
                cur[i] = next;
            }
            if delta <= cfg.fixed_point_tol * scale {
                return Ok(cur);
            }
            if prev_delta.is_finite() && prev_delta > 0.0 {
                let ratio = delta / prev_delta;
                worst_ratio = worst_ratio.max(ratio);
                if ratio >= 1.0 {
                    diverged = true;
                    break;
                }
            }
            prev_delta = delta;
        }
        last_ratio = worst_ratio;
        if !diverged && worst_ratio < 0.9 {
            // Contracting but too slowly for the iteration budget.
            return Err(ContactError::NonConvergence(cfg.max_iterations));
        }
    }
    Err(ContactError::NotContracting(last_ratio))
}

/// Evaluates one direction of the phase-generated map at a point.
fn phase_solve(
    h: &Hamiltonian,
    dir: &PhaseDir,
    cfg: &SolverConfig,
    p: &[f64],
) -> Result<Vec<f64>, ContactError> {
    let n = h.base_dim();
    match dir {
        PhaseDir::Forward => {
            // Given (x, xi): solve a = xi - dH/dx(x, a); then
            // y = x + dH/da(x, a), eta = a.
            let (x, xi) = (&p[..n], &p[n..]);
            let alpha = fixed_point(
                xi,
                |a| {
                    let g = h.grad_x(x, a)?;
                    Ok((0..n).map(|i| xi[i] - g[i]).collect())
                },
                cfg,
            )?;
            let da = h.grad_alpha(x, &alpha)?;
            let mut out = Vec::with_capacity(2 * n);
            for i in 0..n {
                out.push(x[i] + da[i]);
            }
            out.extend_from_slice(&alpha);
            Ok(out)
        }
        PhaseDir::Inverse => {
            // Given (y, eta): a = eta; solve x = y - dH/da(x, eta); then
            // xi = eta + dH/dx(x, eta).
            let (y, eta) = (&p[..n], &p[n..]);
            let x = fixed_point(
                y,
                |x| {
                    let g = h.grad_alpha(x, eta)?;
                    Ok((0..n).map(|i| y[i] - g[i]).collect())
                },
                cfg,
            )?;
            let gx = h.grad_x(&x, eta)?;
            let mut out = x;
            for i in 0..n {
                out.push(eta[i] + gx[i]);
            }
            Ok(out)
        }
    }
}

/// A homogeneous contact transformation with both directions stored.
#[derive(Clone, Debug)]
pub struct ContactDiffeo {
    n: usize,
    forward: DiffeoMap,
    inverse: DiffeoMap,
    provenance: Provenance,
}

impl ContactDiffeo {
    pub fn identity(n: usize) -> ContactDiffeo {
        ContactDiffeo {
            n,
            forward: DiffeoMap::Identity { n },
            inverse: DiffeoMap::Identity { n },
            provenance: Provenance::Identity,
        }
    }

    /// Translation `(x, xi) -> (x + c, xi)` in closed form.
    pub fn translation(c: &[f64]) -> ContactDiffeo {
        let n = c.len();
        let space = Space::cotangent(n);
        let build = |sign: f64| {
            let comps: Vec<ScalarField> = (0..2 * n)
                .map(|i| {
                    let v = ScalarField::var(&space, i);
                    if i < n {
                        &v + &ScalarField::constant(&space, sign * c[i])
                    } else {
                        v
                    }
                })
                .collect();
            DiffeoMap::closed_form(&space, comps)
        };
        ContactDiffeo {
            n,
            forward: build(1.0),
            inverse: build(-1.0),
            provenance: Provenance::ClosedForm,
        }
    }

    /// Wraps closed-form component lists (forward and inverse).  The
    /// contact and homogeneity invariants are checked by `verify_contact`,
    /// not at construction.
    pub fn from_components(
        space: &Space,
        forward: Vec<ScalarField>,
        inverse: Vec<ScalarField>,
    ) -> ContactDiffeo {
        let n = space.cotangent_n().expect("cotangent model");
        ContactDiffeo {
            n,
            forward: DiffeoMap::closed_form(space, forward),
            inverse: DiffeoMap::closed_form(space, inverse),
            provenance: Provenance::ClosedForm,
        }
    }

    pub fn base_dim(&self) -> usize {
        self.n
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn forward(&self) -> &DiffeoMap {
        &self.forward
    }

    pub fn inverse_map(&self) -> &DiffeoMap {
        &self.inverse
    }

    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>, ContactError> {
        self.forward.apply(p)
    }

    pub fn apply_inverse(&self, p: &[f64]) -> Result<Vec<f64>, ContactError> {
        self.inverse.apply(p)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.forward, DiffeoMap::Identity { .. })
    }
}

/// Time-`t` flow of a degree-one symbolic Hamiltonian; the inverse is the
/// backward flow, which is exactly consistent with the forward one.
pub fn flow(h: &Hamiltonian, t: f64, cfg: &SolverConfig) -> Result<ContactDiffeo, ContactError> {
    let base = h
        .symbolic_base()
        .expect("flows need a symbolic Hamiltonian (chart-backed ones stay in the chart)");
    let field = hamiltonian_vector_field(&HomogeneousField::new_unchecked(base.clone(), 1));
    if t == 0.0 {
        return Ok(ContactDiffeo::identity(h.base_dim()));
    }
    Ok(ContactDiffeo {
        n: h.base_dim(),
        forward: DiffeoMap::from_flow(field.clone(), t, cfg.rk4_steps),
        inverse: DiffeoMap::from_flow(field, -t, cfg.rk4_steps),
        provenance: Provenance::Flow,
    })
}

/// `f . g` (apply `g` first).
pub fn compose(f: &ContactDiffeo, g: &ContactDiffeo) -> ContactDiffeo {
    assert_eq!(f.n, g.n);
    if f.is_identity() {
        return g.clone();
    }
    if g.is_identity() {
        return f.clone();
    }
    ContactDiffeo {
        n: f.n,
        forward: DiffeoMap::Composed {
            inner: Arc::new(g.forward.clone()),
            outer: Arc::new(f.forward.clone()),
        },
        inverse: DiffeoMap::Composed {
            inner: Arc::new(f.inverse.clone()),
            outer: Arc::new(g.inverse.clone()),
        },
        provenance: Provenance::Composed,
    }
}

/// Swaps the stored directions.
pub fn invert(f: &ContactDiffeo) -> ContactDiffeo {
    ContactDiffeo {
        n: f.n,
        forward: f.inverse.clone(),
        inverse: f.forward.clone(),
        provenance: f.provenance,
    }
}

/// Residuals of the contact property, sampled at random points and tangent
/// vectors.
#[derive(Clone, Debug)]
pub struct ContactReport {
    /// max |(f* theta - theta)(v)|
    pub theta_residual: f64,
    /// max |(f* omega - omega)(u, v)|
    pub omega_residual: f64,
    /// max homogeneity deviation for lambda in {1/2, 2}
    pub homogeneity_residual: f64,
    /// max |f^{-1}(f(p)) - p|
    pub inverse_residual: f64,
    pub tolerance: f64,
}

impl ContactReport {
    pub fn pass(&self) -> bool {
        self.theta_residual <= self.tolerance
            && self.omega_residual <= self.tolerance
            && self.homogeneity_residual <= 1e-9
            && self.inverse_residual <= 1e-8_f64.max(self.tolerance)
    }
}

/// theta at `q` applied to a tangent vector `(dy, deta)`.
fn theta_pairing(n: usize, q: &[f64], v: &[f64]) -> f64 {
    (0..n).map(|i| q[n + i] * v[i]).sum()
}

/// omega = sum dx_i ^ dxi_i applied to two tangent vectors.
fn omega_pairing(n: usize, u: &[f64], v: &[f64]) -> f64 {
    (0..n).map(|i| u[i] * v[n + i] - u[n + i] * v[i]).sum()
}

pub fn verify_contact<R: Rng + ?Sized>(
    f: &ContactDiffeo,
    samples: usize,
    tol: f64,
    rng: &mut R,
) -> Result<ContactReport, ContactError> {
    let n = f.base_dim();
    let space = Space::cotangent(n);
    let mut theta_res: f64 = 0.0;
    let mut omega_res: f64 = 0.0;
    let mut homog_res: f64 = 0.0;
    let mut inv_res: f64 = 0.0;
    for _ in 0..samples {
        let p = space.sample_point(rng);
        let q = f.apply(&p)?;
        let jac = f.forward.jacobian(&p)?;
        let u: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ju: Vec<f64> = (0..2 * n)
            .map(|i| (0..2 * n).map(|j| jac[(i, j)] * u[j]).sum())
            .collect();
        let jv: Vec<f64> = (0..2 * n)
            .map(|i| (0..2 * n).map(|j| jac[(i, j)] * v[j]).sum())
            .collect();

        theta_res = theta_res.max((theta_pairing(n, &q, &ju) - theta_pairing(n, &p, &u)).abs());
        omega_res = omega_res.max((omega_pairing(n, &ju, &jv) - omega_pairing(n, &u, &v)).abs());

        for lambda in [0.5, 2.0] {
            let mut scaled = p.clone();
            for i in n..2 * n {
                scaled[i] *= lambda;
            }
            let qs = f.apply(&scaled)?;
            for i in 0..n {
                homog_res = homog_res.max((qs[i] - q[i]).abs());
                homog_res = homog_res.max((qs[n + i] - lambda * q[n + i]).abs() / lambda.max(1.0));
            }
        }

        let back = f.apply_inverse(&q)?;
        for i in 0..2 * n {
            inv_res = inv_res.max((back[i] - p[i]).abs());
        }
    }
    Ok(ContactReport {
        theta_residual: theta_res,
        omega_residual: omega_res,
        homogeneity_residual: homog_res,
        inverse_residual: inv_res,
        tolerance: tol,
    })
}

/// The chart map `f -> H_f`.  Writing `(Y, N) = f(x, s)`, the value at a
/// covector `(x, a)` pairs the fiber with the position displacement on the
/// graph sheet through that covector:
/// `H_f(x, a) = <a, Y(x, s) - x>` with `s` solving `N(x, s) = a`; this is
/// `-<a, pos(f^{-1}(z)) - pos(z)>` read along the solved base point, and is
/// the exact inverse of `phase_to_diffeo` whenever `f* theta = theta`.
/// Requires the displacement of `f` on the sphere bundle to stay below the
/// smallness threshold.
pub fn diffeo_to_phase<R: Rng + ?Sized>(
    f: &ContactDiffeo,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<Hamiltonian, ContactError> {
    let n = f.base_dim();
    if f.is_identity() {
        return Ok(Hamiltonian::zero(n));
    }
    let space = Space::cotangent(n);
    let mut sup: f64 = 0.0;
    for _ in 0..32 {
        let mut p = space.sample_point(rng);
        let norm = p[n..].iter().map(|v| v * v).sum::<f64>().sqrt();
        p[n..].iter_mut().for_each(|v| *v /= norm);
        let q = f.apply(&p)?;
        for i in 0..n {
            sup = sup.max((q[i] - p[i]).abs());
        }
    }
    if sup > cfg.smallness_threshold {
        return Err(ContactError::DisplacementTooLarge {
            got: sup,
            threshold: cfg.smallness_threshold,
        });
    }
    Ok(Hamiltonian {
        n,
        kind: HamKind::OfDiffeo {
            forward: Arc::new(f.forward.clone()),
            cfg: *cfg,
        },
    })
}

/// The chart inverse `H -> f`: solves the stationarity system of the
/// generating phase in both directions.
pub fn phase_to_diffeo<R: Rng + ?Sized>(
    h: &Hamiltonian,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<ContactDiffeo, ContactError> {
    let sup = h.sphere_sup(32, rng)?;
    if sup > cfg.smallness_threshold {
        return Err(ContactError::SmallnessViolated {
            got: sup,
            threshold: cfg.smallness_threshold,
        });
    }
    let shared = Arc::new(h.clone());
    Ok(ContactDiffeo {
        n: h.base_dim(),
        forward: DiffeoMap::PhaseSolved {
            hamiltonian: shared.clone(),
            dir: PhaseDir::Forward,
            cfg: *cfg,
        },
        inverse: DiffeoMap::PhaseSolved {
            hamiltonian: shared,
            dir: PhaseDir::Inverse,
            cfg: *cfg,
        },
        provenance: Provenance::PhaseSolved,
    })
}

/// A scalar function on the cosphere bundle `R^n x S^{n-1}`.
#[derive(Clone, Debug)]
pub struct SphereFunction {
    n: usize,
    kind: SphereKind,
}

#[derive(Clone, Debug)]
enum SphereKind {
    Phase(Hamiltonian),
    Conformal(Box<ContactDiffeo>),
}

impl SphereFunction {
    pub fn base_dim(&self) -> usize {
        self.n
    }

    /// Evaluate at `(x, w)`; `w` is normalised internally.
    pub fn eval(&self, x: &[f64], omega: &[f64]) -> Result<f64, ContactError> {
        let norm = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit: Vec<f64> = omega.iter().map(|v| v / norm).collect();
        match &self.kind {
            SphereKind::Phase(h) => h.value(x, &unit),
            SphereKind::Conformal(f) => {
                let p = [x, unit.as_slice()].concat();
                let q = f.apply(&p)?;
                let n = self.n;
                let eta = q[n..].iter().map(|v| v * v).sum::<f64>().sqrt();
                Ok(1.0 / eta)
            }
        }
    }
}

/// The chart coordinate `Psi(f)`: the phase Hamiltonian restricted to the
/// cosphere bundle.
pub fn chart_psi<R: Rng + ?Sized>(
    f: &ContactDiffeo,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<SphereFunction, ContactError> {
    let h = diffeo_to_phase(f, cfg, rng)?;
    Ok(SphereFunction {
        n: f.base_dim(),
        kind: SphereKind::Phase(h),
    })
}

/// The conformal factor `beta(z/|z|) = |z| / |f(z)|` of a homogeneous
/// contact transformation, restricted to the cosphere bundle.
pub fn conformal_factor(f: &ContactDiffeo) -> SphereFunction {
    SphereFunction {
        n: f.base_dim(),
        kind: SphereKind::Conformal(Box::new(f.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(97)
    }

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    fn sample_sup(
        f: &ContactDiffeo,
        g: &ContactDiffeo,
        samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let space = Space::cotangent(f.base_dim());
        let mut sup: f64 = 0.0;
        for _ in 0..samples {
            let p = space.sample_point(rng);
            let a = f.apply(&p).unwrap();
            let b = g.apply(&p).unwrap();
            for i in 0..a.len() {
                sup = sup.max((a[i] - b[i]).abs());
            }
        }
        sup
    }

    #[test]
    fn zero_hamiltonian_flows_to_identity() {
        let mut rng = rng();
        let f = flow(&Hamiltonian::zero(2), 1.0, &cfg()).unwrap();
        let space = Space::cotangent(2);
        for _ in 0..10 {
            let p = space.sample_point(&mut rng);
            let q = f.apply(&p).unwrap();
            for i in 0..4 {
                assert!((q[i] - p[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn translation_flow_is_exact() {
        let mut rng = rng();
        let c = [0.7, -0.3];
        let f = flow(&Hamiltonian::translation(&c), 1.0, &cfg()).unwrap();
        let space = Space::cotangent(2);
        for _ in 0..10 {
            let p = space.sample_point(&mut rng);
            let q = f.apply(&p).unwrap();
            assert!((q[0] - p[0] - 0.7).abs() < 1e-12);
            assert!((q[1] - p[1] + 0.3).abs() < 1e-12);
            assert!((q[2] - p[2]).abs() < 1e-12);
            assert!((q[3] - p[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn cogeodesic_flow_matches_closed_form() {
        let mut rng = rng();
        let f = flow(&Hamiltonian::cogeodesic(2), 1.0, &cfg().with_steps(64)).unwrap();
        let space = Space::cotangent(2);
        for _ in 0..10 {
            let p = space.sample_point(&mut rng);
            let q = f.apply(&p).unwrap();
            let norm = (p[2] * p[2] + p[3] * p[3]).sqrt();
            assert!((q[0] - p[0] - p[2] / norm).abs() < 1e-12);
            assert!((q[1] - p[1] - p[3] / norm).abs() < 1e-12);
            assert!((q[2] - p[2]).abs() < 1e-12);
            assert!((q[3] - p[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn verify_contact_examples() {
        let mut rng = rng();

        // Identity: all residuals vanish.
        let report = verify_contact(&ContactDiffeo::identity(2), 20, 1e-6, &mut rng).unwrap();
        assert!(report.theta_residual == 0.0 && report.omega_residual == 0.0);
        assert!(report.pass());

        // Translation flow: passes at 1e-9.
        let f = flow(&Hamiltonian::translation(&[0.4, 0.1]), 1.0, &cfg()).unwrap();
        let report = verify_contact(&f, 50, 1e-9, &mut rng).unwrap();
        assert!(report.pass(), "{report:?}");

        // Fiber doubling scales theta and fails.
        let space = Space::cotangent(1);
        let x = ScalarField::var(&space, 0);
        let xi = ScalarField::var(&space, 1);
        let doubling = ContactDiffeo::from_components(
            &space,
            vec![x.clone(), xi.scale(2.0)],
            vec![x, xi.scale(0.5)],
        );
        let report = verify_contact(&doubling, 20, 1e-6, &mut rng).unwrap();
        assert!(report.theta_residual > 0.1);
        assert!(!report.pass());
    }

    #[test]
    fn flow_of_curved_hamiltonian_preserves_theta() {
        let mut rng = rng();
        let space = Space::cotangent(1);
        let base = ScalarField::parse_in("norm_xi + 0.1*exp(-x1^2)*norm_xi", &space).unwrap();
        let h = Hamiltonian::symbolic(HomogeneousField::new(base, 1, 20, &mut rng).unwrap()).unwrap();
        let f = flow(&h, 1.0, &cfg().with_steps(400)).unwrap();
        let report = verify_contact(&f, 40, 1e-6, &mut rng).unwrap();
        assert!(report.pass(), "{report:?}");
        assert!(report.homogeneity_residual < 1e-9);
    }

    #[test]
    fn group_operations() {
        let mut rng = rng();
        let f = flow(&Hamiltonian::translation(&[0.3]), 1.0, &cfg()).unwrap();

        // compose(f, id) = f.
        let composed = compose(&f, &ContactDiffeo::identity(1));
        assert!(sample_sup(&composed, &f, 10, &mut rng) < 1e-14);

        // compose(f, invert(f)) = id at samples.
        let round = compose(&f, &invert(&f));
        assert!(sample_sup(&round, &ContactDiffeo::identity(1), 10, &mut rng) < 1e-8);

        // Translations add.
        let g1 = ContactDiffeo::translation(&[0.25]);
        let g2 = ContactDiffeo::translation(&[-0.85]);
        let sum = ContactDiffeo::translation(&[-0.6]);
        assert!(sample_sup(&compose(&g1, &g2), &sum, 10, &mut rng) < 1e-12);

        // Associativity at sampled points.
        let h3 = flow(&Hamiltonian::cogeodesic(1), 0.2, &cfg().with_steps(64)).unwrap();
        let left = compose(&compose(&g1, &f), &h3);
        let right = compose(&g1, &compose(&f, &h3));
        assert!(sample_sup(&left, &right, 10, &mut rng) < 1e-8);
    }

    #[test]
    fn phase_of_identity_vanishes() {
        let mut rng = rng();
        let h = diffeo_to_phase(&ContactDiffeo::identity(2), &cfg(), &mut rng).unwrap();
        assert!(h.value(&[0.3, 0.1], &[1.0, 0.4]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn phase_of_translation_is_linear() {
        let mut rng = rng();
        let f = ContactDiffeo::translation(&[0.3, -0.2]);
        let h = diffeo_to_phase(&f, &cfg(), &mut rng).unwrap();
        let space = Space::cotangent(2);
        for _ in 0..20 {
            let p = space.sample_point(&mut rng);
            let (x, a) = p.split_at(2);
            let expected = 0.3 * a[0] - 0.2 * a[1];
            assert!((h.value(x, a).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_of_cogeodesic_is_the_norm() {
        let mut rng = rng();
        let f = flow(&Hamiltonian::cogeodesic(2), 1.0, &cfg().with_steps(64)).unwrap();
        let h = diffeo_to_phase(&f, &cfg(), &mut rng).unwrap();
        let space = Space::cotangent(2);
        for _ in 0..20 {
            let p = space.sample_point(&mut rng);
            let (x, a) = p.split_at(2);
            let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
            assert!((h.value(x, a).unwrap() - norm).abs() < 1e-10);
        }
    }

    #[test]
    fn phase_to_diffeo_closed_forms() {
        let mut rng = rng();

        // h = 0 gives the identity.
        let f = phase_to_diffeo(&Hamiltonian::zero(1), &cfg(), &mut rng).unwrap();
        assert!(sample_sup(&f, &ContactDiffeo::identity(1), 10, &mut rng) < 1e-10);

        // H = <c, a> gives the translation by c.
        let f = phase_to_diffeo(&Hamiltonian::translation(&[0.3, -0.2]), &cfg(), &mut rng).unwrap();
        let expected = ContactDiffeo::translation(&[0.3, -0.2]);
        assert!(sample_sup(&f, &expected, 20, &mut rng) < 1e-10);

        // H = |a| gives the time-1 cogeodesic flow.
        let f = phase_to_diffeo(&Hamiltonian::cogeodesic(2), &cfg(), &mut rng).unwrap();
        let expected = flow(&Hamiltonian::cogeodesic(2), 1.0, &cfg().with_steps(64)).unwrap();
        assert!(sample_sup(&f, &expected, 20, &mut rng) < 1e-9);
    }

    #[test]
    fn round_trip_phase_to_diffeo_to_phase() {
        let mut rng = rng();
        let space = Space::cotangent(1);
        let base = ScalarField::parse_in("0.05*norm_xi*exp(-x1^2)", &space).unwrap();
        let h = Hamiltonian::symbolic(HomogeneousField::new(base, 1, 20, &mut rng).unwrap()).unwrap();
        let f = phase_to_diffeo(&h, &cfg(), &mut rng).unwrap();
        let h_back = diffeo_to_phase(&f, &cfg(), &mut rng).unwrap();
        let mut sup: f64 = 0.0;
        for _ in 0..100 {
            let p = space.sample_point(&mut rng);
            let (x, a) = p.split_at(1);
            sup = sup.max((h.value(x, a).unwrap() - h_back.value(x, a).unwrap()).abs());
        }
        assert!(sup < 1e-7, "round trip sup {sup}");
    }

    #[test]
    fn round_trip_diffeo_to_phase_to_diffeo() {
        let mut rng = rng();
        let space = Space::cotangent(1);
        let base = ScalarField::parse_in("norm_xi*(0.04*sin(x1) + 0.06*exp(-x1^2))", &space).unwrap();
        let h0 = Hamiltonian::symbolic(HomogeneousField::new(base, 1, 20, &mut rng).unwrap()).unwrap();
        let f = flow(&h0, 1.0, &cfg().with_steps(500)).unwrap();
        let h = diffeo_to_phase(&f, &cfg(), &mut rng).unwrap();
        let f_back = phase_to_diffeo(&h, &cfg(), &mut rng).unwrap();
        let sup = sample_sup(&f, &f_back, 60, &mut rng);
        assert!(sup < 1e-7, "round trip sup {sup}");
    }

    #[test]
    fn chart_psi_examples() {
        let mut rng = rng();

        // Identity chart coordinate is zero.
        let psi = chart_psi(&ContactDiffeo::identity(2), &cfg(), &mut rng).unwrap();
        assert!(psi.eval(&[0.2, -0.4], &[0.6, 0.8]).unwrap().abs() < 1e-14);

        // Translation: psi = <c, w> on the sphere.
        let psi = chart_psi(&ContactDiffeo::translation(&[0.3, -0.2]), &cfg(), &mut rng).unwrap();
        let v = psi.eval(&[0.0, 0.0], &[0.6, 0.8]).unwrap();
        assert!((v - (0.3 * 0.6 - 0.2 * 0.8)).abs() < 1e-12);

        // Time-1 cogeodesic flow: psi = 1 on the sphere.
        let f = flow(&Hamiltonian::cogeodesic(2), 1.0, &cfg().with_steps(64)).unwrap();
        let psi = chart_psi(&f, &cfg(), &mut rng).unwrap();
        let space = Space::cotangent(2);
        for _ in 0..10 {
            let p = space.sample_point(&mut rng);
            let (x, a) = p.split_at(2);
            assert!((psi.eval(x, a).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn conformal_factor_examples() {
        let mut rng = rng();

        // Identity and translations have beta = 1 (eta = xi).
        for f in [ContactDiffeo::identity(2), ContactDiffeo::translation(&[0.5, 0.1])] {
            let beta = conformal_factor(&f);
            let v = beta.eval(&[0.3, -0.2], &[0.6, 0.8]).unwrap();
            assert!((v - 1.0).abs() < 1e-12);
        }

        // Flow-generated f: the full map is reconstructed from (f|_S, beta)
        // by homogeneous extension: f(z) = f(z/|z|) * |z| / beta(z/|z|).
        let space = Space::cotangent(1);
        let base = ScalarField::parse_in("norm_xi*(1 + 0.1*sin(x1))", &space).unwrap();
        let h = Hamiltonian::symbolic(HomogeneousField::new(base, 1, 20, &mut rng).unwrap()).unwrap();
        let f = flow(&h, 0.3, &cfg().with_steps(200)).unwrap();
        let beta = conformal_factor(&f);
        for _ in 0..20 {
            let p = space.sample_point(&mut rng);
            let (x, a) = p.split_at(1);
            let norm = a[0].abs();
            let unit = [a[0] / norm];
            let on_sphere = f.apply(&[x[0], unit[0]]).unwrap();
            let b = beta.eval(x, &unit).unwrap();
            let q = f.apply(&p).unwrap();
            // Position part is homogeneous of degree zero.
            assert!((q[0] - on_sphere[0]).abs() < 1e-9);
            // Fiber part scales by |z| / beta against the unit-fiber image.
            let eta_unit = on_sphere[1] / on_sphere[1].abs();
            let expected = eta_unit * norm / b;
            assert!((q[1] - expected).abs() < 1e-8 * (1.0 + q[1].abs()));
        }
    }

    #[test]
    fn displacement_guard_trips() {
        let mut rng = rng();
        let f = ContactDiffeo::translation(&[5.0]);
        let err = diffeo_to_phase(&f, &cfg(), &mut rng).unwrap_err();
        assert!(matches!(err, ContactError::DisplacementTooLarge { .. }));
    }

    #[test]
    fn smallness_guard_trips() {
        let mut rng = rng();
        let h = Hamiltonian::translation(&[9.0]);
        let err = phase_to_diffeo(&h, &cfg(), &mut rng).unwrap_err();
        assert!(matches!(err, ContactError::SmallnessViolated { .. }));
    }

    #[test]
    fn rk4_theta_residual_drops_at_fourth_order() {
        let mut rng = rng();
        let space = Space::cotangent(1);
        let base = ScalarField::parse_in("norm_xi + 0.1*exp(-x1^2)*norm_xi", &space).unwrap();
        let h = Hamiltonian::symbolic(HomogeneousField::new(base, 1, 20, &mut rng).unwrap()).unwrap();
        let mut residuals = Vec::new();
        for steps in [25usize, 50, 100] {
            let f = flow(&h, 1.0, &cfg().with_steps(steps)).unwrap();
            let report = verify_contact(&f, 30, 1e-3, &mut rng).unwrap();
            residuals.push(report.theta_residual);
        }
        assert!(
            residuals[0] / residuals[1] >= 8.0 && residuals[1] / residuals[2] >= 8.0,
            "residuals {residuals:?}"
        );
    }
}
