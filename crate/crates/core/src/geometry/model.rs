//! Contact models on flat `R^{2n+1}` and the associated-metric construction.
//!
//! Starting from an auxiliary metric `g0`, the construction builds
//! `h(X,Y) = g0(-X + theta(X) xi, -Y + theta(Y) xi) + theta(X) theta(Y)`,
//! takes an `h`-orthonormal frame `(X_1..X_2n, xi)`, polar-decomposes the
//! matrix `d theta(X_i, X_j) = F G` and assembles `g = diag(G, 1)`,
//! `phi = diag(F, 0)` in that frame.  The pair is a sampled object: it is
//! evaluated pointwise, with frame-field smoothness assumed.

use super::{
    exterior_derivative, wedge, DifferentialForm, GeomError, VectorField,
};
use crate::expr::{ScalarField, Space};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// A symmetric matrix of scalar fields: `g0`, perturbed metrics, and
/// verification inputs.
#[derive(Clone, Debug)]
pub struct MetricTensor {
    space: Space,
    entries: Vec<Vec<ScalarField>>,
}

impl MetricTensor {
    pub fn new(space: &Space, entries: Vec<Vec<ScalarField>>) -> MetricTensor {
        let d = space.dim();
        assert_eq!(entries.len(), d);
        assert!(entries.iter().all(|row| row.len() == d));
        MetricTensor {
            space: space.clone(),
            entries,
        }
    }

    pub fn euclidean(space: &Space) -> MetricTensor {
        let d = space.dim();
        let entries = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| ScalarField::constant(space, if i == j { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        MetricTensor::new(space, entries)
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn entry(&self, i: usize, j: usize) -> &ScalarField {
        &self.entries[i][j]
    }

    pub fn eval_at(&self, point: &[f64]) -> Result<DMatrix<f64>, GeomError> {
        let d = self.space.dim();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = self.entries[i][j].eval(point)?;
            }
        }
        Ok(m)
    }

    /// Cholesky-based positive definiteness check at random points.
    pub fn check_positive_definite<R: Rng + ?Sized>(
        &self,
        samples: usize,
        rng: &mut R,
    ) -> Result<(), GeomError> {
        for _ in 0..samples {
            let p = self.space.sample_point(rng);
            let m = self.eval_at(&p)?;
            if m.clone().cholesky().is_none() {
                return Err(GeomError::NotPositiveDefinite);
            }
        }
        Ok(())
    }
}

/// A (1,1)-tensor field given as a matrix of scalar fields.
#[derive(Clone, Debug)]
pub struct PhiTensor {
    space: Space,
    entries: Vec<Vec<ScalarField>>,
}

impl PhiTensor {
    pub fn new(space: &Space, entries: Vec<Vec<ScalarField>>) -> PhiTensor {
        let d = space.dim();
        assert_eq!(entries.len(), d);
        assert!(entries.iter().all(|row| row.len() == d));
        PhiTensor {
            space: space.clone(),
            entries,
        }
    }

    pub fn zero(space: &Space) -> PhiTensor {
        let d = space.dim();
        PhiTensor::new(
            space,
            vec![vec![ScalarField::zero(space); d]; d],
        )
    }

    pub fn eval_at(&self, point: &[f64]) -> Result<DMatrix<f64>, GeomError> {
        let d = self.space.dim();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = self.entries[i][j].eval(point)?;
            }
        }
        Ok(m)
    }
}

/// An oriented flat contact model `(R^{2n+1}, g0, theta)`.
#[derive(Clone, Debug)]
pub struct ContactModel {
    space: Space,
    n: usize,
    theta: DifferentialForm,
    d_theta: DifferentialForm,
    mu: DifferentialForm,
    g0: MetricTensor,
    theta_scale: f64,
}

impl ContactModel {
    /// The standard model: `theta = dz - sum_i y_i dx_i` with Euclidean
    /// `g0`.  `n` is the Darboux rank; the ambient dimension is `2n+1`.
    pub fn standard(n: usize) -> ContactModel {
        ContactModel::standard_scaled(n, 1.0)
    }

    /// The standard form scaled by a nonzero constant.
    pub fn standard_scaled(n: usize, scale: f64) -> ContactModel {
        assert!(scale != 0.0);
        let space = Space::contact(n);
        let mut coeffs = vec![ScalarField::zero(&space); space.dim()];
        coeffs[2 * n] = ScalarField::constant(&space, scale);
        for i in 0..n {
            coeffs[i] = ScalarField::var(&space, n + i).scale(-scale);
        }
        let theta = DifferentialForm::one_form(&space, coeffs);
        let d_theta = exterior_derivative(&theta).expect("theta is a 1-form");
        // mu = theta ^ (d theta)^n, truncated to what the degree ceiling
        // allows; n <= 1 keeps the full volume form.
        let mu = if n == 1 {
            wedge(&theta, &d_theta).expect("degree 3")
        } else {
            d_theta.clone()
        };
        ContactModel {
            space: space.clone(),
            n,
            theta,
            d_theta,
            mu,
            g0: MetricTensor::euclidean(&space),
            theta_scale: scale,
        }
    }

    /// Replaces `g0`, checking positive definiteness by sampling.
    pub fn with_metric<R: Rng + ?Sized>(
        mut self,
        g0: MetricTensor,
        samples: usize,
        rng: &mut R,
    ) -> Result<ContactModel, GeomError> {
        assert!(*g0.space() == self.space);
        g0.check_positive_definite(samples, rng)?;
        self.g0 = g0;
        Ok(self)
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    /// Darboux rank `n` (ambient dimension `2n+1`).
    pub fn rank(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> &DifferentialForm {
        &self.theta
    }

    pub fn d_theta(&self) -> &DifferentialForm {
        &self.d_theta
    }

    /// Cached orientation data `theta ^ (d theta)^n` (for `n = 1`; the
    /// 2-form factor for larger `n`, where the full volume form exceeds the
    /// stored degree ceiling).
    pub fn orientation_form(&self) -> &DifferentialForm {
        &self.mu
    }

    pub fn g0(&self) -> &MetricTensor {
        &self.g0
    }

    /// theta evaluated as a covector at a point.
    pub fn theta_row(&self, point: &[f64]) -> Result<DVector<f64>, GeomError> {
        let d = self.space.dim();
        let mut row = DVector::zeros(d);
        for (key, coeff) in self.theta.terms() {
            row[key[0]] = coeff.eval(point)?;
        }
        Ok(row)
    }
}

/// The Reeb field: closed form for (scaled) standard models, verified
/// against its defining equations `theta(xi) = 1`, `i_xi d theta = 0`.
pub fn reeb_field(model: &ContactModel) -> Result<VectorField, GeomError> {
    let space = model.space().clone();
    let candidate = VectorField::coordinate(&space, space.dim() - 1).scale(1.0 / model.theta_scale);
    let mut rng = rand::rngs::mock::StepRng::new(42, 0x9e3779b97f4a7c15);
    for _ in 0..25 {
        let p = space.sample_point(&mut rng);
        let v = candidate.eval(&p)?;
        let pairing = model.theta().apply(&p, &[&v])?;
        if (pairing - 1.0).abs() > 1e-10 {
            return Err(GeomError::NonContact(format!(
                "theta(xi) = {pairing} at a sample point"
            )));
        }
        let contraction = super::interior_product(&candidate, model.d_theta())?;
        if contraction.max_coeff_at(&p)? > 1e-10 {
            return Err(GeomError::NonContact("i_xi d theta != 0".into()));
        }
    }
    Ok(candidate)
}

/// The associated pair `(g, phi)`, evaluated pointwise.
#[derive(Clone, Debug)]
pub struct AssociatedMetric {
    model: ContactModel,
}

impl AssociatedMetric {
    /// Frame matrix `P = [X_1 .. X_2n, xi]`, and the polar factors of
    /// `d theta` on the frame.
    fn decompose_at(&self, point: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), GeomError> {
        let model = &self.model;
        let d = model.space().dim();
        let two_n = d - 1;

        let g0 = model.g0().eval_at(point)?;
        let theta = model.theta_row(point);
        let theta = theta?;
        let reeb = reeb_field(model)?;
        let xi = DVector::from_vec(reeb.eval(point).map_err(GeomError::Eval)?);

        // h(X, Y) = g0(SX, SY) + theta(X) theta(Y) with S = -I + xi theta^T.
        let s = DMatrix::identity(d, d).scale(-1.0) + &xi * theta.transpose();
        let h = s.transpose() * &g0 * &s + &theta * theta.transpose();

        // h-orthonormal frame: xi first, then Gram-Schmidt over the
        // coordinate basis; vectors h-orthogonal to xi span ker(theta).
        let h_dot = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &h * b)[(0, 0)];
        let mut frame: Vec<DVector<f64>> = vec![xi.clone()];
        for i in 0..d {
            if frame.len() == d {
                break;
            }
            let mut v = DVector::zeros(d);
            v[i] = 1.0;
            for u in &frame {
                let c = h_dot(&v, u);
                v -= u.scale(c);
            }
            let norm = h_dot(&v, &v).max(0.0).sqrt();
            if norm > 1e-8 {
                frame.push(v.unscale(norm));
            }
        }
        if frame.len() != d {
            return Err(GeomError::PolarDegenerate);
        }

        // Assemble P = [X_1 .. X_2n, xi].
        let mut p_mat = DMatrix::zeros(d, d);
        for (col, vec) in frame[1..].iter().chain(std::iter::once(&frame[0])).enumerate() {
            p_mat.set_column(col, vec);
        }

        // Omega_ij = d theta(X_i, X_j) on the transverse frame.
        let mut omega = DMatrix::zeros(two_n, two_n);
        let cols: Vec<Vec<f64>> = (0..two_n)
            .map(|c| p_mat.column(c).iter().copied().collect())
            .collect();
        for i in 0..two_n {
            for j in 0..two_n {
                omega[(i, j)] = model.d_theta().apply(point, &[&cols[i], &cols[j]])?;
            }
        }

        // Polar decomposition Omega = F G via SVD: F = U V^T, G = V S V^T.
        let svd = omega.svd(true, true);
        let sing_min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(sing_min > 1e-10) {
            return Err(GeomError::PolarDegenerate);
        }
        let u = svd.u.as_ref().unwrap();
        let vt = svd.v_t.as_ref().unwrap();
        let f = u * vt;
        let g = vt.transpose() * DMatrix::from_diagonal(&svd.singular_values) * vt;
        Ok((p_mat, f, g))
    }

    /// The metric `g` at a point, in coordinates.
    pub fn metric_at(&self, point: &[f64]) -> Result<DMatrix<f64>, GeomError> {
        let (p_mat, _f, g) = self.decompose_at(point)?;
        let d = p_mat.nrows();
        let mut g_frame = DMatrix::zeros(d, d);
        g_frame.view_mut((0, 0), (d - 1, d - 1)).copy_from(&g);
        g_frame[(d - 1, d - 1)] = 1.0;
        let p_inv = p_mat
            .clone()
            .try_inverse()
            .ok_or(GeomError::PolarDegenerate)?;
        Ok(p_inv.transpose() * g_frame * p_inv)
    }

    /// The (1,1)-tensor `phi` at a point, in coordinates.
    pub fn phi_at(&self, point: &[f64]) -> Result<DMatrix<f64>, GeomError> {
        let (p_mat, f, _g) = self.decompose_at(point)?;
        let d = p_mat.nrows();
        let mut f_frame = DMatrix::zeros(d, d);
        f_frame.view_mut((0, 0), (d - 1, d - 1)).copy_from(&f);
        let p_inv = p_mat
            .clone()
            .try_inverse()
            .ok_or(GeomError::PolarDegenerate)?;
        Ok(p_mat * f_frame * p_inv)
    }

    pub fn model(&self) -> &ContactModel {
        &self.model
    }
}

/// Builds the associated pair and smoke-tests the decomposition at a few
/// points.
pub fn associated_metric<R: Rng + ?Sized>(
    model: &ContactModel,
    rng: &mut R,
) -> Result<AssociatedMetric, GeomError> {
    model.g0().check_positive_definite(10, rng)?;
    let pair = AssociatedMetric {
        model: model.clone(),
    };
    for _ in 0..3 {
        let p = model.space().sample_point(rng);
        pair.decompose_at(&p)?;
    }
    Ok(pair)
}

/// Residuals of the defining and derived conditions of an associated pair,
/// sampled over random points and tangent vectors.
#[derive(Clone, Debug)]
pub struct AssociatedReport {
    /// Max residual per condition 1..=8.
    pub residuals: [f64; 8],
    pub tolerance: f64,
    pub samples: usize,
}

impl AssociatedReport {
    pub fn pass(&self) -> bool {
        self.residuals.iter().all(|r| *r <= self.tolerance)
    }

    /// 1-based indices of failed conditions.
    pub fn failed_conditions(&self) -> Vec<usize> {
        self.residuals
            .iter()
            .enumerate()
            .filter(|(_, r)| **r > self.tolerance)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Checks conditions 1) - 8) for a candidate pair `(g, phi)` given as
/// pointwise evaluators.
pub fn verify_associated<G, P, R>(
    g_at: G,
    phi_at: P,
    model: &ContactModel,
    samples: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<AssociatedReport, GeomError>
where
    G: Fn(&[f64]) -> Result<DMatrix<f64>, GeomError>,
    P: Fn(&[f64]) -> Result<DMatrix<f64>, GeomError>,
    R: Rng + ?Sized,
{
    let space = model.space().clone();
    let d = space.dim();
    let reeb = reeb_field(model)?;
    let mut residuals = [0.0_f64; 8];
    let mut record = |idx: usize, value: f64| {
        residuals[idx] = residuals[idx].max(value.abs());
    };

    for _ in 0..samples {
        let p = space.sample_point(rng);
        let g = g_at(&p)?;
        let phi = phi_at(&p)?;
        let theta = model.theta_row(&p)?;
        let xi = DVector::from_vec(reeb.eval(&p).map_err(GeomError::Eval)?);
        let xv: DVector<f64> = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let yv: DVector<f64> = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let xs: Vec<f64> = xv.iter().copied().collect();
        let ys: Vec<f64> = yv.iter().copied().collect();

        // 1) g(X, xi) = theta(X)
        let lhs = (xv.transpose() * &g * &xi)[(0, 0)];
        record(0, lhs - theta.dot(&xv));

        // 2) phi^2 = -I + theta (x) xi
        let phi2 = &phi * &phi;
        let target = DMatrix::identity(d, d).scale(-1.0) + &xi * theta.transpose();
        record(1, (&phi2 - &target).abs().max());

        // 3) d theta(X, Y) = g(X, phi Y)
        let dt = model.d_theta().apply(&p, &[&xs, &ys])?;
        let rhs = (xv.transpose() * &g * (&phi * &yv))[(0, 0)];
        record(2, dt - rhs);

        // 4) g(xi, xi) = 1
        record(3, (xi.transpose() * &g * &xi)[(0, 0)] - 1.0);

        // 5) ker(theta) is g-orthogonal to xi.
        let proj = &xv - xi.scale(theta.dot(&xv));
        record(4, (proj.transpose() * &g * &xi)[(0, 0)]);

        // 6) phi(xi) = 0 and phi preserves ker(theta).
        let phi_xi = (&phi * &xi).abs().max();
        let phi_proj = &phi * &proj;
        record(5, phi_xi.max(theta.dot(&phi_proj).abs()));

        // 7) d theta(phi X, phi Y) = d theta(X, Y)
        let px: Vec<f64> = (&phi * &xv).iter().copied().collect();
        let py: Vec<f64> = (&phi * &yv).iter().copied().collect();
        let dt_phi = model.d_theta().apply(&p, &[&px, &py])?;
        record(6, dt_phi - dt);

        // 8) g(X, Y) = theta(X) theta(Y) + d theta(phi X, Y)
        let gxy = (xv.transpose() * &g * &yv)[(0, 0)];
        let dt_px_y = model.d_theta().apply(&p, &[&px, &ys])?;
        record(7, gxy - theta.dot(&xv) * theta.dot(&yv) - dt_px_y);
    }

    Ok(AssociatedReport {
        residuals,
        tolerance,
        samples,
    })
}

/// A random bounded smooth field: a short sum of damped trigonometric /
/// Gaussian terms in all coordinates, with O(1) values and derivatives.
pub fn random_smooth_field<R: Rng + ?Sized>(space: &Space, rng: &mut R) -> ScalarField {
    let d = space.dim();
    let mut acc = ScalarField::constant(space, rng.gen_range(-0.5..0.5));
    for _ in 0..2 {
        let mut term = ScalarField::constant(space, rng.gen_range(-0.8..0.8));
        for i in 0..d {
            let v = ScalarField::var(space, i);
            match rng.gen_range(0..4) {
                0 => term = &term * &v.scale(rng.gen_range(-0.6..0.6)).sin(),
                1 => term = &term * &v.scale(rng.gen_range(-0.6..0.6)).cos(),
                2 => term = &term * &(-&(&v * &v).scale(rng.gen_range(0.1..0.4))).exp(),
                _ => {}
            }
        }
        acc = &acc + &term;
    }
    acc
}
