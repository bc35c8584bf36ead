//! Registration target functions and their Frechet derivatives.
//!
//! The distributed target measures the L2 misfit between a pulled-back
//! field and its best approximation in a fixed linear space `Z_N`; the
//! pointwise target is a correspondence-weighted sum of squared distances
//! with EM-updated weights.

use crate::error::{Error, Result};
use crate::fields::FieldRef;
use crate::geometry::QuadPoint;
use crate::Vec2;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Scalar functions spanning `Z_N`; only values are needed.
pub type ScalarFn = std::sync::Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;

/// L2 misfit against the best approximation in `Z_N`:
/// `min over zeta of 1/2 int (u(Phi(xi)) - zeta(xi))^2 dxi`.
pub struct DistributedTarget {
    field: FieldRef,
    z_basis: Vec<ScalarFn>,
    quad: Vec<QuadPoint>,
    /// z_vals[(q, k)] = z_k at quadrature point q.
    z_vals: DMatrix<f64>,
    z_chol: Option<Cholesky<f64, Dyn>>,
    z_condition: f64,
}

impl DistributedTarget {
    pub fn new(field: FieldRef, z_basis: Vec<ScalarFn>, quad: Vec<QuadPoint>) -> Result<Self> {
        let nq = quad.len();
        let nz = z_basis.len();
        if nq == 0 {
            return Err(Error::InvalidArgument(
                "distributed target needs quadrature points".into(),
            ));
        }
        let z_vals = DMatrix::from_fn(nq, nz, |q, k| z_basis[k](quad[q].point));
        let (z_chol, z_condition) = if nz == 0 {
            (None, 1.0)
        } else {
            let mut gram = DMatrix::zeros(nz, nz);
            for a in 0..nz {
                for b in 0..nz {
                    let mut acc = 0.0;
                    for q in 0..nq {
                        acc += quad[q].weight * z_vals[(q, a)] * z_vals[(q, b)];
                    }
                    gram[(a, b)] = acc;
                }
            }
            let eig = nalgebra::SymmetricEigen::new(gram.clone());
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            if min <= 0.0 {
                return Err(Error::Decomposition(format!(
                    "Z_N Gram matrix is singular (smallest eigenvalue {min:.3e})"
                )));
            }
            let chol = Cholesky::new(gram).ok_or_else(|| {
                Error::Decomposition("Z_N Gram Cholesky factorization failed".into())
            })?;
            (Some(chol), max / min)
        };
        Ok(DistributedTarget {
            field,
            z_basis,
            quad,
            z_vals,
            z_chol,
            z_condition,
        })
    }

    /// The points at which `Phi` must be sampled: the quadrature nodes.
    pub fn sample_points(&self) -> Vec<Vec2> {
        self.quad.iter().map(|q| q.point).collect()
    }

    pub fn quadrature(&self) -> &[QuadPoint] {
        &self.quad
    }

    pub fn field(&self) -> &FieldRef {
        &self.field
    }

    pub fn z_dimension(&self) -> usize {
        self.z_basis.len()
    }

    /// Condition number of the Z_N Gram matrix.
    pub fn z_condition(&self) -> f64 {
        self.z_condition
    }

    /// Coefficients of the L2 projection of the sampled function `w` onto
    /// `Z_N` (empty vector when `Z_N = {0}`).
    pub fn zeta_coefficients(&self, w: &[f64]) -> DVector<f64> {
        match &self.z_chol {
            None => DVector::zeros(0),
            Some(chol) => {
                let nz = self.z_basis.len();
                let mut rhs = DVector::zeros(nz);
                for k in 0..nz {
                    let mut acc = 0.0;
                    for (q, point) in self.quad.iter().enumerate() {
                        acc += point.weight * w[q] * self.z_vals[(q, k)];
                    }
                    rhs[k] = acc;
                }
                chol.solve(&rhs)
            }
        }
    }

    /// Residuals `u(images[q]) - zeta(xi_q)` at the quadrature nodes.
    pub fn residuals(&self, images: &[Vec2]) -> Result<Vec<f64>> {
        if images.len() != self.quad.len() {
            return Err(Error::DimensionMismatch {
                expected: self.quad.len(),
                got: images.len(),
            });
        }
        let w: Vec<f64> = images.iter().map(|&x| self.field.value(x)).collect();
        let zeta = self.zeta_coefficients(&w);
        Ok((0..self.quad.len())
            .map(|q| {
                let mut z = 0.0;
                for k in 0..zeta.len() {
                    z += zeta[k] * self.z_vals[(q, k)];
                }
                w[q] - z
            })
            .collect())
    }

    /// Target value at the mapped quadrature points.
    pub fn eval(&self, images: &[Vec2]) -> Result<f64> {
        let r = self.residuals(images)?;
        Ok(0.5
            * self
                .quad
                .iter()
                .zip(&r)
                .map(|(q, &rq)| q.weight * rq * rq)
                .sum::<f64>())
    }

    /// Frechet derivative applied to a variation `h` sampled at the
    /// quadrature nodes: `int (u(Phi) - zeta) grad_u(Phi) . h`.
    pub fn frechet(&self, images: &[Vec2], h: &[Vec2]) -> Result<f64> {
        if h.len() != self.quad.len() {
            return Err(Error::DimensionMismatch {
                expected: self.quad.len(),
                got: h.len(),
            });
        }
        let r = self.residuals(images)?;
        Ok(self
            .quad
            .iter()
            .enumerate()
            .map(|(q, qp)| qp.weight * r[q] * self.field.gradient(images[q]).dot(&h[q]))
            .sum())
    }

    /// Terminal adjoint values `(u(Phi) - zeta)(xi_q) grad_u(Phi(xi_q))`.
    pub fn terminal_adjoint(&self, images: &[Vec2]) -> Result<Vec<Vec2>> {
        let r = self.residuals(images)?;
        Ok(images
            .iter()
            .zip(&r)
            .map(|(&x, &rq)| self.field.gradient(x) * rq)
            .collect())
    }
}

/// Row-stochastic weights, or doubly stochastic via Sinkhorn (requires
/// equal point counts).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    RowStochastic,
    DoublyStochastic,
}

/// Correspondence-weighted point matching target.
#[derive(Clone, Debug)]
pub struct PointwiseTarget {
    sources: Vec<Vec2>,
    targets: Vec<Vec2>,
    weights: DMatrix<f64>,
    mode: WeightMode,
}

const STOCHASTIC_TOL: f64 = 1e-8;
const SINKHORN_MAX_ITERS: usize = 500;

impl PointwiseTarget {
    pub fn new(
        sources: Vec<Vec2>,
        targets: Vec<Vec2>,
        weights: DMatrix<f64>,
        mode: WeightMode,
    ) -> Result<Self> {
        let (n0, n1) = (sources.len(), targets.len());
        if weights.nrows() != n0 || weights.ncols() != n1 {
            return Err(Error::DimensionMismatch {
                expected: n0 * n1,
                got: weights.nrows() * weights.ncols(),
            });
        }
        if mode == WeightMode::DoublyStochastic && n0 != n1 {
            return Err(Error::InvalidArgument(format!(
                "doubly stochastic weights require equal point counts, got {n0} and {n1}"
            )));
        }
        let target = PointwiseTarget {
            sources,
            targets,
            weights,
            mode,
        };
        target.check_stochastic()?;
        Ok(target)
    }

    /// Uniform weights `1 / N1` (doubly stochastic when square).
    pub fn uniform(sources: Vec<Vec2>, targets: Vec<Vec2>, mode: WeightMode) -> Result<Self> {
        let (n0, n1) = (sources.len(), targets.len());
        if n0 == 0 || n1 == 0 {
            return Err(Error::InvalidArgument("empty point set".into()));
        }
        let weights = DMatrix::from_element(n0, n1, 1.0 / n1 as f64);
        PointwiseTarget::new(sources, targets, weights, mode)
    }

    fn check_stochastic(&self) -> Result<()> {
        for i in 0..self.weights.nrows() {
            let s: f64 = self.weights.row(i).iter().sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidArgument(format!(
                    "weight row {i} sums to {s}, not 1"
                )));
            }
        }
        if self.mode == WeightMode::DoublyStochastic {
            for j in 0..self.weights.ncols() {
                let s: f64 = self.weights.column(j).iter().sum();
                if (s - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "weight column {j} sums to {s}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sources(&self) -> &[Vec2] {
        &self.sources
    }

    pub fn targets(&self) -> &[Vec2] {
        &self.targets
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn sample_points(&self) -> Vec<Vec2> {
        self.sources.clone()
    }

    /// Weighted barycenters `sum_j P_ij y_j`, the per-point optima.
    pub fn barycenters(&self) -> Vec<Vec2> {
        (0..self.sources.len())
            .map(|i| {
                let mut acc = Vec2::zeros();
                for j in 0..self.targets.len() {
                    acc += self.targets[j] * self.weights[(i, j)];
                }
                acc
            })
            .collect()
    }

    /// `1/2 sum_ij P_ij |images_i - y_j|^2`.
    pub fn eval(&self, images: &[Vec2]) -> Result<f64> {
        if images.len() != self.sources.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sources.len(),
                got: images.len(),
            });
        }
        let mut acc = 0.0;
        for (i, image) in images.iter().enumerate() {
            for (j, y) in self.targets.iter().enumerate() {
                acc += self.weights[(i, j)] * (image - y).norm_squared();
            }
        }
        Ok(0.5 * acc)
    }

    /// Frechet derivative: `sum_i (images_i - sum_j P_ij y_j) . h_i`.
    pub fn frechet(&self, images: &[Vec2], h: &[Vec2]) -> Result<f64> {
        if images.len() != self.sources.len() || h.len() != self.sources.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sources.len(),
                got: images.len().min(h.len()),
            });
        }
        let bary = self.barycenters();
        Ok(images
            .iter()
            .zip(&bary)
            .zip(h)
            .map(|((&im, &b), hv)| (im - b).dot(hv))
            .sum())
    }

    /// Terminal adjoint values `images_i - sum_j P_ij y_j`.
    pub fn terminal_adjoint(&self, images: &[Vec2]) -> Result<Vec<Vec2>> {
        if images.len() != self.sources.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sources.len(),
                got: images.len(),
            });
        }
        let bary = self.barycenters();
        Ok(images.iter().zip(&bary).map(|(&im, &b)| im - b).collect())
    }

    /// EM weight update: Gaussian responsibilities of bandwidth `sigma`
    /// around the current images, row-normalized; in doubly stochastic mode
    /// Sinkhorn iterations follow until row and column sums match 1 within
    /// 1e-8 (or 500 iterations).
    pub fn em_update_weights(&self, images: &[Vec2], sigma: f64) -> Result<DMatrix<f64>> {
        if sigma <= 0.0 {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if images.len() != self.sources.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sources.len(),
                got: images.len(),
            });
        }
        let (n0, n1) = (self.sources.len(), self.targets.len());
        let inv = 1.0 / (2.0 * sigma * sigma);
        // Shift each row by its smallest squared distance before
        // exponentiating, so the closest target always contributes 1 and a
        // row can only vanish on non-finite input.
        let mut p = DMatrix::zeros(n0, n1);
        for i in 0..n0 {
            let d2: Vec<f64> = (0..n1)
                .map(|j| (images[i] - self.targets[j]).norm_squared())
                .collect();
            let d2_min = d2.iter().copied().fold(f64::INFINITY, f64::min);
            for j in 0..n1 {
                p[(i, j)] = (-(d2[j] - d2_min) * inv).exp();
            }
            let s: f64 = p.row(i).iter().sum();
            if !s.is_finite() || s <= f64::MIN_POSITIVE {
                return Err(Error::EmUnderflow(format!(
                    "responsibilities for point {i} degenerate at sigma {sigma:.3e}"
                )));
            }
            for j in 0..n1 {
                p[(i, j)] /= s;
            }
        }
        if self.mode == WeightMode::DoublyStochastic {
            for _ in 0..SINKHORN_MAX_ITERS {
                for j in 0..n1 {
                    let s: f64 = p.column(j).iter().sum();
                    if s <= f64::MIN_POSITIVE {
                        return Err(Error::EmUnderflow(format!(
                            "column {j} sum underflow during Sinkhorn"
                        )));
                    }
                    for i in 0..n0 {
                        p[(i, j)] /= s;
                    }
                }
                for i in 0..n0 {
                    let s: f64 = p.row(i).iter().sum();
                    for j in 0..n1 {
                        p[(i, j)] /= s;
                    }
                }
                let dev = stochastic_deviation(&p);
                if dev < STOCHASTIC_TOL {
                    break;
                }
            }
        }
        Ok(p)
    }

    pub fn set_weights(&mut self, weights: DMatrix<f64>) -> Result<()> {
        if weights.nrows() != self.sources.len() || weights.ncols() != self.targets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sources.len() * self.targets.len(),
                got: weights.nrows() * weights.ncols(),
            });
        }
        self.weights = weights;
        self.check_stochastic()
    }
}

fn stochastic_deviation(p: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..p.nrows() {
        worst = worst.max((p.row(i).iter().sum::<f64>() - 1.0).abs());
    }
    for j in 0..p.ncols() {
        worst = worst.max((p.column(j).iter().sum::<f64>() - 1.0).abs());
    }
    worst
}

/// Either registration target, with a uniform sampling interface: a map is
/// probed at `sample_points`, and both value and Frechet derivative are
/// functions of the resulting images.
pub enum Target {
    Distributed(DistributedTarget),
    Pointwise(PointwiseTarget),
}

impl Target {
    pub fn sample_points(&self) -> Vec<Vec2> {
        match self {
            Target::Distributed(t) => t.sample_points(),
            Target::Pointwise(t) => t.sample_points(),
        }
    }

    pub fn eval(&self, images: &[Vec2]) -> Result<f64> {
        match self {
            Target::Distributed(t) => t.eval(images),
            Target::Pointwise(t) => t.eval(images),
        }
    }

    pub fn frechet(&self, images: &[Vec2], h: &[Vec2]) -> Result<f64> {
        match self {
            Target::Distributed(t) => t.frechet(images, h),
            Target::Pointwise(t) => t.frechet(images, h),
        }
    }
}

/// Mean of all pairwise distances between two point sets; the standard
/// initial EM bandwidth.
pub fn mean_pairwise_distance(a: &[Vec2], b: &[Vec2]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let total: f64 = a
        .iter()
        .flat_map(|&p| b.iter().map(move |&q| (p - q).norm()))
        .sum();
    total / (a.len() * b.len()) as f64
}

/// Deterministic annealing step for the EM bandwidth.
pub fn anneal_sigma(sigma: f64, sigma_min: f64) -> f64 {
    (0.92 * sigma).max(sigma_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Constant, GaussianBump};
    use crate::geometry::{PolygonalDomain, Triangulation};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn square_quad(order: usize, n: usize) -> Vec<QuadPoint> {
        let sq = PolygonalDomain::unit_square();
        Triangulation::structured_rectangle(&sq, n, n)
            .unwrap()
            .quadrature(order)
            .unwrap()
    }

    fn identity_images(quad: &[QuadPoint]) -> Vec<Vec2> {
        quad.iter().map(|q| q.point).collect()
    }

    #[test]
    fn constant_field_with_constants_in_z() {
        let quad = square_quad(3, 4);
        let target = DistributedTarget::new(
            Arc::new(Constant(3.7)),
            vec![Arc::new(|_x| 1.0)],
            quad.clone(),
        )
        .unwrap();
        let images = identity_images(&quad);
        assert!(target.eval(&images).unwrap().abs() < 1e-20);
        // Frechet derivative vanishes for all h when u is constant.
        let h: Vec<Vec2> = images.iter().map(|_| Vec2::new(0.3, -0.2)).collect();
        assert!(target.frechet(&images, &h).unwrap().abs() < 1e-20);
    }

    #[test]
    fn linear_field_against_constants() {
        // u = x1, Z = span{1}, Phi = id: value = 1/2 int (x1 - 1/2)^2 = 1/24.
        let quad = square_quad(3, 6);
        let target = DistributedTarget::new(
            Arc::new(LinearX),
            vec![Arc::new(|_x| 1.0)],
            quad.clone(),
        )
        .unwrap();
        let images = identity_images(&quad);
        assert_relative_eq!(target.eval(&images).unwrap(), 1.0 / 24.0, epsilon = 1e-12);
    }

    struct LinearX;
    impl crate::fields::ScalarField for LinearX {
        fn value(&self, x: Vec2) -> f64 {
            x.x
        }
        fn gradient(&self, _x: Vec2) -> Vec2 {
            Vec2::new(1.0, 0.0)
        }
    }

    #[test]
    fn empty_z_gives_plain_l2_energy() {
        let quad = square_quad(3, 6);
        let target =
            DistributedTarget::new(Arc::new(LinearX), vec![], quad.clone()).unwrap();
        let images = identity_images(&quad);
        // 1/2 int x1^2 = 1/6.
        assert_relative_eq!(target.eval(&images).unwrap(), 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn enlarging_z_decreases_value() {
        let quad = square_quad(4, 6);
        let field: FieldRef = Arc::new(GaussianBump {
            center: Vec2::new(0.4, 0.6),
            width: 0.25,
            amplitude: 1.0,
        });
        let images = identity_images(&quad);
        let small = DistributedTarget::new(field.clone(), vec![Arc::new(|_x| 1.0)], quad.clone())
            .unwrap()
            .eval(&images)
            .unwrap();
        let large = DistributedTarget::new(
            field,
            vec![Arc::new(|_x| 1.0), Arc::new(|x: Vec2| x.x)],
            quad,
        )
        .unwrap()
        .eval(&images)
        .unwrap();
        assert!(large <= small + 1e-14, "large {large} vs small {small}");
    }

    #[test]
    fn frechet_distributed_matches_directional_difference() {
        let quad = square_quad(3, 5);
        let target = DistributedTarget::new(
            Arc::new(GaussianBump {
                center: Vec2::new(0.5, 0.5),
                width: 0.3,
                amplitude: 1.0,
            }),
            vec![Arc::new(|_x| 1.0)],
            quad.clone(),
        )
        .unwrap();
        let images = identity_images(&quad);
        let h: Vec<Vec2> = quad
            .iter()
            .map(|q| Vec2::new(q.point.y * 0.2, -q.point.x * 0.1))
            .collect();
        let eps = 1e-5;
        let plus: Vec<Vec2> = images.iter().zip(&h).map(|(&x, &d)| x + d * eps).collect();
        let minus: Vec<Vec2> = images.iter().zip(&h).map(|(&x, &d)| x - d * eps).collect();
        let fd = (target.eval(&plus).unwrap() - target.eval(&minus).unwrap()) / (2.0 * eps);
        let analytic = target.frechet(&images, &h).unwrap();
        assert_relative_eq!(analytic, fd, epsilon = 1e-8, max_relative = 1e-6);
    }

    #[test]
    fn singular_z_gram_rejected() {
        // Two identical spanning functions make the Z Gram singular.
        let quad = square_quad(2, 3);
        let err = DistributedTarget::new(
            Arc::new(Constant(1.0)),
            vec![Arc::new(|x: Vec2| x.x), Arc::new(|x: Vec2| x.x)],
            quad,
        );
        assert!(err.is_err());
    }

    #[test]
    fn z_condition_reported() {
        let quad = square_quad(3, 4);
        let target = DistributedTarget::new(
            Arc::new(Constant(1.0)),
            vec![Arc::new(|_x| 1.0), Arc::new(|x: Vec2| x.x)],
            quad,
        )
        .unwrap();
        assert!(target.z_condition() >= 1.0);
        assert!(target.z_condition().is_finite());
    }

    #[test]
    fn pointwise_half_squared_distance() {
        let target = PointwiseTarget::new(
            vec![Vec2::new(0.0, 0.0)],
            vec![Vec2::new(1.0, 0.0)],
            DMatrix::from_element(1, 1, 1.0),
            WeightMode::RowStochastic,
        )
        .unwrap();
        assert_relative_eq!(
            target.eval(&[Vec2::new(0.0, 0.0)]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pointwise_matches_brute_force() {
        let sources: Vec<Vec2> = (0..5)
            .map(|i| Vec2::new(0.1 * i as f64, 0.05 * (i * i) as f64))
            .collect();
        let targets: Vec<Vec2> = (0..4)
            .map(|j| Vec2::new(0.3 + 0.1 * j as f64, 0.8 - 0.15 * j as f64))
            .collect();
        let mut weights = DMatrix::from_fn(5, 4, |i, j| ((i + 2 * j) % 5) as f64 + 0.5);
        for i in 0..5 {
            let s: f64 = weights.row(i).iter().sum();
            for j in 0..4 {
                weights[(i, j)] /= s;
            }
        }
        let target = PointwiseTarget::new(
            sources.clone(),
            targets.clone(),
            weights.clone(),
            WeightMode::RowStochastic,
        )
        .unwrap();
        let images: Vec<Vec2> = sources.iter().map(|&s| s + Vec2::new(0.11, -0.07)).collect();
        let mut brute = 0.0;
        for i in 0..5 {
            for j in 0..4 {
                brute += 0.5 * weights[(i, j)] * (images[i] - targets[j]).norm_squared();
            }
        }
        assert_relative_eq!(target.eval(&images).unwrap(), brute, epsilon = 1e-12);
    }

    #[test]
    fn gradient_zero_at_barycenters() {
        let target = PointwiseTarget::uniform(
            vec![Vec2::new(0.2, 0.2), Vec2::new(0.8, 0.4)],
            vec![Vec2::new(0.3, 0.9), Vec2::new(0.7, 0.1)],
            WeightMode::RowStochastic,
        )
        .unwrap();
        let bary = target.barycenters();
        let h = vec![Vec2::new(1.0, -2.0), Vec2::new(0.5, 3.0)];
        assert!(target.frechet(&bary, &h).unwrap().abs() < 1e-14);
    }

    #[test]
    fn frechet_linear_in_h() {
        let target = PointwiseTarget::uniform(
            vec![Vec2::new(0.2, 0.2), Vec2::new(0.8, 0.4)],
            vec![Vec2::new(0.3, 0.9), Vec2::new(0.7, 0.1)],
            WeightMode::RowStochastic,
        )
        .unwrap();
        let images = vec![Vec2::new(0.25, 0.3), Vec2::new(0.75, 0.35)];
        let h1 = vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let h2 = vec![Vec2::new(-0.3, 0.7), Vec2::new(0.4, 0.2)];
        let combo: Vec<Vec2> = h1
            .iter()
            .zip(&h2)
            .map(|(&a, &b)| a * 2.0 + b * (-0.5))
            .collect();
        let lhs = target.frechet(&images, &combo).unwrap();
        let rhs = 2.0 * target.frechet(&images, &h1).unwrap()
            - 0.5 * target.frechet(&images, &h2).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn em_single_pair_is_one() {
        let target = PointwiseTarget::uniform(
            vec![Vec2::new(0.1, 0.1)],
            vec![Vec2::new(0.9, 0.9)],
            WeightMode::RowStochastic,
        )
        .unwrap();
        for sigma in [0.01, 1.0, 100.0] {
            let p = target
                .em_update_weights(&[Vec2::new(0.1, 0.1)], sigma)
                .unwrap();
            assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn em_symmetric_limit_is_uniform() {
        let pts = vec![Vec2::new(0.2, 0.5), Vec2::new(0.8, 0.5)];
        let target =
            PointwiseTarget::uniform(pts.clone(), pts.clone(), WeightMode::RowStochastic)
                .unwrap();
        let p = target.em_update_weights(&pts, 1e4).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(p[(i, j)], 0.5, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn em_small_sigma_recovers_identity_matching() {
        let sources: Vec<Vec2> = (0..4).map(|i| Vec2::new(0.2 * i as f64, 0.1)).collect();
        let targets: Vec<Vec2> = sources.iter().map(|&s| s + Vec2::new(0.01, 0.0)).collect();
        let target = PointwiseTarget::uniform(
            sources.clone(),
            targets,
            WeightMode::RowStochastic,
        )
        .unwrap();
        let p = target.em_update_weights(&sources, 0.02).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(p[(i, j)], expect, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn em_rows_always_stochastic_and_sinkhorn_balances() {
        let sources: Vec<Vec2> = (0..6)
            .map(|i| Vec2::new(0.15 * i as f64, 0.3 + 0.02 * i as f64))
            .collect();
        let targets: Vec<Vec2> = (0..6)
            .map(|j| Vec2::new(0.1 + 0.14 * j as f64, 0.35))
            .collect();
        let rs = PointwiseTarget::uniform(
            sources.clone(),
            targets.clone(),
            WeightMode::RowStochastic,
        )
        .unwrap();
        let p = rs.em_update_weights(&sources, 0.2).unwrap();
        for i in 0..6 {
            assert_relative_eq!(p.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let ds =
            PointwiseTarget::uniform(sources.clone(), targets, WeightMode::DoublyStochastic)
                .unwrap();
        let p = ds.em_update_weights(&sources, 0.2).unwrap();
        assert!(stochastic_deviation(&p) < 1e-7);
        assert!(p.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
    }

    #[test]
    fn em_extreme_separation_still_normalizes() {
        // Even when every raw responsibility underflows, the row-shifted
        // computation keeps the closest target at weight near 1.
        let target = PointwiseTarget::uniform(
            vec![Vec2::new(0.0, 0.0)],
            vec![Vec2::new(1e4, 0.0), Vec2::new(2e4, 0.0)],
            WeightMode::RowStochastic,
        )
        .unwrap();
        let p = target
            .em_update_weights(&[Vec2::new(0.0, 0.0)], 1e-3)
            .unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        // Non-finite input still reports the bandwidth guidance.
        let err = target
            .em_update_weights(&[Vec2::new(f64::NAN, 0.0)], 1.0)
            .unwrap_err();
        assert!(err.to_string().contains("sigma"));
    }

    #[test]
    fn em_rejects_nonpositive_sigma() {
        let target = PointwiseTarget::uniform(
            vec![Vec2::new(0.0, 0.0)],
            vec![Vec2::new(1.0, 0.0)],
            WeightMode::RowStochastic,
        )
        .unwrap();
        assert!(target.em_update_weights(&[Vec2::new(0.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn doubly_stochastic_requires_square() {
        let res = PointwiseTarget::uniform(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)],
            vec![Vec2::new(0.5, 0.5)],
            WeightMode::DoublyStochastic,
        );
        assert!(res.is_err());
    }
}
