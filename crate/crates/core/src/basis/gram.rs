//! Gram matrices of the metric bilinear forms used for preconditioning and
//! modal reduction.

use super::{BasisKind, VectorBasis};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::Triangulation;
use crate::io;
use crate::{Mat2, Vec2};
use nalgebra::DMatrix;
use std::path::Path;

/// Bilinear form selector.
///
/// The elasticity form is the plane-strain operator with the first Lame
/// coefficient `E nu / ((1 + nu)(1 - 2 nu))` on the symmetric-gradient term
/// and `E / (2 (1 + nu))` on the divergence term. The H2 form sums the
/// second-derivative products over the three multi-indices of order two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GramForm {
    L2,
    H1Semi,
    Elasticity { youngs: f64, poisson: f64 },
    H2Semi,
}

impl GramForm {
    pub fn tag(&self) -> String {
        match self {
            GramForm::L2 => "L2".into(),
            GramForm::H1Semi => "H1semi".into(),
            GramForm::Elasticity { youngs, poisson } => {
                format!("elasticity({youngs},{poisson})")
            }
            GramForm::H2Semi => "H2semi".into(),
        }
    }
}

/// Symmetric Gram matrix of a basis under one of the [`GramForm`]s.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    form: GramForm,
    matrix: DMatrix<f64>,
}

impl GramMatrix {
    pub fn from_matrix(form: GramForm, matrix: DMatrix<f64>) -> Self {
        GramMatrix { form, matrix }
    }

    pub fn form(&self) -> GramForm {
        self.form
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest relative asymmetry `|B - B^T| / |B|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.matrix.amax().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.matrix.nrows() {
            for j in (i + 1)..self.matrix.ncols() {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)]).abs());
            }
        }
        worst / scale
    }

    pub fn write_text<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        io::write_matrix(path, &self.matrix)
    }
}

/// Assembles the Gram matrix of a spatial basis by triangle quadrature.
///
/// Per-point member evaluations run data-parallel; the quadrature sum for
/// each entry is a fixed-order sequential reduction, so the result does not
/// depend on thread count.
pub fn assemble_gram(
    basis: &dyn VectorBasis,
    form: GramForm,
    tri: &Triangulation,
    quad_order: usize,
) -> Result<GramMatrix> {
    if basis.kind() != BasisKind::Spatial {
        return Err(Error::UnsupportedBasis(
            "Gram assembly expects a spatial basis".into(),
        ));
    }
    if let GramForm::Elasticity { poisson, .. } = form {
        if (poisson - 0.5).abs() < 1e-12 {
            return Err(Error::InvalidArgument(
                "poisson ratio 1/2 makes the first Lame coefficient singular".into(),
            ));
        }
    }
    let quad = tri.quadrature(quad_order)?;
    let n = basis.len();

    // Per-point data for all members, gathered in quadrature order.
    enum PointData {
        Values(Vec<Vec2>),
        Grads(Vec<Mat2>),
        Seconds(Vec<(Vec2, Vec2, Vec2)>),
    }
    let data: Vec<PointData> = exec::map_collect(&quad, |q| match form {
        GramForm::L2 => PointData::Values((0..n).map(|i| basis.eval(i, q.point, 0.0)).collect()),
        GramForm::H1Semi | GramForm::Elasticity { .. } => {
            PointData::Grads((0..n).map(|i| basis.eval_grad(i, q.point, 0.0)).collect())
        }
        GramForm::H2Semi => PointData::Seconds(
            (0..n)
                .map(|i| {
                    let s = basis.eval_second(i, q.point, 0.0);
                    (s.dxx, s.dxy, s.dyy)
                })
                .collect(),
        ),
    });

    let kernel = |qi: usize, i: usize, j: usize| -> f64 {
        match (&data[qi], form) {
            (PointData::Values(v), GramForm::L2) => v[i].dot(&v[j]),
            (PointData::Grads(g), GramForm::H1Semi) => frobenius(&g[i], &g[j]),
            (PointData::Grads(g), GramForm::Elasticity { youngs, poisson }) => {
                let lame1 = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
                let shear = youngs / (2.0 * (1.0 + poisson));
                let si = sym(&g[i]);
                let sj = sym(&g[j]);
                lame1 * frobenius(&si, &sj) + shear * g[i].trace() * g[j].trace()
            }
            (PointData::Seconds(s), GramForm::H2Semi) => {
                let (ixx, ixy, iyy) = s[i];
                let (jxx, jxy, jyy) = s[j];
                ixx.dot(&jxx) + ixy.dot(&jxy) + iyy.dot(&jyy)
            }
            _ => unreachable!("point data matches the requested form"),
        }
    };

    // Upper-triangle entries in parallel, each reduced in quadrature order.
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let entries = exec::map_collect(&pairs, |&(i, j)| {
        let mut acc = 0.0;
        for (qi, q) in quad.iter().enumerate() {
            acc += q.weight * kernel(qi, i, j);
        }
        acc
    });

    let mut matrix = DMatrix::zeros(n, n);
    for (&(i, j), &value) in pairs.iter().zip(entries.iter()) {
        matrix[(i, j)] = value;
        matrix[(j, i)] = value;
    }
    Ok(GramMatrix { form, matrix })
}

fn frobenius(a: &Mat2, b: &Mat2) -> f64 {
    a[(0, 0)] * b[(0, 0)] + a[(0, 1)] * b[(0, 1)] + a[(1, 0)] * b[(1, 0)] + a[(1, 1)] * b[(1, 1)]
}

fn sym(a: &Mat2) -> Mat2 {
    0.5 * (a + a.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::TangentialPolyBasis;
    use crate::geometry::PolygonalDomain;
    use crate::poly::Poly;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    fn unit_square_mesh() -> (PolygonalDomain, Triangulation) {
        let sq = PolygonalDomain::unit_square();
        let tri = Triangulation::structured_rectangle(&sq, 4, 4).unwrap();
        (sq, tri)
    }

    #[test]
    fn l2_gram_of_single_bubble() {
        // int over the unit square of (x1 (1 - x1))^2 = 1/30.
        let (sq, tri) = unit_square_mesh();
        let basis = TangentialPolyBasis::from_members(
            &sq,
            vec![(0, Poly::bubble(0.0, 1.0), Poly::constant(1.0))],
        )
        .unwrap();
        let gram = assemble_gram(&basis, GramForm::L2, &tri, 5).unwrap();
        assert_relative_eq!(gram.matrix()[(0, 0)], 1.0 / 30.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_is_symmetric_and_l2_positive_definite() {
        let (sq, tri) = unit_square_mesh();
        let basis = TangentialPolyBasis::new(&sq, 1).unwrap();
        for form in [
            GramForm::L2,
            GramForm::H1Semi,
            GramForm::Elasticity {
                youngs: 1.0,
                poisson: 1.0 / 3.0,
            },
            GramForm::H2Semi,
        ] {
            let gram = assemble_gram(&basis, form, &tri, 5).unwrap();
            assert!(gram.asymmetry() < 1e-12, "{form:?}");
            let eig = SymmetricEigen::new(gram.matrix().clone());
            let min = eig.eigenvalues.min();
            assert!(min > -1e-10, "{form:?} smallest eigenvalue {min}");
            if form == GramForm::L2 {
                assert!(min > 1e-12, "L2 gram must be positive definite");
            }
        }
    }

    #[test]
    fn elasticity_diagonal_positive() {
        let (sq, tri) = unit_square_mesh();
        let basis = TangentialPolyBasis::new(&sq, 0).unwrap();
        let gram = assemble_gram(
            &basis,
            GramForm::Elasticity {
                youngs: 1.0,
                poisson: 1.0 / 3.0,
            },
            &tri,
            4,
        )
        .unwrap();
        for i in 0..gram.size() {
            assert!(gram.matrix()[(i, i)] > 0.0);
        }
    }

    #[test]
    fn quadrature_exactness_plateau() {
        // Once a rule is exact for the integrand, raising the order cannot
        // change the entries. The bubble factors raise member degrees by 2,
        // so the degree-0 family has L2 integrands of total degree 4
        // (orders 4 and 5 both exact) and H1 integrands of degree 2
        // (orders 2 and 4 both exact).
        let sq = PolygonalDomain::unit_square();
        let tri = Triangulation::structured_rectangle(&sq, 3, 3).unwrap();
        let basis = TangentialPolyBasis::new(&sq, 0).unwrap();
        let l2_lo = assemble_gram(&basis, GramForm::L2, &tri, 4).unwrap();
        let l2_hi = assemble_gram(&basis, GramForm::L2, &tri, 5).unwrap();
        assert!((l2_lo.matrix() - l2_hi.matrix()).amax() < 1e-10);
        let h1_lo = assemble_gram(&basis, GramForm::H1Semi, &tri, 2).unwrap();
        let h1_hi = assemble_gram(&basis, GramForm::H1Semi, &tri, 4).unwrap();
        assert!((h1_lo.matrix() - h1_hi.matrix()).amax() < 1e-10);
    }

    #[test]
    fn poisson_half_rejected() {
        let (sq, tri) = unit_square_mesh();
        let basis = TangentialPolyBasis::new(&sq, 0).unwrap();
        let res = assemble_gram(
            &basis,
            GramForm::Elasticity {
                youngs: 1.0,
                poisson: 0.5,
            },
            &tri,
            3,
        );
        assert!(res.is_err());
    }

    #[test]
    fn space_time_basis_rejected() {
        let (sq, tri) = unit_square_mesh();
        let spatial: crate::basis::BasisRef =
            std::sync::Arc::new(TangentialPolyBasis::new(&sq, 0).unwrap());
        let st = crate::basis::tensorize_time(spatial, 1).unwrap();
        assert!(assemble_gram(&st, GramForm::L2, &tri, 3).is_err());
    }

    #[test]
    fn h2_gram_positive_definite_on_bubble_family() {
        // No member of the bubble family is componentwise affine, so the H2
        // seminorm Gram has empty null space here.
        let (sq, tri) = unit_square_mesh();
        let basis = TangentialPolyBasis::new(&sq, 1).unwrap();
        let gram = assemble_gram(&basis, GramForm::H2Semi, &tri, 5).unwrap();
        let eig = SymmetricEigen::new(gram.matrix().clone());
        assert!(eig.eigenvalues.min() > 1e-10);
    }
}
