//! Reduced bases for the registration coefficient space: generalized
//! eigenmodes of an operator pencil `(A, M)`, gfem spaces driven by
//! polynomial sources, truncation diagnostics, and the eigenvalue bound on
//! the optimality gap.

use crate::basis::{GramMatrix, VectorBasis};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{PolygonalDomain, Triangulation};
use crate::io::fmt_g17;
use crate::optimizer::{minimize, Metric, MinimizeConfig, Objective};
use crate::poly::gauss_legendre_01;
use crate::Vec2;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use std::path::Path;

/// An M-orthonormal reduced basis, with ascending eigenvalues when it came
/// from a generalized eigensolve.
#[derive(Clone, Debug)]
pub struct ModalBasis {
    w: DMatrix<f64>,
    eigenvalues: Option<Vec<f64>>,
    metric: DMatrix<f64>,
    form_tag: String,
}

impl ModalBasis {
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn modes(&self) -> usize {
        self.w.ncols()
    }

    pub fn dimension(&self) -> usize {
        self.w.nrows()
    }

    pub fn eigenvalues(&self) -> Option<&[f64]> {
        self.eigenvalues.as_deref()
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn form_tag(&self) -> &str {
        &self.form_tag
    }

    /// First `m` columns (nested truncation of the same solve).
    pub fn truncated(&self, m: usize) -> Result<ModalBasis> {
        if m > self.modes() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {} modes to {m}",
                self.modes()
            )));
        }
        Ok(ModalBasis {
            w: self.w.columns(0, m).into_owned(),
            eigenvalues: self.eigenvalues.as_ref().map(|e| e[..m].to_vec()),
            metric: self.metric.clone(),
            form_tag: self.form_tag.clone(),
        })
    }

    pub fn m_norm(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.metric * u)).max(0.0).sqrt()
    }

    /// Projection coefficients `W^T M u` and the M-norm of the residual
    /// `u - W c`.
    pub fn project(&self, u: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        if u.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: u.len(),
            });
        }
        let coeffs = self.w.transpose() * (&self.metric * u);
        let residual = u - &self.w * &coeffs;
        Ok((coeffs, self.m_norm(&residual)))
    }

    /// `W^T M W - I`, largest absolute entry.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.w.transpose() * &self.metric * &self.w;
        let n = gram.nrows();
        (gram - DMatrix::identity(n, n)).amax()
    }

    /// Text persistence: `N m form_tag` header, eigenvalues line (`none`
    /// when absent), then W row-major.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.dimension(), self.modes(), self.form_tag);
        match &self.eigenvalues {
            None => out.push_str("none\n"),
            Some(eigs) => {
                let line: Vec<String> = eigs.iter().map(|&e| fmt_g17(e)).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        for i in 0..self.dimension() {
            let row: Vec<String> = (0..self.modes()).map(|j| fmt_g17(self.w[(i, j)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses the text form; the metric is not stored in the file and must
    /// be supplied by the caller.
    pub fn from_text(text: &str, metric: DMatrix<f64>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty modal basis file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse("modal header must be `N m form_tag`".into()));
        }
        let n: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse("bad N in modal header".into()))?;
        let m: usize = fields[1]
            .parse()
            .map_err(|_| Error::Parse("bad m in modal header".into()))?;
        let form_tag = fields[2].to_string();
        let eig_line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing eigenvalue line".into()))?;
        let eigenvalues = if eig_line.trim() == "none" {
            None
        } else {
            let eigs: Result<Vec<f64>> = eig_line
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad eigenvalue {f:?}")))
                })
                .collect();
            Some(eigs?)
        };
        let mut w = DMatrix::zeros(n, m);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing basis row {i}")))?;
            let row: Vec<&str> = line.split_whitespace().collect();
            if row.len() != m {
                return Err(Error::Parse(format!(
                    "basis row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            for (j, f) in row.iter().enumerate() {
                w[(i, j)] = f
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad entry in basis row {i}")))?;
            }
        }
        if metric.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: metric.nrows(),
            });
        }
        Ok(ModalBasis {
            w,
            eigenvalues,
            metric,
            form_tag,
        })
    }

    pub fn write_text<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Solves `A phi = lambda M phi` and returns the `modes` eigenvectors of
/// smallest eigenvalue, M-orthonormal, eigenvalues ascending. The sign of
/// each column is fixed so its largest-magnitude entry is positive.
pub fn solve_generalized_eig(
    a: &GramMatrix,
    m: &GramMatrix,
    modes: usize,
) -> Result<ModalBasis> {
    let n = a.size();
    if m.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.size(),
        });
    }
    if modes > n {
        return Err(Error::InvalidArgument(format!(
            "requested {modes} modes from an {n}-dimensional pencil"
        )));
    }
    let chol = Cholesky::new(m.matrix().clone()).ok_or_else(|| {
        Error::Decomposition("metric matrix M is not positive definite".into())
    })?;
    let l = chol.l();
    // B = L^{-1} A L^{-T}, symmetrized against roundoff.
    let y = l
        .solve_lower_triangular(a.matrix())
        .ok_or_else(|| Error::Decomposition("triangular solve failed".into()))?;
    let b_raw = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Decomposition("triangular solve failed".into()))?;
    let b = 0.5 * (&b_raw + b_raw.transpose());
    let eig = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());

    let lt = l.transpose();
    let mut w = DMatrix::zeros(n, modes);
    let mut eigenvalues = Vec::with_capacity(modes);
    for (col, &idx) in order.iter().take(modes).enumerate() {
        let y = eig.eigenvectors.column(idx).into_owned();
        let mut v = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Decomposition("triangular solve failed".into()))?;
        // Deterministic sign: largest-magnitude entry positive.
        let mut dominant = 0;
        for i in 1..n {
            if v[i].abs() > v[dominant].abs() {
                dominant = i;
            }
        }
        if v[dominant] < 0.0 {
            v = -v;
        }
        w.set_column(col, &v);
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    Ok(ModalBasis {
        w,
        eigenvalues: Some(eigenvalues),
        metric: m.matrix().clone(),
        form_tag: a.form().tag(),
    })
}

/// Worst-case relative projection errors `E_m` for `m = 0..=modes` over the
/// snapshot set, using nested truncations of `basis`. `E_0 = 1` by
/// convention (projection onto the empty basis).
pub fn projection_error_sweep(snapshots: &[DVector<f64>], basis: &ModalBasis) -> Result<Vec<f64>> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("no snapshots given".into()));
    }
    let m_max = basis.modes();
    let mut worst = vec![0.0_f64; m_max + 1];
    for u in snapshots {
        let norm = basis.m_norm(u);
        if norm <= 0.0 {
            return Err(Error::InvalidArgument(
                "snapshot with zero M-norm cannot be normalized".into(),
            ));
        }
        let (coeffs, _) = basis.project(u)?;
        // Peel modes off the residual vector one at a time; norms of the
        // updated vector stay accurate where the Pythagorean shortcut
        // |u|^2 - sum c_k^2 would cancel catastrophically near full rank.
        let mut residual = u.clone();
        for (m, slot) in worst.iter_mut().enumerate() {
            if m > 0 {
                residual -= basis.w.column(m - 1) * coeffs[m - 1];
            }
            *slot = slot.max(basis.m_norm(&residual) / norm);
        }
    }
    Ok(worst)
}

/// Worst-case objective values at the projected snapshots for
/// `m = 0..=modes`; `m = 0` evaluates the target at the zero vector.
pub fn objective_error_sweep<F>(
    snapshots: &[DVector<f64>],
    basis: &ModalBasis,
    mut target: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &DVector<f64>) -> Result<f64>,
{
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("no snapshots given".into()));
    }
    let m_max = basis.modes();
    let mut worst = vec![f64::NEG_INFINITY; m_max + 1];
    for (s, u) in snapshots.iter().enumerate() {
        let (coeffs, _) = basis.project(u)?;
        for (m, slot) in worst.iter_mut().enumerate() {
            let projected = if m == 0 {
                DVector::zeros(basis.dimension())
            } else {
                basis.w.columns(0, m) * coeffs.rows(0, m)
            };
            let value = target(s, &projected)?;
            *slot = slot.max(value);
        }
    }
    Ok(worst)
}

/// A functional of coefficient vectors with its gradient, as used in the
/// reduced-basis optimality analysis.
pub trait CoefficientFunctional {
    fn value(&self, u: &DVector<f64>) -> f64;
    fn gradient(&self, u: &DVector<f64>) -> DVector<f64>;
}

/// The two-sided report of the eigenbasis truncation bounds.
#[derive(Clone, Copy, Debug)]
pub struct EigenBoundReport {
    /// `|P_W^perp u*|_M`.
    pub residual_m_norm: f64,
    /// `L* / (xi lambda_{m+1})`.
    pub residual_bound: f64,
    /// `E_m - E` (reduced minus full minimum).
    pub optimality_gap: f64,
    /// `(L*)^2 / (xi lambda_{m+1})`.
    pub gap_bound: f64,
}

impl EigenBoundReport {
    pub fn holds(&self) -> bool {
        let tol = 1e-9;
        self.residual_m_norm <= self.residual_bound + tol
            && self.optimality_gap >= -1e-9
            && self.optimality_gap <= self.gap_bound + tol
    }
}

struct RegularizedFunctional<'a> {
    f: &'a dyn CoefficientFunctional,
    xi: f64,
    a: &'a DMatrix<f64>,
    /// Optional reduction matrix: objective over reduced coordinates.
    w: Option<&'a DMatrix<f64>>,
}

impl Objective for RegularizedFunctional<'_> {
    fn value(&self, c: &DVector<f64>) -> Result<f64> {
        let u = match self.w {
            Some(w) => w * c,
            None => c.clone(),
        };
        Ok(self.f.value(&u) + self.xi * u.dot(&(self.a * &u)))
    }

    fn value_and_gradient(&self, c: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let u = match self.w {
            Some(w) => w * c,
            None => c.clone(),
        };
        let value = self.f.value(&u) + self.xi * u.dot(&(self.a * &u));
        let grad_full = self.f.gradient(&u) + self.a * &u * (2.0 * self.xi);
        let grad = match self.w {
            Some(w) => w.transpose() * grad_full,
            None => grad_full,
        };
        Ok((value, grad))
    }

    fn dimension(&self) -> usize {
        match self.w {
            Some(w) => w.ncols(),
            None => self.a.nrows(),
        }
    }
}

fn solver_config() -> MinimizeConfig {
    MinimizeConfig {
        max_iters: 2000,
        grad_tol: 1e-12,
        ..Default::default()
    }
}

/// Verifies the eigenbasis truncation bounds for the regularized problem
/// `min f(u) + xi |u|_A^2`.
///
/// `basis` must hold `m + 1` modes: the first `m` span the reduced space
/// and the last eigenvalue supplies `lambda_{m+1}`. `u_star` is the full
/// minimizer and `l_star` a Lipschitz constant of `f` on the relevant ball;
/// the full and reduced minima are computed by running the optimizer to
/// tolerance 1e-12 (intended for quadratic instances, where that is exact).
pub fn eigen_bound_report(
    f: &dyn CoefficientFunctional,
    xi: f64,
    u_star: &DVector<f64>,
    basis: &ModalBasis,
    a: &DMatrix<f64>,
    l_star: f64,
) -> Result<EigenBoundReport> {
    if xi <= 0.0 {
        return Err(Error::InvalidArgument("xi must be positive".into()));
    }
    let eigs = basis.eigenvalues().ok_or_else(|| {
        Error::InvalidArgument("bound report needs an eigenvalue-ordered basis".into())
    })?;
    if basis.modes() < 1 {
        return Err(Error::InvalidArgument("need at least one mode".into()));
    }
    let m = basis.modes() - 1;
    let lambda_next = eigs[m];
    let reduced = basis.truncated(m)?;
    let (_, residual_m_norm) = reduced.project(u_star)?;
    let (residual_bound, gap_bound) = if lambda_next <= 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (
            l_star / (xi * lambda_next),
            l_star * l_star / (xi * lambda_next),
        )
    };

    // Full and reduced minima through the optimizer (exact on quadratics).
    let n = basis.dimension();
    let h_full = Metric::new(basis.metric() + a * xi)?;
    let full_obj = RegularizedFunctional { f, xi, a, w: None };
    let full = minimize(&full_obj, DVector::zeros(n), &h_full, &solver_config())?;

    let w = reduced.w().clone();
    let h_red = Metric::new(w.transpose() * (basis.metric() + a * xi) * &w)?;
    let red_obj = RegularizedFunctional {
        f,
        xi,
        a,
        w: Some(&w),
    };
    let red = minimize(&red_obj, DVector::zeros(m), &h_red, &solver_config())?;

    Ok(EigenBoundReport {
        residual_m_norm,
        residual_bound,
        optimality_gap: red.final_objective - full.final_objective,
        gap_bound,
    })
}

/// Which polynomial sources drive the gfem solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GfemSources {
    /// Volume sources only (`g = 0`).
    Volume,
    /// Boundary sources only (`f = 0`).
    Boundary,
    /// Both families (the default).
    Both,
}

impl GfemSources {
    fn volume(self) -> bool {
        matches!(self, GfemSources::Volume | GfemSources::Both)
    }
    fn boundary(self) -> bool {
        matches!(self, GfemSources::Boundary | GfemSources::Both)
    }
}

/// Builds a gfem basis: for every vector polynomial source `f` of total
/// degree at most `p` (and every boundary source `g` from the same family)
/// solve `A u = b(f, g)` with `b_i = int_Omega f . phi_i + int_dOmega g . phi_i`,
/// then M-orthonormalize the solutions, dropping directions whose singular
/// value falls below `1e-10` times the largest.
#[allow(clippy::too_many_arguments)]
pub fn build_gfem_basis(
    a: &GramMatrix,
    m: &GramMatrix,
    basis: &dyn VectorBasis,
    domain: &PolygonalDomain,
    tri: &Triangulation,
    quad_order: usize,
    degree: usize,
    sources: GfemSources,
) -> Result<ModalBasis> {
    let n = basis.len();
    if a.size() != n || m.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.size(),
        });
    }
    // Shift a semi-definite operator onto the metric to make it solvable.
    let chol = match Cholesky::new(a.matrix().clone()) {
        Some(c) => c,
        None => {
            let eps = 1e-10 * a.matrix().trace() / n as f64;
            Cholesky::new(a.matrix() + m.matrix() * eps).ok_or_else(|| {
                Error::Decomposition(
                    "operator matrix is singular even after the metric shift".into(),
                )
            })?
        }
    };

    let quad = tri.quadrature(quad_order)?;
    let monomials: Vec<(u32, u32)> = (0..=degree as u32)
        .flat_map(|total| (0..=total).map(move |i| (i, total - i)))
        .collect();
    let gauss = gauss_legendre_01(quad_order.max(2));

    let mut solutions: Vec<DVector<f64>> = Vec::new();
    for &(px, py) in &monomials {
        let mono = |x: Vec2| x.x.powi(px as i32) * x.y.powi(py as i32);
        for component in 0..2 {
            let source = |x: Vec2| -> Vec2 {
                match component {
                    0 => Vec2::new(mono(x), 0.0),
                    _ => Vec2::new(0.0, mono(x)),
                }
            };
            if sources.volume() {
                let mut rhs = DVector::zeros(n);
                for q in &quad {
                    let fval = source(q.point);
                    for k in 0..n {
                        rhs[k] += q.weight * fval.dot(&basis.eval(k, q.point, 0.0));
                    }
                }
                solutions.push(chol.solve(&rhs));
            }
            if sources.boundary() {
                // Facet-wise 1-D Gauss integration; only the tangential
                // part of g is active against a tangent basis.
                let mut rhs = DVector::zeros(n);
                for facet in domain.facets() {
                    let len = facet.length();
                    for &(s, w) in &gauss {
                        let x = facet.point_at(s);
                        let gval = source(x);
                        for k in 0..n {
                            rhs[k] += w * len * gval.dot(&basis.eval(k, x, 0.0));
                        }
                    }
                }
                solutions.push(chol.solve(&rhs));
            }
        }
    }

    orthonormalize_columns(solutions, m.matrix().clone(), "gfem".to_string())
}

/// M-orthonormalizes a set of vectors, dropping near-dependent directions
/// (singular value below `1e-10` of the largest). A second pass polishes
/// the result: directions that barely survive the cut come out of one pass
/// with roundoff amplified by the inverse singular value.
pub fn orthonormalize_columns(
    columns: Vec<DVector<f64>>,
    metric: DMatrix<f64>,
    form_tag: String,
) -> Result<ModalBasis> {
    let n = metric.nrows();
    if columns.is_empty() {
        return Err(Error::InvalidArgument("no columns to orthonormalize".into()));
    }
    let mut u = DMatrix::zeros(n, columns.len());
    for (j, c) in columns.iter().enumerate() {
        if c.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c.len(),
            });
        }
        u.set_column(j, c);
    }
    let w = orthonormalize_pass(&u, &metric, 1e-10)?;
    let mut w = orthonormalize_pass(&w, &metric, 1e-10)?;
    // Deterministic sign: dominant entry of each column positive.
    for mut col in w.column_iter_mut() {
        let mut dominant = 0;
        for i in 1..n {
            if col[i].abs() > col[dominant].abs() {
                dominant = i;
            }
        }
        if col[dominant] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(ModalBasis {
        w,
        eigenvalues: None,
        metric,
        form_tag,
    })
}

/// One spectral orthonormalization sweep: `C = U^T M U = V S^2 V^T` gives
/// `W = U V S^{-1}` with M-orthonormal columns, keeping singular values at
/// or above `cut` times the largest.
fn orthonormalize_pass(
    u: &DMatrix<f64>,
    metric: &DMatrix<f64>,
    cut: f64,
) -> Result<DMatrix<f64>> {
    let k = u.ncols();
    let c = u.transpose() * metric * u;
    let eig = SymmetricEigen::new(0.5 * (&c + c.transpose()));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let s_max = eig.eigenvalues[order[0]].max(0.0).sqrt();
    if s_max <= 0.0 {
        return Err(Error::Decomposition(
            "all columns are zero in the metric norm".into(),
        ));
    }
    let kept: Vec<(usize, f64)> = order
        .iter()
        .map(|&idx| (idx, eig.eigenvalues[idx].max(0.0).sqrt()))
        .filter(|&(_, s)| s >= cut * s_max && s > 0.0)
        .collect();
    #[cfg(test)]
    eprintln!("pass kept s = {:?}", kept.iter().map(|&(_, s)| s).collect::<Vec<_>>());
    let mut w = DMatrix::zeros(u.nrows(), kept.len());
    for (col, &(idx, s)) in kept.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        w.set_column(col, &(u * v / s));
    }
    Ok(w)
}

/// Convenience: worst-case projection-error sweep against several nested
/// bases computed from one pencil solve per form.
pub fn sweep_csv(ms: &[usize], e_proj: &[f64], e_obj: &[f64]) -> String {
    let mut out = String::from("m,E_proj,E_obj\n");
    for (&m, (&ep, &eo)) in ms.iter().zip(e_proj.iter().zip(e_obj)) {
        out.push_str(&format!("{m},{},{}\n", fmt_g17(ep), fmt_g17(eo)));
    }
    out
}

/// Parallel map over snapshots, preserved order (read-only inputs).
pub fn map_snapshots<R: Send, F>(snapshots: &[DVector<f64>], f: F) -> Vec<R>
where
    F: Fn(&DVector<f64>) -> R + Sync + Send,
{
    exec::map_collect(snapshots, f)
}
