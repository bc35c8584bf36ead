//! Dense univariate polynomials with exact calculus.
//!
//! The tangential polynomial bases are tensor products of 1-D polynomials,
//! so values, derivatives, and L2 norms reduce to exact operations here.

/// Polynomial stored by ascending power: `coeffs[k]` multiplies `x^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Poly { coeffs: vec![c] }
    }

    /// `x^k`.
    pub fn monomial(k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = 1.0;
        Poly { coeffs }
    }

    /// The bubble `(x - a)(b - x)`, vanishing at both interval endpoints.
    pub fn bubble(a: f64, b: f64) -> Self {
        Poly::new(vec![-a * b, a + b, -1.0])
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        Poly::new(coeffs)
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut coeffs = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Poly::new(coeffs)
    }

    pub fn scaled(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|&c| s * c).collect())
    }

    /// Exact integral over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let anti = |x: f64| -> f64 {
            let mut acc = 0.0;
            for (k, &c) in self.coeffs.iter().enumerate().rev() {
                acc = acc * x + c / (k as f64 + 1.0);
            }
            acc * x
        };
        anti(b) - anti(a)
    }
}

/// Legendre polynomial of degree `k` shifted to `[0, 1]`, so that
/// `shifted_legendre(0, t) = 1` and `shifted_legendre(1, t) = 2t - 1`.
pub fn shifted_legendre(k: usize, t: f64) -> f64 {
    let s = 2.0 * t - 1.0;
    let mut p_prev = 1.0;
    if k == 0 {
        return p_prev;
    }
    let mut p = s;
    for n in 1..k {
        let nf = n as f64;
        let p_next = ((2.0 * nf + 1.0) * s * p - nf * p_prev) / (nf + 1.0);
        p_prev = p;
        p = p_next;
    }
    p
}

/// Gauss-Legendre nodes and weights on `[0, 1]`, computed by Newton
/// iteration on the standard interval. Exact for polynomials of degree
/// `2n - 1`.
pub fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "need at least one node");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev initial guess on [-1, 1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1, 1] -> [0, 1]; nodes come out descending, so prepend.
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}
