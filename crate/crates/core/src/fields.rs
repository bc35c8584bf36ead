//! Analytic scalar fields with gradients: the synthetic data library for
//! distributed registration targets.

use crate::Vec2;
use std::sync::Arc;

/// A scalar field over a hold-all region, with an analytic gradient.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: Vec2) -> f64;
    fn gradient(&self, x: Vec2) -> Vec2;
}

pub type FieldRef = Arc<dyn ScalarField>;

#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn value(&self, _x: Vec2) -> f64 {
        self.0
    }
    fn gradient(&self, _x: Vec2) -> Vec2 {
        Vec2::zeros()
    }
}

/// Isotropic Gaussian bump `A exp(-|x - c|^2 / (2 w^2))`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianBump {
    pub center: Vec2,
    pub width: f64,
    pub amplitude: f64,
}

impl ScalarField for GaussianBump {
    fn value(&self, x: Vec2) -> f64 {
        let r2 = (x - self.center).norm_squared();
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        let d = x - self.center;
        let v = self.value(x);
        -d * (v / (self.width * self.width))
    }
}

/// Ridge `A exp(-(x1 - c)^2 / (2 w^2))`, constant along `x2`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianRidge {
    pub center_x: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl ScalarField for GaussianRidge {
    fn value(&self, x: Vec2) -> f64 {
        let d = x.x - self.center_x;
        self.amplitude * (-d * d / (2.0 * self.width * self.width)).exp()
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        let d = x.x - self.center_x;
        Vec2::new(-d * self.value(x) / (self.width * self.width), 0.0)
    }
}

/// Smoothed step across the parametric curve `x2 = offset + wiggle sin(pi x1)`:
/// `tanh((x2 - curve(x1)) / width)`.
#[derive(Clone, Copy, Debug)]
pub struct SmoothedStep {
    pub offset: f64,
    pub wiggle: f64,
    pub width: f64,
}

impl ScalarField for SmoothedStep {
    fn value(&self, x: Vec2) -> f64 {
        let arg = (x.y - self.curve(x.x)) / self.width;
        arg.tanh()
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        let arg = (x.y - self.curve(x.x)) / self.width;
        let sech2 = 1.0 - arg.tanh() * arg.tanh();
        Vec2::new(
            -sech2 * self.curve_slope(x.x) / self.width,
            sech2 / self.width,
        )
    }
}

impl SmoothedStep {
    fn curve(&self, x1: f64) -> f64 {
        self.offset + self.wiggle * (std::f64::consts::PI * x1).sin()
    }

    fn curve_slope(&self, x1: f64) -> f64 {
        self.wiggle * std::f64::consts::PI * (std::f64::consts::PI * x1).cos()
    }
}

/// Translates a field by a fixed shift: `u(x - shift)`.
#[derive(Clone)]
pub struct Shifted {
    pub inner: FieldRef,
    pub shift: Vec2,
}

impl ScalarField for Shifted {
    fn value(&self, x: Vec2) -> f64 {
        self.inner.value(x - self.shift)
    }
    fn gradient(&self, x: Vec2) -> Vec2 {
        self.inner.gradient(x - self.shift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn check_gradient(field: &dyn ScalarField, x: Vec2) {
        let h = 1e-6;
        let g = field.gradient(x);
        let fd_x = (field.value(x + Vec2::new(h, 0.0)) - field.value(x - Vec2::new(h, 0.0)))
            / (2.0 * h);
        let fd_y = (field.value(x + Vec2::new(0.0, h)) - field.value(x - Vec2::new(0.0, h)))
            / (2.0 * h);
        assert_relative_eq!(g.x, fd_x, epsilon = 1e-8, max_relative = 1e-6);
        assert_relative_eq!(g.y, fd_y, epsilon = 1e-8, max_relative = 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = Vec2::new(0.42, 0.67);
        check_gradient(
            &GaussianBump {
                center: Vec2::new(0.5, 0.5),
                width: 0.2,
                amplitude: 1.5,
            },
            x,
        );
        check_gradient(
            &GaussianRidge {
                center_x: 0.3,
                width: 0.15,
                amplitude: 1.0,
            },
            x,
        );
        check_gradient(
            &SmoothedStep {
                offset: 0.5,
                wiggle: 0.2,
                width: 0.1,
            },
            x,
        );
    }

    #[test]
    fn shifted_field_translates() {
        let base: FieldRef = Arc::new(GaussianRidge {
            center_x: 0.3,
            width: 0.1,
            amplitude: 1.0,
        });
        let shifted = Shifted {
            inner: base.clone(),
            shift: Vec2::new(0.2, 0.0),
        };
        assert_relative_eq!(
            shifted.value(Vec2::new(0.5, 0.9)),
            base.value(Vec2::new(0.3, 0.9)),
            epsilon = 1e-15
        );
    }
}
