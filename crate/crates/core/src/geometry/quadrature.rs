//! Symmetric quadrature rules on triangles, orders 1 through 5.

use crate::error::{Error, Result};
use crate::Vec2;
use std::sync::OnceLock;

/// A physical quadrature point with its weight.
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    pub point: Vec2,
    pub weight: f64,
}

/// Highest supported rule order.
pub const fn max_quadrature_order() -> usize {
    5
}

type BaryRule = Vec<([f64; 3], f64)>;

/// Barycentric rule exact for total degree `order`; weights sum to 1.
pub(crate) fn triangle_rule(order: usize) -> Result<&'static BaryRule> {
    static RULES: OnceLock<[BaryRule; 5]> = OnceLock::new();
    let rules = RULES.get_or_init(build_rules);
    match order {
        1..=5 => Ok(&rules[order - 1]),
        _ => Err(Error::UnsupportedQuadratureOrder(order)),
    }
}

#[allow(clippy::excessive_precision)] // published rule constants
fn build_rules() -> [BaryRule; 5] {
    let centroid = [1.0 / 3.0; 3];
    let order1 = vec![(centroid, 1.0)];

    let order2 = cyclic(2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0);

    let mut order3 = vec![(centroid, -27.0 / 48.0)];
    order3.extend(cyclic(0.6, 0.2, 25.0 / 48.0));

    let mut order4 = cyclic(
        0.108_103_018_168_070_23,
        0.445_948_490_915_964_89,
        0.223_381_589_678_011_47,
    );
    order4.extend(cyclic(
        0.816_847_572_980_458_51,
        0.091_576_213_509_770_743,
        0.109_951_743_655_321_87,
    ));

    let s15 = 15.0_f64.sqrt();
    let b = (6.0 + s15) / 21.0;
    let d = (6.0 - s15) / 21.0;
    let mut order5 = vec![(centroid, 9.0 / 40.0)];
    order5.extend(cyclic(1.0 - 2.0 * b, b, (155.0 + s15) / 1200.0));
    order5.extend(cyclic(1.0 - 2.0 * d, d, (155.0 - s15) / 1200.0));

    [order1, order2, order3, order4, order5]
}

fn cyclic(a: f64, b: f64, w: f64) -> BaryRule {
    vec![([a, b, b], w), ([b, a, b], w), ([b, b, a], w)]
}
