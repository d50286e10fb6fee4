//! Three-term explicit algebraic Reynolds-stress closure with the
//! Speziale–Sarkar–Gatski pressure–strain constants.
//!
//! Given the strain invariant `eta1 = S^2` and the rotation invariant
//! `eta2 = R^2`, the closure coefficient `G1` is the real root of the monic
//! cubic `G^3 + p G^2 + q G + r = 0` selected by the sign of the cubic
//! discriminant `D`; `G2` and `G3` follow from `G1` by rational maps.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible magnitude of the `G2`/`G3` denominator.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

/// The five raw SSG model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSsgConstants {
    pub c1_0: f64,
    pub c1_1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl RawSsgConstants {
    pub const SSG: RawSsgConstants = RawSsgConstants {
        c1_0: 3.4,
        c1_1: 1.8,
        c2: 0.36,
        c3: 1.25,
        c4: 0.4,
    };
}

/// SSG constants together with the derived `L` coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsgConstants {
    pub c1_0: f64,
    pub c1_1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub l1_0: f64,
    pub l1_1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
}

impl SsgConstants {
    pub fn ssg() -> Self {
        derive_l_constants(RawSsgConstants::SSG)
    }
}

impl Default for SsgConstants {
    fn default() -> Self {
        Self::ssg()
    }
}

pub fn derive_l_constants(c: RawSsgConstants) -> SsgConstants {
    SsgConstants {
        c1_0: c.c1_0,
        c1_1: c.c1_1,
        c2: c.c2,
        c3: c.c3,
        c4: c.c4,
        l1_0: c.c1_0 / 2.0 - 1.0,
        l1_1: c.c1_1 + 2.0,
        l2: c.c2 / 2.0 - 2.0 / 3.0,
        l3: c.c3 / 2.0 - 1.0,
        l4: c.c4 / 2.0 - 1.0,
    }
}

/// Coefficients of the cubic for `G1` and the quantities used to pick its root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicIntermediates {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub big_d: f64,
    /// Only defined in the three-real-root case (`big_d < 0`).
    pub theta: Option<f64>,
}

impl CubicIntermediates {
    /// Value of the monic cubic at `g`.
    pub fn residual(&self, g: f64) -> f64 {
        ((g + self.p) * g + self.q) * g + self.r
    }
}

/// Which side of the discriminant sign change an input lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// `D >= 0` (a single real root; `D == 0` is grouped here).
    #[serde(rename = "D_GE_0")]
    DGe0,
    /// `D < 0` (three real roots).
    #[serde(rename = "D_LT_0")]
    DLt0,
}

impl Region {
    pub fn label(self) -> &'static str {
        match self {
            Region::DGe0 => "D_GE_0",
            Region::DLt0 => "D_LT_0",
        }
    }

    pub fn other(self) -> Region {
        match self {
            Region::DGe0 => Region::DLt0,
            Region::DLt0 => Region::DGe0,
        }
    }
}

/// An input pair with its closure coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosurePoint {
    pub eta1: f64,
    pub eta2: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl ClosurePoint {
    pub fn inputs(&self) -> [f64; 2] {
        [self.eta1, self.eta2]
    }

    pub fn outputs(&self) -> [f64; 3] {
        [self.g1, self.g2, self.g3]
    }
}

fn check_domain(eta1: f64, eta2: f64) -> Result<()> {
    if !(eta1 > 0.0 && eta1.is_finite()) || !(eta2 > 0.0 && eta2.is_finite()) {
        return Err(Error::Domain(format!(
            "eta1 and eta2 must be positive and finite, got ({eta1}, {eta2})"
        )));
    }
    Ok(())
}

pub fn compute_intermediates(eta1: f64, eta2: f64, k: &SsgConstants) -> Result<CubicIntermediates> {
    check_domain(eta1, eta2)?;
    let s = eta1 * k.l1_1;
    let s2 = s * s;
    let p = -2.0 * k.l1_0 / s;
    let r = -k.l1_0 * k.l2 / s2;
    let q = (k.l1_0 * k.l1_0 + s * k.l2 - 2.0 / 3.0 * eta1 * k.l3 * k.l3
        + 2.0 * eta2 * k.l4 * k.l4)
        / s2;
    let a = q - p * p / 3.0;
    let b = (2.0 * p * p * p - 9.0 * p * q + 27.0 * r) / 27.0;
    let big_d = b * b / 4.0 + a * a * a / 27.0;
    let theta = if big_d < 0.0 {
        // big_d < 0 forces a < 0, so the root is real and positive.
        let cos_arg = (-b / 2.0) / (-a * a * a / 27.0).sqrt();
        Some(cos_arg.clamp(-1.0, 1.0).acos())
    } else {
        None
    };
    Ok(CubicIntermediates {
        p,
        q,
        r,
        a,
        b,
        big_d,
        theta,
    })
}

/// Real root of the cubic chosen by the discriminant branch.
pub fn g1_root(c: &CubicIntermediates) -> f64 {
    match c.theta {
        None => {
            // Cardano. The two cube roots multiply to -a/3, so the smaller one
            // is recovered from the larger instead of by a cancelling sum.
            let half_b = -c.b / 2.0;
            let sqrt_d = c.big_d.sqrt();
            let t = if half_b >= 0.0 { half_b + sqrt_d } else { half_b - sqrt_d };
            let u = t.cbrt();
            let v = if u != 0.0 { -c.a / (3.0 * u) } else { 0.0 };
            -c.p / 3.0 + u + v
        }
        Some(theta) => {
            let amp = 2.0 * (-c.a / 3.0).sqrt();
            let shift = if c.b <= 0.0 { 0.0 } else { 2.0 * PI / 3.0 };
            -c.p / 3.0 + amp * (theta / 3.0 + shift).cos()
        }
    }
}

pub fn closure_coefficients_with(eta1: f64, eta2: f64, k: &SsgConstants) -> Result<ClosurePoint> {
    let c = compute_intermediates(eta1, eta2, k)?;
    let g1 = g1_root(&c);
    let denom = k.l1_0 - eta1 * k.l1_1 * g1;
    if denom.abs() < DENOMINATOR_GUARD {
        return Err(Error::Singular(format!(
            "G2/G3 denominator {denom:e} at ({eta1}, {eta2})"
        )));
    }
    Ok(ClosurePoint {
        eta1,
        eta2,
        g1,
        g2: -k.l4 * g1 / denom,
        g3: 2.0 * k.l3 * g1 / denom,
    })
}

/// Closure coefficients with the standard SSG constants.
pub fn closure_coefficients(eta1: f64, eta2: f64) -> Result<ClosurePoint> {
    closure_coefficients_with(eta1, eta2, &SsgConstants::ssg())
}

pub fn classify_region(eta1: f64, eta2: f64) -> Result<Region> {
    let c = compute_intermediates(eta1, eta2, &SsgConstants::ssg())?;
    Ok(region_of(&c))
}

pub fn region_of(c: &CubicIntermediates) -> Region {
    if c.big_d >= 0.0 {
        Region::DGe0
    } else {
        Region::DLt0
    }
}
