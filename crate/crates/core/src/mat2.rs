//! Real 2x2 matrices and first-order jets of them.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Row-major real 2x2 matrix `[[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub const fn diag(x: f64, y: f64) -> Self {
        Self::new(x, 0.0, 0.0, y)
    }

    /// Counter-clockwise rotation by `angle`.
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, -s, s, c)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a, self.c, self.b, self.d)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    /// Inverse; for unimodular matrices this is the adjugate.
    pub fn inverse(&self) -> Self {
        let det = self.det();
        Self::new(self.d / det, -self.b / det, -self.c / det, self.a / det)
    }

    /// `self * m * self^{-1}`.
    pub fn conjugate(&self, m: &Mat2) -> Self {
        *self * *m * self.inverse()
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }

    pub fn frobenius(&self) -> f64 {
        (self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d).sqrt()
    }

    pub fn dist(&self, other: &Mat2) -> f64 {
        (*self - *other).max_abs()
    }

    /// Unimodularity test `|det - 1| <= 1e-10 * max(1, |entries|^2)`.
    pub fn is_unimodular(&self) -> bool {
        let s = self.frobenius().powi(2).max(1.0);
        (self.det() - 1.0).abs() <= 1e-10 * s
    }

    /// Matrix exponential of a traceless matrix (closed form via `P^2 = -det(P) 1`).
    /// For general matrices the trace part is split off first.
    pub fn exp(&self) -> Self {
        let half_tr = 0.5 * self.trace();
        let p = *self - Mat2::IDENTITY.scale(half_tr);
        let d = p.det();
        let (c0, c1) = if d > 0.0 {
            let w = d.sqrt();
            (w.cos(), w.sin() / w)
        } else if d < 0.0 {
            let w = (-d).sqrt();
            (w.cosh(), w.sinh() / w)
        } else {
            (1.0, 1.0)
        };
        (Mat2::IDENTITY.scale(c0) + p.scale(c1)).scale(half_tr.exp())
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

/// A matrix together with its derivative with respect to one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetMat2 {
    pub value: Mat2,
    pub d: Mat2,
}

impl JetMat2 {
    pub fn constant(value: Mat2) -> Self {
        Self { value, d: Mat2::ZERO }
    }

    pub fn identity() -> Self {
        Self::constant(Mat2::IDENTITY)
    }
}

impl Mul for JetMat2 {
    type Output = JetMat2;
    fn mul(self, o: JetMat2) -> JetMat2 {
        JetMat2 {
            value: self.value * o.value,
            d: self.d * o.value + self.value * o.d,
        }
    }
}
