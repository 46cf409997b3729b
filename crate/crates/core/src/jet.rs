//! Second-order forward-mode jets.
//!
//! A [`Jet`] carries a value together with its gradient and Hessian with
//! respect to up to [`MAX_DIM`] independent variables. Arithmetic propagates
//! all three by the product and chain rules, so evaluating an expression on
//! seeded jets yields exact (to rounding) first and second derivatives.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Largest spatial dimension supported by the fixed-size jets.
pub const MAX_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; MAX_DIM],
    pub h: [[f64; MAX_DIM]; MAX_DIM],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet {
            v,
            g: [0.0; MAX_DIM],
            h: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    /// The independent variable with index `i`, valued `v`.
    pub fn variable(v: f64, i: usize) -> Self {
        let mut j = Jet::constant(v);
        j.g[i] = 1.0;
        j
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.v`.
    pub fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Jet::constant(f0);
        for i in 0..MAX_DIM {
            out.g[i] = f1 * self.g[i];
            for k in i..MAX_DIM {
                let hik = f1 * self.h[i][k] + f2 * self.g[i] * self.g[k];
                out.h[i][k] = hik;
                out.h[k][i] = hik;
            }
        }
        out
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn cosh(self) -> Self {
        let (c, s) = (self.v.cosh(), self.v.sinh());
        self.chain(c, s, c)
    }

    pub fn sinh(self) -> Self {
        let (c, s) = (self.v.cosh(), self.v.sinh());
        self.chain(s, c, s)
    }

    pub fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.v))
    }

    pub fn ln(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(self.v.ln(), r, -r * r)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.v += o.v;
        for i in 0..MAX_DIM {
            self.g[i] += o.g[i];
            for k in 0..MAX_DIM {
                self.h[i][k] += o.h[i][k];
            }
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.v = -self.v;
        for i in 0..MAX_DIM {
            self.g[i] = -self.g[i];
            for k in 0..MAX_DIM {
                self.h[i][k] = -self.h[i][k];
            }
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = Jet::constant(self.v * o.v);
        for i in 0..MAX_DIM {
            out.g[i] = self.v * o.g[i] + o.v * self.g[i];
            // upper triangle only, mirrored, so the Hessian stays exactly symmetric
            for k in i..MAX_DIM {
                let hik = self.v * o.h[i][k]
                    + o.v * self.h[i][k]
                    + self.g[i] * o.g[k]
                    + o.g[i] * self.g[k];
                out.h[i][k] = hik;
                out.h[k][i] = hik;
            }
        }
        out
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_second_order() {
        // f = x0^2 * x1 at (1, 2)
        let x0 = Jet::variable(1.0, 0);
        let x1 = Jet::variable(2.0, 1);
        let f = x0 * x0 * x1;
        assert_eq!(f.v, 2.0);
        assert_eq!(&f.g[..2], &[4.0, 1.0]);
        assert_eq!(f.h[0][0], 4.0);
        assert_eq!(f.h[0][1], 2.0);
        assert_eq!(f.h[1][0], 2.0);
        assert_eq!(f.h[1][1], 0.0);
    }

    #[test]
    fn quotient_matches_closed_form() {
        // f = 1 / x at x = 2: f' = -1/4, f'' = 1/4
        let f = Jet::constant(1.0) / Jet::variable(2.0, 0);
        assert!((f.v - 0.5).abs() < 1e-16);
        assert!((f.g[0] + 0.25).abs() < 1e-16);
        assert!((f.h[0][0] - 0.25).abs() < 1e-16);
    }
}
