//! Exact integrals of polynomials over ellipsoids.

use std::collections::{BTreeMap, HashMap};
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};

use super::gauss::gamma_half;
use crate::ball::Ellipsoid;

/// Moments `∫_{|u|<1} u^α du` of the unit ball, cached by multi-index.
#[derive(Debug, Default)]
pub struct MonomialMoments {
    cache: RwLock<HashMap<Vec<u32>, f64>>,
}

impl MonomialMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moment(&self, alpha: &[u32]) -> f64 {
        if alpha.iter().any(|a| a % 2 == 1) {
            return 0.0;
        }
        if let Some(v) = self.cache.read().expect("moment cache").get(alpha) {
            return *v;
        }
        let v = unit_ball_moment(alpha);
        self.cache.write().expect("moment cache").insert(alpha.to_vec(), v);
        v
    }

    pub fn cached(&self) -> usize {
        self.cache.read().expect("moment cache").len()
    }
}

/// Uncached moment: `Π Γ((α_i+1)/2) / Γ((|α|+n)/2 + 1)` for even `α`, else 0.
pub fn unit_ball_moment(alpha: &[u32]) -> f64 {
    if alpha.iter().any(|a| a % 2 == 1) {
        return 0.0;
    }
    let n = alpha.len() as u32;
    let total: u32 = alpha.iter().sum();
    let num: f64 = alpha.iter().map(|&a| gamma_half(a + 1)).product();
    num / gamma_half(total + n + 2)
}

/// Real polynomial on `R^n`, keyed by exponent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPolynomial {
    n: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl SpatialPolynomial {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        let mut p = Self::zero(n);
        p.add_term(vec![0; n], c);
        p
    }

    /// The coordinate function `x_i`.
    pub fn variable(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        let mut p = Self::zero(n);
        p.add_term(e, 1.0);
        p
    }

    pub fn monomial(alpha: Vec<u32>, c: f64) -> Self {
        let mut p = Self::zero(alpha.len());
        p.add_term(alpha, c);
        p
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &f64)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|a| a.iter().sum()).max().unwrap_or(0)
    }

    pub fn add_term(&mut self, alpha: Vec<u32>, c: f64) {
        debug_assert_eq!(alpha.len(), self.n);
        if c == 0.0 {
            return;
        }
        let e = self.terms.entry(alpha).or_insert(0.0);
        *e += c;
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.add_term(a.clone(), *c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.n);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), c * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.n);
        for (a, c) in &self.terms {
            for (b, d) in &other.terms {
                let e: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                out.add_term(e, c * d);
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(a, c)| c * a.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// `<K (x - c), x - c>`.
    pub fn quadratic_form(k: &DMatrix<f64>, c: &DVector<f64>) -> Self {
        let n = c.len();
        let shifted: Vec<Self> = (0..n)
            .map(|i| Self::variable(n, i).add(&Self::constant(n, -c[i])))
            .collect();
        let mut out = Self::zero(n);
        for i in 0..n {
            for j in 0..n {
                if k[(i, j)] != 0.0 {
                    out = out.add(&shifted[i].mul(&shifted[j]).scale(k[(i, j)]));
                }
            }
        }
        out
    }

    /// `y ↦ p(c + T y)`.
    pub fn compose_affine(&self, c: &DVector<f64>, t: &DMatrix<f64>) -> Self {
        let n = self.n;
        let deg = self.degree() as usize;
        let mut powers: Vec<Vec<Self>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut lin = Self::constant(n, c[i]);
            for j in 0..n {
                if t[(i, j)] != 0.0 {
                    lin.add_term(unit(n, j), t[(i, j)]);
                }
            }
            let mut pw = vec![Self::constant(n, 1.0)];
            for k in 1..=deg {
                let next = pw[k - 1].mul(&lin);
                pw.push(next);
            }
            powers.push(pw);
        }
        let mut out = Self::zero(n);
        for (a, coef) in &self.terms {
            let mut term = Self::constant(n, *coef);
            for (i, &k) in a.iter().enumerate() {
                if k > 0 {
                    term = term.mul(&powers[i][k as usize]);
                }
            }
            out = out.add(&term);
        }
        out
    }

    /// `∫_{|u|<1} p(u) du`.
    pub fn unit_ball_integral(&self, moments: &MonomialMoments) -> f64 {
        self.terms.iter().map(|(a, c)| c * moments.moment(a)).sum()
    }
}

fn unit(n: usize, j: usize) -> Vec<u32> {
    let mut e = vec![0; n];
    e[j] = 1;
    e
}

/// `∫_E p(x) dx`, by `x = c + T u` and unit-ball moments.
pub fn ellipsoid_polynomial_integral(p: &SpatialPolynomial, e: &Ellipsoid, moments: &MonomialMoments) -> f64 {
    let t = e.frame();
    let jac = t.determinant().abs();
    p.compose_affine(e.center(), t).unit_ball_integral(moments) * jac
}
