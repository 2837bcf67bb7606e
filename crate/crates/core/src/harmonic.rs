//! Polynomial solutions of `L u = 0`.
//!
//! `L = div(A∇) + <Bx, ∇> - ∂_t` lowers anisotropic degree by exactly two
//! (weights `2j+1` on block `j` of `x`, `2` on `t`), so its kernel on
//! polynomials splits by degree. Each graded piece is a small linear map
//! whose null space is computed over the rationals; the float matrices are
//! converted exactly, so the returned bases are certified.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

use crate::operator::{GroupPoint, OperatorSpec};
use crate::quadrature::moments::SpatialPolynomial;

/// Exponents of `x` and of `t`.
pub type Monomial = (Vec<u32>, u32);

/// Polynomial in `(x, t)` graded by the dilation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AnisoPolynomial {
    weights: Vec<u32>,
    terms: BTreeMap<Monomial, f64>,
}

impl AnisoPolynomial {
    pub fn zero(spec: &OperatorSpec) -> Self {
        Self { weights: spec.spatial_weights().to_vec(), terms: BTreeMap::new() }
    }

    pub fn constant(spec: &OperatorSpec, c: f64) -> Self {
        let mut p = Self::zero(spec);
        p.add_term(vec![0; spec.n()], 0, c);
        p
    }

    pub fn from_terms(spec: &OperatorSpec, terms: &[(Vec<u32>, u32, f64)]) -> Self {
        let mut p = Self::zero(spec);
        for (a, k, c) in terms {
            p.add_term(a.clone(), *k, *c);
        }
        p
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn add_term(&mut self, alpha: Vec<u32>, k: u32, c: f64) {
        assert_eq!(alpha.len(), self.n());
        if c == 0.0 {
            return;
        }
        let key = (alpha, k);
        let v = self.terms.entry(key.clone()).or_insert(0.0);
        *v += c;
        if *v == 0.0 {
            self.terms.remove(&key);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &f64)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest `||(coefficient)||_∞`.
    pub fn max_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn monomial_degree(&self, m: &Monomial) -> u32 {
        m.0.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<u32>() + 2 * m.1
    }

    pub fn aniso_degree(&self) -> u32 {
        self.terms.keys().map(|m| self.monomial_degree(m)).max().unwrap_or(0)
    }

    pub fn eval(&self, z: &GroupPoint) -> f64 {
        self.terms
            .iter()
            .map(|((a, k), c)| {
                c * a.iter().zip(z.x.iter()).map(|(&e, &xi)| xi.powi(e as i32)).product::<f64>() * z.t.powi(*k as i32)
            })
            .sum()
    }

    /// `x ↦ u(x, t)` at a fixed time.
    pub fn at_time(&self, t: f64) -> SpatialPolynomial {
        let mut out = SpatialPolynomial::zero(self.n());
        for ((a, k), c) in &self.terms {
            out.add_term(a.clone(), c * t.powi(*k as i32));
        }
        out
    }

    /// One monomial per line: `coefficient x1^a1 ... t^k`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((a, k), c) in &self.terms {
            let _ = write!(out, "{c:e}");
            for (i, e) in a.iter().enumerate() {
                if *e > 0 {
                    let _ = write!(out, " x{}^{}", i + 1, e);
                }
            }
            if *k > 0 {
                let _ = write!(out, " t^{k}");
            }
            out.push('\n');
        }
        out
    }
}

/// `L u` for float coefficients.
pub fn apply_l(u: &AnisoPolynomial, spec: &OperatorSpec) -> AnisoPolynomial {
    let mut out = AnisoPolynomial::zero(spec);
    for ((alpha, k), c) in u.terms() {
        for (beta, kk, f) in l_image(alpha, *k, spec) {
            out.add_term(beta, kk, c * f.float(spec));
        }
    }
    out
}

/// Coefficient of one term in the image of a monomial.
#[derive(Debug, Clone, Copy)]
enum Factor {
    A(usize, usize, i64),
    B(usize, usize, i64),
    Const(i64),
}

impl Factor {
    fn float(self, spec: &OperatorSpec) -> f64 {
        match self {
            Factor::A(i, j, k) => spec.a()[(i, j)] * k as f64,
            Factor::B(i, j, k) => spec.b()[(i, j)] * k as f64,
            Factor::Const(k) => k as f64,
        }
    }

    fn exact(self, a: &[Vec<BigRational>], b: &[Vec<BigRational>]) -> BigRational {
        match self {
            Factor::A(i, j, k) => a[i][j].clone() * BigInt::from(k),
            Factor::B(i, j, k) => b[i][j].clone() * BigInt::from(k),
            Factor::Const(k) => BigRational::from_integer(BigInt::from(k)),
        }
    }
}

/// Image of one monomial under `L`, skipping structurally zero entries.
fn l_image(alpha: &[u32], k: u32, spec: &OperatorSpec) -> Vec<(Vec<u32>, u32, Factor)> {
    let n = spec.n();
    let (a, b) = (spec.a(), spec.b());
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] == 0.0 {
                continue;
            }
            let mut beta = alpha.to_vec();
            let f = if i == j {
                if alpha[i] < 2 {
                    continue;
                }
                beta[i] -= 2;
                alpha[i] * (alpha[i] - 1)
            } else {
                if alpha[i] == 0 || alpha[j] == 0 {
                    continue;
                }
                beta[i] -= 1;
                beta[j] -= 1;
                alpha[i] * alpha[j]
            };
            out.push((beta, k, Factor::A(i, j, f as i64)));
        }
    }
    // (Bx)_i ∂_i = Σ_l B_il x_l ∂_i
    for i in 0..n {
        if alpha[i] == 0 {
            continue;
        }
        for l in 0..n {
            if b[(i, l)] == 0.0 {
                continue;
            }
            let mut beta = alpha.to_vec();
            beta[i] -= 1;
            beta[l] += 1;
            out.push((beta, k, Factor::B(i, l, alpha[i] as i64)));
        }
    }
    if k > 0 {
        out.push((alpha.to_vec(), k - 1, Factor::Const(-(k as i64))));
    }
    out
}

/// Kernel of `L` on polynomials of anisotropic degree `≤ max_degree`.
#[derive(Debug, Clone)]
pub struct HarmonicBasis {
    pub polynomials: Vec<AnisoPolynomial>,
    /// `kernel_dims[m]` is the kernel dimension in degree `m`.
    pub kernel_dims: Vec<usize>,
    /// Every element verified `L u = 0` in exact rational arithmetic.
    pub certified: bool,
}

/// All monomials of anisotropic degree exactly `m`.
pub fn monomials_of_degree(weights: &[u32], m: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut alpha = vec![0u32; weights.len()];
    fn rec(weights: &[u32], i: usize, left: u32, alpha: &mut Vec<u32>, out: &mut Vec<Monomial>) {
        if i == weights.len() {
            if left % 2 == 0 {
                out.push((alpha.clone(), left / 2));
            }
            return;
        }
        let mut e = 0;
        while e * weights[i] <= left {
            alpha[i] = e;
            rec(weights, i + 1, left - e * weights[i], alpha, out);
            e += 1;
        }
        alpha[i] = 0;
    }
    rec(weights, 0, m, &mut alpha, &mut out);
    out.sort();
    out
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite matrix entry")
}

/// Null space of `L` degree by degree, by exact row reduction.
pub fn harmonic_basis(spec: &OperatorSpec, max_degree: u32) -> HarmonicBasis {
    let n = spec.n();
    let w = spec.spatial_weights().to_vec();
    let a: Vec<Vec<BigRational>> = (0..n).map(|i| (0..n).map(|j| rational(spec.a()[(i, j)])).collect()).collect();
    let b: Vec<Vec<BigRational>> = (0..n).map(|i| (0..n).map(|j| rational(spec.b()[(i, j)])).collect()).collect();
    let mut polys = Vec::new();
    let mut dims = Vec::new();
    let mut certified = true;
    for m in 0..=max_degree {
        let cols = monomials_of_degree(&w, m);
        let rows = if m >= 2 { monomials_of_degree(&w, m - 2) } else { Vec::new() };
        let index: BTreeMap<&Monomial, usize> = rows.iter().enumerate().map(|(i, r)| (r, i)).collect();
        let mut mat = vec![vec![BigRational::zero(); cols.len()]; rows.len()];
        for (c, (alpha, k)) in cols.iter().enumerate() {
            for (beta, kk, f) in l_image(alpha, *k, spec) {
                let r = index[&(beta, kk)];
                mat[r][c] += f.exact(&a, &b);
            }
        }
        let null = null_space(mat, cols.len());
        dims.push(null.len());
        for v in null {
            let mut p = AnisoPolynomial::zero(spec);
            let mut exact: BTreeMap<Monomial, BigRational> = BTreeMap::new();
            for (c, coef) in v.iter().enumerate() {
                if !coef.is_zero() {
                    p.add_term(cols[c].0.clone(), cols[c].1, coef.to_f64().expect("finite"));
                    exact.insert(cols[c].clone(), coef.clone());
                }
            }
            certified &= exact_residual_is_zero(&exact, spec, &a, &b);
            polys.push(p);
        }
    }
    HarmonicBasis { polynomials: polys, kernel_dims: dims, certified }
}

fn exact_residual_is_zero(p: &BTreeMap<Monomial, BigRational>, spec: &OperatorSpec, a: &[Vec<BigRational>], b: &[Vec<BigRational>]) -> bool {
    let mut acc: BTreeMap<Monomial, BigRational> = BTreeMap::new();
    for ((alpha, k), c) in p {
        for (beta, kk, f) in l_image(alpha, *k, spec) {
            *acc.entry((beta, kk)).or_insert_with(BigRational::zero) += c.clone() * f.exact(a, b);
        }
    }
    acc.values().all(Zero::is_zero)
}

/// Basis of `{ v : M v = 0 }` via reduced row echelon form. Each vector
/// has a `1` in its free column and is scaled to integer-free form when
/// possible.
fn null_space(mut m: Vec<Vec<BigRational>>, ncols: usize) -> Vec<Vec<BigRational>> {
    let nrows = m.len();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..ncols {
        if row == nrows {
            break;
        }
        let Some(p) = (row..nrows).find(|&r| !m[r][col].is_zero()) else { continue };
        m.swap(row, p);
        let inv = BigRational::one() / m[row][col].clone();
        for v in m[row].iter_mut() {
            *v *= inv.clone();
        }
        for r in 0..nrows {
            if r != row && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for c in 0..ncols {
                    let delta = f.clone() * m[row][c].clone();
                    m[r][c] -= delta;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let mut out = Vec::new();
    for free in (0..ncols).filter(|c| !pivots.contains(c)) {
        let mut v = unit_vec(ncols, free);
        for (r, &pc) in pivots.iter().enumerate() {
            v[pc] = -m[r][free].clone();
        }
        out.push(clear_denominators(v));
    }
    out
}

fn unit_vec(n: usize, i: usize) -> Vec<BigRational> {
    let mut v = vec![BigRational::zero(); n];
    v[i] = BigRational::one();
    v
}

/// Scales by the lcm of the denominators so small rational inputs give
/// integer coefficients.
fn clear_denominators(v: Vec<BigRational>) -> Vec<BigRational> {
    let mut l = BigInt::one();
    for x in &v {
        l = l.lcm(x.denom());
    }
    if l.abs() > BigInt::from_u64(1 << 40).expect("small") {
        return v;
    }
    let s = BigRational::from_integer(l);
    v.into_iter().map(|x| x * s.clone()).collect()
}
