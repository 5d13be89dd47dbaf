//! Truncated Witt vectors of F_{p^m}, realised as Z/p^N[x]/(g) for a monic
//! lift g of an irreducible polynomial over F_p, together with 2x2 matrices
//! over that ring and rank-two lattices in its fraction field.
//!
//! Elements carry no precision of their own. Every operation is exact modulo
//! p^N, and lattices are always stored in an exact canonical form, so
//! precision is only lost transiently inside a single normalisation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest residue degree the fixed-size coefficient arrays can hold.
pub const MAX_M: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WittError {
    #[error("invalid ring parameters: {0}")]
    InvalidParams(String),
    #[error("element is not a unit")]
    NotUnit,
    #[error("precision budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("lattice does not have full rank at the available precision: {0}")]
    NotSplit(String),
    #[error("division is not exact: {0}")]
    NotDivisible(String),
}

pub type WittResult<T> = Result<T, WittError>;

/// Element of Z/p^N[x]/(g), stored as coefficients c_0..c_{m-1}.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct WElem {
    c: [u32; MAX_M],
}

impl WElem {
    pub const ZERO: WElem = WElem { c: [0; MAX_M] };

    pub fn coeffs(&self, m: usize) -> &[u32] {
        &self.c[..m]
    }
}

/// 2x2 matrix over the Witt ring, row major.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Mat2(pub [[WElem; 2]; 2]);

/// Column vector.
pub type Vec2 = [WElem; 2];

/// Serializable description of a ring. `modulus` lists g's coefficients
/// from the constant term up to the leading 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingDescriptor {
    pub p: u32,
    pub m: usize,
    #[serde(rename = "N")]
    pub n: u32,
    pub modulus: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct WittRing {
    p: u32,
    m: usize,
    n: u32,
    reserve: u32,
    pn: u64,
    /// g = x^m + sum modulus[i] x^i
    modulus: Vec<u32>,
    /// frob[k][i] = phi^k(x^i) for 0 <= k < m
    frob: Vec<Vec<WElem>>,
}

fn is_prime(p: u32) -> bool {
    p >= 2 && (2..).take_while(|d| d * d <= p).all(|d| !p.is_multiple_of(d))
}

impl WittRing {
    /// Ring with the default reserve of N/2 digits for lattice work.
    pub fn new(p: u32, m: usize, n: u32) -> WittResult<Self> {
        Self::with_reserve(p, m, n, n / 2)
    }

    pub fn with_reserve(p: u32, m: usize, n: u32, reserve: u32) -> WittResult<Self> {
        if !is_prime(p) {
            return Err(WittError::InvalidParams(format!("p = {p} is not prime")));
        }
        if m == 0 || m > MAX_M {
            return Err(WittError::InvalidParams(format!("m = {m} outside 1..={MAX_M}")));
        }
        if n == 0 {
            return Err(WittError::InvalidParams("N must be positive".into()));
        }
        let pn = (p as u64).checked_pow(n).filter(|&v| v < (1u64 << 31));
        let Some(pn) = pn else {
            return Err(WittError::InvalidParams(format!("p^N = {p}^{n} does not fit in 31 bits")));
        };
        if reserve >= n {
            return Err(WittError::InvalidParams(format!("reserve {reserve} must be below N = {n}")));
        }
        let modulus = first_irreducible(p as u64, m);
        let mut ring = WittRing { p, m, n, reserve, pn, modulus, frob: Vec::new() };
        ring.build_frobenius()?;
        Ok(ring)
    }

    /// Rebuild a ring from its descriptor, checking that the stored modulus
    /// is the one this library would choose.
    pub fn from_descriptor(d: &RingDescriptor) -> WittResult<Self> {
        let ring = Self::new(d.p, d.m, d.n)?;
        if ring.descriptor().modulus != d.modulus {
            return Err(WittError::InvalidParams(format!(
                "modulus {:?} differs from the canonical choice {:?}",
                d.modulus,
                ring.descriptor().modulus
            )));
        }
        Ok(ring)
    }

    pub fn descriptor(&self) -> RingDescriptor {
        let mut modulus: Vec<u32> = self.modulus.clone();
        modulus.push(1);
        RingDescriptor { p: self.p, m: self.m, n: self.n, modulus }
    }

    pub fn p(&self) -> u32 {
        self.p
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn precision(&self) -> u32 {
        self.n
    }
    pub fn modulus_pn(&self) -> u64 {
        self.pn
    }
    /// Largest total elementary-divisor exponent a lattice may carry.
    pub fn budget(&self) -> u32 {
        self.n - self.reserve
    }

    fn build_frobenius(&mut self) -> WittResult<()> {
        let m = self.m;
        let x = self.x();
        // Newton iteration for the root of g congruent to x^p.
        let mut y = self.pow(&x, self.p as u64);
        let mut converged = false;
        for _ in 0..(2 * self.n + 4) {
            let gy = self.eval_modulus(&y, false);
            if gy == WElem::ZERO {
                converged = true;
                break;
            }
            let dgy = self.eval_modulus(&y, true);
            let inv = self.inv(&dgy)?;
            y = self.sub(&y, &self.mul(&gy, &inv));
        }
        if !converged {
            return Err(WittError::InvalidParams("Frobenius lift did not converge".into()));
        }
        let mut ypow = vec![self.one(); m];
        for i in 1..m {
            ypow[i] = self.mul(&ypow[i - 1], &y);
        }
        let identity: Vec<WElem> = (0..m).map(|i| self.monomial(i)).collect();
        let mut frob = vec![identity];
        for k in 1..m {
            let prev = &frob[k - 1];
            let row: Vec<WElem> = prev.iter().map(|e| self.apply_lin(e, &ypow)).collect();
            frob.push(row);
        }
        // phi^m must be the identity on x.
        let back = self.apply_lin(&frob[m - 1][1.min(m - 1)], &ypow);
        if m > 1 && back != x {
            return Err(WittError::InvalidParams("Frobenius lift has wrong order".into()));
        }
        self.frob = frob;
        Ok(())
    }

    fn apply_lin(&self, a: &WElem, images: &[WElem]) -> WElem {
        let mut out = WElem::ZERO;
        for (i, img) in images.iter().enumerate() {
            if a.c[i] != 0 {
                out = self.add(&out, &self.mul_int(img, a.c[i] as u64));
            }
        }
        out
    }

    /// g(y) or g'(y).
    fn eval_modulus(&self, y: &WElem, derivative: bool) -> WElem {
        let m = self.m;
        let mut coeffs: Vec<u64> = self.modulus.iter().map(|&c| c as u64).collect();
        coeffs.push(1);
        if derivative {
            coeffs = (1..=m).map(|i| (coeffs[i] * i as u64) % self.pn).collect();
        }
        let mut acc = WElem::ZERO;
        for &c in coeffs.iter().rev() {
            acc = self.mul(&acc, y);
            acc = self.add(&acc, &self.from_u64(c));
        }
        acc
    }

    // ---- element constructors ----

    pub fn zero(&self) -> WElem {
        WElem::ZERO
    }

    pub fn one(&self) -> WElem {
        self.from_u64(1)
    }

    pub fn x(&self) -> WElem {
        self.monomial(1)
    }

    fn monomial(&self, i: usize) -> WElem {
        if self.m == 1 && i == 1 {
            // x is the root of g = x + c_0, i.e. -c_0.
            return self.neg(&self.from_u64(self.modulus[0] as u64));
        }
        let mut e = WElem::ZERO;
        e.c[i] = 1 % self.pn as u32;
        e
    }

    pub fn from_u64(&self, v: u64) -> WElem {
        let mut e = WElem::ZERO;
        e.c[0] = (v % self.pn) as u32;
        e
    }

    pub fn from_i64(&self, v: i64) -> WElem {
        let r = v.rem_euclid(self.pn as i64) as u64;
        self.from_u64(r)
    }

    /// Element from little-endian coefficients, reduced mod p^N.
    pub fn from_coeffs(&self, cs: &[i64]) -> WittResult<WElem> {
        if cs.len() > self.m {
            return Err(WittError::InvalidParams(format!(
                "{} coefficients given for degree {}",
                cs.len(),
                self.m
            )));
        }
        let mut e = WElem::ZERO;
        for (i, &v) in cs.iter().enumerate() {
            e.c[i] = v.rem_euclid(self.pn as i64) as u32;
        }
        Ok(e)
    }

    pub fn coeffs(&self, a: &WElem) -> Vec<u32> {
        a.c[..self.m].to_vec()
    }

    pub fn p_pow(&self, k: u32) -> WElem {
        if k >= self.n {
            WElem::ZERO
        } else {
            self.from_u64((self.p as u64).pow(k))
        }
    }

    pub fn random<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> WElem {
        let mut e = WElem::ZERO;
        for i in 0..self.m {
            e.c[i] = rng.gen_range(0..self.pn) as u32;
        }
        e
    }

    /// Random unit: nonzero residue, arbitrary higher digits.
    pub fn random_unit<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> WElem {
        loop {
            let e = self.random(rng);
            if self.valuation(&e) == 0 {
                return e;
            }
        }
    }

    // ---- arithmetic ----

    pub fn add(&self, a: &WElem, b: &WElem) -> WElem {
        let mut e = WElem::ZERO;
        for i in 0..self.m {
            e.c[i] = ((a.c[i] as u64 + b.c[i] as u64) % self.pn) as u32;
        }
        e
    }

    pub fn neg(&self, a: &WElem) -> WElem {
        let mut e = WElem::ZERO;
        for i in 0..self.m {
            e.c[i] = ((self.pn - a.c[i] as u64) % self.pn) as u32;
        }
        e
    }

    pub fn sub(&self, a: &WElem, b: &WElem) -> WElem {
        self.add(a, &self.neg(b))
    }

    pub fn mul_int(&self, a: &WElem, k: u64) -> WElem {
        let k = k % self.pn;
        let mut e = WElem::ZERO;
        for i in 0..self.m {
            e.c[i] = ((a.c[i] as u64 * k) % self.pn) as u32;
        }
        e
    }

    pub fn mul(&self, a: &WElem, b: &WElem) -> WElem {
        let m = self.m;
        let pn = self.pn;
        let mut acc = [0u64; 2 * MAX_M];
        for i in 0..m {
            if a.c[i] == 0 {
                continue;
            }
            for j in 0..m {
                acc[i + j] = (acc[i + j] + (a.c[i] as u64 * b.c[j] as u64) % pn) % pn;
            }
        }
        // x^m = -sum modulus[i] x^i
        for d in (m..(2 * m).saturating_sub(1)).rev() {
            let t = acc[d];
            if t == 0 {
                continue;
            }
            acc[d] = 0;
            for i in 0..m {
                let c = self.modulus[i] as u64;
                if c != 0 {
                    acc[d - m + i] = (acc[d - m + i] + pn - (c * t) % pn) % pn;
                }
            }
        }
        if m == 1 {
            // degree zero quotient: nothing above the constant term
            return self.from_u64(acc[0]);
        }
        let mut e = WElem::ZERO;
        for i in 0..m {
            e.c[i] = acc[i] as u32;
        }
        e
    }

    pub fn pow(&self, a: &WElem, mut e: u64) -> WElem {
        let mut base = *a;
        let mut acc = self.one();
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(&acc, &base);
            }
            base = self.mul(&base, &base);
            e >>= 1;
        }
        acc
    }

    pub fn is_zero(&self, a: &WElem) -> bool {
        a.c[..self.m].iter().all(|&c| c == 0)
    }

    fn val_int(&self, mut c: u64) -> u32 {
        if c == 0 {
            return self.n;
        }
        let mut v = 0;
        while c.is_multiple_of(self.p as u64) {
            c /= self.p as u64;
            v += 1;
        }
        v
    }

    /// p-adic valuation; N for the zero element.
    pub fn valuation(&self, a: &WElem) -> u32 {
        a.c[..self.m].iter().map(|&c| self.val_int(c as u64)).min().unwrap_or(self.n)
    }

    pub fn is_unit(&self, a: &WElem) -> bool {
        self.valuation(a) == 0
    }

    /// Exact division by p^k. The top k digits of the result are unknown
    /// and are returned as zero.
    pub fn div_p_pow(&self, a: &WElem, k: u32) -> WittResult<WElem> {
        if k == 0 {
            return Ok(*a);
        }
        if self.valuation(a) < k {
            return Err(WittError::NotDivisible(format!("valuation {} < {}", self.valuation(a), k)));
        }
        let d = (self.p as u64).pow(k.min(self.n));
        let mut e = WElem::ZERO;
        for i in 0..self.m {
            e.c[i] = (a.c[i] as u64 / d) as u32;
        }
        Ok(e)
    }

    pub fn mul_p_pow(&self, a: &WElem, k: u32) -> WElem {
        if k >= self.n {
            return WElem::ZERO;
        }
        self.mul_int(a, (self.p as u64).pow(k))
    }

    /// Reduce every coefficient modulo p^k.
    pub fn reduce_mod_p_pow(&self, a: &WElem, k: u32) -> WElem {
        if k >= self.n {
            return *a;
        }
        let d = (self.p as u64).pow(k);
        let mut e = WElem::ZERO;
        for i in 0..self.m {
            e.c[i] = (a.c[i] as u64 % d) as u32;
        }
        e
    }

    pub fn eq_mod(&self, a: &WElem, b: &WElem, k: u32) -> bool {
        self.reduce_mod_p_pow(&self.sub(a, b), k) == WElem::ZERO
    }

    /// Inverse of a unit: Fermat in the residue field, then Newton lifting.
    pub fn inv(&self, a: &WElem) -> WittResult<WElem> {
        if !self.is_unit(a) {
            return Err(WittError::NotUnit);
        }
        let q = (self.p as u64).pow(self.m as u32);
        let mut y = self.pow(a, q - 2);
        let two = self.from_u64(2);
        let mut correct = 1u32;
        while correct < self.n {
            y = self.mul(&y, &self.sub(&two, &self.mul(a, &y)));
            correct *= 2;
        }
        debug_assert_eq!(self.mul(a, &y), self.one());
        Ok(y)
    }

    /// phi^k for any integer k (phi has order m).
    pub fn frobenius(&self, a: &WElem, k: i64) -> WElem {
        let k = k.rem_euclid(self.m as i64) as usize;
        if k == 0 {
            return *a;
        }
        self.apply_lin(a, &self.frob[k])
    }

    // ---- matrices ----

    pub fn mat(&self, rows: [[i64; 2]; 2]) -> Mat2 {
        Mat2([
            [self.from_i64(rows[0][0]), self.from_i64(rows[0][1])],
            [self.from_i64(rows[1][0]), self.from_i64(rows[1][1])],
        ])
    }

    pub fn mat_identity(&self) -> Mat2 {
        self.mat([[1, 0], [0, 1]])
    }

    pub fn mat_mul(&self, a: &Mat2, b: &Mat2) -> Mat2 {
        let mut out = [[WElem::ZERO; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.add(&self.mul(&a.0[i][0], &b.0[0][j]), &self.mul(&a.0[i][1], &b.0[1][j]));
            }
        }
        Mat2(out)
    }

    pub fn mat_vec(&self, a: &Mat2, v: &Vec2) -> Vec2 {
        [
            self.add(&self.mul(&a.0[0][0], &v[0]), &self.mul(&a.0[0][1], &v[1])),
            self.add(&self.mul(&a.0[1][0], &v[0]), &self.mul(&a.0[1][1], &v[1])),
        ]
    }

    pub fn mat_det(&self, a: &Mat2) -> WElem {
        self.sub(&self.mul(&a.0[0][0], &a.0[1][1]), &self.mul(&a.0[0][1], &a.0[1][0]))
    }

    /// Adjugate: adj(A) A = det(A) I.
    pub fn mat_adj(&self, a: &Mat2) -> Mat2 {
        Mat2([[a.0[1][1], self.neg(&a.0[0][1])], [self.neg(&a.0[1][0]), a.0[0][0]]])
    }

    pub fn mat_transpose(&self, a: &Mat2) -> Mat2 {
        Mat2([[a.0[0][0], a.0[1][0]], [a.0[0][1], a.0[1][1]]])
    }

    pub fn mat_scale(&self, a: &Mat2, s: &WElem) -> Mat2 {
        Mat2(a.0.map(|row| row.map(|e| self.mul(&e, s))))
    }

    pub fn mat_add(&self, a: &Mat2, b: &Mat2) -> Mat2 {
        let mut out = a.0;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = self.add(&a.0[i][j], &b.0[i][j]);
            }
        }
        Mat2(out)
    }

    pub fn mat_frobenius(&self, a: &Mat2, k: i64) -> Mat2 {
        Mat2(a.0.map(|row| row.map(|e| self.frobenius(&e, k))))
    }

    pub fn mat_valuation(&self, a: &Mat2) -> u32 {
        a.0.iter().flatten().map(|e| self.valuation(e)).min().unwrap_or(self.n)
    }

    pub fn mat_div_p_pow(&self, a: &Mat2, k: u32) -> WittResult<Mat2> {
        let mut out = a.0;
        for row in out.iter_mut() {
            for e in row.iter_mut() {
                *e = self.div_p_pow(e, k)?;
            }
        }
        Ok(Mat2(out))
    }

    /// Inverse of a matrix with unit determinant.
    pub fn mat_inv(&self, a: &Mat2) -> WittResult<Mat2> {
        let d = self.inv(&self.mat_det(a))?;
        Ok(self.mat_scale(&self.mat_adj(a), &d))
    }

    pub fn mat_eq_mod(&self, a: &Mat2, b: &Mat2, k: u32) -> bool {
        (0..2).all(|i| (0..2).all(|j| self.eq_mod(&a.0[i][j], &b.0[i][j], k)))
    }

    /// Exponents (v1, v2) with v1 <= v2 such that A = U diag(p^v1, p^v2) U'.
    pub fn elementary_divisors(&self, a: &Mat2) -> WittResult<(u32, u32)> {
        let v1 = self.mat_valuation(a);
        let dv = self.valuation(&self.mat_det(a));
        if v1 >= self.n || dv >= self.n {
            return Err(WittError::NotSplit(format!("matrix is singular to precision p^{}", self.n)));
        }
        let v2 = dv - v1;
        if v1 + v2 > self.budget() {
            return Err(WittError::BudgetExhausted(format!("elementary divisors ({v1}, {v2}) exceed budget {}", self.budget())));
        }
        Ok((v1, v2))
    }
}

/// Monic polynomial arithmetic over F_p on little-endian coefficient vectors.
mod fp_poly {
    pub fn trim(a: &mut Vec<u64>) {
        while a.len() > 1 && *a.last().unwrap() == 0 {
            a.pop();
        }
    }

    pub fn rem(a: &[u64], g: &[u64], p: u64) -> Vec<u64> {
        let mut r = a.to_vec();
        trim(&mut r);
        let dg = g.len() - 1;
        let lead_inv = inv(g[dg], p);
        while r.len() > dg && r.iter().any(|&c| c != 0) {
            let dr = r.len() - 1;
            let t = r[dr] * lead_inv % p;
            for i in 0..=dg {
                r[dr - dg + i] = (r[dr - dg + i] + p - t * g[i] % p) % p;
            }
            r.pop();
            trim(&mut r);
        }
        if r.is_empty() {
            r.push(0);
        }
        r
    }

    pub fn mul_mod(a: &[u64], b: &[u64], g: &[u64], p: u64) -> Vec<u64> {
        let mut out = vec![0u64; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] = (out[i + j] + x * y) % p;
            }
        }
        rem(&out, g, p)
    }

    pub fn pow_mod(a: &[u64], mut e: u64, g: &[u64], p: u64) -> Vec<u64> {
        let mut base = rem(a, g, p);
        let mut acc = vec![1u64];
        while e > 0 {
            if e & 1 == 1 {
                acc = mul_mod(&acc, &base, g, p);
            }
            base = mul_mod(&base, &base, g, p);
            e >>= 1;
        }
        acc
    }

    pub fn inv(a: u64, p: u64) -> u64 {
        let mut r = 1;
        let mut b = a % p;
        let mut e = p - 2;
        while e > 0 {
            if e & 1 == 1 {
                r = r * b % p;
            }
            b = b * b % p;
            e >>= 1;
        }
        r
    }

    pub fn gcd(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        trim(&mut a);
        trim(&mut b);
        while !(b.len() == 1 && b[0] == 0) {
            let r = rem(&a, &b, p);
            a = b;
            b = r;
        }
        a
    }

    pub fn sub(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
        let n = a.len().max(b.len());
        let mut out = vec![0u64; n];
        for i in 0..n {
            let x = a.get(i).copied().unwrap_or(0);
            let y = b.get(i).copied().unwrap_or(0);
            out[i] = (x + p - y) % p;
        }
        trim(&mut out);
        out
    }

    /// x^{p^k} mod g by repeated p-th powers.
    pub fn x_pow_p_pow(k: usize, g: &[u64], p: u64) -> Vec<u64> {
        let mut r = rem(&[0, 1], g, p);
        for _ in 0..k {
            r = pow_mod(&r, p, g, p);
        }
        r
    }

    /// Rabin's irreducibility test for monic g of degree m.
    pub fn is_irreducible(g: &[u64], p: u64) -> bool {
        let m = g.len() - 1;
        if m == 1 {
            return true;
        }
        let x = vec![0u64, 1];
        let full = sub(&x_pow_p_pow(m, g, p), &x, p);
        if !(full.len() == 1 && full[0] == 0) {
            return false;
        }
        let primes: Vec<usize> = (2..=m).filter(|&d| m.is_multiple_of(d) && (2..d).all(|e| d % e != 0)).collect();
        primes.iter().all(|&d| {
            let h = sub(&x_pow_p_pow(m / d, g, p), &x, p);
            let gg = gcd(g, &h, p);
            gg.len() == 1
        })
    }
}

/// Lexicographically first monic irreducible polynomial of degree m over
/// F_p, ordering by (c_{m-1}, ..., c_0). Returns c_0..c_{m-1}.
fn first_irreducible(p: u64, m: usize) -> Vec<u32> {
    let total = p.pow(m as u32);
    for idx in 0..total {
        // idx written in base p gives (c_{m-1}, ..., c_0), most significant first
        let mut cs = vec![0u64; m];
        let mut t = idx;
        for i in 0..m {
            cs[i] = t % p;
            t /= p;
        }
        let mut g = cs.clone();
        g.push(1);
        if fp_poly::is_irreducible(&g, p) {
            return cs.iter().map(|&c| c as u32).collect();
        }
    }
    unreachable!("irreducible polynomials exist in every degree")
}

/// Rank-two lattice p^shift * span{(p^a, 0), (x, p^b)} with x reduced
/// modulo p^a and min(a, b, v(x)) = 0.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Lattice2 {
    pub shift: i32,
    pub a: u32,
    pub b: u32,
    pub x: WElem,
}

impl Lattice2 {
    /// The standard lattice W^2.
    pub fn standard() -> Self {
        Lattice2 { shift: 0, a: 0, b: 0, x: WElem::ZERO }
    }

    /// Sum of the exponents of p in the elementary divisors relative to W^2.
    pub fn volume(&self) -> i64 {
        2 * self.shift as i64 + self.a as i64 + self.b as i64
    }

    /// Columns of the canonical basis, without the p^shift factor.
    pub fn basis(&self, ring: &WittRing) -> Mat2 {
        Mat2([[ring.p_pow(self.a), self.x], [WElem::ZERO, ring.p_pow(self.b)]])
    }

    pub fn scale(&self, k: i32) -> Self {
        Lattice2 { shift: self.shift + k, ..*self }
    }

    /// Canonical form of p^shift * span(gens), where gens are only known
    /// modulo p^prec.
    pub fn from_generators(ring: &WittRing, shift: i32, gens: &[Vec2], prec: u32) -> WittResult<Self> {
        let prec = prec.min(ring.precision());
        let content = gens
            .iter()
            .flat_map(|g| g.iter())
            .map(|e| ring.valuation(e))
            .min()
            .unwrap_or(ring.precision());
        if content >= prec {
            return Err(WittError::NotSplit("generators vanish at the available precision".into()));
        }
        let prec = prec - content;
        let shift = shift + content as i32;
        let mut gens: Vec<Vec2> = gens
            .iter()
            .map(|g| Ok([ring.div_p_pow(&g[0], content)?, ring.div_p_pow(&g[1], content)?]))
            .collect::<WittResult<_>>()?;

        // Pivot on the second coordinate of least valuation.
        let (piv, b) = gens
            .iter()
            .enumerate()
            .map(|(i, g)| (i, ring.valuation(&g[1])))
            .min_by_key(|&(_, v)| v)
            .unwrap();
        if b >= prec {
            return Err(WittError::NotSplit("second coordinates vanish".into()));
        }
        let pivot = gens.swap_remove(piv);
        let unit = ring.div_p_pow(&pivot[1], b)?;
        let uinv = ring.inv(&unit)?;
        let px = ring.mul(&pivot[0], &uinv);

        let mut firsts = Vec::with_capacity(gens.len());
        for g in &gens {
            let t = ring.mul(&ring.div_p_pow(&g[1], b)?, &uinv);
            firsts.push(ring.sub(&g[0], &ring.mul(&t, &pivot[0])));
        }
        let first_prec = prec - b;
        let a = firsts.iter().map(|e| ring.valuation(e)).min().unwrap_or(ring.precision());
        if a >= first_prec {
            return Err(WittError::NotSplit("first coordinates vanish after elimination".into()));
        }
        if a + b > ring.budget() {
            return Err(WittError::BudgetExhausted(format!(
                "lattice exponents a={a}, b={b} exceed budget {}",
                ring.budget()
            )));
        }
        let x = ring.reduce_mod_p_pow(&px, a);
        Ok(Lattice2 { shift, a, b, x })
    }

    /// p^extra * M phi^k(L). `prec` is the precision to which M is known.
    pub fn image(&self, ring: &WittRing, mat: &Mat2, frob_k: i64, extra: i32, prec: u32) -> WittResult<Self> {
        let basis = ring.mat_frobenius(&self.basis(ring), frob_k);
        let img = ring.mat_mul(mat, &basis);
        let cols = [[img.0[0][0], img.0[1][0]], [img.0[0][1], img.0[1][1]]];
        Lattice2::from_generators(ring, self.shift + extra, &cols, prec)
    }

    pub fn sum(&self, ring: &WittRing, other: &Lattice2) -> WittResult<Self> {
        let s = self.shift.min(other.shift);
        let mut gens = Vec::with_capacity(4);
        for l in [self, other] {
            let k = (l.shift - s) as u32;
            let b = l.basis(ring);
            gens.push([ring.mul_p_pow(&b.0[0][0], k), ring.mul_p_pow(&b.0[1][0], k)]);
            gens.push([ring.mul_p_pow(&b.0[0][1], k), ring.mul_p_pow(&b.0[1][1], k)]);
        }
        Lattice2::from_generators(ring, s, &gens, ring.precision())
    }

    pub fn contains(&self, ring: &WittRing, sub: &Lattice2) -> WittResult<bool> {
        Ok(self.sum(ring, sub)? == *self)
    }

    /// Length of self / sub; errors if sub is not contained in self.
    pub fn colength(&self, ring: &WittRing, sub: &Lattice2) -> WittResult<i64> {
        if !self.contains(ring, sub)? {
            return Err(WittError::NotSplit("colength requested for a non-sublattice".into()));
        }
        Ok(sub.volume() - self.volume())
    }

    /// Dual lattice {x : x^T P y in W for all y in self}, where P is known
    /// to precision `prec`.
    pub fn dual(&self, ring: &WittRing, pairing: &Mat2, prec: u32) -> WittResult<Self> {
        let d = ring.valuation(&ring.mat_det(pairing));
        if d >= prec {
            return Err(WittError::NotSplit("pairing is degenerate".into()));
        }
        let adj_p_t = ring.mat_transpose(&ring.mat_adj(pairing));
        let adj_b_t = ring.mat_transpose(&ring.mat_adj(&self.basis(ring)));
        let m = ring.mat_mul(&adj_p_t, &adj_b_t);
        let cols = [[m.0[0][0], m.0[1][0]], [m.0[0][1], m.0[1][1]]];
        let shift = -self.shift - (self.a + self.b) as i32 - d as i32;
        Lattice2::from_generators(ring, shift, &cols, prec)
    }

    /// Lattice reduction modulo p^k: true when self and other agree after
    /// adding p^k W^2 to both.
    pub fn eq_mod_p_pow(&self, ring: &WittRing, other: &Lattice2, k: i32) -> WittResult<bool> {
        let pk = Lattice2::standard().scale(k);
        Ok(self.sum(ring, &pk)? == other.sum(ring, &pk)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conway_style_moduli() {
        assert_eq!(WittRing::new(3, 2, 8).unwrap().descriptor().modulus, vec![1, 0, 1]);
        assert_eq!(WittRing::new(2, 3, 8).unwrap().descriptor().modulus, vec![1, 1, 0, 1]);
        assert_eq!(WittRing::new(2, 2, 8).unwrap().descriptor().modulus, vec![1, 1, 1]);
        assert_eq!(WittRing::new(5, 1, 4).unwrap().descriptor().modulus, vec![0, 1]);
    }

    #[test]
    fn frobenius_of_x_in_w2_f9() {
        let r = WittRing::new(3, 2, 2).unwrap();
        assert_eq!(r.frobenius(&r.x(), 1), r.neg(&r.x()));
    }

    #[test]
    fn frobenius_is_a_ring_map_of_order_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (p, m) in [(2, 4), (3, 3), (5, 2), (2, 7)] {
            let r = WittRing::new(p, m, 6).unwrap();
            for _ in 0..20 {
                let a = r.random(&mut rng);
                let b = r.random(&mut rng);
                assert_eq!(r.frobenius(&r.mul(&a, &b), 1), r.mul(&r.frobenius(&a, 1), &r.frobenius(&b, 1)));
                assert_eq!(r.frobenius(&a, m as i64), a);
                // phi reduces to the p-th power map mod p
                assert!(r.eq_mod(&r.frobenius(&a, 1), &r.pow(&a, p as u64), 1));
            }
        }
    }

    #[test]
    fn inverse_of_x_plus_one() {
        let r = WittRing::new(3, 2, 8).unwrap();
        let a = r.add(&r.x(), &r.one());
        let inv = r.inv(&a).unwrap();
        assert_eq!(r.mul(&a, &inv), r.one());
        assert_eq!(r.inv(&r.p_pow(1)), Err(WittError::NotUnit));
    }

    #[test]
    fn normalize_scalar_lattice() {
        let r = WittRing::new(3, 2, 8).unwrap();
        let l = Lattice2::standard().image(&r, &r.mat([[3, 0], [0, 3]]), 0, 0, 8).unwrap();
        assert_eq!(l, Lattice2::standard().scale(1));
        assert_eq!(l.basis(&r), r.mat_identity());
    }

    #[test]
    fn elementary_divisor_examples() {
        let r = WittRing::new(3, 2, 8).unwrap();
        assert_eq!(r.elementary_divisors(&r.mat([[1, 0], [0, 3]])).unwrap(), (0, 1));
        assert_eq!(r.elementary_divisors(&r.mat([[0, 1], [3, 0]])).unwrap(), (0, 1));
        assert_eq!(r.elementary_divisors(&r.mat([[3, 3], [0, 9]])).unwrap(), (1, 2));
        assert!(matches!(r.elementary_divisors(&r.mat([[1, 1], [1, 1]])), Err(WittError::NotSplit(_))));
    }

    #[test]
    fn lattice_inclusion_and_colength() {
        let r = WittRing::new(2, 2, 8).unwrap();
        let std = Lattice2::standard();
        let sub = std.image(&r, &r.mat([[1, 0], [0, 2]]), 0, 0, 8).unwrap();
        assert!(std.contains(&r, &sub).unwrap());
        assert!(!sub.contains(&r, &std).unwrap());
        assert_eq!(std.colength(&r, &sub).unwrap(), 1);
        assert_eq!(sub.sum(&r, &std).unwrap(), std);
    }

    #[test]
    fn dual_under_symplectic_form() {
        let r = WittRing::new(3, 2, 8).unwrap();
        let j = r.mat([[0, 1], [-1, 0]]);
        assert_eq!(Lattice2::standard().dual(&r, &j, 8).unwrap(), Lattice2::standard());
        let sub = Lattice2::standard().image(&r, &r.mat([[1, 0], [0, 3]]), 0, 0, 8).unwrap();
        let d = sub.dual(&r, &j, 8).unwrap();
        assert_eq!(d.volume(), -1);
        assert_eq!(d.dual(&r, &j, 8).unwrap(), sub);
    }
}
