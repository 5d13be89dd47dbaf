//! Rational Picard bookkeeping in the span of the classes [omega_tau] for
//! tau outside S_inf: the Hasse relation matrix, divisor classes of the
//! partial Hasse invariants, fiber degrees and the ampleness inequalities.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::places::{ArchPlace, PlaceError, ShimuraDatum};
use crate::strata::{stratum_descriptor, CaseTag, StrataError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PicardError {
    #[error(transparent)]
    Place(#[from] PlaceError),
    #[error(transparent)]
    Strata(#[from] StrataError),
    #[error("every archimedean place lies in S; the basis is empty")]
    EmptyBasis,
    #[error("the normal bundle formula needs {0}")]
    Precondition(String),
    #[error("p must be a prime at least 2")]
    BadP,
}

pub type PicardResult<T> = Result<T, PicardError>;

pub fn p_pow(p: u32, n: u32) -> BigRational {
    BigRational::from_integer(BigInt::from(p).pow(n))
}

fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Rational class in the basis {[omega_tau]}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PicardVector {
    pub coeffs: BTreeMap<ArchPlace, BigRational>,
}

impl PicardVector {
    pub fn zero(basis: &[ArchPlace]) -> Self {
        PicardVector { coeffs: basis.iter().map(|&t| (t, BigRational::zero())).collect() }
    }

    pub fn unit(basis: &[ArchPlace], tau: ArchPlace) -> Self {
        let mut v = Self::zero(basis);
        v.coeffs.insert(tau, BigRational::one());
        v
    }

    pub fn get(&self, tau: ArchPlace) -> BigRational {
        self.coeffs.get(&tau).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn add_scaled(&mut self, tau: ArchPlace, c: &BigRational) {
        let e = self.coeffs.entry(tau).or_insert_with(BigRational::zero);
        *e += c;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HasseMatrix {
    pub basis: Vec<ArchPlace>,
    pub entries: Vec<Vec<BigRational>>,
}

impl HasseMatrix {
    pub fn index_of(&self, tau: ArchPlace) -> Option<usize> {
        self.basis.iter().position(|&t| t == tau)
    }

    /// Exact determinant by fraction-field Gaussian elimination.
    pub fn determinant(&self) -> BigRational {
        let mut a = self.entries.clone();
        let n = a.len();
        let mut det = BigRational::one();
        for col in 0..n {
            let Some(piv) = (col..n).find(|&r| !a[r][col].is_zero()) else {
                return BigRational::zero();
            };
            if piv != col {
                a.swap(piv, col);
                det = -det;
            }
            det *= &a[col][col];
            for r in col + 1..n {
                if a[r][col].is_zero() {
                    continue;
                }
                let factor = &a[r][col] / &a[col][col];
                for c in col..n {
                    let sub = &factor * &a[col][c];
                    a[r][c] -= sub;
                }
            }
        }
        det
    }

    /// Exact inverse by Gauss-Jordan; None when singular.
    pub fn inverse(&self) -> Option<Vec<Vec<BigRational>>> {
        let n = self.entries.len();
        let mut a = self.entries.clone();
        let mut inv: Vec<Vec<BigRational>> =
            (0..n).map(|i| (0..n).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }).collect()).collect();
        for col in 0..n {
            let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
            a.swap(piv, col);
            inv.swap(piv, col);
            let d = a[col][col].clone();
            for c in 0..n {
                a[col][c] /= &d;
                inv[col][c] /= &d;
            }
            for r in 0..n {
                if r == col || a[r][col].is_zero() {
                    continue;
                }
                let factor = a[r][col].clone();
                for c in 0..n {
                    let s1 = &factor * &a[col][c];
                    a[r][c] -= s1;
                    let s2 = &factor * &inv[col][c];
                    inv[r][c] -= s2;
                }
            }
        }
        Some(inv)
    }

    /// Column tau of C, i.e. the class p^{n_tau} e_{tau^-} - e_tau.
    pub fn column(&self, tau: ArchPlace) -> Option<PicardVector> {
        let j = self.index_of(tau)?;
        Some(PicardVector {
            coeffs: self.basis.iter().enumerate().map(|(i, &t)| (t, self.entries[i][j].clone())).collect(),
        })
    }
}

/// Places outside S_inf, across all primes, in cycle order.
pub fn basis(datum: &ShimuraDatum) -> Vec<ArchPlace> {
    (0..datum.places.num_primes()).flat_map(|q| datum.free_places(q)).collect()
}

fn check_p(p: u32) -> PicardResult<()> {
    if p < 2 || (2..p).take_while(|d| d * d <= p).any(|d| p.is_multiple_of(d)) {
        return Err(PicardError::BadP);
    }
    Ok(())
}

/// -1 on the diagonal and p^{n_tau} at (tau^-, tau). When tau^- = tau the two
/// entries fold onto the diagonal.
pub fn hasse_matrix(datum: &ShimuraDatum, p: u32) -> PicardResult<HasseMatrix> {
    check_p(p)?;
    let basis = basis(datum);
    if basis.is_empty() {
        return Err(PicardError::EmptyBasis);
    }
    let n = basis.len();
    let mut entries = vec![vec![BigRational::zero(); n]; n];
    for (j, &tau) in basis.iter().enumerate() {
        entries[j][j] -= BigRational::one();
        let r = datum.n_tau(tau)?;
        let i = basis.iter().position(|&t| t == r.minus).expect("tau^- lies outside S");
        entries[i][j] += p_pow(p, r.n);
    }
    Ok(HasseMatrix { basis, entries })
}

/// Class of the vanishing locus of h_tau: p^{n_tau} e_{tau^-} - e_tau.
pub fn divisor_class(datum: &ShimuraDatum, p: u32, tau: ArchPlace) -> PicardResult<PicardVector> {
    check_p(p)?;
    let r = datum.n_tau(tau)?;
    let mut v = PicardVector::zero(&basis(datum));
    v.add_scaled(r.minus, &p_pow(p, r.n));
    v.add_scaled(tau, &int(-1));
    Ok(v)
}

/// Degree of a class on a P^1-fiber of the projection attached to tau.
pub fn fiber_degree(datum: &ShimuraDatum, p: u32, class: &PicardVector, tau: ArchPlace) -> PicardResult<BigRational> {
    check_p(p)?;
    let r = datum.n_tau(tau)?;
    Ok(p_pow(p, r.n) * class.get(tau) - class.get(r.minus))
}

/// Degree of the normal bundle of the divisor of h_tau on O(1) of a fiber.
pub fn normal_bundle_class(datum: &ShimuraDatum, p: u32, tau: ArchPlace) -> PicardResult<BigInt> {
    check_p(p)?;
    let r = datum.n_tau(tau)?;
    if datum.free_places(tau.prime).len() < 2 {
        return Err(PicardError::Precondition("at least two places outside S at the prime".into()));
    }
    let desc = stratum_descriptor(datum, &BTreeSet::from([tau]))?;
    if !matches!(desc.case_tags[tau.prime], CaseTag::A1 | CaseTag::B1) {
        return Err(PicardError::Precondition("the prime must not be in case B2 or a pass-through case".into()));
    }
    Ok(-BigInt::from(2) * BigInt::from(p).pow(r.n))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Inequality {
    pub tau: String,
    pub lhs: String,
    pub rhs: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AmpleReport {
    pub pass: bool,
    pub violations: Vec<String>,
    pub note: &'static str,
}

pub const AMPLE_NOTE: &str = "necessary condition only";

/// The cone p^{n_tau} t_tau > t_{tau^-} as one inequality per tau.
pub fn ample_cone(datum: &ShimuraDatum, p: u32) -> PicardResult<Vec<Inequality>> {
    check_p(p)?;
    let b = basis(datum);
    let pos = |t: ArchPlace| b.iter().position(|&x| x == t).unwrap();
    b.iter()
        .map(|&tau| {
            let r = datum.n_tau(tau)?;
            Ok(Inequality {
                tau: datum.places.arch_label(tau),
                lhs: format!("{}*t[{}]", BigInt::from(p).pow(r.n), pos(tau)),
                rhs: format!("t[{}]", pos(r.minus)),
            })
        })
        .collect()
}

pub fn ample_necessary(
    datum: &ShimuraDatum,
    p: u32,
    t: &BTreeMap<ArchPlace, BigRational>,
) -> PicardResult<AmpleReport> {
    check_p(p)?;
    let zero = BigRational::zero();
    let mut violations = Vec::new();
    for tau in basis(datum) {
        let r = datum.n_tau(tau)?;
        let lhs = p_pow(p, r.n) * t.get(&tau).unwrap_or(&zero);
        if lhs <= *t.get(&r.minus).unwrap_or(&zero) {
            violations.push(datum.places.arch_label(tau));
        }
    }
    Ok(AmpleReport { pass: violations.is_empty(), violations, note: AMPLE_NOTE })
}

/// True when every entry of the inverse Hasse matrix is nonnegative, which
/// gives positivity of the coefficients solved from C x = (positive vector).
pub fn inverse_is_nonnegative(m: &HasseMatrix) -> Option<bool> {
    m.inverse().map(|inv| inv.iter().flatten().all(|x| !x.is_negative()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(n: i64) -> BigRational {
        int(n)
    }

    fn single(f: u32, s: &[u32]) -> ShimuraDatum {
        ShimuraDatum::single(f, true, s, None).unwrap()
    }

    /// Per prime, C restricted to the free places is -I plus a weighted
    /// k-cycle whose weights multiply to p^f, so det = prod (-1)^k (1 - p^f).
    fn det_oracle(datum: &ShimuraDatum, p: u32) -> BigRational {
        (0..datum.places.num_primes())
            .map(|q| {
                let k = datum.free_places(q).len() as u32;
                if k == 0 {
                    return BigRational::one();
                }
                let sign = if k.is_multiple_of(2) { 1 } else { -1 };
                int(sign) * (BigRational::one() - p_pow(p, datum.places.f(q)))
            })
            .product()
    }

    #[test]
    fn matrix_examples() {
        let d = single(2, &[]);
        let m = hasse_matrix(&d, 3).unwrap();
        assert_eq!(m.entries, vec![vec![q(-1), q(3)], vec![q(3), q(-1)]]);
        assert_eq!(m.determinant(), q(-8));

        let d = ShimuraDatum::single(3, true, &[0, 1], Some(0)).unwrap();
        let m = hasse_matrix(&d, 2).unwrap();
        assert_eq!(m.entries, vec![vec![q(7)]]);

        let d = ShimuraDatum::single(3, true, &[], Some(0)).unwrap();
        let m = hasse_matrix(&d, 2).unwrap();
        assert_eq!(m.determinant().abs(), q(7));
        assert_eq!(m.entries[0][1], q(2));
        assert_eq!(m.entries[1][2], q(2));
        assert_eq!(m.entries[2][0], q(2));

        let full = ShimuraDatum::single(2, true, &[0, 1], None).unwrap();
        assert_eq!(hasse_matrix(&full, 3), Err(PicardError::EmptyBasis));
        assert_eq!(hasse_matrix(&d, 4), Err(PicardError::BadP));
    }

    #[test]
    fn divisor_class_examples() {
        let d = single(2, &[]);
        let t = |i| d.places.arch(0, i).unwrap();
        let c = divisor_class(&d, 3, t(1)).unwrap();
        assert_eq!((c.get(t(0)), c.get(t(1))), (q(3), q(-1)));

        let neg = |a: u32| (10 - a % 10) % 10;
        let d = ShimuraDatum::single(10, true, &[neg(2), neg(6)], None).unwrap();
        let t = |i| d.places.arch(0, i).unwrap();
        let c = divisor_class(&d, 5, t(neg(5))).unwrap();
        assert_eq!(c.get(t(neg(7))), q(25));
        assert_eq!(c.get(t(neg(5))), q(-1));

        // sum of classes equals C applied to the all-ones vector
        let m = hasse_matrix(&d, 5).unwrap();
        for (i, &row) in m.basis.iter().enumerate() {
            let total: BigRational = m.basis.iter().map(|&tau| divisor_class(&d, 5, tau).unwrap().get(row)).sum();
            let c_ones: BigRational = m.entries[i].iter().sum();
            assert_eq!(total, c_ones);
        }
    }

    #[test]
    fn fiber_degree_examples() {
        let d = single(2, &[]);
        let t = |i| d.places.arch(0, i).unwrap();
        let mut ones = PicardVector::zero(&basis(&d));
        ones.add_scaled(t(0), &q(1));
        ones.add_scaled(t(1), &q(1));
        assert_eq!(fiber_degree(&d, 3, &ones, t(1)).unwrap(), q(2));
        let c = divisor_class(&d, 3, t(1)).unwrap();
        assert_eq!(fiber_degree(&d, 3, &c, t(1)).unwrap(), q(-6));

        let d = single(6, &[]);
        let t = |i| d.places.arch(0, i).unwrap();
        let far = PicardVector::unit(&basis(&d), t(3));
        assert_eq!(fiber_degree(&d, 3, &far, t(1)).unwrap(), q(0));
    }

    #[test]
    fn normal_bundle_examples() {
        let d = single(2, &[]);
        let t = |i| d.places.arch(0, i).unwrap();
        assert_eq!(normal_bundle_class(&d, 3, t(1)).unwrap(), BigInt::from(-6));
        assert_eq!(normal_bundle_class(&d, 2, t(1)).unwrap(), BigInt::from(-4));
        let d = single(4, &[0, 2]);
        let t = |i| d.places.arch(0, i).unwrap();
        assert_eq!(normal_bundle_class(&d, 3, t(1)).unwrap(), BigInt::from(-18));
        let lone = ShimuraDatum::single(3, true, &[0, 1], Some(0)).unwrap();
        assert!(normal_bundle_class(&lone, 3, lone.places.arch(0, 2).unwrap()).is_err());
    }

    #[test]
    fn ample_examples() {
        let d = single(2, &[]);
        let t = |i| d.places.arch(0, i).unwrap();
        let v = |a: i64, b: i64| BTreeMap::from([(t(0), q(a)), (t(1), q(b))]);
        assert!(ample_necessary(&d, 3, &v(1, 1)).unwrap().pass);
        let r = ample_necessary(&d, 3, &v(1, 5)).unwrap();
        assert_eq!(r.violations, vec![d.places.arch_label(t(0))]);
        assert!(!ample_necessary(&d, 3, &v(0, 1)).unwrap().pass);
        let cone = ample_cone(&d, 3).unwrap();
        assert_eq!((cone[1].lhs.as_str(), cone[1].rhs.as_str()), ("3*t[1]", "t[0]"));
    }

    fn random_datum() -> impl Strategy<Value = (ShimuraDatum, u32)> {
        (1u32..=12, any::<u16>(), prop::bool::ANY, prop::sample::select(vec![2u32, 3, 5, 7])).prop_filter_map(
            "nonempty basis",
            |(f, mask, split, p)| {
                let s: Vec<u32> = (0..f).filter(|i| mask >> i & 1 == 1).collect();
                if s.len() as u32 == f {
                    return None;
                }
                ShimuraDatum::single(f, split, &s, None).ok().map(|d| (d, p))
            },
        )
    }

    proptest! {
        #[test]
        fn determinant_matches_cycle_formula((d, p) in random_datum()) {
            let m = hasse_matrix(&d, p).unwrap();
            let det = m.determinant();
            prop_assert!(!det.is_zero());
            prop_assert_eq!(det, det_oracle(&d, p));
            prop_assert_eq!(inverse_is_nonnegative(&m), Some(true));
        }

        #[test]
        fn fiber_of_own_divisor((d, p) in random_datum(), pick: prop::sample::Index) {
            let b = basis(&d);
            prop_assume!(b.len() >= 2);
            let tau = b[pick.index(b.len())];
            let n = d.n_tau(tau).unwrap().n;
            let c = divisor_class(&d, p, tau).unwrap();
            let deg = fiber_degree(&d, p, &c, tau).unwrap();
            prop_assert_eq!(&deg, &(q(-2) * p_pow(p, n)));
            prop_assert_eq!(BigRational::from_integer(normal_bundle_class(&d, p, tau).unwrap()), deg);
        }

        #[test]
        fn ample_implies_positive((d, p) in random_datum(), raw in prop::collection::vec((-20i64..20, 1i64..6), 12)) {
            let b = basis(&d);
            let t: BTreeMap<_, _> = b.iter().zip(raw.iter())
                .map(|(&tau, &(a, den))| (tau, BigRational::new(BigInt::from(a), BigInt::from(den))))
                .collect();
            if ample_necessary(&d, p, &t).unwrap().pass {
                prop_assert!(t.values().all(|x| x.is_positive()));
            }
        }
    }
}
