//! Reduced covariant Dieudonne modules of points at one prime, modelled as
//! lattice families inside a fixed isocrystal over a truncated Witt ring.
//!
//! Every embedding `e` of E above the prime carries a rank-two module
//! D_e = W^2. Frobenius `F: D_{sigma^{-1} e} -> D_e` is `x -> F_e phi(x)`,
//! Verschiebung `V: D_e -> D_{sigma^{-1} e}` is `y -> V_e phi^{-1}(y)`, and
//! the pairing between D_e and D_{e^c} is `<x, y> = x^T P_e y`. A point is a
//! family of lattices L_e stable under F and V whose V-coranks match the
//! signature declared by its datum.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::places::{
    ArchPlace, DatumJson, EmbE, EvenPlaceSet, PlaceError, PlaceSystem, PrimeType, ShimuraDatum,
};
use crate::strata::{
    delta_sets, dimension_count_check, lift_assignment, run_length, signature_from_lift, stratum_descriptor,
    target_datum, CaseTag, DeltaSets, LiftChoice, LiftOptions, SignatureProfile, StrataError,
};
use crate::witt::{Lattice2, Mat2, RingDescriptor, Vec2, WElem, WittError, WittRing};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DieudonneError {
    #[error(transparent)]
    Witt(#[from] WittError),
    #[error(transparent)]
    Place(#[from] PlaceError),
    #[error(transparent)]
    Strata(#[from] StrataError),
    #[error("the simulator works with one prime at a time, datum has {0}")]
    MultiplePrimes(usize),
    #[error("prime type {0:?} is not supported here")]
    Unsupported(PrimeType),
    #[error("expected {expected} {what}, got {found}")]
    Shape { what: &'static str, expected: usize, found: usize },
    #[error("ring degree {found} does not match the cycle length {expected}")]
    RingDegree { expected: usize, found: usize },
    #[error("F V != p at {0}")]
    FvNotP(String),
    #[error("V F != p at {0}")]
    VfNotP(String),
    #[error("F at {0} has determinant of valuation above 2")]
    FTooDeep(String),
    #[error("pairing at {0} is not perfect")]
    PairingNotPerfect(String),
    #[error("pairings at {0} and its conjugate are not opposite transposes")]
    PairingNotAlternating(String),
    #[error("pairing incompatible with F at {0}")]
    PairingIncompatible(String),
    #[error("signature mismatch at {emb}: declared {expected}, found {found}")]
    SignatureMismatch { emb: String, expected: u8, found: i64 },
    #[error("lattice family is not stable under {op} at {emb}")]
    NotStable { op: &'static str, emb: String },
    #[error("duality fails at {emb}: {detail}")]
    Duality { emb: String, detail: String },
    #[error("Hasse invariants at {0} and its conjugate disagree")]
    HasseAsymmetric(String),
    #[error("T is not contained in the stratum of the point: {0} is missing")]
    NotInStratum(String),
    #[error("{what} at {emb} has colength {found}, expected {expected}")]
    Colength { what: &'static str, emb: String, found: i64, expected: i64 },
    #[error("no J line given at {0}")]
    MissingLine(String),
    #[error("datum mismatch: {0}")]
    DatumMismatch(String),
    #[error("identity check failed: {0}")]
    Identity(String),
    #[error("malformed point data: {0}")]
    Malformed(String),
}

pub type DieudonneResult<T> = Result<T, DieudonneError>;

const PRIME: usize = 0;

fn single_prime(sys: &PlaceSystem) -> DieudonneResult<()> {
    match sys.num_primes() {
        1 => Ok(()),
        n => Err(DieudonneError::MultiplePrimes(n)),
    }
}

/// Degree m of the residue field: f when the prime splits in E, 2f otherwise.
pub fn ring_degree(sys: &PlaceSystem) -> usize {
    let f = sys.f(PRIME) as usize;
    if sys.e_split(PRIME) {
        f
    } else {
        2 * f
    }
}

fn embs(sys: &PlaceSystem) -> Vec<EmbE> {
    sys.all_emb(PRIME).collect()
}

fn idx(e: EmbE) -> usize {
    e.k as usize
}

/// The standard symplectic form [[0, 1], [-1, 0]].
pub fn standard_pairing(ring: &WittRing) -> Mat2 {
    ring.mat([[0, 1], [-1, 0]])
}

/// p M^{-1} together with v(det M). Applied to F_e, phi^{-1} of the result
/// is V_e.
fn p_inverse(ring: &WittRing, m: &Mat2, emb: &str) -> DieudonneResult<(Mat2, u32)> {
    let det = ring.mat_det(m);
    let v = ring.valuation(&det);
    if v > 2 {
        return Err(DieudonneError::FTooDeep(emb.to_string()));
    }
    let unit = ring.div_p_pow(&det, v)?;
    let uinv = ring.inv(&unit)?;
    let scaled = ring.mat_scale(&ring.mat_adj(m), &uinv);
    let out = if v == 0 {
        ring.mat_scale(&scaled, &ring.p_pow(1))
    } else {
        ring.mat_div_p_pow(&scaled, v - 1)?
    };
    Ok((out, v))
}

/// Frobenius, Verschiebung and pairing matrices on every component, known
/// modulo p^prec.
#[derive(Clone, Debug)]
pub struct Isocrystal {
    ring: WittRing,
    places: PlaceSystem,
    f_mats: Vec<Mat2>,
    v_mats: Vec<Mat2>,
    pairings: Vec<Mat2>,
    prec: u32,
}

impl Isocrystal {
    /// Derives V = phi^{-1}(p F^{-1}); precision drops by the largest
    /// valuation of a determinant of F.
    pub fn new(ring: WittRing, places: PlaceSystem, f_mats: Vec<Mat2>, pairings: Vec<Mat2>) -> DieudonneResult<Self> {
        let prec = ring.precision();
        Self::derive(ring, places, f_mats, pairings, prec)
    }

    /// Takes F on the components 0..f and the standard pairing everywhere;
    /// the remaining F are forced by compatibility with the pairing.
    pub fn from_half(ring: WittRing, places: PlaceSystem, half: Vec<Mat2>) -> DieudonneResult<Self> {
        single_prime(&places)?;
        let f = places.f(PRIME) as usize;
        if half.len() != f {
            return Err(DieudonneError::Shape { what: "F matrices", expected: f, found: half.len() });
        }
        let mut f_mats = half.clone();
        let mut loss = 0;
        for (k, m) in half.iter().enumerate() {
            let det = ring.mat_det(m);
            let v = ring.valuation(&det);
            if v > 2 {
                return Err(DieudonneError::FTooDeep(places.emb_label(places.emb(PRIME, k as u32)?)));
            }
            // p F / det F
            let uinv = ring.inv(&ring.div_p_pow(&det, v)?)?;
            let scaled = ring.mat_scale(m, &uinv);
            let conj = if v == 0 {
                ring.mat_scale(&scaled, &ring.p_pow(1))
            } else {
                ring.mat_div_p_pow(&scaled, v - 1)?
            };
            loss = loss.max(v);
            f_mats.push(conj);
        }
        let prec = ring.precision().checked_sub(loss).filter(|&p| p > 0).ok_or_else(|| {
            WittError::BudgetExhausted("no precision left after completing F".into())
        })?;
        let pairings = vec![standard_pairing(&ring); 2 * f];
        Self::derive(ring, places, f_mats, pairings, prec)
    }

    fn derive(
        ring: WittRing,
        places: PlaceSystem,
        f_mats: Vec<Mat2>,
        pairings: Vec<Mat2>,
        prec_in: u32,
    ) -> DieudonneResult<Self> {
        single_prime(&places)?;
        let mut v_mats = Vec::with_capacity(f_mats.len());
        let mut loss = 0;
        for (k, m) in f_mats.iter().enumerate() {
            let label = places.emb_label(places.emb(PRIME, k as u32)?);
            let (pinv, v) = p_inverse(&ring, m, &label)?;
            loss = loss.max(v);
            v_mats.push(ring.mat_frobenius(&pinv, -1));
        }
        let prec = prec_in.checked_sub(loss).filter(|&p| p > 0).ok_or_else(|| {
            WittError::BudgetExhausted("no precision left after deriving V".into())
        })?;
        Self::with_all(ring, places, f_mats, v_mats, pairings, prec)
    }

    /// Assembles and validates fully specified data.
    pub fn with_all(
        ring: WittRing,
        places: PlaceSystem,
        f_mats: Vec<Mat2>,
        v_mats: Vec<Mat2>,
        pairings: Vec<Mat2>,
        prec: u32,
    ) -> DieudonneResult<Self> {
        single_prime(&places)?;
        let m = ring_degree(&places);
        if ring.m() != m {
            return Err(DieudonneError::RingDegree { expected: m, found: ring.m() });
        }
        let n = 2 * places.f(PRIME) as usize;
        for (what, v) in [("F matrices", &f_mats), ("V matrices", &v_mats), ("pairings", &pairings)] {
            if v.len() != n {
                return Err(DieudonneError::Shape { what, expected: n, found: v.len() });
            }
        }
        let prec = prec.min(ring.precision());
        let iso = Isocrystal { ring, places, f_mats, v_mats, pairings, prec };
        iso.validate()?;
        Ok(iso)
    }

    fn validate(&self) -> DieudonneResult<()> {
        let ring = &self.ring;
        let sys = &self.places;
        let p_id = ring.mat_scale(&ring.mat_identity(), &ring.p_pow(1));
        for e in embs(sys) {
            let label = sys.emb_label(e);
            let (fe, ve, pe) = (self.f_mat(e), self.v_mat(e), self.pairing(e));
            if !ring.mat_eq_mod(&ring.mat_mul(fe, &ring.mat_frobenius(ve, 1)), &p_id, self.prec) {
                return Err(DieudonneError::FvNotP(label));
            }
            if !ring.mat_eq_mod(&ring.mat_mul(ve, &ring.mat_frobenius(fe, -1)), &p_id, self.prec) {
                return Err(DieudonneError::VfNotP(label));
            }
            if !ring.is_unit(&ring.mat_det(pe)) {
                return Err(DieudonneError::PairingNotPerfect(label));
            }
            let ec = sys.conj(e);
            let minus_t = ring.mat_scale(&ring.mat_transpose(pe), &ring.from_i64(-1));
            if !ring.mat_eq_mod(self.pairing(ec), &minus_t, self.prec) {
                return Err(DieudonneError::PairingNotAlternating(label));
            }
            let lhs = ring.mat_mul(&ring.mat_mul(&ring.mat_transpose(fe), pe), self.f_mat(ec));
            let prev = self.pairing(sys.shift_emb(e, -1));
            let rhs = ring.mat_scale(&ring.mat_frobenius(prev, 1), &ring.p_pow(1));
            if !ring.mat_eq_mod(&lhs, &rhs, self.prec) {
                return Err(DieudonneError::PairingIncompatible(label));
            }
        }
        Ok(())
    }

    pub fn ring(&self) -> &WittRing {
        &self.ring
    }

    pub fn places(&self) -> &PlaceSystem {
        &self.places
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    pub fn f_mat(&self, e: EmbE) -> &Mat2 {
        &self.f_mats[idx(e)]
    }

    pub fn v_mat(&self, e: EmbE) -> &Mat2 {
        &self.v_mats[idx(e)]
    }

    pub fn pairing(&self, e: EmbE) -> &Mat2 {
        &self.pairings[idx(e)]
    }

    /// p^extra F(L) inside D_e, for L inside D_{sigma^{-1} e}.
    pub fn f_image(&self, e: EmbE, l: &Lattice2, extra: i32) -> DieudonneResult<Lattice2> {
        Ok(l.image(&self.ring, self.f_mat(e), 1, extra, self.prec)?)
    }

    /// p^extra V(L) inside D_{sigma^{-1} e}, for L inside D_e.
    pub fn v_image(&self, e: EmbE, l: &Lattice2, extra: i32) -> DieudonneResult<Lattice2> {
        Ok(l.image(&self.ring, self.v_mat(e), -1, extra, self.prec)?)
    }

    /// Dual inside D_e of a lattice of D_{e^c}.
    pub fn dual(&self, e: EmbE, l_conj: &Lattice2) -> DieudonneResult<Lattice2> {
        Ok(l_conj.dual(&self.ring, self.pairing(e), self.prec)?)
    }
}

/// Essential Frobenius F_es^n into `target`, applied to `start`, a lattice
/// in D_{sigma^{-n} target}. The step into e is p^{-1} F when the signature
/// at sigma^{-1} e is 0 and F otherwise.
pub fn fes_chain(
    iso: &Isocrystal,
    sig: &SignatureProfile,
    target: EmbE,
    n: u32,
    start: &Lattice2,
) -> DieudonneResult<Lattice2> {
    let sys = iso.places();
    let mut cur = *start;
    for j in (0..n).rev() {
        let to = sys.shift_emb(target, -(j as i64));
        let from = sys.shift_emb(to, -1);
        let extra = if sig.get(from) == 0 { -1 } else { 0 };
        cur = iso.f_image(to, &cur, extra)?;
    }
    Ok(cur)
}

/// Essential Verschiebung V_es^n out of `source`, applied to a lattice of
/// D_source; the result lies in D_{sigma^{-n} source}. The step out of e is
/// p^{-1} V when the signature at sigma^{-1} e is 2 and V otherwise.
pub fn ves_chain(
    iso: &Isocrystal,
    sig: &SignatureProfile,
    source: EmbE,
    n: u32,
    start: &Lattice2,
) -> DieudonneResult<Lattice2> {
    let sys = iso.places();
    let mut cur = *start;
    for j in 0..n {
        let at = sys.shift_emb(source, -(j as i64));
        let extra = if sig.get(sys.shift_emb(at, -1)) == 2 { -1 } else { 0 };
        cur = iso.v_image(at, &cur, extra)?;
    }
    Ok(cur)
}

fn check_stable(iso: &Isocrystal, lattices: &[Lattice2]) -> DieudonneResult<()> {
    let sys = iso.places();
    let ring = iso.ring();
    for e in embs(sys) {
        let prev = sys.shift_emb(e, -1);
        let here = &lattices[idx(e)];
        let there = &lattices[idx(prev)];
        if !here.contains(ring, &iso.f_image(e, there, 0)?)? {
            return Err(DieudonneError::NotStable { op: "F", emb: sys.emb_label(e) });
        }
        if !there.contains(ring, &iso.v_image(e, here, 0)?)? {
            return Err(DieudonneError::NotStable { op: "V", emb: sys.emb_label(e) });
        }
    }
    Ok(())
}

/// A point: a lattice family inside an isocrystal, with the datum that
/// fixes its signature and polarization type.
#[derive(Clone, Debug)]
pub struct DieudonnePoint {
    iso: Arc<Isocrystal>,
    datum: ShimuraDatum,
    lattices: Vec<Lattice2>,
}

impl DieudonnePoint {
    pub fn new(iso: Arc<Isocrystal>, datum: ShimuraDatum, lattices: Vec<Lattice2>) -> DieudonneResult<Self> {
        if datum.places != *iso.places() {
            return Err(DieudonneError::DatumMismatch("datum and isocrystal use different places".into()));
        }
        let n = 2 * datum.places.f(PRIME) as usize;
        if lattices.len() != n {
            return Err(DieudonneError::Shape { what: "lattices", expected: n, found: lattices.len() });
        }
        let pt = DieudonnePoint { iso, datum, lattices };
        pt.validate()?;
        Ok(pt)
    }

    /// The point given by the standard lattices W^2.
    pub fn standard(iso: Arc<Isocrystal>, datum: ShimuraDatum) -> DieudonneResult<Self> {
        let n = 2 * datum.places.f(PRIME) as usize;
        Self::new(iso, datum, vec![Lattice2::standard(); n])
    }

    fn validate(&self) -> DieudonneResult<()> {
        let iso = &*self.iso;
        let sys = iso.places();
        let ring = iso.ring();
        check_stable(iso, &self.lattices)?;
        let declared = self.declared_signature()?;
        for (e, found) in self.measured_signature()? {
            let expected = declared.get(e);
            if found != expected as i64 {
                return Err(DieudonneError::SignatureMismatch { emb: sys.emb_label(e), expected, found });
            }
        }
        let drop = if self.datum.s.s_p.contains(&PRIME) { 1 } else { 0 };
        for e in embs(sys) {
            let dual = iso.dual(e, self.lattice(sys.conj(e)))?;
            let here = self.lattice(e);
            let fail = |detail: String| DieudonneError::Duality { emb: sys.emb_label(e), detail };
            if !dual.contains(ring, here)? {
                return Err(fail("lattice is not inside the dual of its conjugate".into()));
            }
            let len = dual.colength(ring, here)?;
            if len != drop {
                return Err(fail(format!("dual quotient has length {len}, expected {drop}")));
            }
        }
        Ok(())
    }

    pub fn iso(&self) -> &Arc<Isocrystal> {
        &self.iso
    }

    pub fn datum(&self) -> &ShimuraDatum {
        &self.datum
    }

    pub fn lattices(&self) -> &[Lattice2] {
        &self.lattices
    }

    pub fn lattice(&self, e: EmbE) -> &Lattice2 {
        &self.lattices[idx(e)]
    }

    pub fn ring(&self) -> &WittRing {
        self.iso.ring()
    }

    pub fn places(&self) -> &PlaceSystem {
        self.iso.places()
    }

    /// Signature fixed by the datum's lifts.
    pub fn declared_signature(&self) -> DieudonneResult<SignatureProfile> {
        Ok(signature_from_lift(&self.datum.places, &self.datum.s_tilde)?)
    }

    /// Colength of V(L_{sigma e}) in L_e for every e.
    pub fn measured_signature(&self) -> DieudonneResult<BTreeMap<EmbE, i64>> {
        let sys = self.places();
        let mut out = BTreeMap::new();
        for e in embs(sys) {
            let next = sys.shift_emb(e, 1);
            let img = self.iso.v_image(next, self.lattice(next), 0)?;
            out.insert(e, self.lattice(e).colength(self.ring(), &img)?);
        }
        Ok(out)
    }
}

/// Builds the isocrystal from F and the pairings and returns the standard
/// point on `datum`.
pub fn make_point(
    ring: WittRing,
    datum: ShimuraDatum,
    f_mats: Vec<Mat2>,
    pairings: Vec<Mat2>,
) -> DieudonneResult<DieudonnePoint> {
    let iso = Isocrystal::new(ring, datum.places.clone(), f_mats, pairings)?;
    DieudonnePoint::standard(Arc::new(iso), datum)
}

/// Image of F_es^n into D_e of the lattice at sigma^{-n} e.
pub fn essential_frobenius_image(pt: &DieudonnePoint, e: EmbE, n: u32) -> DieudonneResult<Lattice2> {
    let sig = pt.declared_signature()?;
    let start = pt.lattice(pt.places().shift_emb(e, -(n as i64)));
    fes_chain(&pt.iso, &sig, e, n, start)
}

/// Image of V_es^n of the lattice at e, inside D_{sigma^{-n} e}.
pub fn essential_verschiebung_image(pt: &DieudonnePoint, e: EmbE, n: u32) -> DieudonneResult<Lattice2> {
    let sig = pt.declared_signature()?;
    ves_chain(&pt.iso, &sig, e, n, pt.lattice(e))
}

fn hasse_one_lift(pt: &DieudonnePoint, e: EmbE, n: u32) -> DieudonneResult<bool> {
    let sys = pt.places();
    let ring = pt.ring();
    let pl = pt.lattice(e).scale(1);
    let img = essential_frobenius_image(pt, e, n)?.sum(ring, &pl)?;
    let next = sys.shift_emb(e, 1);
    let omega = pt.iso.v_image(next, pt.lattice(next), 0)?.sum(ring, &pl)?;
    Ok(img == omega)
}

/// Whether the partial Hasse invariant at e vanishes: the essential
/// Frobenius image agrees with V(L_{sigma e}) modulo p. Both lifts of the
/// place are evaluated and must agree.
pub fn hasse_vanishes(pt: &DieudonnePoint, e: EmbE) -> DieudonneResult<bool> {
    let sys = pt.places();
    let n = pt.datum.n_tau(sys.restrict(e))?.n;
    let here = hasse_one_lift(pt, e, n)?;
    let there = hasse_one_lift(pt, sys.conj(e), n)?;
    if here != there {
        return Err(DieudonneError::HasseAsymmetric(sys.emb_label(e)));
    }
    Ok(here)
}

/// The places outside S_inf where the partial Hasse invariant vanishes.
pub fn stratum_of_point(pt: &DieudonnePoint) -> DieudonneResult<BTreeSet<ArchPlace>> {
    let sys = pt.places();
    let mut out = BTreeSet::new();
    for tau in pt.datum.free_places(PRIME) {
        if hasse_vanishes(pt, sys.lifts(tau)[0])? {
            out.insert(tau);
        }
    }
    Ok(out)
}

// ---- random points ----

/// Random datum with one prime of degree f: a random S_inf leaving at least
/// one place free, random lifts, and E split exactly when the number of
/// free places is even.
pub fn random_source_datum<R: Rng + ?Sized>(f: u32, p: u32, rng: &mut R) -> DieudonneResult<ShimuraDatum> {
    let s_infty: Vec<u32> = loop {
        let s: Vec<u32> = (0..f).filter(|_| rng.gen_bool(0.3)).collect();
        if (s.len() as u32) < f {
            break s;
        }
    };
    let split = (f - s_infty.len() as u32).is_multiple_of(2);
    let d = ShimuraDatum::single(f, split, &s_infty, None)?;
    let s_tilde = d.s.s_infty.iter().map(|&t| d.places.lifts(t)[rng.gen_range(0..2)]).collect();
    Ok(d.with_s_tilde(s_tilde)?.with_p(p))
}

type IMat = [[i64; 2]; 2];

/// A monomial integer matrix whose determinant has valuation v.
fn monomial_template<R: Rng + ?Sized>(p: i64, v: u32, rng: &mut R) -> IMat {
    let anti = rng.gen_bool(0.5);
    let (x, y) = match v {
        0 => (1, 1),
        2 => (p, p),
        _ if rng.gen_bool(0.5) => (1, p),
        _ => (p, 1),
    };
    if anti {
        [[0, x], [y, 0]]
    } else {
        [[x, 0], [0, y]]
    }
}

/// p^s M^{-1} for a monomial M, as an integer matrix.
fn scaled_inverse(m: &IMat, s: u32, p: i64) -> IMat {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let adj = [[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]];
    let ps = p.pow(s);
    adj.map(|row| row.map(|x| x * ps / det))
}

fn random_unimodular<R: Rng + ?Sized>(ring: &WittRing, rng: &mut R) -> Mat2 {
    loop {
        let m = Mat2([[ring.random(rng), ring.random(rng)], [ring.random(rng), ring.random(rng)]]);
        if ring.is_unit(&ring.mat_det(&m)) {
            return m;
        }
    }
}

fn diag(ring: &WittRing, a: WElem, b: WElem) -> Mat2 {
    Mat2([[a, ring.zero()], [ring.zero(), b]])
}

/// Random point on a single-prime datum with hyperspecial level. F on the
/// first f components is a random diagonal unit times a monomial template of
/// the required determinant valuation; the conjugate components are forced
/// by the standard pairing. With `gauge`, a random unimodular change of
/// basis (compatible with the pairing) is applied afterwards. F and V are
/// exact modulo p^N.
pub fn random_point<R: Rng + ?Sized>(
    p: u32,
    n: u32,
    datum: &ShimuraDatum,
    gauge: bool,
    rng: &mut R,
) -> DieudonneResult<DieudonnePoint> {
    let sys = &datum.places;
    single_prime(sys)?;
    match datum.classify_prime(PRIME)? {
        PrimeType::Alpha | PrimeType::Beta => {}
        other => return Err(DieudonneError::Unsupported(other)),
    }
    let ring = WittRing::new(p, ring_degree(sys), n)?;
    let sig = signature_from_lift(sys, &datum.s_tilde)?;
    let f = sys.f(PRIME) as usize;
    let pi = p as i64;
    let mut fm = vec![ring.mat_identity(); 2 * f];
    let mut vm = fm.clone();
    for k in 0..f {
        let e = sys.emb(PRIME, k as u32)?;
        let ec = sys.conj(e);
        let v = 2 - sig.get(sys.shift_emb(e, -1)) as u32;
        let m = monomial_template(pi, v, rng);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let mc = m.map(|row| row.map(|x| x * pi / pi.pow(v)));
        let (u1, u2) = (ring.random_unit(rng), ring.random_unit(rng));
        let u = diag(&ring, u1, u2);
        let uinv = diag(&ring, ring.inv(&u1)?, ring.inv(&u2)?);
        let c = ring.mul(&ring.inv(&ring.mul(&u1, &u2))?, &ring.from_i64(det.signum()));
        let cinv = ring.inv(&c)?;
        fm[idx(e)] = ring.mat_mul(&u, &ring.mat(m));
        fm[idx(ec)] = ring.mat_scale(&ring.mat_mul(&u, &ring.mat(mc)), &c);
        let pm_inv = ring.mat(scaled_inverse(&m, 1, pi));
        vm[idx(e)] = ring.mat_frobenius(&ring.mat_mul(&pm_inv, &uinv), -1);
        let pmc_inv = ring.mat(scaled_inverse(&m, v, pi));
        vm[idx(ec)] = ring.mat_frobenius(&ring.mat_scale(&ring.mat_mul(&pmc_inv, &uinv), &cinv), -1);
    }
    if gauge {
        let mut g = vec![ring.mat_identity(); 2 * f];
        let mut ginv = g.clone();
        for k in 0..f {
            let e = sys.emb(PRIME, k as u32)?;
            let ec = sys.conj(e);
            let a = random_unimodular(&ring, rng);
            let d_inv = ring.inv(&ring.mat_det(&a))?;
            g[idx(e)] = a;
            g[idx(ec)] = ring.mat_scale(&a, &d_inv);
            ginv[idx(e)] = ring.mat_inv(&a)?;
            ginv[idx(ec)] = ring.mat_inv(&g[idx(ec)])?;
        }
        let (fm0, vm0) = (fm.clone(), vm.clone());
        for e in embs(sys) {
            let prev = idx(sys.shift_emb(e, -1));
            let i = idx(e);
            fm[i] = ring.mat_mul(&ring.mat_mul(&ginv[i], &fm0[i]), &ring.mat_frobenius(&g[prev], 1));
            vm[i] = ring.mat_mul(&ring.mat_mul(&ginv[prev], &vm0[i]), &ring.mat_frobenius(&g[i], -1));
        }
    }
    let pairings = vec![standard_pairing(&ring); 2 * f];
    let prec = ring.precision();
    let iso = Isocrystal::with_all(ring, sys.clone(), fm, vm, pairings, prec)?;
    DieudonnePoint::standard(Arc::new(iso), datum.clone())
}

/// Deterministic random point for trial number `trial` of a seeded run:
/// ChaCha8 seeded with `seed`, stream `trial`, drawing a datum with
/// [`random_source_datum`] and then a gauged [`random_point`].
pub fn seeded_trial_point(p: u32, f: u32, n: u32, seed: u64, trial: u64) -> DieudonneResult<DieudonnePoint> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let datum = random_source_datum(f, p, &mut rng)?;
    random_point(p, n, &datum, true, &mut rng)
}

// ---- isogeny triples ----

/// The lattices of C, B and A inside one isocrystal, together with the
/// data at I_T needed to recover A from B.
#[derive(Clone, Debug)]
pub struct IsogenyTriple {
    pub t: BTreeSet<ArchPlace>,
    pub lift: LiftChoice,
    pub delta: DeltaSets,
    pub a: DieudonnePoint,
    pub b: DieudonnePoint,
    pub c: Vec<Lattice2>,
    /// Keyed by the lifts in I~_T for odd chains (cases A1 and B1), by
    /// Delta^- in cases A2 and B2.
    pub j: BTreeMap<EmbE, Lattice2>,
}

fn check_source(datum: &ShimuraDatum) -> DieudonneResult<()> {
    single_prime(&datum.places)?;
    match datum.classify_prime(PRIME)? {
        PrimeType::Alpha | PrimeType::Beta => Ok(()),
        other => Err(DieudonneError::Unsupported(other)),
    }
}

fn require_in_stratum(pt: &DieudonnePoint, t: &BTreeSet<ArchPlace>) -> DieudonneResult<()> {
    let stratum = stratum_of_point(pt)?;
    match t.iter().find(|x| !stratum.contains(x)) {
        Some(&x) => Err(DieudonneError::NotInStratum(pt.places().arch_label(x))),
        None => Ok(()),
    }
}

fn run(sys: &PlaceSystem, set: &BTreeSet<EmbE>, e: EmbE) -> DieudonneResult<u32> {
    run_length(sys, set, e)
        .ok_or_else(|| DieudonneError::Identity(format!("Delta run through {} wraps the cycle", sys.emb_label(e))))
}

/// Builds C and B from A for T inside the stratum of A: on Delta^+ the
/// lattice of C is p^{-1} F_es^n of A, on Delta^- the lattice of B is
/// F_es^n of C, and elsewhere the lattices agree. Verifies stability,
/// colengths, the signature of B and the duality on B.
pub fn build_isogeny_triple(
    pt: &DieudonnePoint,
    t: &BTreeSet<ArchPlace>,
    opts: &LiftOptions,
) -> DieudonneResult<IsogenyTriple> {
    let datum = pt.datum();
    check_source(datum)?;
    let sys = &datum.places;
    let iso = pt.iso();
    let ring = iso.ring();
    require_in_stratum(pt, t)?;
    let desc = stratum_descriptor(datum, t)?;
    let lift = lift_assignment(datum, &desc, opts)?;
    let delta = delta_sets(datum, &lift);
    let sig_a = pt.declared_signature()?;

    let a = pt.lattices().to_vec();
    let mut c = a.clone();
    for &e in &delta.plus {
        let n = run(sys, &delta.plus, e)?;
        let start = &a[idx(sys.shift_emb(e, -(n as i64)))];
        c[idx(e)] = fes_chain(iso, &sig_a, e, n, start)?.scale(-1);
    }
    let mut b = c.clone();
    for &e in &delta.minus {
        let n = run(sys, &delta.minus, e)?;
        let start = &c[idx(sys.shift_emb(e, -(n as i64)))];
        b[idx(e)] = fes_chain(iso, &sig_a, e, n, start)?;
    }

    check_stable(iso, &c)?;
    for e in embs(sys) {
        let label = sys.emb_label(e);
        for (what, sub, set) in [("C/A", &a, &delta.plus), ("C/B", &b, &delta.minus)] {
            let found = c[idx(e)].colength(ring, &sub[idx(e)])?;
            let expected = set.contains(&e) as i64;
            if found != expected {
                return Err(DieudonneError::Colength { what, emb: label, found, expected });
            }
        }
    }

    let target = target_datum(datum, &desc, &lift)?;
    let b_pt = DieudonnePoint::new(iso.clone(), target, b.clone())?;
    let counted = dimension_count_check(sys, &sig_a, &delta)?;
    for (e, found) in b_pt.measured_signature()? {
        if found != counted.get(e) as i64 {
            return Err(DieudonneError::SignatureMismatch { emb: sys.emb_label(e), expected: counted.get(e), found });
        }
    }

    let mut j = BTreeMap::new();
    let case = desc.case_tags[PRIME];
    match case {
        CaseTag::A1 | CaseTag::B1 => {
            for &e in &lift.i_tilde_t {
                let next = sys.shift_emb(e, 1);
                let line = iso.v_image(next, &a[idx(next)], 0)?.sum(ring, &a[idx(e)].scale(1))?;
                j.insert(e, line);
            }
        }
        CaseTag::A2 => {
            for &e in &delta.minus {
                j.insert(e, c[idx(e)].scale(1));
            }
        }
        CaseTag::B2 => {
            for &e in &delta.minus {
                j.insert(e, iso.dual(e, &b[idx(sys.conj(e))])?.scale(1));
            }
        }
        CaseTag::ASharpPass | CaseTag::BSharpPass => {}
    }
    Ok(IsogenyTriple { t: t.clone(), lift, delta, a: pt.clone(), b: b_pt, c, j })
}

/// Rebuilds A from B and the J data. On Delta^- the lattice of C is
/// p^{-1} F_{B,es}^{m+1-l} of the J line (odd chains) or of B at the bottom
/// of the chain (even chains); in case A2 it is p^{-1} H, and in case B2 it
/// is the dual of B at the conjugate. A is then C off Delta^+ and the dual
/// of C at the conjugate on Delta^+.
pub fn reconstruct_point(
    source: &ShimuraDatum,
    b: &DieudonnePoint,
    j: &BTreeMap<EmbE, Lattice2>,
    t: &BTreeSet<ArchPlace>,
    opts: &LiftOptions,
) -> DieudonneResult<DieudonnePoint> {
    check_source(source)?;
    let sys = &source.places;
    let iso = b.iso();
    let desc = stratum_descriptor(source, t)?;
    let lift = lift_assignment(source, &desc, opts)?;
    let delta = delta_sets(source, &lift);
    let expected = target_datum(source, &desc, &lift)?;
    if expected != *b.datum() {
        return Err(DieudonneError::DatumMismatch("B does not live on the target datum of T".into()));
    }
    let sig_b = b.declared_signature()?;
    let missing = |e: EmbE| DieudonneError::MissingLine(sys.emb_label(e));

    let mut c = b.lattices().to_vec();
    for pat in &lift.patterns {
        match pat.case {
            CaseTag::A1 | CaseTag::B1 => {
                let top = sys.restrict(pat.base);
                let chain = desc.chains[PRIME]
                    .iter()
                    .find(|cp| cp.chain.top == top)
                    .ok_or_else(|| DieudonneError::Identity(format!("no chain with top {}", sys.arch_label(top))))?;
                let m = chain.chain.m;
                let bottom = sys.shift_emb(pat.base, -(m as i64 + 1));
                let src = if desc.i_t.contains(&sys.restrict(bottom)) {
                    *j.get(&bottom).ok_or_else(|| missing(bottom))?
                } else {
                    *b.lattice(bottom)
                };
                for pair in pat.a.chunks(2) {
                    for l in pair[0]..pair[1] {
                        let e = sys.shift_emb(pat.base, -(l as i64));
                        c[idx(e)] = fes_chain(iso, &sig_b, e, m + 1 - l, &src)?.scale(-1);
                    }
                }
            }
            CaseTag::A2 => {
                for &e in &delta.minus {
                    c[idx(e)] = j.get(&e).ok_or_else(|| missing(e))?.scale(-1);
                }
            }
            CaseTag::B2 => {
                for &e in &delta.minus {
                    c[idx(e)] = iso.dual(e, b.lattice(sys.conj(e)))?;
                }
            }
            CaseTag::ASharpPass | CaseTag::BSharpPass => {}
        }
    }
    let mut a = c.clone();
    for &e in &delta.plus {
        a[idx(e)] = iso.dual(e, &c[idx(sys.conj(e))])?;
    }
    let pt = DieudonnePoint::new(iso.clone(), source.clone(), a)?;
    require_in_stratum(&pt, t)?;
    Ok(pt)
}

/// Lattice span(basis(L) v) + pL: the preimage in L of a line of L/pL.
pub fn line_lattice(ring: &WittRing, l: &Lattice2, v: &Vec2) -> DieudonneResult<Lattice2> {
    let basis = l.basis(ring);
    let g = ring.mat_vec(&basis, v);
    let pl = l.scale(1);
    let pb = ring.mat_scale(&basis, &ring.p_pow(1));
    let gens = [g, [pb.0[0][0], pb.0[1][0]], [pb.0[0][1], pb.0[1][1]]];
    let out = Lattice2::from_generators(ring, l.shift, &gens, ring.precision())?;
    if !l.contains(ring, &out)? || !out.contains(ring, &pl)? || l.colength(ring, &out)? != 1 {
        return Err(DieudonneError::Malformed("vector does not span a line modulo p".into()));
    }
    Ok(out)
}

/// Result of running build and reconstruct for every T inside a stratum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundtripReport {
    pub stratum: BTreeSet<ArchPlace>,
    pub subsets: usize,
    /// Subsets whose reconstruction differs from the original point.
    pub mismatches: Vec<BTreeSet<ArchPlace>>,
}

impl RoundtripReport {
    pub fn exact(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Builds the isogeny triple for every T inside the stratum of `pt` with
/// the default lifts and compares the reconstructed point with `pt`.
pub fn roundtrip_all_subsets(pt: &DieudonnePoint) -> DieudonneResult<RoundtripReport> {
    let stratum = stratum_of_point(pt)?;
    let items: Vec<ArchPlace> = stratum.iter().copied().collect();
    let opts = LiftOptions::default();
    let mut mismatches = Vec::new();
    for mask in 0..1u32 << items.len() {
        let t: BTreeSet<ArchPlace> =
            items.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &x)| x).collect();
        let tr = build_isogeny_triple(pt, &t, &opts)?;
        let back = reconstruct_point(pt.datum(), &tr.b, &tr.j, &t, &opts)?;
        if back.lattices() != pt.lattices() {
            mismatches.push(t);
        }
    }
    Ok(RoundtripReport { stratum, subsets: 1 << items.len(), mismatches })
}

// ---- twisted partial Frobenius ----

/// The datum with S_inf and its lifts moved by sigma^k.
pub fn shift_datum(datum: &ShimuraDatum, k: i64) -> DieudonneResult<ShimuraDatum> {
    let sys = &datum.places;
    let s = EvenPlaceSet {
        s_infty: datum.s.s_infty.iter().map(|&t| sys.shift_arch(t, k)).collect(),
        s_p: datum.s.s_p.clone(),
        n_other: datum.s.n_other,
    };
    let s_tilde = datum.s_tilde.iter().map(|&e| sys.shift_emb(e, k)).collect();
    Ok(ShimuraDatum::with_all(sys.clone(), s, datum.level.clone(), s_tilde, datum.p)?)
}

/// The point with lattices p^{-1} F^2(L_{sigma^{-2} e}) on the datum moved
/// by sigma^2.
pub fn twisted_partial_frobenius(pt: &DieudonnePoint) -> DieudonneResult<DieudonnePoint> {
    let sys = pt.places();
    let iso = pt.iso();
    let mut out = Vec::with_capacity(pt.lattices().len());
    for e in embs(sys) {
        let prev = sys.shift_emb(e, -1);
        let once = iso.f_image(prev, pt.lattice(sys.shift_emb(e, -2)), 0)?;
        out.push(iso.f_image(e, &once, -1)?);
    }
    DieudonnePoint::new(iso.clone(), shift_datum(pt.datum(), 2)?, out)
}

// ---- essential identities ----

/// Checks FV = VF = p on the matrices and, for every lift e of a place
/// outside S_inf with n = n_tau, that F_es^n V_es^n and V_es^n F_es^n are p
/// on the lattices and that F_es^n, V_es^n have cokernels of length 1.
pub fn essential_identities(pt: &DieudonnePoint) -> DieudonneResult<()> {
    let iso = pt.iso();
    let sys = pt.places();
    let ring = pt.ring();
    iso.validate()?;
    let sig = pt.declared_signature()?;
    for e in embs(sys) {
        let tau = sys.restrict(e);
        if pt.datum().in_s(tau) {
            continue;
        }
        let n = pt.datum().n_tau(tau)?.n;
        let low = sys.shift_emb(e, -(n as i64));
        let label = sys.emb_label(e);
        let fimg = fes_chain(iso, &sig, e, n, pt.lattice(low))?;
        let vimg = ves_chain(iso, &sig, e, n, pt.lattice(e))?;
        for (what, big, small) in [("F_es^n", pt.lattice(e), &fimg), ("V_es^n", pt.lattice(low), &vimg)] {
            let found = big.colength(ring, small)?;
            if found != 1 {
                return Err(DieudonneError::Colength { what, emb: label, found, expected: 1 });
            }
        }
        if fes_chain(iso, &sig, e, n, &vimg)? != pt.lattice(e).scale(1) {
            return Err(DieudonneError::Identity(format!("F_es^n V_es^n != p at {label}")));
        }
        if ves_chain(iso, &sig, e, n, &fimg)? != pt.lattice(low).scale(1) {
            return Err(DieudonneError::Identity(format!("V_es^n F_es^n != p at {label}")));
        }
    }
    Ok(())
}

// ---- serialization ----

/// Lowercase hex coefficients c_0..c_{m-1} joined by ':'.
pub fn encode_elem(ring: &WittRing, a: &WElem) -> String {
    ring.coeffs(a).iter().map(|c| format!("{c:x}")).collect::<Vec<_>>().join(":")
}

pub fn decode_elem(ring: &WittRing, s: &str) -> DieudonneResult<WElem> {
    let cs = s
        .split(':')
        .map(|h| i64::from_str_radix(h, 16).map_err(|_| DieudonneError::Malformed(format!("bad coefficient {h:?}"))))
        .collect::<DieudonneResult<Vec<_>>>()?;
    if cs.iter().any(|&c| c < 0 || c as u64 >= ring.modulus_pn()) {
        return Err(DieudonneError::Malformed(format!("coefficient out of range in {s:?}")));
    }
    Ok(ring.from_coeffs(&cs)?)
}

fn encode_mat(ring: &WittRing, m: &Mat2) -> [[String; 2]; 2] {
    m.0.map(|row| row.map(|x| encode_elem(ring, &x)))
}

fn decode_mat(ring: &WittRing, m: &[[String; 2]; 2]) -> DieudonneResult<Mat2> {
    let mut out = ring.mat_identity();
    for r in 0..2 {
        for c in 0..2 {
            out.0[r][c] = decode_elem(ring, &m[r][c])?;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeJson {
    pub shift: i32,
    pub a: u32,
    pub b: u32,
    pub x: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentJson {
    pub emb: String,
    #[serde(rename = "F")]
    pub f: [[String; 2]; 2],
    #[serde(rename = "V")]
    pub v: [[String; 2]; 2],
    pub pairing: [[String; 2]; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeJson>,
}

/// Serialized point. Components are ordered by cycle index, then sheet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointJson {
    pub ring: RingDescriptor,
    pub precision: u32,
    pub datum: DatumJson,
    pub components: Vec<ComponentJson>,
}

impl PointJson {
    pub fn from_point(pt: &DieudonnePoint) -> Self {
        let iso = pt.iso();
        let ring = iso.ring();
        let sys = iso.places();
        let f = sys.f(PRIME);
        let mut order = embs(sys);
        order.sort_by_key(|e| (e.k % f, e.k / f));
        let components = order
            .into_iter()
            .map(|e| {
                let l = pt.lattice(e);
                ComponentJson {
                    emb: sys.emb_label(e),
                    f: encode_mat(ring, iso.f_mat(e)),
                    v: encode_mat(ring, iso.v_mat(e)),
                    pairing: encode_mat(ring, iso.pairing(e)),
                    lattice: (*l != Lattice2::standard()).then(|| LatticeJson {
                        shift: l.shift,
                        a: l.a,
                        b: l.b,
                        x: encode_elem(ring, &l.x),
                    }),
                }
            })
            .collect();
        PointJson {
            ring: ring.descriptor(),
            precision: iso.precision(),
            datum: DatumJson::from_datum(pt.datum()),
            components,
        }
    }

    pub fn into_point(&self) -> DieudonneResult<DieudonnePoint> {
        let ring = WittRing::from_descriptor(&self.ring)?;
        let datum = self.datum.clone().into_datum()?;
        let sys = &datum.places;
        single_prime(sys)?;
        let n = 2 * sys.f(PRIME) as usize;
        if self.components.len() != n {
            return Err(DieudonneError::Shape { what: "components", expected: n, found: self.components.len() });
        }
        let mut slots: Vec<Option<(Mat2, Mat2, Mat2, Lattice2)>> = vec![None; n];
        for comp in &self.components {
            let e = sys.parse_emb(&comp.emb)?;
            if slots[idx(e)].is_some() {
                return Err(DieudonneError::Malformed(format!("component {} repeated", comp.emb)));
            }
            let lattice = match &comp.lattice {
                None => Lattice2::standard(),
                Some(l) => {
                    let x = decode_elem(&ring, &l.x)?;
                    if ring.reduce_mod_p_pow(&x, l.a) != x {
                        return Err(DieudonneError::Malformed(format!("lattice at {} is not reduced", comp.emb)));
                    }
                    Lattice2 { shift: l.shift, a: l.a, b: l.b, x }
                }
            };
            slots[idx(e)] = Some((
                decode_mat(&ring, &comp.f)?,
                decode_mat(&ring, &comp.v)?,
                decode_mat(&ring, &comp.pairing)?,
                lattice,
            ));
        }
        let slots: Vec<_> = slots.into_iter().map(|s| s.expect("every slot filled")).collect();
        let iso = Isocrystal::with_all(
            ring,
            sys.clone(),
            slots.iter().map(|s| s.0).collect(),
            slots.iter().map(|s| s.1).collect(),
            slots.iter().map(|s| s.2).collect(),
            self.precision,
        )?;
        DieudonnePoint::new(Arc::new(iso), datum, slots.iter().map(|s| s.3).collect())
    }
}
