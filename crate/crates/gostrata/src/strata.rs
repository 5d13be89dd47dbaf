//! Stratum descriptors: chain decomposition, the even set S(T) with its
//! level change, the bundle index set I_T, the lift of S(T) to E, the sets
//! of embeddings where the comparison isogenies fail to be isomorphisms, and
//! the signature bookkeeping that ties them together.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::places::{
    emb_json, ArchPlace, EmbE, EmbJson, EvenPlaceSet, Level, PlaceError, PlaceSystem, PrimeType, SJson, ShimuraDatum,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StrataError {
    #[error(transparent)]
    Place(#[from] PlaceError),
    #[error("T is not contained in Sigma_inf - S_inf: {0}")]
    NotSubset(String),
    #[error("S_inf together with T covers every place above {0}; use the full-cycle recipe")]
    FullCycle(String),
    #[error("case {case:?} at prime {prime} needs the prime to be {need} in E")]
    CmTypeMismatch { prime: String, case: CaseTag, need: &'static str },
    #[error("invalid anchor choice: {0}")]
    BadAnchor(String),
    #[error("chain with an odd number of marked places: {0}")]
    OddChain(String),
    #[error("signature leaves {{0,1,2}} at {0}")]
    SignatureOutOfRange(String),
    #[error("two lifts of the same place: {0}")]
    LiftCollision(String),
}

pub type StrataResult<T> = Result<T, StrataError>;

/// C = {sigma^{-a} top : 0 <= a <= m}, maximal inside S_inf u T.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chain {
    pub prime: usize,
    pub top: ArchPlace,
    pub m: u32,
}

impl Chain {
    pub fn members(&self, sys: &PlaceSystem) -> Vec<ArchPlace> {
        (0..=self.m).map(|a| sys.shift_arch(self.top, -(a as i64))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseTag {
    A1,
    A2,
    B1,
    B2,
    ASharpPass,
    BSharpPass,
}

/// A chain together with the exponents a_1 < ... < a_r (relative to its
/// top) of the places it contributes to T'.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainPattern {
    pub chain: Chain,
    pub a: Vec<u32>,
}

impl ChainPattern {
    /// Whether the chain received the extra place sigma^{-m-1} top.
    pub fn extended(&self) -> bool {
        self.a.last() == Some(&(self.chain.m + 1))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StratumDescriptor {
    pub t: BTreeSet<ArchPlace>,
    /// Archimedean part of T' per prime.
    pub t_prime: Vec<BTreeSet<ArchPlace>>,
    /// Whether T' contains the prime itself (case B2 only).
    pub t_prime_has_p: Vec<bool>,
    pub s_of_t: EvenPlaceSet,
    pub i_t: BTreeSet<ArchPlace>,
    pub n_bundle: usize,
    pub case_tags: Vec<CaseTag>,
    pub level_t: Vec<Level>,
    /// Chain data per prime (cases A1 and B1; empty otherwise).
    pub chains: Vec<Vec<ChainPattern>>,
}

/// Maximal runs of S_inf u T above one prime, ordered by the index of
/// their top.
pub fn chain_decompose(datum: &ShimuraDatum, prime: usize, t: &BTreeSet<ArchPlace>) -> StrataResult<Vec<Chain>> {
    let sys = &datum.places;
    check_subset(datum, t)?;
    let inside = |x: ArchPlace| datum.in_s(x) || t.contains(&x);
    if sys.all_arch(prime).all(inside) {
        return Err(StrataError::FullCycle(sys.primes()[prime].id.clone()));
    }
    let mut chains = Vec::new();
    for top in sys.all_arch(prime) {
        if inside(top) && !inside(sys.shift_arch(top, 1)) {
            let mut m = 0;
            while inside(sys.shift_arch(top, -(m as i64) - 1)) {
                m += 1;
            }
            chains.push(Chain { prime, top, m });
        }
    }
    Ok(chains)
}

fn check_subset(datum: &ShimuraDatum, t: &BTreeSet<ArchPlace>) -> StrataResult<()> {
    for &x in t {
        if x.prime >= datum.places.num_primes() || x.i >= datum.places.f(x.prime) {
            return Err(StrataError::NotSubset(format!("{x}")));
        }
        if datum.in_s(x) {
            return Err(StrataError::NotSubset(datum.places.arch_label(x)));
        }
    }
    Ok(())
}

pub fn stratum_descriptor(datum: &ShimuraDatum, t: &BTreeSet<ArchPlace>) -> StrataResult<StratumDescriptor> {
    check_subset(datum, t)?;
    let sys = &datum.places;
    let np = sys.num_primes();
    let mut t_prime = vec![BTreeSet::new(); np];
    let mut t_prime_has_p = vec![false; np];
    let mut case_tags = Vec::with_capacity(np);
    let mut level_t = datum.level.clone();
    let mut chains = vec![Vec::new(); np];

    for prime in 0..np {
        let t_here: BTreeSet<ArchPlace> = t.iter().copied().filter(|x| x.prime == prime).collect();
        let free = datum.free_places(prime);
        let full = t_here.len() == free.len();
        let ty = datum.classify_prime(prime)?;
        let tag = match (ty, full) {
            (PrimeType::AlphaSharp, _) => CaseTag::ASharpPass,
            (PrimeType::BetaSharp, _) => CaseTag::BSharpPass,
            (PrimeType::Alpha, false) => CaseTag::A1,
            (PrimeType::Alpha, true) => CaseTag::A2,
            (PrimeType::Beta, false) => CaseTag::B1,
            (PrimeType::Beta, true) => CaseTag::B2,
        };
        case_tags.push(tag);
        match tag {
            CaseTag::ASharpPass | CaseTag::BSharpPass => {}
            CaseTag::A1 | CaseTag::B1 => {
                for chain in chain_decompose(datum, prime, &t_here)? {
                    let mut a: Vec<u32> = (0..=chain.m)
                        .filter(|&a| t_here.contains(&sys.shift_arch(chain.top, -(a as i64))))
                        .collect();
                    if a.len() % 2 == 1 {
                        a.push(chain.m + 1);
                    }
                    for &ai in &a {
                        t_prime[prime].insert(sys.shift_arch(chain.top, -(ai as i64)));
                    }
                    if !a.is_empty() {
                        chains[prime].push(ChainPattern { chain, a });
                    }
                }
            }
            CaseTag::A2 => {
                t_prime[prime] = t_here.clone();
                if !t_here.is_empty() {
                    level_t[prime] = Level::Iwahori;
                }
            }
            CaseTag::B2 => {
                t_prime[prime] = t_here.clone();
                t_prime_has_p[prime] = true;
                level_t[prime] = Level::MaximalOrder;
            }
        }
    }

    let mut s_of_t = datum.s.clone();
    for prime in 0..np {
        s_of_t.s_infty.extend(t_prime[prime].iter().copied());
        if t_prime_has_p[prime] {
            s_of_t.s_p.insert(prime);
        }
    }
    let i_t: BTreeSet<ArchPlace> =
        s_of_t.s_infty.iter().copied().filter(|x| !datum.in_s(*x) && !t.contains(x)).collect();
    let n_bundle = i_t.len();
    Ok(StratumDescriptor { t: t.clone(), t_prime, t_prime_has_p, s_of_t, i_t, n_bundle, case_tags, level_t, chains })
}

/// Optional overrides for the non-canonical lift choices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LiftOptions {
    /// Sheet of the chain top lift, keyed by (prime, chain position), for
    /// primes inert in E in case B1. Defaults to sheet 0.
    pub beta_sheets: BTreeMap<(usize, usize), u32>,
    /// Anchor tau_0 in case A2. Defaults to the smallest index in T.
    pub a2_anchor: BTreeMap<usize, ArchPlace>,
    /// Anchor lift in case B2. Defaults to the sheet-0 lift of the smallest
    /// index in T.
    pub b2_anchor: BTreeMap<usize, EmbE>,
}

/// Alternating lift pattern: base embedding and exponents a_1 < ... < a_r
/// so that sigma^{-a_j} base (j odd) and sigma^{-a_j} base^c (j even) are
/// the chosen lifts. In case B2 the exponents run over the 2f-cycle and only
/// odd positions are chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiftPattern {
    pub prime: usize,
    pub case: CaseTag,
    pub base: EmbE,
    pub a: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiftChoice {
    pub s_tilde_of_t: BTreeSet<EmbE>,
    /// Lifts chosen for the places of T'.
    pub t_tilde_prime: BTreeSet<EmbE>,
    /// For tau in I_T, the lift whose conjugate lies in s_tilde_of_t.
    pub i_tilde_t: BTreeSet<EmbE>,
    pub patterns: Vec<LiftPattern>,
    pub options: LiftOptions,
}

fn require_split(datum: &ShimuraDatum, prime: usize, case: CaseTag, split: bool) -> StrataResult<()> {
    if datum.places.e_split(prime) != split {
        return Err(StrataError::CmTypeMismatch {
            prime: datum.places.primes()[prime].id.clone(),
            case,
            need: if split { "split" } else { "inert" },
        });
    }
    Ok(())
}

pub fn lift_assignment(
    datum: &ShimuraDatum,
    desc: &StratumDescriptor,
    opts: &LiftOptions,
) -> StrataResult<LiftChoice> {
    let sys = &datum.places;
    let mut patterns = Vec::new();
    for prime in 0..sys.num_primes() {
        let case = desc.case_tags[prime];
        match case {
            CaseTag::ASharpPass | CaseTag::BSharpPass => {}
            CaseTag::A1 | CaseTag::B1 => {
                require_split(datum, prime, case, case == CaseTag::A1)?;
                for (idx, cp) in desc.chains[prime].iter().enumerate() {
                    if cp.a.len() % 2 == 1 {
                        return Err(StrataError::OddChain(sys.arch_label(cp.chain.top)));
                    }
                    let sheet = if case == CaseTag::B1 {
                        opts.beta_sheets.get(&(prime, idx)).copied().unwrap_or(0)
                    } else {
                        0
                    };
                    if sheet > 1 {
                        return Err(StrataError::BadAnchor(format!("sheet {sheet}")));
                    }
                    let base = sys.emb_on_sheet(cp.chain.top, sheet);
                    patterns.push(LiftPattern { prime, case, base, a: cp.a.clone() });
                }
            }
            CaseTag::A2 => {
                require_split(datum, prime, case, true)?;
                let t_here: Vec<ArchPlace> = desc.t.iter().copied().filter(|x| x.prime == prime).collect();
                if t_here.is_empty() {
                    continue;
                }
                let tau0 = opts.a2_anchor.get(&prime).copied().unwrap_or(t_here[0]);
                if !t_here.contains(&tau0) {
                    return Err(StrataError::BadAnchor(format!("{} is not in T", sys.arch_label(tau0))));
                }
                let f = sys.f(prime);
                let mut a: Vec<u32> = t_here.iter().map(|x| (tau0.i + f - x.i) % f).collect();
                a.sort_unstable();
                patterns.push(LiftPattern { prime, case, base: sys.lifts(tau0)[0], a });
            }
            CaseTag::B2 => {
                require_split(datum, prime, case, false)?;
                let t_here: Vec<ArchPlace> = desc.t.iter().copied().filter(|x| x.prime == prime).collect();
                let default = sys.lifts(t_here[0])[0];
                let base = opts.b2_anchor.get(&prime).copied().unwrap_or(default);
                if base.prime != prime || !t_here.contains(&sys.restrict(base)) {
                    return Err(StrataError::BadAnchor("B2 anchor must lift a place of T".into()));
                }
                let f = sys.f(prime);
                let mut a: Vec<u32> = t_here
                    .iter()
                    .flat_map(|&x| sys.lifts(x))
                    .map(|e| (base.k + 2 * f - e.k) % (2 * f))
                    .collect();
                a.sort_unstable();
                let r = a.len() / 2;
                debug_assert!((0..r).all(|i| a[r + i] == a[i] + f));
                patterns.push(LiftPattern { prime, case, base, a });
            }
        }
    }

    let mut t_tilde_prime = BTreeSet::new();
    for pat in &patterns {
        for (j, &aj) in pat.a.iter().enumerate() {
            let e = sys.shift_emb(pat.base, -(aj as i64));
            if pat.case == CaseTag::B2 {
                if j % 2 == 0 {
                    t_tilde_prime.insert(e);
                }
            } else if j % 2 == 0 {
                t_tilde_prime.insert(e);
            } else {
                t_tilde_prime.insert(sys.conj(e));
            }
        }
    }
    let mut s_tilde_of_t = datum.s_tilde.clone();
    let mut covered: BTreeSet<ArchPlace> = datum.s.s_infty.clone();
    for &e in &t_tilde_prime {
        if !covered.insert(sys.restrict(e)) {
            return Err(StrataError::LiftCollision(sys.emb_label(e)));
        }
        s_tilde_of_t.insert(e);
    }
    debug_assert_eq!(covered, desc.s_of_t.s_infty);
    let i_tilde_t = desc
        .i_t
        .iter()
        .map(|&x| {
            let l = sys.lifts(x);
            if s_tilde_of_t.contains(&l[0]) {
                l[1]
            } else {
                l[0]
            }
        })
        .collect();
    Ok(LiftChoice { s_tilde_of_t, t_tilde_prime, i_tilde_t, patterns, options: opts.clone() })
}

/// The target datum S(T) with its levels and lifts.
pub fn target_datum(datum: &ShimuraDatum, desc: &StratumDescriptor, lift: &LiftChoice) -> StrataResult<ShimuraDatum> {
    Ok(ShimuraDatum::with_all(
        datum.places.clone(),
        desc.s_of_t.clone(),
        desc.level_t.clone(),
        lift.s_tilde_of_t.clone(),
        datum.p,
    )?)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeltaSets {
    pub plus: BTreeSet<EmbE>,
    pub minus: BTreeSet<EmbE>,
}

pub fn delta_sets(datum: &ShimuraDatum, lift: &LiftChoice) -> DeltaSets {
    let sys = &datum.places;
    let mut out = DeltaSets::default();
    for pat in &lift.patterns {
        for pair in pat.a.chunks(2) {
            let [lo, hi] = [pair[0], pair[1]];
            for l in lo..hi {
                let e = sys.shift_emb(pat.base, -(l as i64));
                out.minus.insert(e);
                if pat.case != CaseTag::B2 {
                    out.plus.insert(sys.conj(e));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignatureProfile {
    pub s: BTreeMap<EmbE, u8>,
}

impl SignatureProfile {
    pub fn get(&self, e: EmbE) -> u8 {
        self.s[&e]
    }
}

/// 0 on the given lifts, 2 on their conjugates, 1 elsewhere.
pub fn signature_from_lift(sys: &PlaceSystem, lifts: &BTreeSet<EmbE>) -> StrataResult<SignatureProfile> {
    let mut s: BTreeMap<EmbE, u8> = sys.all_emb_global().into_iter().map(|e| (e, 1)).collect();
    for &e in lifts {
        if s[&e] != 1 {
            return Err(StrataError::LiftCollision(sys.emb_label(e)));
        }
        s.insert(e, 0);
        s.insert(sys.conj(e), 2);
    }
    Ok(SignatureProfile { s })
}

/// tau~ -> s(tau~) - (d-(tau~) - d+(tau~)) + (d-(sigma tau~) - d+(sigma tau~)).
pub fn dimension_count_check(
    sys: &PlaceSystem,
    s: &SignatureProfile,
    delta: &DeltaSets,
) -> StrataResult<SignatureProfile> {
    let d = |e: EmbE| delta.minus.contains(&e) as i32 - delta.plus.contains(&e) as i32;
    let mut out = BTreeMap::new();
    for (&e, &v) in &s.s {
        let val = v as i32 - d(e) + d(sys.shift_emb(e, 1));
        if !(0..=2).contains(&val) {
            return Err(StrataError::SignatureOutOfRange(sys.emb_label(e)));
        }
        out.insert(e, val as u8);
    }
    Ok(SignatureProfile { s: out })
}

/// Length of the run tau~, sigma^{-1} tau~, ... inside `set`, or None when
/// the run wraps around the whole cycle.
pub fn run_length(sys: &PlaceSystem, set: &BTreeSet<EmbE>, e: EmbE) -> Option<u32> {
    let period = 2 * sys.f(e.prime);
    (1..=period).find(|&n| !set.contains(&sys.shift_emb(e, -(n as i64))))
}

/// Verifies the structural properties of the Delta sets: run lengths end
/// in T'_E (and equal n_tau on T'_E), interior pairs restrict into S_inf,
/// and the boundary points of Delta^- are chosen lifts of T' or their
/// conjugates. Returns a description of the first failure.
pub fn check_delta_structure(
    datum: &ShimuraDatum,
    desc: &StratumDescriptor,
    lift: &LiftChoice,
    delta: &DeltaSets,
) -> Result<(), String> {
    let sys = &datum.places;
    let t_prime_all: BTreeSet<ArchPlace> = desc.t_prime.iter().flatten().copied().collect();
    let in_t_prime_e = |e: EmbE| t_prime_all.contains(&sys.restrict(e));
    let tilde_c: BTreeSet<EmbE> = lift.t_tilde_prime.iter().map(|&e| sys.conj(e)).collect();
    for set in [&delta.plus, &delta.minus] {
        for &e in set {
            let n = run_length(sys, set, e).ok_or_else(|| format!("{} lies on a full cycle", sys.emb_label(e)))?;
            let end = sys.shift_emb(e, -(n as i64));
            if !in_t_prime_e(end) {
                return Err(format!("run from {} ends at {} outside T'_E", sys.emb_label(e), sys.emb_label(end)));
            }
            if in_t_prime_e(e) {
                let nt = datum.n_tau(sys.restrict(e)).map_err(|x| x.to_string())?.n;
                if nt != n {
                    return Err(format!("run length {n} != n_tau {nt} at {}", sys.emb_label(e)));
                }
            }
            let up = sys.shift_emb(e, 1);
            if set.contains(&up) && !datum.in_s(sys.restrict(e)) {
                return Err(format!("{} and its successor in Delta but not in S", sys.emb_label(e)));
            }
        }
    }
    for e in sys.all_emb_global() {
        let here = delta.minus.contains(&e);
        let up = delta.minus.contains(&sys.shift_emb(e, 1));
        if here && !up && !lift.t_tilde_prime.contains(&e) {
            return Err(format!("exit point {} is not a chosen lift", sys.emb_label(e)));
        }
        if !here && up && !tilde_c.contains(&e) {
            return Err(format!("entry point {} is not a conjugate chosen lift", sys.emb_label(e)));
        }
    }
    Ok(())
}

// ---- JSON ----

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumJson {
    #[serde(rename = "T")]
    pub t: Vec<(String, u32)>,
    #[serde(rename = "S_of_T")]
    pub s_of_t: SJson,
    #[serde(rename = "I_T")]
    pub i_t: Vec<(String, u32)>,
    #[serde(rename = "N")]
    pub n: usize,
    pub cases: BTreeMap<String, CaseTag>,
    #[serde(rename = "level_T")]
    pub level_t: BTreeMap<String, Level>,
    #[serde(rename = "S_tilde_of_T", default, skip_serializing_if = "Option::is_none")]
    pub s_tilde_of_t: Option<Vec<EmbJson>>,
}

impl StratumJson {
    pub fn new(sys: &PlaceSystem, desc: &StratumDescriptor, lift: Option<&LiftChoice>) -> Self {
        let id = |p: usize| sys.primes()[p].id.clone();
        let pair = |x: &ArchPlace| (id(x.prime), x.i);
        StratumJson {
            t: desc.t.iter().map(pair).collect(),
            s_of_t: SJson {
                infty: desc.s_of_t.s_infty.iter().map(pair).collect(),
                p: desc.s_of_t.s_p.iter().map(|&p| id(p)).collect(),
                n_other: desc.s_of_t.n_other,
            },
            i_t: desc.i_t.iter().map(pair).collect(),
            n: desc.n_bundle,
            cases: (0..sys.num_primes()).map(|p| (id(p), desc.case_tags[p])).collect(),
            level_t: (0..sys.num_primes()).map(|p| (id(p), desc.level_t[p])).collect(),
            s_tilde_of_t: lift.map(|l| l.s_tilde_of_t.iter().map(|&e| emb_json(sys, e)).collect()),
        }
    }
}
