//! Archimedean places of F and E above each p-adic prime, the Frobenius
//! action on them, ramification sets and the type of each prime.
//!
//! Every prime carries a cycle Z/f of archimedean places of F. Embeddings of
//! E above that prime are encoded uniformly by an index k in Z/2f whose
//! restriction to F is k mod f and whose complex conjugate is k + f. When the
//! prime splits in E the two sheets are k < f and k >= f, each stable under
//! sigma; when it is inert sigma is the single 2f-cycle k -> k + 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlaceError {
    #[error("inertia degree must be positive (prime {0})")]
    ZeroInertia(String),
    #[error("duplicate prime id {0}")]
    DuplicateId(String),
    #[error("unknown prime id {0}")]
    UnknownPrime(String),
    #[error("index {index} out of range for prime {prime} (cycle length {len})")]
    IndexOutOfRange { prime: String, index: u32, len: u32 },
    #[error("ramification set is not even: #S_inf + #S_p + n_other = {0}")]
    NotEven(usize),
    #[error("B_S ramifies at {0} but not every archimedean place above it is in S")]
    Hypothesis32(String),
    #[error("level at {prime} is inconsistent with the ramification data: {reason}")]
    LevelInconsistent { prime: String, reason: String },
    #[error("{0} lies in S_inf")]
    PlaceInS(String),
    #[error("every archimedean place above {0} lies in S_inf")]
    FullCycle(String),
    #[error("lift set does not restrict bijectively onto S_inf: {0}")]
    LiftMismatch(String),
    #[error("cannot parse place label {0:?}")]
    BadLabel(String),
}

pub type PlaceResult<T> = Result<T, PlaceError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimeSlot {
    pub id: String,
    pub f: u32,
    pub e_split: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaceSystem {
    primes: Vec<PrimeSlot>,
}

/// Archimedean place tau_i of F above a prime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArchPlace {
    pub prime: usize,
    pub i: u32,
}

/// Archimedean embedding of E, uniform index k in Z/2f.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmbE {
    pub prime: usize,
    pub k: u32,
}

impl PlaceSystem {
    pub fn new(primes: Vec<PrimeSlot>) -> PlaceResult<Self> {
        let mut seen = BTreeSet::new();
        for p in &primes {
            if p.f == 0 {
                return Err(PlaceError::ZeroInertia(p.id.clone()));
            }
            if !seen.insert(p.id.clone()) {
                return Err(PlaceError::DuplicateId(p.id.clone()));
            }
        }
        Ok(PlaceSystem { primes })
    }

    /// Primes with generated ids p1, p2, ...
    pub fn build(spec: &[(u32, bool)]) -> PlaceResult<Self> {
        Self::new(
            spec.iter()
                .enumerate()
                .map(|(n, &(f, e_split))| PrimeSlot { id: format!("p{}", n + 1), f, e_split })
                .collect(),
        )
    }

    pub fn primes(&self) -> &[PrimeSlot] {
        &self.primes
    }

    pub fn num_primes(&self) -> usize {
        self.primes.len()
    }

    pub fn f(&self, prime: usize) -> u32 {
        self.primes[prime].f
    }

    pub fn e_split(&self, prime: usize) -> bool {
        self.primes[prime].e_split
    }

    pub fn prime_index(&self, id: &str) -> PlaceResult<usize> {
        self.primes
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| PlaceError::UnknownPrime(id.to_string()))
    }

    pub fn arch(&self, prime: usize, i: u32) -> PlaceResult<ArchPlace> {
        let f = self.f(prime);
        if i >= f {
            return Err(PlaceError::IndexOutOfRange { prime: self.primes[prime].id.clone(), index: i, len: f });
        }
        Ok(ArchPlace { prime, i })
    }

    pub fn emb(&self, prime: usize, k: u32) -> PlaceResult<EmbE> {
        let n = 2 * self.f(prime);
        if k >= n {
            return Err(PlaceError::IndexOutOfRange { prime: self.primes[prime].id.clone(), index: k, len: n });
        }
        Ok(EmbE { prime, k })
    }

    /// Embedding on a given sheet over tau_i (split primes; for inert primes
    /// sheet 1 means j = i + f).
    pub fn emb_on_sheet(&self, tau: ArchPlace, sheet: u32) -> EmbE {
        EmbE { prime: tau.prime, k: tau.i + (sheet % 2) * self.f(tau.prime) }
    }

    pub fn all_arch(&self, prime: usize) -> impl Iterator<Item = ArchPlace> {
        (0..self.f(prime)).map(move |i| ArchPlace { prime, i })
    }

    pub fn all_arch_global(&self) -> Vec<ArchPlace> {
        (0..self.num_primes()).flat_map(|p| self.all_arch(p)).collect()
    }

    pub fn all_emb(&self, prime: usize) -> impl Iterator<Item = EmbE> {
        (0..2 * self.f(prime)).map(move |k| EmbE { prime, k })
    }

    pub fn all_emb_global(&self) -> Vec<EmbE> {
        (0..self.num_primes()).flat_map(|p| self.all_emb(p)).collect()
    }

    /// sigma^k tau.
    pub fn shift_arch(&self, tau: ArchPlace, k: i64) -> ArchPlace {
        let f = self.f(tau.prime) as i64;
        ArchPlace { prime: tau.prime, i: (tau.i as i64 + k).rem_euclid(f) as u32 }
    }

    /// sigma^k on an embedding of E.
    pub fn shift_emb(&self, e: EmbE, k: i64) -> EmbE {
        let f = self.f(e.prime) as i64;
        if self.e_split(e.prime) {
            let sheet = e.k as i64 / f;
            let i = (e.k as i64 % f + k).rem_euclid(f);
            EmbE { prime: e.prime, k: (sheet * f + i) as u32 }
        } else {
            EmbE { prime: e.prime, k: (e.k as i64 + k).rem_euclid(2 * f) as u32 }
        }
    }

    pub fn conj(&self, e: EmbE) -> EmbE {
        let f = self.f(e.prime);
        EmbE { prime: e.prime, k: (e.k + f) % (2 * f) }
    }

    pub fn restrict(&self, e: EmbE) -> ArchPlace {
        ArchPlace { prime: e.prime, i: e.k % self.f(e.prime) }
    }

    /// Sheet of a split embedding (0 or 1); for inert primes this is the
    /// half of the 2f-cycle containing j.
    pub fn sheet(&self, e: EmbE) -> u32 {
        e.k / self.f(e.prime)
    }

    /// Both lifts of tau, the sheet-0 (k = i) one first.
    pub fn lifts(&self, tau: ArchPlace) -> [EmbE; 2] {
        let f = self.f(tau.prime);
        [EmbE { prime: tau.prime, k: tau.i }, EmbE { prime: tau.prime, k: tau.i + f }]
    }

    pub fn arch_label(&self, tau: ArchPlace) -> String {
        format!("{}:{}", self.primes[tau.prime].id, tau.i)
    }

    /// "p1:s0.2" for split primes (sheet 0, i = 2); "p1:j5" for inert ones.
    pub fn emb_label(&self, e: EmbE) -> String {
        let id = &self.primes[e.prime].id;
        if self.e_split(e.prime) {
            let f = self.f(e.prime);
            format!("{id}:s{}.{}", e.k / f, e.k % f)
        } else {
            format!("{id}:j{}", e.k)
        }
    }

    /// Parse "p1:3", or a bare "3" when there is exactly one prime.
    pub fn parse_arch(&self, s: &str) -> PlaceResult<ArchPlace> {
        let s = s.trim();
        let (prime, idx) = match s.split_once(':') {
            Some((id, idx)) => (self.prime_index(id)?, idx),
            None if self.num_primes() == 1 => (0, s),
            None => return Err(PlaceError::BadLabel(s.to_string())),
        };
        let i = idx.parse::<u32>().map_err(|_| PlaceError::BadLabel(s.to_string()))?;
        self.arch(prime, i)
    }

    /// Parse an embedding label as produced by [`PlaceSystem::emb_label`].
    /// The prime id may be omitted when there is exactly one prime.
    pub fn parse_emb(&self, s: &str) -> PlaceResult<EmbE> {
        let s = s.trim();
        let bad = || PlaceError::BadLabel(s.to_string());
        let (prime, rest) = match s.split_once(':') {
            Some((id, rest)) => (self.prime_index(id)?, rest),
            None if self.num_primes() == 1 => (0, s),
            None => return Err(bad()),
        };
        let f = self.f(prime);
        if let Some(r) = rest.strip_prefix('s') {
            let (sheet, i) = r.split_once('.').ok_or_else(bad)?;
            let sheet: u32 = sheet.parse().map_err(|_| bad())?;
            let i: u32 = i.parse().map_err(|_| bad())?;
            if sheet > 1 || i >= f {
                return Err(bad());
            }
            self.emb(prime, sheet * f + i)
        } else if let Some(r) = rest.strip_prefix('j') {
            self.emb(prime, r.parse().map_err(|_| bad())?)
        } else {
            Err(bad())
        }
    }

    pub fn parse_arch_list(&self, s: &str) -> PlaceResult<BTreeSet<ArchPlace>> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(|t| self.parse_arch(t)).collect()
    }
}

impl fmt::Display for ArchPlace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}:{}", self.prime, self.i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Hyperspecial,
    Iwahori,
    MaximalOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimeType {
    Alpha,
    AlphaSharp,
    Beta,
    BetaSharp,
}

/// Ramification set S: archimedean part, primes above p, and a count of
/// other finite places kept only for the parity condition.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvenPlaceSet {
    pub s_infty: BTreeSet<ArchPlace>,
    pub s_p: BTreeSet<usize>,
    pub n_other: u32,
}

impl EvenPlaceSet {
    pub fn cardinality(&self) -> usize {
        self.s_infty.len() + self.s_p.len() + self.n_other as usize
    }

    pub fn infty_at(&self, prime: usize) -> BTreeSet<ArchPlace> {
        self.s_infty.iter().copied().filter(|t| t.prime == prime).collect()
    }
}

/// Result of [`ShimuraDatum::n_tau`]: tau^- = sigma^{-n} tau is the first
/// place before tau outside S_inf, and tau^+ is the place whose tau^- is tau.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NTau {
    pub n: u32,
    pub minus: ArchPlace,
    pub plus: ArchPlace,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShimuraDatum {
    pub places: PlaceSystem,
    pub s: EvenPlaceSet,
    pub level: Vec<Level>,
    /// One lift to E of every place of S_inf. Places of S_inf have signature
    /// 0 at their lift and 2 at its conjugate.
    pub s_tilde: BTreeSet<EmbE>,
    /// The rational prime, needed only by numerical consumers.
    pub p: Option<u32>,
}

impl ShimuraDatum {
    /// Datum with default levels (maximal order on S_p, hyperspecial
    /// elsewhere) and default lifts (sheet 0).
    pub fn new(places: PlaceSystem, s: EvenPlaceSet) -> PlaceResult<Self> {
        let level = (0..places.num_primes())
            .map(|p| if s.s_p.contains(&p) { Level::MaximalOrder } else { Level::Hyperspecial })
            .collect();
        let s_tilde = s.s_infty.iter().map(|&t| places.lifts(t)[0]).collect();
        Self::with_all(places, s, level, s_tilde, None)
    }

    pub fn with_all(
        places: PlaceSystem,
        s: EvenPlaceSet,
        level: Vec<Level>,
        s_tilde: BTreeSet<EmbE>,
        p: Option<u32>,
    ) -> PlaceResult<Self> {
        let d = ShimuraDatum { places, s, level, s_tilde, p };
        d.validate()?;
        Ok(d)
    }

    /// Single-prime convenience constructor: S_inf given by indices.
    pub fn single(f: u32, e_split: bool, s_infty: &[u32], n_other: Option<u32>) -> PlaceResult<Self> {
        let places = PlaceSystem::build(&[(f, e_split)])?;
        let s_infty: BTreeSet<ArchPlace> = s_infty.iter().map(|&i| places.arch(0, i)).collect::<PlaceResult<_>>()?;
        let n_other = n_other.unwrap_or((s_infty.len() % 2) as u32);
        Self::new(places, EvenPlaceSet { s_infty, s_p: BTreeSet::new(), n_other })
    }

    pub fn with_level(mut self, prime: usize, level: Level) -> PlaceResult<Self> {
        self.level[prime] = level;
        self.validate()?;
        Ok(self)
    }

    pub fn with_s_tilde(mut self, s_tilde: BTreeSet<EmbE>) -> PlaceResult<Self> {
        self.s_tilde = s_tilde;
        self.validate()?;
        Ok(self)
    }

    pub fn with_p(mut self, p: u32) -> Self {
        self.p = Some(p);
        self
    }

    pub fn validate(&self) -> PlaceResult<()> {
        let sys = &self.places;
        for t in &self.s.s_infty {
            if t.prime >= sys.num_primes() {
                return Err(PlaceError::UnknownPrime(format!("#{}", t.prime)));
            }
            sys.arch(t.prime, t.i)?;
        }
        for &p in &self.s.s_p {
            if p >= sys.num_primes() {
                return Err(PlaceError::UnknownPrime(format!("#{p}")));
            }
        }
        if !self.s.cardinality().is_multiple_of(2) {
            return Err(PlaceError::NotEven(self.s.cardinality()));
        }
        if self.level.len() != sys.num_primes() {
            return Err(PlaceError::LevelInconsistent {
                prime: "*".into(),
                reason: "one level per prime is required".into(),
            });
        }
        for prime in 0..sys.num_primes() {
            let id = sys.primes()[prime].id.clone();
            let full = self.s.infty_at(prime).len() as u32 == sys.f(prime);
            let in_sp = self.s.s_p.contains(&prime);
            if in_sp && !full {
                return Err(PlaceError::Hypothesis32(id));
            }
            match self.level[prime] {
                Level::MaximalOrder if !in_sp => {
                    return Err(PlaceError::LevelInconsistent {
                        prime: id,
                        reason: "maximal order level requires the prime in S".into(),
                    })
                }
                Level::Hyperspecial | Level::Iwahori if in_sp => {
                    return Err(PlaceError::LevelInconsistent {
                        prime: id,
                        reason: "B_S is ramified here so the level must be the maximal order".into(),
                    })
                }
                Level::Iwahori if !full => {
                    return Err(PlaceError::LevelInconsistent {
                        prime: id,
                        reason: "Iwahori level needs every archimedean place above the prime in S".into(),
                    })
                }
                _ => {}
            }
        }
        let mut covered = BTreeSet::new();
        for e in &self.s_tilde {
            if e.prime >= sys.num_primes() || e.k >= 2 * sys.f(e.prime) {
                return Err(PlaceError::LiftMismatch(format!("embedding index {} out of range", e.k)));
            }
            let t = sys.restrict(*e);
            if !self.s.s_infty.contains(&t) {
                return Err(PlaceError::LiftMismatch(format!("{} is not in S_inf", sys.arch_label(t))));
            }
            if !covered.insert(t) {
                return Err(PlaceError::LiftMismatch(format!("two lifts of {}", sys.arch_label(t))));
            }
        }
        if covered.len() != self.s.s_infty.len() {
            return Err(PlaceError::LiftMismatch("some place of S_inf has no lift".into()));
        }
        Ok(())
    }

    pub fn classify_prime(&self, prime: usize) -> PlaceResult<PrimeType> {
        let sys = &self.places;
        if prime >= sys.num_primes() {
            return Err(PlaceError::UnknownPrime(format!("#{prime}")));
        }
        if self.s.s_p.contains(&prime) {
            return Ok(PrimeType::BetaSharp);
        }
        let free = sys.f(prime) as usize - self.s.infty_at(prime).len();
        Ok(match (free.is_multiple_of(2), self.level[prime]) {
            (true, Level::Iwahori) => PrimeType::AlphaSharp,
            (true, _) => PrimeType::Alpha,
            (false, Level::Iwahori) => {
                return Err(PlaceError::LevelInconsistent {
                    prime: sys.primes()[prime].id.clone(),
                    reason: "Iwahori level with an odd number of unramified places".into(),
                })
            }
            (false, _) => PrimeType::Beta,
        })
    }

    pub fn in_s(&self, tau: ArchPlace) -> bool {
        self.s.s_infty.contains(&tau)
    }

    /// Sigma_{inf/p} - S_{inf/p} in cycle order.
    pub fn free_places(&self, prime: usize) -> Vec<ArchPlace> {
        self.places.all_arch(prime).filter(|t| !self.in_s(*t)).collect()
    }

    pub fn n_tau(&self, tau: ArchPlace) -> PlaceResult<NTau> {
        let sys = &self.places;
        if self.in_s(tau) {
            return Err(PlaceError::PlaceInS(sys.arch_label(tau)));
        }
        let f = sys.f(tau.prime) as i64;
        let n = (1..=f).find(|&k| !self.in_s(sys.shift_arch(tau, -k))).unwrap() as u32;
        let minus = sys.shift_arch(tau, -(n as i64));
        let plus_steps = (1..=f).find(|&k| !self.in_s(sys.shift_arch(tau, k))).unwrap();
        let plus = sys.shift_arch(tau, plus_steps);
        Ok(NTau { n, minus, plus })
    }

    /// Fixed lift of tau in S_inf, if any.
    pub fn s_tilde_lift(&self, tau: ArchPlace) -> Option<EmbE> {
        self.places.lifts(tau).into_iter().find(|e| self.s_tilde.contains(e))
    }
}

// ---- JSON ----

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbJson {
    /// [prime id, sheet, i]
    Split(String, u32, u32),
    /// [prime id, j]
    Inert(String, u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SJson {
    pub infty: Vec<(String, u32)>,
    #[serde(default)]
    pub p: Vec<String>,
    #[serde(default)]
    pub n_other: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatumJson {
    pub primes: Vec<PrimeSlot>,
    #[serde(rename = "S")]
    pub s: SJson,
    #[serde(default)]
    pub level: BTreeMap<String, Level>,
    #[serde(rename = "S_tilde", default, skip_serializing_if = "Option::is_none")]
    pub s_tilde: Option<Vec<EmbJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<u32>,
}

impl DatumJson {
    pub fn into_datum(self) -> PlaceResult<ShimuraDatum> {
        let places = PlaceSystem::new(self.primes)?;
        let mut s_infty = BTreeSet::new();
        for (id, i) in &self.s.infty {
            s_infty.insert(places.arch(places.prime_index(id)?, *i)?);
        }
        let s_p = self.s.p.iter().map(|id| places.prime_index(id)).collect::<PlaceResult<_>>()?;
        let s = EvenPlaceSet { s_infty, s_p, n_other: self.s.n_other };
        for id in self.level.keys() {
            places.prime_index(id)?;
        }
        let level = (0..places.num_primes())
            .map(|p| {
                let id = &places.primes()[p].id;
                self.level.get(id).copied().unwrap_or(if s.s_p.contains(&p) {
                    Level::MaximalOrder
                } else {
                    Level::Hyperspecial
                })
            })
            .collect();
        let s_tilde = match self.s_tilde {
            None => s.s_infty.iter().map(|&t| places.lifts(t)[0]).collect(),
            Some(list) => list
                .iter()
                .map(|e| match e {
                    EmbJson::Split(id, sheet, i) => {
                        let p = places.prime_index(id)?;
                        let f = places.f(p);
                        if !places.e_split(p) || *sheet > 1 || *i >= f {
                            return Err(PlaceError::BadLabel(format!("{id}/{sheet}/{i}")));
                        }
                        places.emb(p, sheet * f + i)
                    }
                    EmbJson::Inert(id, j) => {
                        let p = places.prime_index(id)?;
                        if places.e_split(p) {
                            return Err(PlaceError::BadLabel(format!("{id}/{j}: prime splits in E")));
                        }
                        places.emb(p, *j)
                    }
                })
                .collect::<PlaceResult<_>>()?,
        };
        ShimuraDatum::with_all(places, s, level, s_tilde, self.p)
    }

    pub fn from_datum(d: &ShimuraDatum) -> Self {
        let sys = &d.places;
        let id = |p: usize| sys.primes()[p].id.clone();
        DatumJson {
            primes: sys.primes().to_vec(),
            s: SJson {
                infty: d.s.s_infty.iter().map(|t| (id(t.prime), t.i)).collect(),
                p: d.s.s_p.iter().map(|&p| id(p)).collect(),
                n_other: d.s.n_other,
            },
            level: (0..sys.num_primes()).map(|p| (id(p), d.level[p])).collect(),
            s_tilde: Some(d.s_tilde.iter().map(|&e| emb_json(sys, e)).collect()),
            p: d.p,
        }
    }
}

pub fn emb_json(sys: &PlaceSystem, e: EmbE) -> EmbJson {
    let id = sys.primes()[e.prime].id.clone();
    if sys.e_split(e.prime) {
        let f = sys.f(e.prime);
        EmbJson::Split(id, e.k / f, e.k % f)
    } else {
        EmbJson::Inert(id, e.k)
    }
}
