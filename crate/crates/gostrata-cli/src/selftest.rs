//! Built-in verification suites behind `gostrata selftest`. Each check
//! sweeps a family of inputs through the library and reports the first
//! failure it finds.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use gostrata::dieudonne::{essential_identities, roundtrip_all_subsets, seeded_trial_point, stratum_of_point, twisted_partial_frobenius};
use gostrata::links::{compose, invert, total_displacement, validate_link, Link};
use gostrata::picard;
use gostrata::places::{ArchPlace, ShimuraDatum};
use gostrata::strata::{
    check_delta_structure, delta_sets, dimension_count_check, lift_assignment, signature_from_lift,
    stratum_descriptor, LiftOptions,
};
use gostrata::witt::WittRing;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "ok  " } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn check(name: &str, r: Result<String, String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult { name: name.into(), pass: true, detail },
        Err(detail) => CheckResult { name: name.into(), pass: false, detail },
    }
}

/// Every single-prime datum with cycle length at most `max_f` whose CM type
/// matches the parity of the free places, together with every T.
pub fn datum_sweep(max_f: u32) -> Vec<(ShimuraDatum, BTreeSet<ArchPlace>)> {
    let mut out = Vec::new();
    for f in 1..=max_f {
        for s_mask in 0u32..1 << f {
            let s: Vec<u32> = (0..f).filter(|i| s_mask >> i & 1 == 1).collect();
            let free: Vec<u32> = (0..f).filter(|i| s_mask >> i & 1 == 0).collect();
            let split = free.len().is_multiple_of(2);
            let Ok(datum) = ShimuraDatum::single(f, split, &s, None) else { continue };
            for t_mask in 0u32..1 << free.len() {
                let t = free
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| t_mask >> i & 1 == 1)
                    .map(|(_, &i)| ArchPlace { prime: 0, i })
                    .collect();
                out.push((datum.clone(), t));
            }
        }
    }
    out
}

fn witt_check(samples: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut count = 0;
    for p in [2u32, 3, 5] {
        for m in 1..=4 {
            for n in [4u32, 8] {
                let ring = WittRing::new(p, m, n).map_err(|e| e.to_string())?;
                for _ in 0..samples {
                    let (a, b) = (ring.random(&mut rng), ring.random(&mut rng));
                    let phi = |x| ring.frobenius(&x, 1);
                    if phi(ring.add(&a, &b)) != ring.add(&phi(a), &phi(b))
                        || phi(ring.mul(&a, &b)) != ring.mul(&phi(a), &phi(b))
                        || ring.frobenius(&a, m as i64) != a
                        || !ring.eq_mod(&phi(a), &ring.pow(&a, p as u64), 1)
                    {
                        return Err(format!("p={p} m={m} N={n}"));
                    }
                    count += 1;
                }
            }
        }
    }
    Ok(format!("{count} elements"))
}

fn strata_check(max_f: u32) -> Result<String, String> {
    let sweep = datum_sweep(max_f);
    let failures: Vec<String> = sweep
        .par_iter()
        .filter_map(|(datum, t)| {
            let run = || -> Result<(), String> {
                let desc = stratum_descriptor(datum, t).map_err(|e| e.to_string())?;
                let lift = lift_assignment(datum, &desc, &LiftOptions::default()).map_err(|e| e.to_string())?;
                let delta = delta_sets(datum, &lift);
                check_delta_structure(datum, &desc, &lift, &delta)?;
                let s = signature_from_lift(&datum.places, &datum.s_tilde).map_err(|e| e.to_string())?;
                let counted = dimension_count_check(&datum.places, &s, &delta).map_err(|e| e.to_string())?;
                let lifted = signature_from_lift(&datum.places, &lift.s_tilde_of_t).map_err(|e| e.to_string())?;
                if counted != lifted {
                    return Err("dimension count differs from the lifted signature".into());
                }
                Ok(())
            };
            run().err().map(|e| format!("f={} S={:?} T={:?}: {e}", datum.places.f(0), datum.s.s_infty, t))
        })
        .collect();
    match failures.first() {
        None => Ok(format!("{} (datum, T) pairs", sweep.len())),
        Some(e) => Err(e.clone()),
    }
}

/// Random valid link on a band of length at most `max_n`, with its target
/// band drawn independently.
pub fn random_link<R: Rng>(rng: &mut R, n: u32, src: &[u32]) -> Link {
    let mut pool: Vec<u32> = (0..n).collect();
    let mut tgt = Vec::with_capacity(src.len());
    for _ in 0..src.len() {
        tgt.push(pool.swap_remove(rng.gen_range(0..pool.len())));
    }
    tgt.sort_unstable();
    Link::rotation(n, src, &tgt, rng.gen_range(-2..=2), rng.gen_range(0..16))
}

fn links_check(pairs: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11ec);
    for _ in 0..pairs {
        let n = rng.gen_range(1..=12);
        let k = rng.gen_range(0..=n) as usize;
        let mut src: Vec<u32> = (0..n).collect();
        while src.len() > k {
            src.swap_remove(rng.gen_range(0..src.len()));
        }
        src.sort_unstable();
        let a = random_link(&mut rng, n, &src);
        let mid: Vec<u32> = a.target_nodes.iter().copied().collect();
        let b = random_link(&mut rng, n, &mid);
        let c = compose(&b, &a).map_err(|e| e.to_string())?;
        validate_link(&c).map_err(|e| e.to_string())?;
        if total_displacement(&c) != total_displacement(&a) + total_displacement(&b)
            || total_displacement(&invert(&a)) != -total_displacement(&a)
        {
            return Err(format!("additivity fails for {a:?} then {b:?}"));
        }
    }
    Ok(format!("{pairs} composable pairs"))
}

fn picard_check(max_f: u32) -> Result<String, String> {
    let mut count = 0;
    for (datum, t) in datum_sweep(max_f) {
        if !t.is_empty() || datum.free_places(0).is_empty() {
            continue;
        }
        // With a single free place tau^- = tau and the fiber formula does
        // not apply; the matrix is still checked.
        let fibers = datum.free_places(0).len() >= 2;
        for p in [2u32, 3, 5] {
            let m = picard::hasse_matrix(&datum, p).map_err(|e| e.to_string())?;
            if m.determinant() == BigRational::from_integer(BigInt::from(0)) {
                return Err(format!("singular matrix for S={:?}", datum.s.s_infty));
            }
            for tau in picard::basis(&datum).into_iter().filter(|_| fibers) {
                let class = picard::divisor_class(&datum, p, tau).map_err(|e| e.to_string())?;
                let deg = picard::fiber_degree(&datum, p, &class, tau).map_err(|e| e.to_string())?;
                let n = datum.n_tau(tau).map_err(|e| e.to_string())?.n;
                let expected = -BigRational::from_integer(BigInt::from(2) * BigInt::from(p).pow(n));
                if deg != expected {
                    return Err(format!("fiber degree {deg} at {tau} for S={:?}", datum.s.s_infty));
                }
                count += 1;
            }
        }
    }
    Ok(format!("{count} fiber degrees"))
}

fn dieudonne_check(trials: u64) -> Result<String, String> {
    let configs: Vec<(u32, u32, u64)> =
        [2u32, 3, 5].iter().flat_map(|&p| [2u32, 3].map(move |f| (p, f))).flat_map(|(p, f)| (0..trials).map(move |t| (p, f, t))).collect();
    let results: Vec<Result<usize, String>> = configs
        .par_iter()
        .map(|&(p, f, trial)| {
            let err = |e: gostrata::dieudonne::DieudonneError| format!("p={p} f={f} trial {trial}: {e}");
            let pt = seeded_trial_point(p, f, 8, 0x5e1f, trial).map_err(err)?;
            essential_identities(&pt).map_err(err)?;
            let stratum = stratum_of_point(&pt).map_err(err)?;
            let tw = stratum_of_point(&twisted_partial_frobenius(&pt).map_err(err)?).map_err(err)?;
            let shifted: BTreeSet<_> = stratum.iter().map(|&x| pt.places().shift_arch(x, 2)).collect();
            if tw != shifted {
                return Err(format!("p={p} f={f} trial {trial}: twist moves the stratum wrongly"));
            }
            let r = roundtrip_all_subsets(&pt).map_err(err)?;
            if !r.exact() {
                return Err(format!("p={p} f={f} trial {trial}: roundtrip differs for T={:?}", r.mismatches[0]));
            }
            Ok(r.subsets)
        })
        .collect();
    let mut subsets = 0;
    for r in results {
        subsets += r?;
    }
    Ok(format!("{} points, {subsets} roundtrips", configs.len()))
}

/// Runs every suite; `quick` shrinks the sweeps.
pub fn run_all(quick: bool) -> Vec<CheckResult> {
    let (samples, max_f, pairs, trials) = if quick { (100, 5, 500, 3) } else { (1000, 8, 10_000, 20) };
    vec![
        check("witt", witt_check(samples)),
        check("strata", strata_check(max_f)),
        check("links", links_check(pairs)),
        check("picard", picard_check(max_f)),
        check("dieudonne", dieudonne_check(trials)),
    ]
}
