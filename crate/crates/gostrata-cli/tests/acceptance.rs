//! Acceptance suite. Runs every criterion at exact tolerance, prints one
//! line per criterion and exits nonzero when any of them fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use gostrata::dieudonne::{
    build_isogeny_triple, essential_identities, reconstruct_point, seeded_trial_point, stratum_of_point,
    twisted_partial_frobenius, DieudonnePoint,
};
use gostrata::links::{
    band_of, compose, induced_link, invert, standard_morphism, total_displacement, validate_link, Band, Link,
    LinkError, MorphismKind,
};
use gostrata::picard;
use gostrata::places::{ArchPlace, DatumJson, EmbE, ShimuraDatum};
use gostrata::strata::{
    delta_sets, dimension_count_check, lift_assignment, signature_from_lift, stratum_descriptor, CaseTag, DeltaSets,
    LiftChoice, LiftOptions, StratumDescriptor,
};
use gostrata::witt::WittRing;
use gostrata_cli::selftest::{datum_sweep, random_link};
use gostrata_cli::strata_table;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("{what} took {took:?}, limit {limit:?}"))
}

fn arch_set(d: &ShimuraDatum, idx: &[u32]) -> BTreeSet<ArchPlace> {
    idx.iter().map(|&i| ArchPlace { prime: 0, i: i % d.places.f(0) }).collect()
}

fn indices(s: &BTreeSet<ArchPlace>) -> BTreeSet<u32> {
    s.iter().map(|t| t.i).collect()
}

/// Gap back to the previous place outside S, found by walking the cycle.
fn walk_n_tau(d: &ShimuraDatum, tau: ArchPlace) -> (u32, ArchPlace, ArchPlace) {
    let f = d.places.f(tau.prime);
    let at = |k: i64| ArchPlace { prime: tau.prime, i: (tau.i as i64 + k).rem_euclid(f as i64) as u32 };
    let n = (1..=f).find(|&n| !d.in_s(at(-(n as i64)))).unwrap();
    let up = (1..=f).find(|&n| !d.in_s(at(n as i64))).unwrap();
    (n, at(-(n as i64)), at(up as i64))
}

// ---- 1 ----

/// Expected (S(T) indices, N, Iwahori) for the inert quartic cycle with
/// S empty, keyed by the indices of T.
fn quartic_oracle(t: &BTreeSet<u32>) -> (BTreeSet<u32>, usize, bool) {
    let all: BTreeSet<u32> = (0..4).collect();
    let v: Vec<u32> = t.iter().copied().collect();
    match v.len() {
        0 => (BTreeSet::new(), 0, false),
        1 => ([(v[0] + 3) % 4, v[0]].into_iter().collect(), 1, false),
        2 if (v[1] - v[0]).is_multiple_of(2) => (all, 2, false),
        2 => (t.clone(), 0, false),
        3 => (all, 1, false),
        _ => (all, 0, true),
    }
}

fn criterion_quartic() -> Outcome {
    let start = Instant::now();
    let d = ShimuraDatum::single(4, true, &[], None).map_err(|e| e.to_string())?;
    let rows = strata_table(&d).map_err(|e| e.to_string())?;
    ensure(rows.len() == 16, || format!("{} rows", rows.len()))?;
    let parse = |labels: &[String]| -> Result<BTreeSet<u32>, String> {
        labels.iter().map(|l| d.places.parse_arch(l).map(|t| t.i).map_err(|e| e.to_string())).collect()
    };
    for row in &rows {
        let t = parse(&row.t)?;
        let (s, n, iw) = quartic_oracle(&t);
        ensure(parse(&row.s_of_t)? == s && row.n == n && row.iwahori == iw && row.s_p.is_empty(), || {
            format!("row T={:?}: got S={:?} N={} Iwahori={}", row.t, row.s_of_t, row.n, row.iwahori)
        })?;
    }
    let path = std::env::temp_dir().join(format!("gostrata-quartic-{}.json", std::process::id()));
    let text = serde_json::to_string(&DatumJson::from_datum(&d)).map_err(|e| e.to_string())?;
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    let out = gostrata_cli::run(["gostrata", "strata-table", "--datum", path.to_str().unwrap()]);
    let _ = std::fs::remove_file(&path);
    ensure(out.code == 0, || format!("strata-table exited {}: {}", out.code, out.stderr))?;
    let parsed: serde_json::Value = serde_json::from_str(&out.stdout).map_err(|e| e.to_string())?;
    ensure(parsed.as_array().map(|a| a.len()) == Some(16), || "strata-table JSON is not 16 rows".into())?;
    within(start, Duration::from_secs(1), "quartic table")?;
    Ok("16 rows match".into())
}

// ---- 2 ----

fn criterion_worked_example() -> Outcome {
    let neg = |a: u32| (10 - a % 10) % 10;
    let d = ShimuraDatum::single(10, true, &[neg(2), neg(6)], None).map_err(|e| e.to_string())?;
    let t = arch_set(&d, &[neg(3), neg(5), neg(7)]);
    let desc = stratum_descriptor(&d, &t).map_err(|e| e.to_string())?;
    let t_prime: BTreeSet<u32> = [3, 4, 5, 7].iter().map(|&a| neg(a)).collect();
    let i_t: BTreeSet<u32> = [neg(4)].into_iter().collect();
    ensure(indices(&desc.t_prime[0]) == t_prime, || format!("T' = {:?}", desc.t_prime[0]))?;
    ensure(indices(&desc.i_t) == i_t, || format!("I_T = {:?}", desc.i_t))?;
    ensure(desc.n_bundle == 1, || format!("N = {}", desc.n_bundle))?;
    Ok("T', I_T and N match".into())
}

// ---- 3 ----

fn criterion_links() -> Outcome {
    let start = Instant::now();
    let band = |nodes: &[u32]| Band { n: 5, nodes: nodes.iter().copied().collect() };
    let disp: BTreeMap<u32, i64> = [(0, 3), (2, 3), (4, 3)].into_iter().collect();
    let eta = Link::new(&band(&[0, 2, 4]), &band(&[0, 2, 3]), disp).map_err(|e| e.to_string())?;
    validate_link(&eta).map_err(|e| e.to_string())?;
    ensure(total_displacement(&eta) == 9, || format!("v = {}", total_displacement(&eta)))?;
    ensure(total_displacement(&invert(&eta)) == -9, || "v of the inverse".into())?;
    let id = compose(&invert(&eta), &eta).map_err(|e| e.to_string())?;
    ensure(total_displacement(&id) == 0 && id == Link::identity(&band(&[0, 2, 4])), || "composite with the inverse".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let pairs = 10_000;
    for _ in 0..pairs {
        let n = rng.gen_range(1..=12u32);
        let src: Vec<u32> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        let a = random_link(&mut rng, n, &src);
        let mid: Vec<u32> = a.target_nodes.iter().copied().collect();
        let b = random_link(&mut rng, n, &mid);
        let c = compose(&b, &a).map_err(|e| e.to_string())?;
        validate_link(&c).map_err(|e| e.to_string())?;
        // Oracle: follow each node through both links and add displacements.
        let direct: i64 = a.disp.iter().map(|(v, d)| d + b.disp[&a.image(*v).unwrap()]).sum();
        ensure(total_displacement(&c) == direct, || format!("additivity fails for {a:?} then {b:?}"))?;
    }
    within(start, Duration::from_secs(5), "link checks")?;
    Ok(format!("v = 9, inverse -9, {pairs} composable pairs additive"))
}

// ---- 4 and 5 ----

struct Lifted {
    datum: ShimuraDatum,
    desc: StratumDescriptor,
    lift: LiftChoice,
    delta: DeltaSets,
}

fn lifted_sweep(max_f: u32) -> Result<Vec<Lifted>, String> {
    datum_sweep(max_f)
        .into_par_iter()
        .map(|(datum, t)| {
            let desc = stratum_descriptor(&datum, &t).map_err(|e| e.to_string())?;
            let lift = lift_assignment(&datum, &desc, &LiftOptions::default()).map_err(|e| e.to_string())?;
            let delta = delta_sets(&datum, &lift);
            Ok(Lifted { datum, desc, lift, delta })
        })
        .collect()
}

/// Walks each run of a Delta set downwards and checks where it ends, and
/// classifies every entry and exit of Delta^-.
fn delta_oracle(x: &Lifted) -> Result<(), String> {
    let sys = &x.datum.places;
    let t_prime: BTreeSet<ArchPlace> = x.desc.t_prime.iter().flatten().copied().collect();
    let label = |e: EmbE| sys.emb_label(e);
    for set in [&x.delta.plus, &x.delta.minus] {
        for &e in set {
            let period = 2 * sys.f(e.prime) as i64;
            let n = (1..=period).find(|&n| !set.contains(&sys.shift_emb(e, -n)));
            let n = n.ok_or_else(|| format!("{} lies on a full cycle", label(e)))?;
            let end = sys.shift_emb(e, -n);
            ensure(t_prime.contains(&sys.restrict(end)), || format!("run from {} exits outside T'", label(e)))?;
            if t_prime.contains(&sys.restrict(e)) {
                let (nt, _, _) = walk_n_tau(&x.datum, sys.restrict(e));
                ensure(nt as i64 == n, || format!("run length {n} at {} but n_tau = {nt}", label(e)))?;
            }
        }
    }
    for e in sys.all_emb_global() {
        let here = x.delta.minus.contains(&e);
        let above = x.delta.minus.contains(&sys.shift_emb(e, 1));
        if here && !above {
            ensure(x.lift.t_tilde_prime.contains(&e), || format!("exit {} is not a chosen lift", label(e)))?;
        }
        if !here && above {
            ensure(x.lift.t_tilde_prime.contains(&sys.conj(e)), || format!("entry {} is not conjugate", label(e)))?;
        }
        if here && above {
            ensure(x.datum.in_s(sys.restrict(e)), || format!("interior {} outside S", label(e)))?;
        }
    }
    Ok(())
}

fn criterion_delta_structure(sweep: &[Lifted]) -> Outcome {
    let start = Instant::now();
    let failure = sweep.par_iter().find_map_any(|x| {
        delta_oracle(x)
            .err()
            .map(|e| format!("f={} S={:?} T={:?}: {e}", x.datum.places.f(0), x.datum.s.s_infty, x.desc.t))
    });
    if let Some(e) = failure {
        return Err(e);
    }
    within(start, Duration::from_secs(60), "Delta sweep")?;
    Ok(format!("{} (datum, T) pairs with f <= 8", sweep.len()))
}

fn criterion_dimension_count(sweep: &[Lifted]) -> Outcome {
    let mut seen = BTreeSet::new();
    for x in sweep {
        let sys = &x.datum.places;
        let s = signature_from_lift(sys, &x.datum.s_tilde).map_err(|e| e.to_string())?;
        let counted = dimension_count_check(sys, &s, &x.delta).map_err(|e| e.to_string())?;
        let lifted = signature_from_lift(sys, &x.lift.s_tilde_of_t).map_err(|e| e.to_string())?;
        ensure(counted == lifted, || format!("f={} S={:?} T={:?}", sys.f(0), x.datum.s.s_infty, x.desc.t))?;
        seen.insert(format!("{:?}", x.desc.case_tags[0]));
    }
    for case in [CaseTag::A1, CaseTag::A2, CaseTag::B1, CaseTag::B2] {
        ensure(seen.contains(&format!("{case:?}")), || format!("case {case:?} never reached"))?;
    }
    Ok(format!("{} pairs, cases {}", sweep.len(), seen.into_iter().collect::<Vec<_>>().join(" ")))
}

// ---- 6, 7, 8 ----

fn trial_points() -> Result<Vec<(String, DieudonnePoint)>, String> {
    let configs: Vec<(u32, u32, u64)> = [2u32, 3, 5]
        .into_iter()
        .flat_map(|p| [2u32, 3, 4].map(move |f| (p, f)))
        .flat_map(|(p, f)| (0..100).map(move |t| (p, f, t)))
        .collect();
    configs
        .into_par_iter()
        .map(|(p, f, trial)| {
            let tag = format!("p={p} f={f} trial {trial}");
            seeded_trial_point(p, f, 8, 0xacce, trial).map(|pt| (tag.clone(), pt)).map_err(|e| format!("{tag}: {e}"))
        })
        .collect()
}

fn subsets(s: &BTreeSet<ArchPlace>) -> Vec<BTreeSet<ArchPlace>> {
    let items: Vec<ArchPlace> = s.iter().copied().collect();
    (0..1u32 << items.len())
        .map(|mask| items.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &x)| x).collect())
        .collect()
}

fn criterion_roundtrip(points: &[(String, DieudonnePoint)]) -> Outcome {
    let start = Instant::now();
    let opts = LiftOptions::default();
    let results: Vec<Result<(usize, BTreeSet<String>), String>> = points
        .par_iter()
        .map(|(tag, pt)| {
            let err = |e: gostrata::dieudonne::DieudonneError| format!("{tag}: {e}");
            let stratum = stratum_of_point(pt).map_err(err)?;
            let mut cases = BTreeSet::new();
            let all = subsets(&stratum);
            for t in &all {
                let tr = build_isogeny_triple(pt, t, &opts).map_err(err)?;
                let back = reconstruct_point(pt.datum(), &tr.b, &tr.j, t, &opts).map_err(err)?;
                ensure(back.lattices() == pt.lattices(), || format!("{tag}: T={t:?} does not come back"))?;
                cases.extend(tr.lift.patterns.iter().map(|pat| format!("{:?}", pat.case)));
            }
            Ok((all.len(), cases))
        })
        .collect();
    let mut total = 0;
    let mut cases = BTreeSet::new();
    for r in results {
        let (n, c) = r?;
        total += n;
        cases.extend(c);
    }
    within(start, Duration::from_secs(300), "roundtrips")?;
    let cases: Vec<String> = cases.into_iter().collect();
    Ok(format!("{} points, {total} subsets exact, cases {}", points.len(), cases.join(" ")))
}

fn criterion_essential(points: &[(String, DieudonnePoint)]) -> Outcome {
    let failure = points.par_iter().find_map_any(|(tag, pt)| essential_identities(pt).err().map(|e| format!("{tag}: {e}")));
    match failure {
        Some(e) => Err(e),
        None => Ok(format!("{} points", points.len())),
    }
}

fn criterion_twist(points: &[(String, DieudonnePoint)]) -> Outcome {
    let failure = points.par_iter().find_map_any(|(tag, pt)| {
        let run = || -> Result<(), String> {
            let before = stratum_of_point(pt).map_err(|e| e.to_string())?;
            let twisted = twisted_partial_frobenius(pt).map_err(|e| e.to_string())?;
            let after = stratum_of_point(&twisted).map_err(|e| e.to_string())?;
            let f = pt.places().f(0);
            let moved: BTreeSet<ArchPlace> = before.iter().map(|t| ArchPlace { prime: 0, i: (t.i + 2) % f }).collect();
            ensure(after == moved, || format!("stratum {before:?} became {after:?}"))
        };
        run().err().map(|e| format!("{tag}: {e}"))
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(format!("{} points", points.len())),
    }
}

// ---- 9 ----

fn criterion_picard() -> Outcome {
    let zero = BigRational::from_integer(BigInt::from(0));
    let mut degrees = 0;
    let mut matrices = 0;
    let mut datums = Vec::new();
    for (datum, t) in datum_sweep(8) {
        if !t.is_empty() || datum.free_places(0).is_empty() {
            continue;
        }
        for p in [2u32, 3, 5] {
            let m = picard::hasse_matrix(&datum, p).map_err(|e| e.to_string())?;
            ensure(m.determinant() != zero, || format!("singular matrix for S={:?} p={p}", datum.s.s_infty))?;
            matrices += 1;
            // A single free place folds tau^- onto tau; the fiber formula
            // needs two distinct places.
            if datum.free_places(0).len() < 2 {
                continue;
            }
            for tau in picard::basis(&datum) {
                let class = picard::divisor_class(&datum, p, tau).map_err(|e| e.to_string())?;
                let deg = picard::fiber_degree(&datum, p, &class, tau).map_err(|e| e.to_string())?;
                let (n, _, _) = walk_n_tau(&datum, tau);
                let expected = BigRational::from_integer(-BigInt::from(2) * BigInt::from(p).pow(n));
                ensure(deg == expected, || format!("fiber degree {deg} at {tau:?} for S={:?} p={p}", datum.s.s_infty))?;
                degrees += 1;
            }
        }
        datums.push(datum);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xa3b1e);
    let (vectors, mut passing) = (10_000, 0);
    for _ in 0..vectors {
        let datum = &datums[rng.gen_range(0..datums.len())];
        let p = [2u32, 3, 5][rng.gen_range(0..3)];
        let t: BTreeMap<ArchPlace, BigRational> = picard::basis(datum)
            .into_iter()
            .map(|tau| (tau, BigRational::new(BigInt::from(rng.gen_range(-4..=40)), BigInt::from(rng.gen_range(1..=6)))))
            .collect();
        let report = picard::ample_necessary(datum, p, &t).map_err(|e| e.to_string())?;
        if report.pass {
            passing += 1;
            ensure(t.values().all(|x| *x > zero), || format!("passing vector with a nonpositive entry: {t:?}"))?;
        }
    }
    ensure(passing > 0, || "no random vector passed the cone test".into())?;
    Ok(format!("{matrices} matrices, {degrees} fiber degrees, {passing}/{vectors} vectors in the cone all positive"))
}

// ---- 10 ----

fn criterion_witt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3177);
    let per = 10_000;
    let mut configs = 0;
    for p in [2u32, 3, 5] {
        for m in 1..=4usize {
            for n in [4u32, 8] {
                let ring = WittRing::new(p, m, n).map_err(|e| e.to_string())?;
                let phi = |x: &_| ring.frobenius(x, 1);
                for _ in 0..per {
                    let (a, b) = (ring.random(&mut rng), ring.random(&mut rng));
                    ensure(
                        phi(&ring.add(&a, &b)) == ring.add(&phi(&a), &phi(&b))
                            && phi(&ring.mul(&a, &b)) == ring.mul(&phi(&a), &phi(&b))
                            && ring.frobenius(&a, m as i64) == a
                            && ring.eq_mod(&phi(&a), &ring.pow(&a, p as u64), 1),
                        || format!("p={p} m={m} N={n} a={a:?} b={b:?}"),
                    )?;
                }
                configs += 1;
            }
        }
    }
    let w2 = WittRing::new(3, 2, 2).map_err(|e| e.to_string())?;
    ensure(w2.frobenius(&w2.x(), 1) == w2.neg(&w2.x()), || "phi(x) != -x in W_2(F_9)".into())?;
    Ok(format!("{configs} rings x {per} elements, W_2(F_9) phi(x) = -x"))
}

// ---- 11 ----

fn morphism_checks(d: &ShimuraDatum) -> Result<usize, String> {
    let split = d.places.e_split(0);
    let free = d.free_places(0);
    let mut count = 0;

    let pf = standard_morphism(MorphismKind::PartialFrobenius { prime: 0 }, d).map_err(|e| e.to_string())?;
    validate_link(&pf.link).map_err(|e| e.to_string())?;
    let on = |sheet: u32| d.s_tilde.iter().filter(|e| d.places.sheet(**e) == sheet).count() as i64;
    let want = if split { 2 * on(1) - 2 * on(0) } else { 0 };
    ensure(pf.indentation == want && total_displacement(&pf.link) == 2 * free.len() as i64, || {
        format!("partial Frobenius on S={:?}", d.s.s_infty)
    })?;
    count += 1;

    for &tau in &free {
        let (n, minus, plus) = walk_n_tau(d, tau);
        let (n_plus, _, _) = walk_n_tau(d, plus);
        match standard_morphism(MorphismKind::EtaTauMinusPlus { tau }, d) {
            Ok(m) => {
                ensure(free.len() >= 3, || "eta built with fewer than three free places".into())?;
                validate_link(&m.link).map_err(|e| e.to_string())?;
                let v = (n + n_plus) as i64;
                let indent = if split { n_plus as i64 - n as i64 } else { 0 };
                ensure(total_displacement(&m.link) == v && m.degree_exponent == Some(v) && m.indentation == indent, || {
                    format!("eta at {tau:?} for S={:?}", d.s.s_infty)
                })?;
                ensure(m.link.image(minus.i) == Some(plus.i), || format!("eta at {tau:?} does not send tau^- to tau^+"))?;
                count += 1;
                count += induced_checks(d, tau, &m.link, v)?;
            }
            Err(LinkError::NotApplicable(_)) => ensure(free.len() < 3, || format!("eta at {tau:?} refused"))?,
            Err(e) => return Err(e.to_string()),
        }
        match standard_morphism(MorphismKind::TrivialHecke { tau }, d) {
            Ok(m) => {
                let g = d.places.f(0);
                let want = if split { 2 * (g - n) as i64 } else { 0 };
                ensure(m.indentation == want && m.link.source_nodes.is_empty(), || format!("Hecke at {tau:?}"))?;
                count += 1;
            }
            Err(LinkError::NotApplicable(_)) => ensure(free.len() != 2, || format!("Hecke at {tau:?} refused"))?,
            Err(e) => return Err(e.to_string()),
        }
    }
    Ok(count)
}

/// Induced links for every place of the source datum of `eta`, against
/// the indentation table with a fixed base indentation.
fn induced_checks(d: &ShimuraDatum, tau0: ArchPlace, eta: &Link, v: i64) -> Result<usize, String> {
    let split = d.places.e_split(0);
    let (_, minus0, plus0) = walk_n_tau(d, tau0);
    let with = |extra: &[ArchPlace]| -> Result<ShimuraDatum, String> {
        let s: Vec<u32> = d.s.s_infty.iter().chain(extra).map(|t| t.i).collect();
        ShimuraDatum::single(d.places.f(0), split, &s, None).map_err(|e| e.to_string())
    };
    let source = with(&[tau0, plus0])?;
    let target = with(&[minus0, tau0])?;
    ensure(band_of(&source, 0) == eta.source() && band_of(&target, 0) == eta.target(), || "eta bands".into())?;
    let turning = minus0;
    let turning_plus = walk_n_tau(&source, turning).2;
    let base = 7;
    let mut count = 0;
    if source.free_places(0).len() < 2 {
        return Ok(0);
    }
    for tau in source.free_places(0) {
        let (link, m) = induced_link(eta, &source, &target, tau, base).map_err(|e| format!("induced at {tau:?}: {e}"))?;
        validate_link(&link).map_err(|e| e.to_string())?;
        let want = if !split {
            0
        } else if tau == turning {
            base - v
        } else if tau == turning_plus {
            base + v
        } else {
            base
        };
        let (_, tau_minus, _) = walk_n_tau(&source, tau);
        let carried = if tau == turning || tau_minus == turning { 0 } else { v };
        ensure(m == want && total_displacement(&link) == carried, || {
            format!("induced at {tau:?} from eta at {tau0:?}, S={:?}: m={m}", d.s.s_infty)
        })?;
        count += 1;
    }
    Ok(count)
}

fn criterion_indentation() -> Outcome {
    let mut datums: Vec<ShimuraDatum> = Vec::new();
    for (d, t) in datum_sweep(8) {
        if t.is_empty() && !d.free_places(0).is_empty() {
            datums.push(d);
        }
    }
    let counts: Vec<Result<usize, String>> = datums.par_iter().map(morphism_checks).collect();
    let mut total = 0;
    for c in counts {
        total += c?;
    }
    Ok(format!("{} datums, {total} morphisms and induced links", datums.len()))
}

fn main() {
    let sweep = lifted_sweep(8);
    let points = trial_points();
    let lift_err = |r: &Result<Vec<Lifted>, String>| r.as_ref().err().cloned();
    let point_err = |r: &Result<Vec<(String, DieudonnePoint)>, String>| r.as_ref().err().cloned();
    let on_sweep = |f: fn(&[Lifted]) -> Outcome| match &sweep {
        Ok(s) => f(s),
        Err(_) => Err(lift_err(&sweep).unwrap()),
    };
    let on_points = |f: fn(&[(String, DieudonnePoint)]) -> Outcome| match &points {
        Ok(p) => f(p),
        Err(_) => Err(point_err(&points).unwrap()),
    };

    let results: Vec<(&str, Outcome)> = vec![
        ("1 quartic table", criterion_quartic()),
        ("2 worked example f=10", criterion_worked_example()),
        ("3 link displacement", criterion_links()),
        ("4 Delta run structure", on_sweep(criterion_delta_structure)),
        ("5 dimension count", on_sweep(criterion_dimension_count)),
        ("6 isogeny roundtrip", on_points(criterion_roundtrip)),
        ("7 essential identities", on_points(criterion_essential)),
        ("8 twisted partial Frobenius", on_points(criterion_twist)),
        ("9 Picard consistency", criterion_picard()),
        ("10 Witt substrate", criterion_witt()),
        ("11 indentation arithmetic", criterion_indentation()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{}/{} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
