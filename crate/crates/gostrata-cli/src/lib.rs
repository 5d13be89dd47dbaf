//! Command-line front end for `gostrata`. Each verb reads its inputs, calls
//! the library and renders the result as JSON, CSV or ASCII.
//!
//! Exit codes: 0 on success, 1 on a domain or input error, 2 on a usage
//! error.

pub mod selftest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use gostrata::dieudonne::{
    self, roundtrip_all_subsets, seeded_trial_point, stratum_of_point, twisted_partial_frobenius, PointJson,
};
use gostrata::links::{
    self, compose, frobenius_link, render_link_ascii, standard_morphism, total_displacement, validate_link, Link,
    MorphismKind, MorphismNote,
};
use gostrata::picard;
use gostrata::places::{ArchPlace, DatumJson, Level, ShimuraDatum};
use gostrata::strata::{delta_sets, lift_assignment, stratum_descriptor, LiftOptions, StratumJson};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("cannot read {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("invalid JSON in {path}: {detail}")]
    Json { path: String, detail: String },
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn domain<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Domain(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Ascii,
}

#[derive(Debug, Parser)]
#[command(name = "gostrata", version, about = "Goren-Oort strata combinatorics and Dieudonne-module checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output format; JSON unless the verb states otherwise.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for table rows and trials.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratum descriptor S(T), I_T, N and, when the CM type allows, the
    /// lifts and Delta sets.
    Strata {
        #[arg(long)]
        datum: PathBuf,
        /// Comma-separated places, e.g. "1,3" or "p:1,q:0".
        #[arg(long = "T", value_name = "LIST", allow_hyphen_values = true)]
        t: String,
    },
    /// One row per subset T of the places outside S_inf.
    StrataTable {
        #[arg(long)]
        datum: PathBuf,
    },
    /// Validate, compose or build links and standard link morphisms.
    Link(LinkArgs),
    /// Necessary ampleness test for a weight vector.
    Ample {
        #[arg(long)]
        datum: PathBuf,
        /// Comma-separated rationals, one per place outside S_inf in cycle order.
        #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
        t: String,
        #[arg(long)]
        p: Option<u32>,
    },
    /// Hasse matrix, divisor classes and fiber degrees.
    Picard(PicardArgs),
    /// Classify, twist, sample or roundtrip simulated Dieudonne points.
    Dieudonne(DieudonneArgs),
    /// Runs the built-in verification suites.
    Selftest {
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["validate", "compose", "frobenius", "standard"])))]
pub struct LinkArgs {
    /// Validate a link file.
    #[arg(long, value_name = "FILE")]
    pub validate: Option<PathBuf>,
    /// Compose two link files: the result is the second after the first.
    #[arg(long, num_args = 2, value_names = ["FIRST", "SECOND"])]
    pub compose: Option<Vec<PathBuf>>,
    /// The sigma^k link of a datum (k = --k, default 2).
    #[arg(long)]
    pub frobenius: bool,
    /// Standard morphism: partial-frobenius, delta-tau0, eta or trivial-hecke.
    #[arg(long, value_name = "KIND")]
    pub standard: Option<String>,
    #[arg(long)]
    pub datum: Option<PathBuf>,
    /// Prime id (defaults to the only prime).
    #[arg(long)]
    pub prime: Option<String>,
    #[arg(long, default_value_t = 2, allow_hyphen_values = true)]
    pub k: i64,
    /// Place label for eta and trivial-hecke.
    #[arg(long)]
    pub tau: Option<String>,
    /// Embedding label for delta-tau0.
    #[arg(long)]
    pub lift: Option<String>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["matrix", "class", "fiber_degree"])))]
pub struct PicardArgs {
    #[arg(long)]
    pub datum: PathBuf,
    #[arg(long)]
    pub p: Option<u32>,
    /// The Hasse relation matrix and its determinant.
    #[arg(long)]
    pub matrix: bool,
    /// Divisor class of the vanishing locus of h_TAU.
    #[arg(long, value_name = "TAU")]
    pub class: Option<String>,
    /// Degree on a fiber of the projection attached to TAU.
    #[arg(long, value_name = "TAU")]
    pub fiber_degree: Option<String>,
    /// Class whose fiber degree is taken (defaults to the divisor of TAU).
    #[arg(long, value_name = "TAU2", requires = "fiber_degree")]
    pub class_of: Option<String>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["classify", "roundtrip", "twist", "sample"])))]
pub struct DieudonneArgs {
    /// Stratum, signature and Hasse data of a point file.
    #[arg(long, value_name = "FILE")]
    pub classify: Option<PathBuf>,
    /// Randomized build/reconstruct roundtrip over every T in the stratum.
    #[arg(long)]
    pub roundtrip: bool,
    /// Twisted partial Frobenius of a point file.
    #[arg(long, value_name = "FILE")]
    pub twist: Option<PathBuf>,
    /// Emit one random point.
    #[arg(long)]
    pub sample: bool,
    /// Seed for --roundtrip and --sample.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Residue characteristic for random points.
    #[arg(long)]
    pub p: Option<u32>,
    /// Cycle length of the prime for random points.
    #[arg(long)]
    pub f: Option<u32>,
    /// Number of random points for --roundtrip.
    #[arg(long, default_value_t = 100)]
    pub trials: u64,
    /// Witt vector length N.
    #[arg(long = "precision", default_value_t = 8)]
    pub precision: u32,
}

/// Exit code and captured output of one invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Parses `argv` (program name first) and runs the verb.
pub fn run<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            return if code == 0 {
                Outcome { code, stdout: text, stderr: String::new() }
            } else {
                Outcome { code, stdout: String::new(), stderr: text }
            };
        }
    };
    match execute(&cli) {
        Ok((stdout, ok)) => Outcome { code: if ok { 0 } else { 1 }, stdout, stderr: String::new() },
        Err(e) => Outcome { code: e.exit_code(), stdout: String::new(), stderr: format!("error: {e}\n") },
    }
}

fn execute(cli: &Cli) -> CliResult<(String, bool)> {
    let jobs = cli.jobs.unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(domain)?;
    let fmt = cli.format.unwrap_or(Format::Json);
    let done = |text: String| (text, true);
    pool.install(|| match &cli.command {
        Command::Strata { datum, t } => cmd_strata(&load_datum(datum)?, t, fmt).map(done),
        Command::StrataTable { datum } => cmd_strata_table(&load_datum(datum)?, fmt).map(done),
        Command::Link(args) => cmd_link(args, fmt).map(done),
        Command::Ample { datum, t, p } => cmd_ample(&load_datum(datum)?, t, *p, fmt).map(done),
        Command::Picard(args) => cmd_picard(args, fmt).map(done),
        Command::Dieudonne(args) => cmd_dieudonne(args, cli.format),
        Command::Selftest { quick } => cmd_selftest(*quick, cli.format.unwrap_or(Format::Ascii)),
    })
}

fn cmd_selftest(quick: bool, format: Format) -> CliResult<(String, bool)> {
    let results = selftest::run_all(quick);
    let ok = results.iter().all(|r| r.pass);
    let text = match format {
        Format::Json => json(&results)?,
        Format::Csv => csv(
            &["check", "pass", "detail"],
            results.iter().map(|r| vec![r.name.clone(), r.pass.to_string(), r.detail.clone()]),
        ),
        Format::Ascii => results.iter().map(|r| format!("{r}\n")).collect(),
    };
    Ok((text, ok))
}

// ---- input helpers ----

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Io { path: path.display().to_string(), detail: e.to_string() })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Json { path: path.display().to_string(), detail: e.to_string() })
}

pub fn load_datum(path: &Path) -> CliResult<ShimuraDatum> {
    parse_json::<DatumJson>(path)?.into_datum().map_err(domain)
}

fn json<T: Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(domain)?;
    s.push('\n');
    Ok(s)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv<I: IntoIterator<Item = Vec<String>>>(header: &[&str], rows: I) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn labels(datum: &ShimuraDatum, set: impl IntoIterator<Item = ArchPlace>) -> Vec<String> {
    set.into_iter().map(|x| datum.places.arch_label(x)).collect()
}

fn resolve_p(flag: Option<u32>, datum: &ShimuraDatum) -> CliResult<u32> {
    flag.or(datum.p).ok_or_else(|| CliError::Usage("--p is required when the datum has no \"p\" field".into()))
}

fn prime_index(datum: &ShimuraDatum, id: Option<&str>) -> CliResult<usize> {
    match id {
        Some(id) => datum.places.prime_index(id).map_err(domain),
        None if datum.places.num_primes() == 1 => Ok(0),
        None => Err(CliError::Usage("--prime is required when the datum has several primes".into())),
    }
}

// ---- strata ----

#[derive(Serialize)]
struct StrataOut {
    #[serde(flatten)]
    stratum: StratumJson,
    #[serde(rename = "Delta_plus", skip_serializing_if = "Option::is_none")]
    delta_plus: Option<Vec<String>>,
    #[serde(rename = "Delta_minus", skip_serializing_if = "Option::is_none")]
    delta_minus: Option<Vec<String>>,
}

fn cmd_strata(datum: &ShimuraDatum, t: &str, format: Format) -> CliResult<String> {
    let sys = &datum.places;
    let t = sys.parse_arch_list(t).map_err(domain)?;
    let desc = stratum_descriptor(datum, &t).map_err(domain)?;
    // Lifts exist only when the CM type matches every case; the descriptor
    // is reported either way.
    let lift = lift_assignment(datum, &desc, &LiftOptions::default()).ok();
    let delta = lift.as_ref().map(|l| delta_sets(datum, l));
    let out = StrataOut {
        stratum: StratumJson::new(sys, &desc, lift.as_ref()),
        delta_plus: delta.as_ref().map(|d| d.plus.iter().map(|&e| sys.emb_label(e)).collect()),
        delta_minus: delta.as_ref().map(|d| d.minus.iter().map(|&e| sys.emb_label(e)).collect()),
    };
    let s_of_t = labels(datum, desc.s_of_t.s_infty.iter().copied());
    let s_p: Vec<String> = desc.s_of_t.s_p.iter().map(|&p| sys.primes()[p].id.clone()).collect();
    match format {
        Format::Json => json(&out),
        Format::Csv => Ok(csv(
            &["T", "S_of_T", "S_p", "I_T", "N"],
            [vec![
                labels(datum, t.iter().copied()).join(" "),
                s_of_t.join(" "),
                s_p.join(" "),
                labels(datum, desc.i_t.iter().copied()).join(" "),
                desc.n_bundle.to_string(),
            ]],
        )),
        Format::Ascii => {
            let mut s = format!(
                "T = {{{}}}\nS(T)_inf = {{{}}}\nS(T)_p = {{{}}}\nI_T = {{{}}}\nN = {}\n",
                labels(datum, t.iter().copied()).join(", "),
                s_of_t.join(", "),
                s_p.join(", "),
                labels(datum, desc.i_t.iter().copied()).join(", "),
                desc.n_bundle
            );
            for (id, case) in &out.stratum.cases {
                s.push_str(&format!("case[{id}] = {case:?}\n"));
            }
            Ok(s)
        }
    }
}

/// One row of the strata table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TableRow {
    #[serde(rename = "T")]
    pub t: Vec<String>,
    #[serde(rename = "S_of_T")]
    pub s_of_t: Vec<String>,
    #[serde(rename = "S_p")]
    pub s_p: Vec<String>,
    #[serde(rename = "N")]
    pub n: usize,
    pub iwahori: bool,
}

/// Rows for every subset T of the free places, ordered by size and then
/// lexicographically by cycle position.
pub fn strata_table(datum: &ShimuraDatum) -> CliResult<Vec<TableRow>> {
    let free = picard::basis(datum);
    if free.len() > 20 {
        return Err(CliError::Domain(format!("{} free places give too many rows", free.len())));
    }
    let mut subsets: Vec<Vec<ArchPlace>> = (0..1u32 << free.len())
        .map(|mask| free.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &x)| x).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
        .par_iter()
        .map(|t| {
            let desc = stratum_descriptor(datum, &t.iter().copied().collect()).map_err(domain)?;
            Ok(TableRow {
                t: labels(datum, t.iter().copied()),
                s_of_t: labels(datum, desc.s_of_t.s_infty.iter().copied()),
                s_p: desc.s_of_t.s_p.iter().map(|&p| datum.places.primes()[p].id.clone()).collect(),
                n: desc.n_bundle,
                iwahori: desc.level_t.contains(&Level::Iwahori),
            })
        })
        .collect()
}

fn cmd_strata_table(datum: &ShimuraDatum, format: Format) -> CliResult<String> {
    let rows = strata_table(datum)?;
    match format {
        Format::Json => json(&rows),
        Format::Csv => Ok(csv(
            &["T", "S_of_T", "S_p", "N", "iwahori"],
            rows.iter().map(|r| vec![r.t.join(" "), r.s_of_t.join(" "), r.s_p.join(" "), r.n.to_string(), r.iwahori.to_string()]),
        )),
        Format::Ascii => {
            let cells: Vec<[String; 4]> = rows
                .iter()
                .map(|r| {
                    let mut base = format!("{{{}}}", r.s_of_t.join(","));
                    if !r.s_p.is_empty() {
                        base = format!("{base} + {{{}}}", r.s_p.join(","));
                    }
                    if r.iwahori {
                        base.push_str(" (Iw)");
                    }
                    [format!("{{{}}}", r.t.join(",")), base, r.n.to_string(), String::new()]
                })
                .collect();
            let w0 = cells.iter().map(|c| c[0].len()).max().unwrap_or(1).max(1);
            let w1 = cells.iter().map(|c| c[1].len()).max().unwrap_or(4).max(4);
            let mut s = format!("{:<w0$}  {:<w1$}  N\n", "T", "S(T)");
            for c in &cells {
                s.push_str(&format!("{:<w0$}  {:<w1$}  {}\n", c[0], c[1], c[2]));
            }
            Ok(s)
        }
    }
}

// ---- links ----

#[derive(Serialize)]
struct LinkOut<'a> {
    #[serde(flatten)]
    link: &'a Link,
    v: i64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct MorphismOut<'a> {
    link: LinkOut<'a>,
    indentation: i64,
    note: MorphismNote,
    degree_exponent: Option<i64>,
    #[serde(rename = "target_S_tilde", skip_serializing_if = "Option::is_none")]
    target_s_tilde: Option<Vec<String>>,
}

fn render_link(link: &Link, warnings: Vec<String>, format: Format) -> CliResult<String> {
    let v = total_displacement(link);
    match format {
        Format::Json => json(&LinkOut { link, v, warnings }),
        Format::Csv => Ok(csv(
            &["node", "target", "displacement"],
            link.disp.iter().map(|(&s, &d)| vec![s.to_string(), link.image(s).unwrap().to_string(), d.to_string()]),
        )),
        Format::Ascii => Ok(format!("{}\nv = {v}\n", render_link_ascii(link))),
    }
}

fn cmd_link(args: &LinkArgs, format: Format) -> CliResult<String> {
    if let Some(path) = &args.validate {
        let link: Link = parse_json(path)?;
        let report = validate_link(&link).map_err(domain)?;
        return render_link(&link, report.warnings, format);
    }
    if let Some(paths) = &args.compose {
        let first: Link = parse_json(&paths[0])?;
        let second: Link = parse_json(&paths[1])?;
        let c = compose(&second, &first).map_err(domain)?;
        let warnings = validate_link(&c).map_err(domain)?.warnings;
        return render_link(&c, warnings, format);
    }
    let datum_path = args.datum.as_ref().ok_or_else(|| CliError::Usage("--datum is required".into()))?;
    let datum = load_datum(datum_path)?;
    let sys = &datum.places;
    if args.frobenius {
        let prime = prime_index(&datum, args.prime.as_deref())?;
        return render_link(&frobenius_link(&datum, prime, args.k), Vec::new(), format);
    }
    let kind_name = args.standard.as_deref().expect("argument group requires a mode");
    let tau = || -> CliResult<ArchPlace> {
        let s = args.tau.as_deref().ok_or_else(|| CliError::Usage(format!("--tau is required for {kind_name}")))?;
        sys.parse_arch(s).map_err(domain)
    };
    let kind = match kind_name {
        "partial-frobenius" => MorphismKind::PartialFrobenius { prime: prime_index(&datum, args.prime.as_deref())? },
        "delta-tau0" => {
            let s = args.lift.as_deref().ok_or_else(|| CliError::Usage("--lift is required for delta-tau0".into()))?;
            MorphismKind::DeltaTau0 { lift: sys.parse_emb(s).map_err(domain)? }
        }
        "eta" => MorphismKind::EtaTauMinusPlus { tau: tau()? },
        "trivial-hecke" => MorphismKind::TrivialHecke { tau: tau()? },
        other => {
            return Err(CliError::Usage(format!(
                "--standard {other}: expected partial-frobenius, delta-tau0, eta or trivial-hecke"
            )))
        }
    };
    let m = standard_morphism(kind, &datum).map_err(domain)?;
    let warnings = links::validate_link(&m.link).map_err(domain)?.warnings;
    match format {
        Format::Json => json(&MorphismOut {
            link: LinkOut { link: &m.link, v: total_displacement(&m.link), warnings },
            indentation: m.indentation,
            note: m.note,
            degree_exponent: m.degree_exponent,
            target_s_tilde: m.target_s_tilde.map(|s| s.iter().map(|&e| sys.emb_label(e)).collect()),
        }),
        Format::Csv => Ok(csv(
            &["v", "indentation", "degree_exponent"],
            [vec![
                total_displacement(&m.link).to_string(),
                m.indentation.to_string(),
                m.degree_exponent.map(|d| d.to_string()).unwrap_or_default(),
            ]],
        )),
        Format::Ascii => Ok(format!(
            "{}\nv = {}\nindentation = {}\n",
            render_link_ascii(&m.link),
            total_displacement(&m.link),
            m.indentation
        )),
    }
}

// ---- ample / picard ----

#[derive(Serialize)]
struct AmpleOut {
    pass: bool,
    violations: Vec<String>,
    note: &'static str,
    cone: Vec<picard::Inequality>,
}

fn parse_rationals(s: &str) -> CliResult<Vec<BigRational>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<BigRational>().map_err(|_| CliError::Usage(format!("--t: {x:?} is not a rational"))))
        .collect()
}

fn cmd_ample(datum: &ShimuraDatum, t: &str, p: Option<u32>, format: Format) -> CliResult<String> {
    let p = resolve_p(p, datum)?;
    let basis = picard::basis(datum);
    let values = parse_rationals(t)?;
    if values.len() != basis.len() {
        return Err(CliError::Usage(format!("--t: expected {} values, got {}", basis.len(), values.len())));
    }
    let weights: BTreeMap<ArchPlace, BigRational> = basis.iter().copied().zip(values).collect();
    let report = picard::ample_necessary(datum, p, &weights).map_err(domain)?;
    let cone = picard::ample_cone(datum, p).map_err(domain)?;
    match format {
        Format::Json => json(&AmpleOut { pass: report.pass, violations: report.violations, note: report.note, cone }),
        Format::Csv => Ok(csv(
            &["tau", "lhs", "rhs", "holds"],
            cone.iter().map(|q| {
                vec![q.tau.clone(), q.lhs.clone(), q.rhs.clone(), (!report.violations.contains(&q.tau)).to_string()]
            }),
        )),
        Format::Ascii => {
            let mut s: String = cone.iter().map(|q| format!("{}: {} > {}\n", q.tau, q.lhs, q.rhs)).collect();
            let verdict = if report.pass { "PASS" } else { "FAIL" };
            s.push_str(&format!("{verdict} ({})\n", report.note));
            Ok(s)
        }
    }
}

fn cmd_picard(args: &PicardArgs, format: Format) -> CliResult<String> {
    let datum = load_datum(&args.datum)?;
    let p = resolve_p(args.p, &datum)?;
    let sys = &datum.places;
    let tau_of = |s: &str| sys.parse_arch(s).map_err(domain);
    if args.matrix {
        let m = picard::hasse_matrix(&datum, p).map_err(domain)?;
        let det = m.determinant();
        let rows: Vec<Vec<String>> = m.entries.iter().map(|r| r.iter().map(|x| x.to_string()).collect()).collect();
        let basis = labels(&datum, m.basis.iter().copied());
        return match format {
            Format::Json => {
                #[derive(Serialize)]
                struct Out {
                    basis: Vec<String>,
                    entries: Vec<Vec<String>>,
                    determinant: String,
                }
                json(&Out { basis, entries: rows, determinant: det.to_string() })
            }
            Format::Csv => {
                let mut header = vec!["row"];
                header.extend(basis.iter().map(|s| s.as_str()));
                Ok(csv(&header, basis.iter().zip(&rows).map(|(b, r)| {
                    let mut v = vec![b.clone()];
                    v.extend(r.iter().cloned());
                    v
                })))
            }
            Format::Ascii => {
                let mut s: String = rows.iter().map(|r| format!("{}\n", r.join("\t"))).collect();
                s.push_str(&format!("det = {det}\n"));
                Ok(s)
            }
        };
    }
    if let Some(t) = &args.class {
        let v = picard::divisor_class(&datum, p, tau_of(t)?).map_err(domain)?;
        let coeffs: Vec<(String, String)> = v.coeffs.iter().map(|(&k, x)| (sys.arch_label(k), x.to_string())).collect();
        return match format {
            Format::Json => json(&coeffs.into_iter().collect::<BTreeMap<_, _>>()),
            Format::Csv => Ok(csv(&["tau", "coefficient"], coeffs.into_iter().map(|(a, b)| vec![a, b]))),
            Format::Ascii => Ok(coeffs.into_iter().map(|(a, b)| format!("{a}: {b}\n")).collect()),
        };
    }
    let t = tau_of(args.fiber_degree.as_deref().expect("argument group requires a mode"))?;
    let of = args.class_of.as_deref().map(tau_of).transpose()?.unwrap_or(t);
    let class = picard::divisor_class(&datum, p, of).map_err(domain)?;
    let deg = picard::fiber_degree(&datum, p, &class, t).map_err(domain)?;
    match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out {
                tau: String,
                class_of: String,
                degree: String,
            }
            json(&Out { tau: sys.arch_label(t), class_of: sys.arch_label(of), degree: deg.to_string() })
        }
        Format::Csv => Ok(csv(&["tau", "class_of", "degree"], [vec![sys.arch_label(t), sys.arch_label(of), deg.to_string()]])),
        Format::Ascii => Ok(format!("{deg}\n")),
    }
}

// ---- dieudonne ----

fn load_point(path: &Path) -> CliResult<dieudonne::DieudonnePoint> {
    parse_json::<PointJson>(path)?.into_point().map_err(domain)
}

fn need<T: Copy>(v: Option<T>, flag: &str, mode: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("{flag} is required with {mode}")))
}

#[derive(Serialize)]
struct RoundtripOut {
    trials: u64,
    exact: u64,
    subsets_tested: usize,
    failed_trials: Vec<u64>,
    summary: String,
}

fn cmd_dieudonne(args: &DieudonneArgs, format: Option<Format>) -> CliResult<(String, bool)> {
    if let Some(path) = &args.classify {
        let pt = load_point(path)?;
        let sys = pt.places();
        let stratum = stratum_of_point(&pt).map_err(domain)?;
        let sig: BTreeMap<String, i64> =
            pt.measured_signature().map_err(domain)?.into_iter().map(|(e, s)| (sys.emb_label(e), s)).collect();
        let stratum = labels(pt.datum(), stratum);
        let text = match format.unwrap_or(Format::Json) {
            Format::Json => {
                #[derive(Serialize)]
                struct Out {
                    stratum: Vec<String>,
                    signature: BTreeMap<String, i64>,
                }
                json(&Out { stratum, signature: sig })?
            }
            Format::Csv => csv(&["stratum"], [vec![stratum.join(" ")]]),
            Format::Ascii => format!("stratum = {{{}}}\n", stratum.join(", ")),
        };
        return Ok((text, true));
    }
    if let Some(path) = &args.twist {
        let pt = load_point(path)?;
        let tw = twisted_partial_frobenius(&pt).map_err(domain)?;
        return Ok((json(&PointJson::from_point(&tw))?, true));
    }
    let mode = if args.roundtrip { "--roundtrip" } else { "--sample" };
    let seed = need(args.seed, "--seed", mode)?;
    let p = need(args.p, "--p", mode)?;
    let f = need(args.f, "--f", mode)?;
    if args.sample {
        let pt = seeded_trial_point(p, f, args.precision, seed, 0).map_err(domain)?;
        return Ok((json(&PointJson::from_point(&pt))?, true));
    }
    let reports: Vec<Result<_, String>> = (0..args.trials)
        .into_par_iter()
        .map(|trial| {
            let pt = seeded_trial_point(p, f, args.precision, seed, trial).map_err(|e| e.to_string())?;
            roundtrip_all_subsets(&pt).map_err(|e| format!("trial {trial}: {e}"))
        })
        .collect();
    let mut exact = 0;
    let mut subsets = 0;
    let mut failed = Vec::new();
    for (trial, r) in reports.into_iter().enumerate() {
        match r {
            Ok(r) if r.exact() => {
                exact += 1;
                subsets += r.subsets;
            }
            Ok(r) => {
                subsets += r.subsets;
                failed.push(trial as u64);
            }
            Err(e) => return Err(CliError::Domain(e)),
        }
    }
    let summary = format!("{exact}/{} roundtrips exact", args.trials);
    let ok = failed.is_empty();
    let text = match format.unwrap_or(Format::Ascii) {
        Format::Json => {
            json(&RoundtripOut { trials: args.trials, exact, subsets_tested: subsets, failed_trials: failed, summary })?
        }
        Format::Csv => csv(
            &["trials", "exact", "subsets_tested"],
            [vec![args.trials.to_string(), exact.to_string(), subsets.to_string()]],
        ),
        Format::Ascii => format!("{summary}\n"),
    };
    Ok((text, ok))
}
