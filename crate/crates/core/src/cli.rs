//! Command-line surface: workspace manifests, classification, answer
//! retrieval, and benchmarking.
//!
//! A workspace is a TOML manifest naming the relation files, the query file,
//! and the semiring:
//!
//! ```toml
//! query = "q.txt"
//! semiring = "counting"   # counting|numeric|mintrop|maxtrop|avg|set:<domain-file>
//!
//! [[relations]]
//! name = "R"
//! path = "r.csv"
//! arity = 2
//! annot_col = true        # optional trailing annotation column
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num::{BigRational, BigUint};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consts::ConstTable;
use crate::db::{self, Relation};
use crate::hypergraph::{self, Hypergraph};
use crate::parse;
use crate::planner::{Certificate, EngineAny, Job, Verdict};
use crate::query::Query;
use crate::semiring::{instantiate, SemiringKind, SemiringSpec, SetDomain};
use crate::vdb;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Load(#[from] db::LoadError),
    #[error("query: {0}")]
    Query(#[from] parse::ParseError),
    #[error("semiring: {0}")]
    Semiring(#[from] crate::semiring::SemiringError),
    #[error("annotation: {0}")]
    Annotation(#[from] crate::translate::TranslateError),
    #[error("build: {0}")]
    Build(#[from] crate::planner::PrepareError),
    #[error("access: {0}")]
    Access(#[from] crate::access::AccessError),
    #[error("bench: {0}")]
    Bench(#[from] crate::bench::BenchError),
    #[error("{0}")]
    Usage(String),
}

#[derive(Deserialize)]
struct ManifestFile {
    query: String,
    semiring: Option<String>,
    #[serde(default)]
    relations: Vec<ManifestRelation>,
}

#[derive(Deserialize)]
struct ManifestRelation {
    name: String,
    path: String,
    arity: usize,
    #[serde(default)]
    annot_col: bool,
}

/// A loaded workspace: query, relations, raw annotation columns, semiring.
pub struct Workspace {
    pub query: Query,
    pub relations: BTreeMap<String, Relation>,
    pub raw_annots: BTreeMap<String, Vec<String>>,
    pub semiring: SemiringSpec,
    pub consts: ConstTable,
    /// Content digest of (manifest, query text, semiring), the build-cache key.
    pub digest: [u8; 32],
}

impl Workspace {
    /// Loads a manifest; `annot_overrides` marks extra relations as carrying
    /// a trailing annotation column (the `--annot-col` flag).
    pub fn load(manifest_path: &Path, annot_overrides: &[String]) -> Result<Workspace, CliError> {
        let text = fs::read_to_string(manifest_path)
            .map_err(|e| CliError::Io { path: manifest_path.display().to_string(), source: e })?;
        let manifest: ManifestFile =
            toml::from_str(&text).map_err(|e| CliError::Manifest(e.to_string()))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));

        let query_path = base.join(&manifest.query);
        let query_text = fs::read_to_string(&query_path)
            .map_err(|e| CliError::Io { path: query_path.display().to_string(), source: e })?;
        let query = parse::parse_query(query_text.trim())?;

        let semiring_name = manifest.semiring.clone().unwrap_or_else(|| "counting".into());
        let semiring = parse_semiring(&semiring_name, base)?;

        let mut consts = ConstTable::new();
        let mut relations = BTreeMap::new();
        let mut raw_annots = BTreeMap::new();
        for rel in &manifest.relations {
            let annot = rel.annot_col || annot_overrides.contains(&rel.name);
            let path = base.join(&rel.path);
            let (r, ann) = db::load_relation(&path, &rel.name, rel.arity, annot, &mut consts)?;
            if relations.insert(rel.name.clone(), r).is_some() {
                return Err(CliError::Manifest(format!("relation {} declared twice", rel.name)));
            }
            if let Some(ann) = ann {
                raw_annots.insert(rel.name.clone(), ann);
            }
        }
        for atom in &query.body {
            if !relations.contains_key(&atom.relation) {
                return Err(CliError::Manifest(format!(
                    "query references relation {} which the manifest does not declare",
                    atom.relation
                )));
            }
        }

        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.update(query_text.as_bytes());
        hasher.update(semiring_name.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();

        Ok(Workspace { query, relations, raw_annots, semiring, consts, digest })
    }

    pub fn job(&self) -> Job<'_> {
        Job {
            query: &self.query,
            relations: &self.relations,
            raw_annots: &self.raw_annots,
            semiring: self.semiring.clone(),
            consts: &self.consts,
            star_db: None,
        }
    }
}

fn parse_semiring(name: &str, base: &Path) -> Result<SemiringSpec, CliError> {
    let kind = match name {
        "counting" => SemiringKind::Counting,
        "numeric" => SemiringKind::Numeric,
        "mintrop" => SemiringKind::MinTropical,
        "maxtrop" => SemiringKind::MaxTropical,
        "avg" => SemiringKind::AvgPair,
        other => match other.strip_prefix("set:") {
            Some(file) => {
                let path = base.join(file);
                let text = fs::read_to_string(&path)
                    .map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
                let elems: Vec<String> =
                    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
                SemiringKind::SetSemiring(SetDomain::new(elems)?)
            }
            None => {
                return Err(CliError::Manifest(format!(
                    "unknown semiring `{other}` (counting|numeric|mintrop|maxtrop|avg|set:<file>)"
                )))
            }
        },
    };
    Ok(instantiate(kind))
}

/// In-process engine cache keyed by workspace digest and weight mode.
#[derive(Default)]
pub struct EngineCache {
    built: std::collections::HashMap<([u8; 32], bool), std::rc::Rc<EngineAny>>,
}

impl EngineCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn engine(
        &mut self,
        ws: &Workspace,
        cert: &Certificate,
        bigint: bool,
    ) -> Result<std::rc::Rc<EngineAny>, CliError> {
        if let Some(e) = self.built.get(&(ws.digest, bigint)) {
            return Ok(e.clone());
        }
        let engine = std::rc::Rc::new(EngineAny::build(&ws.job(), cert, bigint)?);
        self.built.insert((ws.digest, bigint), engine.clone());
        Ok(engine)
    }
}

/// Exit status vocabulary shared by the subcommands.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INTRACTABLE: i32 = 2;
pub const EXIT_UNKNOWN: i32 = 3;

/// `classify`: prints the certificate JSON, exit code per verdict.
pub fn cmd_classify(
    ws: &Workspace,
    explain: bool,
    emit_tree: Option<&str>,
    out: &mut dyn std::io::Write,
    err: &mut dyn std::io::Write,
) -> Result<i32, CliError> {
    let cert = ws.job().classify();
    if let Some(fmt) = emit_tree {
        if fmt != "dot" {
            return Err(CliError::Usage(format!("unsupported tree format `{fmt}`")));
        }
        emit_trees(&ws.query, err)?;
    }
    if explain {
        explain_chain(&cert, err)?;
    }
    writeln!(out, "{}", serde_json::to_string_pretty(&cert.to_json()).unwrap())
        .map_err(|e| CliError::Io { path: "<stdout>".into(), source: e })?;
    Ok(match cert.verdict {
        Verdict::Tractable(_) => EXIT_OK,
        Verdict::Intractable { .. } => EXIT_INTRACTABLE,
        Verdict::Unknown { .. } => EXIT_UNKNOWN,
    })
}

fn emit_trees(query: &Query, err: &mut dyn std::io::Write) -> Result<(), CliError> {
    let h = Hypergraph::of_query(query);
    if let Ok(tree) = hypergraph::gyo_acyclic(&h) {
        writeln!(err, "// join tree\n{}", tree.to_dot(None))
            .map_err(|e| CliError::Io { path: "<stderr>".into(), source: e })?;
        let free: std::collections::BTreeSet<_> = query.free_vars().into_iter().collect();
        if let Ok(ext) = hypergraph::ext_connex_tree(&h, &free) {
            writeln!(err, "// ext-connex tree (marked = free cover)\n{}", ext.tree.to_dot(Some(&ext.marked)))
                .map_err(|e| CliError::Io { path: "<stderr>".into(), source: e })?;
        }
    } else {
        writeln!(err, "// query is cyclic; no join tree")
            .map_err(|e| CliError::Io { path: "<stderr>".into(), source: e })?;
    }
    Ok(())
}

fn explain_chain(cert: &Certificate, err: &mut dyn std::io::Write) -> Result<(), CliError> {
    match &cert.verdict {
        Verdict::Tractable(plan) => {
            writeln!(err, "plan {} [{}]", plan.kind.name(), plan.theorem)
                .map_err(|e| CliError::Io { path: "<stderr>".into(), source: e })?;
            for (i, step) in plan.chain.iter().enumerate() {
                writeln!(err, "  {}. {step}", i + 1)
                    .map_err(|e| CliError::Io { path: "<stderr>".into(), source: e })?;
            }
        }
        other => {
            writeln!(err, "no plan: {other:?}")
                .map_err(|e| CliError::Io { path: "<stderr>".into(), source: e })?;
        }
    }
    Ok(())
}

/// What `get` should fetch.
pub enum Fetch {
    One(BigUint),
    Range(BigUint, BigUint),
    Quantile(f64),
}

/// `get`: builds (or reuses) the engine and prints answers as CSV lines.
/// Returns the exit code.
pub fn cmd_get(
    ws: &Workspace,
    cache: &mut EngineCache,
    fetch: &Fetch,
    bigint: bool,
    explain: bool,
    out: &mut dyn std::io::Write,
    err: &mut dyn std::io::Write,
) -> Result<i32, CliError> {
    let cert = ws.job().classify();
    if explain {
        explain_chain(&cert, err)?;
    }
    if !cert.is_tractable() {
        writeln!(err, "{}", serde_json::to_string(&cert.to_json()).unwrap())
            .map_err(|e| CliError::Io { path: "<stderr>".into(), source: e })?;
        return Ok(match cert.verdict {
            Verdict::Intractable { .. } => EXIT_INTRACTABLE,
            _ => EXIT_UNKNOWN,
        });
    }
    let engine = cache.engine(ws, &cert, bigint)?;
    let count = engine.count();
    let (lo, hi) = match fetch {
        Fetch::One(i) => (i.clone(), i.clone()),
        Fetch::Range(a, b) => (a.clone(), b.clone()),
        Fetch::Quantile(q) => {
            if !(0.0..=1.0).contains(q) {
                return Err(CliError::Usage("quantile must be within [0, 1]".into()));
            }
            let i = quantile_index(*q, &count);
            (i.clone(), i)
        }
    };
    if lo == BigUint::from(0u32) {
        return Err(CliError::Usage("answer indices are 1-based".into()));
    }
    let mut i = lo;
    let mut printed = 0u64;
    while i <= hi {
        match engine.get(&i)? {
            Some(row) => {
                writeln!(out, "{}", vdb::render_row(&row, &ws.consts, &ws.semiring))
                    .map_err(|e| CliError::Io { path: "<stdout>".into(), source: e })?;
                printed += 1;
            }
            None => {
                writeln!(err, "warning: index {i} exceeds the answer count {count}")
                    .map_err(|e| CliError::Io { path: "<stderr>".into(), source: e })?;
                break;
            }
        }
        i += 1u32;
    }
    let _ = printed;
    Ok(EXIT_OK)
}

/// Quantile q over a count: max(1, ⌈q · count⌉).
pub fn quantile_index(q: f64, count: &BigUint) -> BigUint {
    use num::bigint::ToBigInt;
    if count == &BigUint::from(0u32) {
        return BigUint::from(1u32); // past the end; caller warns
    }
    let ratio = BigRational::from_float(q).unwrap_or_else(|| BigRational::from_integer(0.into()));
    let n = BigRational::from_integer(count.to_bigint().unwrap());
    let idx = (ratio * n).ceil().to_integer();
    let one = BigUint::from(1u32);
    idx.to_biguint().filter(|v| v >= &one).unwrap_or(one)
}

/// `bench`: runs the generator sweep and prints the JSON report.
pub fn cmd_bench(
    cfg: &crate::bench::BenchConfig,
    out: &mut dyn std::io::Write,
) -> Result<i32, CliError> {
    let report = crate::bench::run(cfg)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report).unwrap())
        .map_err(|e| CliError::Io { path: "<stdout>".into(), source: e })?;
    Ok(EXIT_OK)
}

/// Helper for parsers above: `a..b` inclusive.
pub fn parse_range(s: &str) -> Result<(BigUint, BigUint), CliError> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| CliError::Usage(format!("range must look like a..b, got `{s}`")))?;
    let lo: BigUint =
        a.parse().map_err(|_| CliError::Usage(format!("bad range start `{a}`")))?;
    let hi: BigUint = b.parse().map_err(|_| CliError::Usage(format!("bad range end `{b}`")))?;
    Ok((lo, hi))
}

/// f64 helper used by quantile parsing in the binary.
pub fn parse_quantile(s: &str) -> Result<f64, CliError> {
    s.parse::<f64>()
        .ok()
        .filter(|q| q.is_finite())
        .ok_or_else(|| CliError::Usage(format!("bad quantile `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::path::PathBuf;

    fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    fn world_cup_workspace(dir: &Path) -> PathBuf {
        write_file(dir, "teams.csv", "1,5\n2,5\n3,6\n4,7\n5,8");
        write_file(dir, "goals.csv", "1,1,31\n1,3,50\n1,3,75\n2,4,90\n2,4,9");
        write_file(dir, "replays.csv", "1,1\n1,31\n1,50\n2,5\n1,90");
        write_file(dir, "q.txt", "Q(c, Sum(t)) :- Teams(p,c), Goals(g,p,t), Replays(g,t).");
        write_file(
            dir,
            "ws.toml",
            r#"
query = "q.txt"
semiring = "counting"

[[relations]]
name = "Teams"
path = "teams.csv"
arity = 2

[[relations]]
name = "Goals"
path = "goals.csv"
arity = 3

[[relations]]
name = "Replays"
path = "replays.csv"
arity = 2
"#,
        )
    }

    #[test]
    fn classify_and_get_world_cup() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = world_cup_workspace(dir.path());
        let ws = Workspace::load(&manifest, &[]).unwrap();
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = cmd_classify(&ws, true, Some("dot"), &mut out, &mut err).unwrap();
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["verdict"], "tractable");

        let mut cache = EngineCache::new();
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = cmd_get(
            &ws,
            &mut cache,
            &Fetch::One(BigUint::from(1u32)),
            false,
            false,
            &mut out,
            &mut err,
        )
        .unwrap();
        assert_eq!(code, EXIT_OK);
        assert_eq!(String::from_utf8(out).unwrap(), "5,31\n");

        // Range past the end prints the available lines plus a warning.
        let mut out = Vec::new();
        let mut err = Vec::new();
        cmd_get(
            &ws,
            &mut cache,
            &Fetch::Range(BigUint::from(1u32), BigUint::from(3u32)),
            false,
            false,
            &mut out,
            &mut err,
        )
        .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "5,31\n6,50\n");
        assert!(String::from_utf8(err).unwrap().contains("warning"));

        // Quantile 1.0 is the last answer.
        let mut out = Vec::new();
        let mut err = Vec::new();
        cmd_get(&ws, &mut cache, &Fetch::Quantile(1.0), false, false, &mut out, &mut err).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "6,50\n");
    }

    #[test]
    fn intractable_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "r.csv", "1,4\n2,5");
        write_file(dir.path(), "s.csv", "1,6\n2,7");
        write_file(dir.path(), "q.txt", "Q(*,x,y) :- R(x), S(y).");
        let manifest = write_file(
            dir.path(),
            "ws.toml",
            r#"
query = "q.txt"
semiring = "counting"

[[relations]]
name = "R"
path = "r.csv"
arity = 1
annot_col = true

[[relations]]
name = "S"
path = "s.csv"
arity = 1
annot_col = true
"#,
        );
        let ws = Workspace::load(&manifest, &[]).unwrap();
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = cmd_classify(&ws, false, None, &mut out, &mut err).unwrap();
        assert_eq!(code, EXIT_INTRACTABLE);
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["theorem"], "Thm 5.1");
        let mut cache = EngineCache::new();
        let code = cmd_get(
            &ws,
            &mut cache,
            &Fetch::One(BigUint::from(1u32)),
            false,
            false,
            &mut Vec::new(),
            &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(code, EXIT_INTRACTABLE);
    }

    #[test]
    fn missing_csv_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "q.txt", "Q(x) :- R(x).");
        let manifest = write_file(
            dir.path(),
            "ws.toml",
            "query = \"q.txt\"\n[[relations]]\nname = \"R\"\npath = \"missing.csv\"\narity = 1\n",
        );
        assert!(matches!(Workspace::load(&manifest, &[]), Err(CliError::Load(_))));
    }

    #[test]
    fn quantile_math() {
        let c = BigUint::from(10u32);
        assert_eq!(quantile_index(0.0, &c), BigUint::from(1u32));
        assert_eq!(quantile_index(0.05, &c), BigUint::from(1u32));
        assert_eq!(quantile_index(0.5, &c), BigUint::from(5u32));
        assert_eq!(quantile_index(0.51, &c), BigUint::from(6u32));
        assert_eq!(quantile_index(1.0, &c), BigUint::from(10u32));
    }
}
