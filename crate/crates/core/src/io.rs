//! File formats: ratings CSV ingestion, trace / norm / ESS tables, and
//! JSON reports.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ObservationSet;
use crate::rng::{derive_seed, rng_from_seed};
use crate::samplers::{ChainTrace, TraceRecord};
use crate::theory_lab::NormRow;

pub const RATINGS_HEADER: [&str; 3] = ["user_id", "item_id", "rating"];
pub const TRACE_HEADER: [&str; 7] = ["iter", "a0", "mu1", "mu2", "tau1", "tau2", "tauE"];
pub const NORM_HEADER: [&str; 4] = ["S", "replicate", "norm", "radius"];
pub const ESS_HEADER: [&str; 5] = ["parameter", "sampler", "S", "ess", "n"];

/// Options for [`load_ratings_csv`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Keep at most this many ratings, chosen uniformly without
    /// replacement (original order preserved).
    pub max_rows: Option<usize>,
    /// Seed for the subsample.
    pub seed: u64,
}

/// A ratings file reindexed to dense 0-based levels.
#[derive(Debug, Clone)]
pub struct RatingsDataset {
    /// Level i → user key.
    pub users: Vec<String>,
    /// Level j → item key.
    pub items: Vec<String>,
    pub user_index: HashMap<String, usize>,
    pub item_index: HashMap<String, usize>,
    pub obs: ObservationSet,
    /// Ratings in the file before any subsampling.
    pub rows_in_file: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    #[serde(rename = "R")]
    pub rows: usize,
    #[serde(rename = "C")]
    pub cols: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub rho: Option<f64>,
    pub kappa: Option<f64>,
    pub rows_in_file: usize,
}

/// (ρ, κ) = (ln R / ln N, ln C / ln N); `None` when N ≤ 1.
pub fn implied_exponents(rows: usize, cols: usize, n: usize) -> Option<(f64, f64)> {
    if n <= 1 {
        return None;
    }
    let ln_n = (n as f64).ln();
    Some(((rows as f64).ln() / ln_n, (cols as f64).ln() / ln_n))
}

impl RatingsDataset {
    pub fn summary(&self) -> DatasetSummary {
        let (r, c, n) = (self.obs.rows(), self.obs.cols(), self.obs.total());
        let exps = implied_exponents(r, c, n);
        DatasetSummary {
            rows: r,
            cols: c,
            n,
            rho: exps.map(|e| e.0),
            kappa: exps.map(|e| e.1),
            rows_in_file: self.rows_in_file,
        }
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn intern(key: &str, index: &mut HashMap<String, usize>, keys: &mut Vec<String>) -> usize {
    if let Some(&k) = index.get(key) {
        return k;
    }
    index.insert(key.to_string(), keys.len());
    keys.push(key.to_string());
    keys.len() - 1
}

/// Read a `user_id,item_id,rating` file. Levels are numbered in order of
/// first appearance among the kept ratings. Duplicate (user, item) pairs
/// are rejected at the line of the second occurrence, even when
/// subsampling would have dropped one of them.
pub fn load_ratings_csv(path: &Path, options: LoadOptions) -> Result<RatingsDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(parse_err(path, 1, "empty file"));
    }
    if header.iter().collect::<Vec<_>>() != RATINGS_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("expected header {}, found {}", RATINGS_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut seen: HashMap<(String, String), u64> = HashMap::new();
    let mut raw: Vec<(String, String, f64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let (u, it, r) = (&rec[0], &rec[1], rec[2].trim());
        if u.is_empty() || it.is_empty() {
            return Err(parse_err(path, line, "empty user_id or item_id"));
        }
        let rating: f64 = r
            .parse()
            .map_err(|_| parse_err(path, line, format!("rating {r:?} is not a number")))?;
        if !rating.is_finite() {
            return Err(parse_err(path, line, format!("rating {r:?} is not finite")));
        }
        if let Some(first) = seen.insert((u.to_string(), it.to_string()), line) {
            return Err(parse_err(
                path,
                line,
                format!("duplicate pair ({u}, {it}), first seen on line {first}"),
            ));
        }
        raw.push((u.to_string(), it.to_string(), rating));
    }
    if raw.is_empty() {
        return Err(parse_err(path, 1, "no ratings"));
    }
    let rows_in_file = raw.len();
    if let Some(cap) = options.max_rows {
        if cap == 0 {
            return Err(Error::InvalidInput("max_rows must be positive".into()));
        }
        if cap < raw.len() {
            let mut rng = rng_from_seed(derive_seed(options.seed, "subsample"));
            let mut keep = sample(&mut rng, raw.len(), cap).into_vec();
            keep.sort_unstable();
            raw = keep.into_iter().map(|k| std::mem::take(&mut raw[k])).collect();
        }
    }
    let (mut users, mut items) = (Vec::new(), Vec::new());
    let (mut user_index, mut item_index) = (HashMap::new(), HashMap::new());
    let cells: Vec<(usize, usize, f64)> = raw
        .iter()
        .map(|(u, it, r)| {
            (
                intern(u, &mut user_index, &mut users),
                intern(it, &mut item_index, &mut items),
                *r,
            )
        })
        .collect();
    let obs = ObservationSet::new(users.len(), items.len(), &cells)?;
    Ok(RatingsDataset {
        users,
        items,
        user_index,
        item_index,
        obs,
        rows_in_file,
    })
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// Write observations as a ratings file with the level indices as keys.
pub fn write_ratings_csv(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RATINGS_HEADER)?;
    for (i, j, y) in obs.cells() {
        w.write_record([i.to_string(), j.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &ChainTrace) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.iter.to_string(),
            r.a0.to_string(),
            r.mu1.to_string(),
            r.mu2.to_string(),
            r.tau1.to_string(),
            r.tau2.to_string(),
            r.tau_e.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<ChainTrace> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(parse_err(path, 1, format!("expected header {}", TRACE_HEADER.join(","))));
    }
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad value {:?} in column {}", &rec[k], TRACE_HEADER[k])))
        };
        records.push(TraceRecord {
            iter: rec[0]
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad iteration {:?}", &rec[0])))?,
            a0: num(1)?,
            mu1: num(2)?,
            mu2: num(3)?,
            tau1: num(4)?,
            tau2: num(5)?,
            tau_e: num(6)?,
        });
    }
    Ok(ChainTrace { records })
}

pub fn write_norm_table(path: &Path, rows: &[NormRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(NORM_HEADER)?;
    for r in rows {
        w.write_record([
            r.s.to_string(),
            r.replicate.to_string(),
            r.norm.to_string(),
            r.radius.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One line of the ESS comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssRow {
    pub parameter: String,
    pub sampler: String,
    #[serde(rename = "S")]
    pub s: f64,
    pub ess: f64,
    pub n: usize,
}

pub fn write_ess_table(path: &Path, rows: &[EssRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(ESS_HEADER)?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            r.sampler.clone(),
            r.s.to_string(),
            r.ess.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline. Struct fields keep declaration
/// order and maps are sorted, so output is stable.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_ratings_two_users_two_items() {
        let f = file_with("user_id,item_id,rating\nu1,i1,4\nu1,i2,3.5\nu2,i1,1\n");
        let d = load_ratings_csv(f.path(), LoadOptions::default()).unwrap();
        let s = d.summary();
        assert_eq!((s.rows, s.cols, s.n), (2, 2, 3));
        assert_eq!(d.users, vec!["u1", "u2"]);
        assert_eq!(d.item_index["i2"], 1);
        assert_eq!(d.obs.responses(), &[4.0, 3.5, 1.0]);
    }

    #[test]
    fn duplicate_reported_at_second_line() {
        let f = file_with("user_id,item_id,rating\nu1,i1,4\nu2,i1,3\nu1,i1,5\n");
        match load_ratings_csv(f.path(), LoadOptions::default()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("line 2"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows_and_headers() {
        let bad_rating = file_with("user_id,item_id,rating\nu1,i1,4\nu2,i1,abc\n");
        assert!(matches!(
            load_ratings_csv(bad_rating.path(), LoadOptions::default()),
            Err(Error::Parse { line: 3, .. })
        ));
        let short = file_with("user_id,item_id,rating\nu1,i1\n");
        assert!(matches!(
            load_ratings_csv(short.path(), LoadOptions::default()),
            Err(Error::Parse { line: 2, .. })
        ));
        let header = file_with("user,item,rating\nu1,i1,4\n");
        assert!(matches!(
            load_ratings_csv(header.path(), LoadOptions::default()),
            Err(Error::Parse { line: 1, .. })
        ));
        let empty = file_with("");
        assert!(load_ratings_csv(empty.path(), LoadOptions::default()).is_err());
        let header_only = file_with("user_id,item_id,rating\n");
        assert!(load_ratings_csv(header_only.path(), LoadOptions::default()).is_err());
    }

    #[test]
    fn implied_exponents_for_large_retail_shape() {
        let (rho, kappa) = implied_exponents(762_752, 6318, 5_000_000).unwrap();
        assert!((rho - 0.88).abs() < 0.005, "{rho}");
        assert!((kappa - 0.57).abs() < 0.005, "{kappa}");
        assert!(implied_exponents(1, 1, 1).is_none());
    }

    #[test]
    fn subsampling_is_seeded() {
        let mut body = String::from("user_id,item_id,rating\n");
        for k in 0..200 {
            body.push_str(&format!("u{},i{},{}\n", k % 17, k / 17, k));
        }
        let f = file_with(&body);
        let opts = LoadOptions {
            max_rows: Some(50),
            seed: 9,
        };
        let a = load_ratings_csv(f.path(), opts).unwrap();
        let b = load_ratings_csv(f.path(), opts).unwrap();
        assert_eq!(a.obs.total(), 50);
        assert_eq!(a.rows_in_file, 200);
        assert_eq!(a.obs.responses(), b.obs.responses());
        let c = load_ratings_csv(f.path(), LoadOptions { seed: 10, ..opts }).unwrap();
        assert_ne!(a.obs.responses(), c.obs.responses());
    }

    #[test]
    fn trace_roundtrip() {
        let trace = ChainTrace {
            records: (0..5)
                .map(|k| TraceRecord {
                    iter: k,
                    a0: 0.1 * k as f64,
                    mu1: -1.0 / 3.0,
                    mu2: 1e-300,
                    tau1: 2.5,
                    tau2: 7.0,
                    tau_e: 1.0 / 7.0,
                })
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_trace_csv(&p, &trace).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iter,a0,mu1,mu2,tau1,tau2,tauE\n"));
        assert_eq!(read_trace_csv(&p).unwrap(), trace);
    }

    #[test]
    fn ratings_roundtrip() {
        let obs = ObservationSet::new(2, 3, &[(0, 0, 1.5), (0, 2, -2.0), (1, 1, 0.25)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_ratings_csv(&p, &obs).unwrap();
        let d = load_ratings_csv(&p, LoadOptions::default()).unwrap();
        assert_eq!(d.obs.responses(), obs.responses());
        assert_eq!((d.obs.rows(), d.obs.cols()), (2, 3));
    }

    #[test]
    fn table_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.csv");
        write_norm_table(&p, &[NormRow { s: 1000.0, replicate: 0, norm: 0.1, radius: 0.05 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "S,replicate,norm,radius\n1000,0,0.1,0.05\n");
        let q = dir.path().join("e.csv");
        write_ess_table(
            &q,
            &[EssRow { parameter: "a0".into(), sampler: "collapsed".into(), s: 1e4, ess: 812.5, n: 9000 }],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&q).unwrap(),
            "parameter,sampler,S,ess,n\na0,collapsed,10000,812.5,9000\n"
        );
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
