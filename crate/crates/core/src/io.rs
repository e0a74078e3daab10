//! Long-format CSV ingestion and artifact writers.
//!
//! Dataset layout, one scalar per row:
//!
//! ```text
//! site_id,x,y,<covariates...>,replicate,component,value
//! ```
//!
//! Replicate labels are integers; they are sorted ascending. Sites and
//! components keep the order of first appearance. An empty or `NA` value is
//! a missing response.
//!
//! Numeric artifacts start with a `# config_sha256=<hex> seed=<seed>` line
//! and print floats in shortest round-trip form.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mcmc::{BlockAcceptance, ChainState, Family, PosteriorChain, Theta};
use crate::model::SpatialDataset;
use crate::prediction::PredictiveSummary;

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Whether missing responses are accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestMode {
    Training,
    Prediction,
}

/// Coordinate handling at ingestion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Projection {
    /// Coordinates are used as given.
    #[default]
    Planar,
    /// `x` is longitude and `y` latitude in degrees; mapped to km by
    /// `x = R (λ − λ₀) cos φ₀`, `y = R (φ − φ₀)`. The origin defaults to
    /// the mean site.
    Equirectangular {
        #[serde(default)]
        lon0: Option<f64>,
        #[serde(default)]
        lat0: Option<f64>,
    },
}

impl Projection {
    /// Projects `sites` in place and returns the projection with a
    /// resolved origin.
    pub fn apply(&self, sites: &mut [[f64; 2]]) -> Result<Projection> {
        match *self {
            Projection::Planar => Ok(Projection::Planar),
            Projection::Equirectangular { lon0, lat0 } => {
                let n = sites.len().max(1) as f64;
                let lon0 = lon0.unwrap_or_else(|| sites.iter().map(|s| s[0]).sum::<f64>() / n);
                let lat0 = lat0.unwrap_or_else(|| sites.iter().map(|s| s[1]).sum::<f64>() / n);
                if let Some(bad) = sites
                    .iter()
                    .find(|s| !(-90.0..=90.0).contains(&s[1]) || s[0].abs() > 360.0)
                {
                    return Err(Error::Data(format!(
                        "coordinates ({}, {}) are not lon/lat degrees",
                        bad[0], bad[1]
                    )));
                }
                let c = lat0.to_radians().cos();
                for s in sites.iter_mut() {
                    *s = [
                        EARTH_RADIUS_KM * (s[0] - lon0).to_radians() * c,
                        EARTH_RADIUS_KM * (s[1] - lat0).to_radians(),
                    ];
                }
                Ok(Projection::Equirectangular {
                    lon0: Some(lon0),
                    lat0: Some(lat0),
                })
            }
        }
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:?}")
    }
}

fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse {what} '{s}' as a number")))
}

fn is_missing(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

/// Reads a long-format dataset. Coordinates are projected as requested;
/// the resolved projection is returned alongside the data.
pub fn ingest_csv(path: &Path, mode: IngestMode, projection: Projection) -> Result<(SpatialDataset, Projection)> {
    let file = File::open(path).map_err(|e| path_err(path, e))?;
    ingest_reader(file, mode, projection)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    mode: IngestMode,
    projection: Projection,
) -> Result<(SpatialDataset, Projection)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let m = header.len();
    if m < 6 || header[..3] != ["site_id", "x", "y"] || header[m - 3..] != ["replicate", "component", "value"] {
        return Err(Error::Data(format!(
            "header must be site_id,x,y,<covariates...>,replicate,component,value; got {}",
            header.join(",")
        )));
    }
    let covariate_names: Vec<String> = header[3..m - 3].to_vec();
    let q = covariate_names.len();

    struct Site {
        coords: [f64; 2],
        covariates: Vec<f64>,
        line: u64,
    }
    let mut site_ids: Vec<String> = Vec::new();
    let mut sites: HashMap<String, (usize, Site)> = HashMap::new();
    let mut component_names: Vec<String> = Vec::new();
    let mut components: HashMap<String, usize> = HashMap::new();
    let mut values: HashMap<(usize, i64, usize), (f64, u64)> = HashMap::new();
    let mut replicates: BTreeSet<i64> = BTreeSet::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != m {
            return Err(Error::Data(format!(
                "line {line}: expected {m} fields, found {}",
                record.len()
            )));
        }
        let field = |j: usize, what: &str| -> Result<&str> {
            let s = &record[j];
            if is_missing(s) {
                Err(Error::Data(format!("line {line}: missing {what}")))
            } else {
                Ok(s)
            }
        };
        let site_id = field(0, "site_id")?.to_string();
        let coords = [
            parse_f64(field(1, "x")?, "x", line)?,
            parse_f64(field(2, "y")?, "y", line)?,
        ];
        let covs = (0..q)
            .map(|c| parse_f64(field(3 + c, &covariate_names[c])?, &covariate_names[c], line))
            .collect::<Result<Vec<_>>>()?;
        let rep_s = field(m - 3, "replicate")?;
        let rep: i64 = rep_s
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: replicate '{rep_s}' is not an integer")))?;
        let comp = field(m - 2, "component")?.to_string();
        let value = if is_missing(&record[m - 1]) {
            if mode == IngestMode::Training {
                return Err(Error::Data(format!(
                    "line {line}: missing value for site '{site_id}', replicate {rep}, component '{comp}'"
                )));
            }
            f64::NAN
        } else {
            parse_f64(&record[m - 1], "value", line)?
        };

        let k = match sites.get(&site_id) {
            Some((k, s)) => {
                if s.coords != coords || s.covariates != covs {
                    return Err(Error::Data(format!(
                        "line {line}: site '{site_id}' has coordinates or covariates that differ from line {}",
                        s.line
                    )));
                }
                *k
            }
            None => {
                let k = site_ids.len();
                site_ids.push(site_id.clone());
                sites.insert(
                    site_id.clone(),
                    (
                        k,
                        Site {
                            coords,
                            covariates: covs,
                            line,
                        },
                    ),
                );
                k
            }
        };
        let i = *components.entry(comp.clone()).or_insert_with(|| {
            component_names.push(comp.clone());
            component_names.len() - 1
        });
        replicates.insert(rep);
        if let Some((_, first)) = values.insert((k, rep, i), (value, line)) {
            return Err(Error::Data(format!(
                "line {line}: duplicate row for site '{site_id}', replicate {rep}, component '{comp}' (first seen on line {first})"
            )));
        }
    }

    let (n, p, t) = (site_ids.len(), component_names.len(), replicates.len());
    if n == 0 {
        return Err(Error::Data("dataset has no rows".into()));
    }
    if values.len() != n * p * t {
        for id in &site_ids {
            let k = sites[id].0;
            let count = values.keys().filter(|(kk, _, _)| *kk == k).count();
            if count != p * t {
                return Err(Error::Data(format!(
                    "inconsistent replicate counts: site '{id}' has {count} rows, expected {t} replicates x {p} components = {}",
                    p * t
                )));
            }
        }
        return Err(Error::Data("inconsistent replicate counts across components".into()));
    }

    let mut coords: Vec<[f64; 2]> = vec![[0.0; 2]; n];
    let mut covariates = DMatrix::zeros(n, q);
    for (k, s) in sites.values() {
        coords[*k] = s.coords;
        for c in 0..q {
            covariates[(*k, c)] = s.covariates[c];
        }
    }
    let resolved = projection.apply(&mut coords)?;
    let responses = replicates
        .iter()
        .map(|&rep| DMatrix::from_fn(n, p, |k, i| values[&(k, rep, i)].0))
        .collect();
    let data = SpatialDataset::new(
        site_ids,
        coords,
        covariate_names,
        covariates,
        component_names,
        responses,
    )?;
    Ok((data, resolved))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| path_err(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| path_err(path, e))
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

fn path_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// `# config_sha256=<hex> seed=<seed>`, or nothing when `stamp` is `None`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_sha256: String,
    pub seed: u64,
}

impl Stamp {
    fn write<W: Write>(stamp: Option<&Stamp>, w: &mut W) -> Result<()> {
        if let Some(s) = stamp {
            writeln!(w, "# config_sha256={} seed={}", s.config_sha256, s.seed).map_err(io_err)?;
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes a dataset in the ingestion layout. Replicates are labelled
/// `1..=T`.
pub fn write_dataset(path: &Path, data: &SpatialDataset, stamp: Option<&Stamp>) -> Result<()> {
    let mut w = create(path)?;
    write_dataset_to(&mut w, data, stamp)?;
    w.flush().map_err(io_err)
}

pub fn write_dataset_to<W: Write>(w: &mut W, data: &SpatialDataset, stamp: Option<&Stamp>) -> Result<()> {
    Stamp::write(stamp, w)?;
    let mut header = vec!["site_id".to_string(), "x".into(), "y".into()];
    header.extend(data.covariate_names.iter().cloned());
    header.extend(["replicate", "component", "value"].map(String::from));
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;
    for k in 0..data.n() {
        let mut prefix = format!(
            "{},{},{}",
            data.site_ids[k],
            fmt_f64(data.sites[k][0]),
            fmt_f64(data.sites[k][1])
        );
        for c in 0..data.q() {
            prefix.push(',');
            prefix.push_str(&fmt_f64(data.covariates[(k, c)]));
        }
        for (t, y) in data.responses.iter().enumerate() {
            for (i, comp) in data.component_names.iter().enumerate() {
                writeln!(w, "{prefix},{},{comp},{}", t + 1, fmt_f64(y[(k, i)])).map_err(io_err)?;
            }
        }
    }
    Ok(())
}

/// Chain metadata stored next to the chain CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainMetadata {
    pub family: Family,
    pub p: usize,
    pub component_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub config_sha256: String,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub draws: usize,
    pub acceptance: Vec<BlockAcceptance>,
    pub acceptance_rates: BTreeMap<String, f64>,
    pub proposal_scales: Vec<(String, f64)>,
    pub median_distance: f64,
    pub nugget_levels: Vec<f64>,
    pub projection: Projection,
    pub standardization: crate::model::Standardization,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Columns: `iteration`, the family's parameters, `sep_indicator`,
/// `log_post`.
pub fn write_chain_csv(path: &Path, chain: &PosteriorChain, stamp: Option<&Stamp>) -> Result<()> {
    let mut w = create(path)?;
    write_chain_to(&mut w, chain, stamp)?;
    w.flush().map_err(io_err)
}

pub fn write_chain_to<W: Write>(w: &mut W, chain: &PosteriorChain, stamp: Option<&Stamp>) -> Result<()> {
    Stamp::write(stamp, w)?;
    let names = chain.column_names();
    writeln!(w, "iteration,{},sep_indicator,log_post", names.join(",")).map_err(io_err)?;
    for d in &chain.draws {
        let vals: Vec<String> = d.theta.values().into_iter().map(fmt_f64).collect();
        writeln!(
            w,
            "{},{},{},{}",
            d.iteration,
            vals.join(","),
            u8::from(d.sep_indicator),
            fmt_f64(d.log_post)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Reads a chain written by [`write_chain_csv`]; family, dimension and run
/// settings come from `meta`.
pub fn read_chain_csv(path: &Path, meta: &ChainMetadata) -> Result<PosteriorChain> {
    let file = File::open(path).map_err(|e| path_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let m = header.len();
    if m < 4 || header[0] != "iteration" || header[m - 2] != "sep_indicator" || header[m - 1] != "log_post" {
        return Err(Error::Data(format!("{}: not a chain file", path.display())));
    }
    let names = &header[1..m - 2];
    let mut draws = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let iteration = record[0]
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("line {line}: bad iteration '{}'", &record[0])))?;
        let values = (1..m - 2)
            .map(|j| parse_f64(&record[j], &header[j], line))
            .collect::<Result<Vec<_>>>()?;
        draws.push(ChainState {
            theta: Theta::from_values(meta.family, meta.p, names, &values)?,
            sep_indicator: &record[m - 2] == "1",
            log_post: if is_missing(&record[m - 1]) {
                f64::NAN
            } else {
                parse_f64(&record[m - 1], "log_post", line)?
            },
            iteration,
        });
    }
    if draws.is_empty() {
        return Err(Error::Data(format!("{}: chain has no draws", path.display())));
    }
    Ok(PosteriorChain {
        family: meta.family,
        draws,
        acceptance: meta.acceptance.clone(),
        proposal_scales: meta.proposal_scales.clone(),
        seed: meta.seed,
        iterations: meta.iterations,
        burn_in: meta.burn_in,
        thin: meta.thin,
    })
}

/// Columns: `target_id, site_id, component, replicate, truth, mean, lower,
/// upper, variance`. Replicates are written 1-based.
pub fn write_predictions_csv(path: &Path, summary: &PredictiveSummary, stamp: Option<&Stamp>) -> Result<()> {
    let mut w = create(path)?;
    write_predictions_to(&mut w, summary, stamp)?;
    w.flush().map_err(io_err)
}

pub fn write_predictions_to<W: Write>(w: &mut W, summary: &PredictiveSummary, stamp: Option<&Stamp>) -> Result<()> {
    Stamp::write(stamp, w)?;
    writeln!(
        w,
        "target_id,site_id,component,replicate,truth,mean,lower,upper,variance"
    )
    .map_err(io_err)?;
    for t in &summary.targets {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            t.target_id,
            t.site_id,
            t.component,
            t.replicate + 1,
            t.truth.map(fmt_f64).unwrap_or_else(|| "NA".into()),
            fmt_f64(t.mean),
            fmt_f64(t.lower),
            fmt_f64(t.upper),
            fmt_f64(t.variance)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Writes a tidy table with a stamp line. Every row must match `header`.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>], stamp: Option<&Stamp>) -> Result<()> {
    let mut w = create(path)?;
    Stamp::write(stamp, &mut w)?;
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::InvalidInput("table row width does not match header".into()));
        }
        writeln!(w, "{}", r.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Number formatting used by every artifact writer.
pub fn format_number(v: f64) -> String {
    fmt_f64(v)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| path_err(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
