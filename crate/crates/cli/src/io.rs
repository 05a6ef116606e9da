//! File formats: longitudinal CSV input, draws CSV, and atomic output writes.
//!
//! Floats are written with Rust's `Display`, which produces the shortest
//! decimal string that round-trips, so reruns are byte-identical.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use bablr::data::HeldOutObservation;
use bablr::sampler::TransitionStats;
use bablr::{DrawsStore, LongitudinalDataset, SubjectRecord};

/// First line of every draws file. Readers reject any other version.
pub const DRAWS_HEADER: &str = "# bablr-draws v1";

const STAT_COLUMNS: [&str; 7] =
    ["lp__", "accept_stat__", "stepsize__", "treedepth__", "n_leapfrog__", "divergent__", "energy__"];

/// Writes `contents` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing into {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| anyhow!("moving output into {}: {}", path.display(), e.error))?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow!("{e}"))?)
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

/// Reads a `subject_id,time,outcome` CSV (any column order, extra columns ignored).
///
/// Rows are grouped by subject in order of first appearance and sorted by
/// time within each subject; out-of-order times are logged as a warning.
pub fn ingest_csv(path: &Path) -> Result<LongitudinalDataset> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ingest_reader(file, &path.display().to_string())
}

pub fn ingest_reader<R: std::io::Read>(reader: R, source: &str) -> Result<LongitudinalDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers().with_context(|| format!("{source}: reading header"))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("{source}: missing column `{name}`"))
    };
    let (ci, ct, cy) = (col("subject_id")?, col("time")?, col("outcome")?);

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| anyhow!("{source}: {e}"))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize, name: &str| {
            rec.get(k).ok_or_else(|| anyhow!("{source}: line {line}: missing field `{name}`"))
        };
        let number = |k: usize, name: &str| -> Result<f64> {
            let raw = field(k, name)?;
            let v: f64 = raw.parse().map_err(|_| anyhow!("{source}: line {line}: non-numeric {name} `{raw}`"))?;
            if !v.is_finite() {
                bail!("{source}: line {line}: non-finite {name} `{raw}`");
            }
            Ok(v)
        };
        let id = field(ci, "subject_id")?;
        if id.is_empty() {
            bail!("{source}: line {line}: empty subject_id");
        }
        let (t, y) = (number(ct, "time")?, number(cy, "outcome")?);
        rows.entry(id.to_string())
            .or_insert_with(|| {
                order.push(id.to_string());
                Vec::new()
            })
            .push((t, y));
    }
    if order.is_empty() {
        bail!("{source}: empty dataset");
    }
    let subjects = order
        .into_iter()
        .map(|id| {
            let mut obs = rows.remove(&id).unwrap_or_default();
            if obs.windows(2).any(|w| w[1].0 < w[0].0) {
                log::warn!("{source}: subject `{id}` has unsorted times; sorted on ingest");
                obs.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            let (times, outcomes) = obs.into_iter().unzip();
            SubjectRecord::new(id, times, outcomes)
        })
        .collect();
    Ok(LongitudinalDataset::new(subjects)?)
}

pub fn write_dataset(path: &Path, data: &LongitudinalDataset) -> Result<()> {
    let rows = data.subjects().iter().flat_map(|s| {
        s.times.iter().zip(&s.outcomes).map(|(t, y)| vec![s.id.clone(), t.to_string(), y.to_string()])
    });
    write_csv(path, &["subject_id", "time", "outcome"], rows)
}

pub fn write_heldout(path: &Path, heldout: &[HeldOutObservation]) -> Result<()> {
    let rows = heldout.iter().map(|h| vec![h.subject_id.clone(), h.time.to_string(), h.outcome.to_string()]);
    write_csv(path, &["subject_id", "time", "outcome"], rows)
}

pub fn read_heldout(path: &Path) -> Result<Vec<HeldOutObservation>> {
    let data = ingest_csv(path)?;
    Ok(data
        .subjects()
        .iter()
        .flat_map(|s| {
            s.times.iter().zip(&s.outcomes).map(|(&time, &outcome)| HeldOutObservation {
                subject_id: s.id.clone(),
                time,
                outcome,
            })
        })
        .collect())
}

/// Serializes draws with their sampler statistics, one row per post-warmup draw.
pub fn draws_csv_bytes(store: &DrawsStore) -> Result<Vec<u8>> {
    let mut header: Vec<&str> = vec!["chain", "iteration"];
    if store.has_stats() {
        header.extend(STAT_COLUMNS);
    }
    header.extend(store.names().iter().map(String::as_str));
    let rows = (0..store.n_chains()).flat_map(|c| {
        (0..store.n_iterations()).map(move |i| {
            let mut row = vec![c.to_string(), i.to_string()];
            if let Some(s) = store.stats(c, i) {
                row.extend([
                    s.log_density.to_string(),
                    s.accept_stat.to_string(),
                    s.step_size.to_string(),
                    s.tree_depth.to_string(),
                    s.n_leapfrog.to_string(),
                    u8::from(s.divergent).to_string(),
                    s.energy.to_string(),
                ]);
            }
            row.extend(store.draw(c, i).iter().map(f64::to_string));
            row
        })
    });
    let mut out = format!("{DRAWS_HEADER}\n").into_bytes();
    out.extend(csv_bytes(&header, rows)?);
    Ok(out)
}

pub fn write_draws(path: &Path, store: &DrawsStore) -> Result<()> {
    write_atomic(path, &draws_csv_bytes(store)?)
}

pub fn read_draws(path: &Path) -> Result<DrawsStore> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_draws(&text).with_context(|| format!("draws file {}", path.display()))
}

pub fn parse_draws(text: &str) -> Result<DrawsStore> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim_end() != DRAWS_HEADER {
        bail!("version mismatch: expected first line `{DRAWS_HEADER}`, found `{}`", first.trim_end());
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("chain") || headers.get(1) != Some("iteration") {
        bail!("first columns must be chain,iteration");
    }
    let has_stats = STAT_COLUMNS.iter().enumerate().all(|(k, c)| headers.get(2 + k) == Some(c));
    let first_param = if has_stats { 2 + STAT_COLUMNS.len() } else { 2 };
    let names: Vec<String> = headers.iter().skip(first_param).map(str::to_string).collect();

    let mut draws = Vec::new();
    let mut stats = Vec::new();
    let mut positions: Vec<(usize, usize)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) + 1;
        let num = |k: usize| -> Result<f64> {
            let raw = rec.get(k).ok_or_else(|| anyhow!("line {line}: missing column {k}"))?;
            raw.parse().map_err(|_| anyhow!("line {line}: non-numeric value `{raw}`"))
        };
        let int = |k: usize| -> Result<usize> {
            let raw = rec.get(k).ok_or_else(|| anyhow!("line {line}: missing column {k}"))?;
            raw.parse().map_err(|_| anyhow!("line {line}: bad integer `{raw}`"))
        };
        positions.push((int(0)?, int(1)?));
        if has_stats {
            stats.push(TransitionStats {
                log_density: num(2)?,
                accept_stat: num(3)?,
                step_size: num(4)?,
                tree_depth: int(5)?,
                n_leapfrog: int(6)?,
                divergent: int(7)? != 0,
                energy: num(8)?,
            });
        }
        for k in 0..names.len() {
            draws.push(num(first_param + k)?);
        }
    }
    if positions.is_empty() {
        bail!("no draws");
    }
    let n_chains = positions.iter().map(|p| p.0).max().unwrap_or(0) + 1;
    let n_iter = positions.len() / n_chains;
    let expected = (0..n_chains).flat_map(|c| (0..n_iter).map(move |i| (c, i)));
    if positions.len() != n_chains * n_iter || !positions.iter().copied().eq(expected) {
        bail!("rows must be ordered by chain then iteration with equal chain lengths");
    }
    let store = DrawsStore::from_draws(names, n_chains, n_iter, draws)?;
    Ok(if has_stats { store.with_stats(stats)? } else { store })
}
