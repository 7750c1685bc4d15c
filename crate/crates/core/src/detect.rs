//! Signal detection with the ratio statistic `R = (mu1 - mu2)/(mu2 - mu3)`,
//! calibrated against simulated GOE top eigenvalues.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble_sim::sample_goe_top_tridiagonal;
use crate::error::{EdgeError, Result};

pub const GAP_TOL: f64 = 1e-14;
pub const MIN_NULL_REPS: usize = 1000;

pub fn r_statistic(mu1: f64, mu2: f64, mu3: f64) -> Result<f64> {
    if !(mu1 >= mu2 && mu2 >= mu3) {
        return Err(EdgeError::invalid(format!(
            "eigenvalues must be ordered mu1 >= mu2 >= mu3, got {mu1}, {mu2}, {mu3}"
        )));
    }
    let gap = mu2 - mu3;
    if gap < GAP_TOL {
        return Err(EdgeError::DegenerateGap { gap });
    }
    Ok((mu1 - mu2) / gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullTable {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Sorted ascending.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    #[serde(rename = "R")]
    pub r: f64,
    pub p_value: f64,
    pub null_table_id: String,
    pub n_null: usize,
}

/// Null law of `R` from `replicates` GOE matrices of size `n`.
pub fn calibrate_null(n: usize, replicates: usize, seed: u64) -> Result<NullTable> {
    if replicates < MIN_NULL_REPS {
        return Err(EdgeError::invalid(format!(
            "null calibration needs at least {MIN_NULL_REPS} replicates, got {replicates}"
        )));
    }
    let tops = sample_goe_top_tridiagonal(n, 3, replicates, seed)?;
    let mut values = tops
        .iter()
        .map(|t| r_statistic(t[0], t[1], t[2]))
        .collect::<Result<Vec<_>>>()?;
    values.sort_by(f64::total_cmp);
    Ok(NullTable {
        n,
        reps: replicates,
        seed,
        values,
    })
}

/// Add-one right-tail p-value `(#{R_null >= r} + 1)/(n + 1)`.
pub fn p_value(r: f64, table: &NullTable) -> f64 {
    let below = table.values.partition_point(|&v| v < r);
    let above = table.values.len() - below;
    (above + 1) as f64 / (table.values.len() + 1) as f64
}

impl NullTable {
    pub fn id(&self) -> String {
        format!("goe_R_N{}_n{}_seed{}", self.n, self.reps, self.seed)
    }

    pub fn file_name(&self) -> String {
        file_name(self.n, self.reps, self.seed)
    }

    pub fn detect(&self, mu1: f64, mu2: f64, mu3: f64) -> Result<DetectionResult> {
        let r = r_statistic(mu1, mu2, mu3)?;
        Ok(DetectionResult {
            r,
            p_value: p_value(r, self),
            null_table_id: self.id(),
            n_null: self.values.len(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("R\n");
        for v in &self.values {
            out.push_str(&format!("{v:e}\n"));
        }
        out
    }

    pub fn read(path: &Path, n: usize, reps: usize, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EdgeError::io(path, e))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("R") {
            return Err(EdgeError::format(path, "expected header R"));
        }
        let mut values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| EdgeError::format(path, "bad number"))?;
        if values.is_empty() {
            return Err(EdgeError::format(path, "empty null table"));
        }
        values.sort_by(f64::total_cmp);
        Ok(NullTable { n, reps, seed, values })
    }
}

pub fn file_name(n: usize, reps: usize, seed: u64) -> String {
    format!("goe_R_N{n}_n{reps}_seed{seed}.csv")
}

fn parse_file_name(name: &str) -> Option<(usize, usize, u64)> {
    let rest = name.strip_prefix("goe_R_N")?.strip_suffix(".csv")?;
    let (n, rest) = rest.split_once("_n")?;
    let (reps, seed) = rest.split_once("_seed")?;
    Some((n.parse().ok()?, reps.parse().ok()?, seed.parse().ok()?))
}

/// Exact table from the cache directory, else the cached table with the
/// nearest `N` (with a warning, since pivotality is only asymptotic), else a
/// fresh calibration that is then stored.
pub fn cached_null_table(n: usize, reps: usize, seed: u64, dir: Option<&Path>) -> Result<(NullTable, Option<PathBuf>)> {
    let Some(dir) = dir else {
        return Ok((calibrate_null(n, reps, seed)?, None));
    };
    let exact = dir.join(file_name(n, reps, seed));
    if exact.exists() {
        return Ok((NullTable::read(&exact, n, reps, seed)?, Some(exact)));
    }
    if let Some((path, (cn, creps, cseed))) = nearest_cached(dir, n, reps) {
        log::warn!(
            "no cached null table {}; using {} (N={cn}) instead",
            file_name(n, reps, seed),
            path.display()
        );
        return Ok((NullTable::read(&path, cn, creps, cseed)?, Some(path)));
    }
    let table = calibrate_null(n, reps, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| EdgeError::io(dir, e))?;
    std::fs::write(&exact, table.to_csv()).map_err(|e| EdgeError::io(&exact, e))?;
    Ok((table, Some(exact)))
}

/// Cached table with at least `reps` replicates whose `N` is closest to `n`
/// within a factor of two; ties go to the smaller file name.
fn nearest_cached(dir: &Path, n: usize, reps: usize) -> Option<(PathBuf, (usize, usize, u64))> {
    let mut found: Vec<(usize, String, (usize, usize, u64))> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let key = parse_file_name(&name)?;
            (key.1 >= reps && key.0 * 2 >= n && key.0 <= n * 2).then(|| (key.0.abs_diff(n), name, key))
        })
        .collect();
    found.sort();
    found.into_iter().next().map(|(_, name, key)| (dir.join(name), key))
}
