//! CSV ingestion of long-format panels and JSON/CSV output.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::estimator::FloorSource;
use crate::inference::{BootstrapSummary, TestResult};
use crate::sample::{ActionSample, GameRecord};

/// Which CSV columns hold the game id, the action, covariates and an
/// optional per-row normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub game_id: String,
    pub action: String,
    pub covariates: Vec<String>,
    pub normalize_by: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            game_id: "game_id".into(),
            action: "action".into(),
            covariates: Vec::new(),
            normalize_by: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub sample: ActionSample,
    pub rows: usize,
    /// Games dropped for having fewer than 2 rows.
    pub dropped_games: usize,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
}

fn number(record: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Schema(format!("line {line}: column {name:?} is not a number: {raw:?}")))
}

/// Reads a long-format panel (one row per agent) from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<LoadedSample> {
    load_csv_from(File::open(path)?, mapping)
}

/// Rows are grouped by game id in order of first appearance. Games with
/// different row counts fall into different groups through their agent count.
pub fn load_csv_from(reader: impl Read, mapping: &ColumnMapping) -> Result<LoadedSample> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Schema("empty file".into()));
    }
    let id_col = column(&headers, &mapping.game_id)?;
    let action_col = column(&headers, &mapping.action)?;
    let cov_cols = mapping
        .covariates
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let norm_col = mapping.normalize_by.as_deref().map(|c| column(&headers, c)).transpose()?;

    let mut order: Vec<GameRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        rows += 1;
        let id = record.get(id_col).unwrap_or("").to_string();
        let mut action = number(&record, action_col, &mapping.action, line)?;
        if let (Some(c), Some(name)) = (norm_col, mapping.normalize_by.as_deref()) {
            let d = number(&record, c, name, line)?;
            if d == 0.0 {
                return Err(Error::Schema(format!("line {line}: column {name:?} is zero")));
            }
            action /= d;
        }
        let covs = cov_cols
            .iter()
            .zip(&mapping.covariates)
            .map(|(&c, name)| number(&record, c, name, line))
            .collect::<Result<Vec<_>>>()?;
        match index.get(&id) {
            Some(&g) => {
                let game = &mut order[g];
                if game.covariates != covs {
                    return Err(Error::Schema(format!(
                        "line {line}: covariates of game {id:?} differ across its rows"
                    )));
                }
                game.actions.push(action);
            }
            None => {
                index.insert(id.clone(), order.len());
                order.push(GameRecord::new(id, vec![action]).with_covariates(covs));
            }
        }
    }
    if rows == 0 {
        return Err(Error::Schema("empty file: no data rows".into()));
    }
    let before = order.len();
    let games: Vec<GameRecord> = order.into_iter().filter(|g| g.n_agents() >= 2).collect();
    let dropped_games = before - games.len();
    Ok(LoadedSample {
        sample: ActionSample::new(games)?,
        rows,
        dropped_games,
    })
}

/// Writes a sample in the long format read by [`load_csv_from`].
pub fn write_sample_csv(sample: &ActionSample, mapping: &ColumnMapping, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![mapping.game_id.clone(), mapping.action.clone()];
    header.extend(mapping.covariates.iter().cloned());
    w.write_record(&header)?;
    for game in sample.games() {
        for a in &game.actions {
            let mut rec = vec![game.id.clone(), a.to_string()];
            rec.extend(game.covariates.iter().take(mapping.covariates.len()).map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A number written with 17 significant digits; non-finite values become null.
#[derive(Debug, Clone, Copy)]
struct Num(f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

struct Nums<'a>(&'a [f64]);

impl Serialize for Nums<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for &v in self.0 {
            seq.serialize_element(&Num(v))?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct TuningOut {
    kappa: Num,
    beta: Num,
    epsilon: Num,
    eta: Num,
    n_c: usize,
    q1: u32,
}

#[derive(Serialize)]
struct SupportOut {
    lo: Num,
    hi: Num,
}

#[derive(Serialize)]
struct FloorOut {
    anchor_sigma2: Num,
    floor_sigma2: Num,
    source: FloorSource,
}

#[derive(Serialize)]
struct GroupOut {
    group: u32,
    n_agents: usize,
    games: usize,
    #[serde(rename = "S")]
    s: usize,
    q1: u32,
    kappa: Num,
    beta: Num,
    support: SupportOut,
    floor: FloorOut,
    statistic: Num,
    cells: usize,
}

#[derive(Serialize)]
struct CellOut {
    group: u32,
    b1: Num,
    b2: Num,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<Num>,
    q: u32,
    nu_hat: Num,
    sigma_hat: Num,
    psi: Num,
    weight: Num,
}

#[derive(Serialize)]
struct BootOut {
    n: usize,
    mean: Num,
    sd: Num,
    min: Num,
    median: Num,
    q90: Num,
    q95: Num,
    max: Num,
}

impl From<&BootstrapSummary> for BootOut {
    fn from(b: &BootstrapSummary) -> Self {
        Self {
            n: b.n,
            mean: Num(b.mean),
            sd: Num(b.sd),
            min: Num(b.min),
            median: Num(b.median),
            q90: Num(b.q90),
            q95: Num(b.q95),
            max: Num(b.max),
        }
    }
}

#[derive(Serialize)]
struct ResultOut<'a> {
    statistic: Num,
    critical_value: Num,
    p_value: Num,
    reject: bool,
    alpha: Num,
    n_boot: usize,
    seed: u64,
    tuning: TuningOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_hat: Option<Nums<'a>>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    warnings: &'a [String],
    groups: Vec<GroupOut>,
    bootstrap: BootOut,
    cells: Vec<CellOut>,
}

/// The result as a JSON document. `tuning` holds the first group's values;
/// every group's own values are under `groups`.
pub fn result_json(result: &TestResult) -> Result<String> {
    let first = result
        .groups
        .first()
        .ok_or_else(|| Error::Numeric("result has no groups".into()))?;
    let out = ResultOut {
        statistic: Num(result.statistic),
        critical_value: Num(result.critical_value),
        p_value: Num(result.p_value),
        reject: result.reject,
        alpha: Num(result.alpha),
        n_boot: result.n_boot,
        seed: result.seed,
        tuning: TuningOut {
            kappa: Num(first.kappa),
            beta: Num(first.beta),
            epsilon: Num(result.epsilon),
            eta: Num(result.eta),
            n_c: result.n_c,
            q1: first.q1,
        },
        theta_hat: result.theta_hat.as_deref().map(Nums),
        warnings: &result.warnings,
        groups: result
            .groups
            .iter()
            .map(|g| GroupOut {
                group: g.group,
                n_agents: g.n_agents,
                games: g.games,
                s: g.s,
                q1: g.q1,
                kappa: Num(g.kappa),
                beta: Num(g.beta),
                support: SupportOut {
                    lo: Num(g.support.lo),
                    hi: Num(g.support.hi),
                },
                floor: FloorOut {
                    anchor_sigma2: Num(g.floor.anchor_sigma2),
                    floor_sigma2: Num(g.floor.floor_sigma2),
                    source: g.floor.source,
                },
                statistic: Num(g.statistic),
                cells: g.cells.len(),
            })
            .collect(),
        bootstrap: BootOut::from(&result.bootstrap),
        cells: result
            .groups
            .iter()
            .flat_map(|g| {
                g.cells.iter().map(move |c| CellOut {
                    group: g.group,
                    b1: Num(c.b1),
                    b2: Num(c.b2),
                    x: c.x.map(Num),
                    q: c.q,
                    nu_hat: Num(c.nu_hat),
                    sigma_hat: Num(c.sigma_hat),
                    psi: Num(c.psi),
                    weight: Num(c.weight),
                })
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&out)?;
    s.push('\n');
    Ok(s)
}

/// Writes [`result_json`] to `path`.
pub fn emit_result(result: &TestResult, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, result_json(result)?)?;
    Ok(())
}

/// Two-column CSV `b,xi`.
pub fn write_xi_curve(points: &[(f64, f64)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["b", "xi"])?;
    for (b, xi) in points {
        w.write_record([b.to_string(), xi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
