//! JSON model files and the CSV tables written by the command-line tools.
//!
//! A model file looks like
//!
//! ```json
//! {
//!   "dim": 2,
//!   "hamiltonian": [[[0, 0], [0, 0]], [[0, 0], [0, 0]]],
//!   "decay": [],
//!   "channels": [
//!     {"label": "x", "op": [[[0, 0], [0.5, 0]], [[0.5, 0], [0, 0]]], "eta": 1.0}
//!   ]
//! }
//! ```
//!
//! Matrices are lists of rows and every entry is a `[re, im]` pair. The
//! Hamiltonian and the unmonitored decay list are optional. Unknown keys are
//! rejected.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::densemath::C64;
use crate::estimators::EstimateWithError;
use crate::trajectories::Trajectory;
use crate::{Error, MeasurementChannel, Operator, Result, SystemModel};

/// Rows of `[re, im]` pairs.
pub type MatrixEntries = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub label: String,
    pub op: MatrixEntries,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<MatrixEntries>,
    #[serde(default)]
    pub decay: Vec<MatrixEntries>,
    pub channels: Vec<ChannelFile>,
}

fn to_entries(m: &Operator) -> MatrixEntries {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn from_entries(e: &MatrixEntries, dim: usize, what: &str) -> Result<Operator> {
    if e.len() != dim || e.iter().any(|row| row.len() != dim) {
        return Err(Error::Schema(format!("{what} must be a {dim}x{dim} matrix")));
    }
    if e.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Schema(format!("{what} has non-finite entries")));
    }
    Ok(Operator::from_fn(dim, dim, |i, j| C64::new(e[i][j][0], e[i][j][1])))
}

impl ModelFile {
    pub fn from_model(model: &SystemModel) -> Self {
        let h = model.hamiltonian();
        Self {
            dim: model.dim(),
            hamiltonian: (h.iter().any(|z| *z != C64::new(0.0, 0.0))).then(|| to_entries(h)),
            decay: model.decay().iter().map(to_entries).collect(),
            channels: model
                .channels()
                .iter()
                .map(|c| ChannelFile {
                    label: c.label.clone(),
                    op: to_entries(&c.op),
                    eta: c.eta,
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<SystemModel> {
        let d = self.dim;
        let schema = |e: Error| match e {
            Error::Schema(_) => e,
            other => Error::Schema(other.to_string()),
        };
        let hamiltonian = self
            .hamiltonian
            .as_ref()
            .map(|h| from_entries(h, d, "hamiltonian"))
            .transpose()?;
        let decay = self
            .decay
            .iter()
            .enumerate()
            .map(|(j, l)| from_entries(l, d, &format!("decay[{j}]")))
            .collect::<Result<Vec<_>>>()?;
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let op = from_entries(&c.op, d, &format!("channel {}", c.label))?;
                MeasurementChannel::new(c.label.clone(), op, c.eta).map_err(schema)
            })
            .collect::<Result<Vec<_>>>()?;
        SystemModel::new(d, hamiltonian, decay, channels).map_err(schema)
    }
}

pub fn parse_model(text: &str) -> Result<SystemModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    file.to_model()
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SystemModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
    parse_model(&text)
}

pub fn model_to_json(model: &SystemModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model)).expect("plain data")
}

pub fn save_model(model: &SystemModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_json(model) + "\n")?;
    Ok(())
}

/// Hex SHA-256 of the compact JSON form of the model.
pub fn model_hash(model: &SystemModel) -> String {
    let canonical = serde_json::to_string(&ModelFile::from_model(model)).expect("plain data");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `# key: value` lines written above every CSV table. The timestamp line is
/// the only one that changes between identical runs.
#[derive(Debug, Clone, Default)]
pub struct CsvHeader {
    entries: Vec<(String, String)>,
    timestamp: bool,
}

pub const TIMESTAMP_KEY: &str = "generated_unix";

impl CsvHeader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn model(self, model: &SystemModel) -> Self {
        self.param("model_sha256", model_hash(model))
    }

    pub fn param(mut self, key: &str, value: impl Display) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn with_timestamp(mut self) -> Self {
        self.timestamp = true;
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("# {k}: {}\n", v.replace('\n', " ")));
        }
        if self.timestamp {
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            out.push_str(&format!("# {TIMESTAMP_KEY}: {now}\n"));
        }
        out
    }
}

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub comments: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            comments: Vec::new(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn comment(&self, key: &str) -> Option<&str> {
        self.comments.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn write_table(path: impl AsRef<Path>, header: &CsvHeader, table: &Table) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(header.render().as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&table.columns).map_err(csv_error)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes string cells; used for tables that echo non-numeric inputs.
pub fn write_records(
    path: impl AsRef<Path>,
    header: &CsvHeader,
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(header.render().as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let text = fs::read_to_string(path)?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<Table> {
    let comments = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Schema(format!("row {}: {s:?} is not a number", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table {
        comments,
        columns,
        rows,
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Schema(format!("csv: {e}"))
}

/// `t, dr_<label>..., [weight]` with `t` the left end of each interval.
pub fn trajectory_table(model: &SystemModel, traj: &Trajectory) -> Table {
    let mut columns = vec!["t".to_string()];
    columns.extend(model.channels().iter().map(|c| format!("dr_{}", c.label)));
    if traj.trace_weights.is_some() {
        columns.push("weight".into());
    }
    let rows = (0..traj.n_steps)
        .map(|i| {
            let mut row = vec![i as f64 * traj.dt];
            row.extend(traj.increments.iter().map(|inc| inc[i]));
            if let Some(w) = &traj.trace_weights {
                row.push(w[i]);
            }
            row
        })
        .collect();
    Table {
        comments: Vec::new(),
        columns,
        rows,
    }
}

pub fn write_trajectory(
    path: impl AsRef<Path>,
    model: &SystemModel,
    traj: &Trajectory,
    header: CsvHeader,
) -> Result<()> {
    let header = header.param("dt", traj.dt).param("seed", traj.seed);
    write_table(path, &header, &trajectory_table(model, traj))
}

/// `lag, value, stderr, n`.
pub fn estimates_table(lags: &[f64], estimates: &[EstimateWithError]) -> Table {
    let mut t = Table::new(&["lag", "value", "stderr", "n"]);
    for (lag, e) in lags.iter().zip(estimates) {
        t.push(vec![*lag, e.value, e.stderr, e.n_samples as f64]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::QubitExampleParams;

    #[test]
    fn model_round_trip_and_hash() {
        let model = QubitExampleParams::figure_defaults().model().unwrap();
        let text = model_to_json(&model);
        let back = parse_model(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(model_hash(&back), model_hash(&model));
        assert_eq!(model_hash(&model).len(), 64);
        let other = model.with_efficiency(0, 0.5).unwrap();
        assert_ne!(model_hash(&other), model_hash(&model));
    }

    #[test]
    fn schema_rejections() {
        let op = "[[[0,0],[1,0]],[[1,0],[0,0]]]";
        let bad_eta = format!(r#"{{"dim":2,"channels":[{{"label":"x","op":{op},"eta":1.5}}]}}"#);
        assert!(matches!(parse_model(&bad_eta), Err(Error::Schema(_))));
        let unknown = format!(r#"{{"dim":2,"extra":1,"channels":[{{"label":"x","op":{op},"eta":1}}]}}"#);
        assert!(matches!(parse_model(&unknown), Err(Error::Schema(_))));
        let wrong_dim = format!(r#"{{"dim":3,"channels":[{{"label":"x","op":{op},"eta":1}}]}}"#);
        assert!(matches!(parse_model(&wrong_dim), Err(Error::Schema(_))));
        let non_hermitian = r#"{"dim":2,"hamiltonian":[[[0,0],[1,0]],[[0,0],[0,0]]],"channels":[]}"#;
        assert!(matches!(parse_model(non_hermitian), Err(Error::Schema(_))));
        let ok = format!(r#"{{"dim":2,"channels":[{{"label":"x","op":{op},"eta":0.5}}]}}"#);
        assert_eq!(parse_model(&ok).unwrap().channels()[0].eta, 0.5);
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(&["lag", "value"]);
        t.push(vec![-0.1, 1.0 / 3.0]);
        t.push(vec![0.0, 1e-300]);
        let header = CsvHeader::new().param("seed", 7).with_timestamp();
        write_table(&path, &header, &t).unwrap();
        let back = read_table(&path).unwrap();
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.comment("seed"), Some("7"));
        assert!(back.comment(TIMESTAMP_KEY).is_some());
    }
}
