//! File formats: logged datasets and Warfarin tables as CSV, reward models
//! as versioned JSON.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use kmis_core::domains::{WarfarinTable, WARFARIN_FEATURES};
use kmis_core::policies::LoggedDataset;
use kmis_core::reward_model::{FitReport, RewardModel};
use serde::{Deserialize, Serialize};

use crate::error::{csv_err, io_err, json_err, Error, Result};

/// Locale-independent shortest round-trip decimal.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn schema(path: &Path, column: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        column: column.into(),
        message: message.into(),
    }
}

fn parse_cell(path: &Path, column: &str, row: usize, cell: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| {
        schema(
            path,
            column,
            format!("row {row}: cannot parse {cell:?} as a number"),
        )
    })
}

/// Header `s_1..s_Ds,a_1..a_Da,r,pb`.
pub fn dataset_header(state_dim: usize, action_dim: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=state_dim).map(|k| format!("s_{k}")).collect();
    h.extend((1..=action_dim).map(|k| format!("a_{k}")));
    h.push("r".into());
    h.push("pb".into());
    h
}

pub fn write_dataset<W: Write>(data: &LoggedDataset, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_header(data.state_dim(), data.action_dim()))?;
    let mut row = Vec::new();
    for i in 0..data.len() {
        row.clear();
        row.extend(data.state(i).iter().map(|v| fmt_f64(*v)));
        row.extend(data.action(i).iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(data.rewards()[i]));
        row.push(fmt_f64(data.behavior_density()[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(path: &Path, data: &LoggedDataset) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_dataset(data, BufWriter::new(f)).map_err(csv_err(path))
}

/// Reads a dataset; `path` only labels errors.
pub fn read_dataset<R: Read>(input: R, path: &Path) -> Result<LoggedDataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err(path))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let count_prefix = |prefix: &str, start: usize| {
        names[start..]
            .iter()
            .enumerate()
            .take_while(|(k, n)| **n == format!("{prefix}_{}", k + 1))
            .count()
    };
    let ds = count_prefix("s", 0);
    let da = count_prefix("a", ds);
    if ds == 0 {
        return Err(schema(path, "s_1", "missing state columns"));
    }
    if da == 0 {
        return Err(schema(path, "a_1", "missing action columns"));
    }
    let expect = dataset_header(ds, da);
    for (k, want) in expect.iter().enumerate().skip(ds + da) {
        if names.get(k) != Some(&want.as_str()) {
            return Err(schema(path, want.as_str(), "missing or out of order"));
        }
    }
    if names.len() != expect.len() {
        return Err(schema(path, names[expect.len()], "unexpected extra column"));
    }

    let (mut states, mut actions, mut rewards, mut pb) = (vec![], vec![], vec![], vec![]);
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        for (k, cell) in rec.iter().enumerate() {
            let v = parse_cell(path, &expect[k], row + 1, cell)?;
            if k < ds {
                states.push(v);
            } else if k < ds + da {
                actions.push(v);
            } else if k == ds + da {
                rewards.push(v);
            } else {
                pb.push(v);
            }
        }
    }
    Ok(LoggedDataset::new(ds, da, states, actions, rewards, pb)?)
}

pub fn load_dataset(path: &Path) -> Result<LoggedDataset> {
    let f = File::open(path).map_err(io_err(path))?;
    read_dataset(BufReader::new(f), path)
}

/// Header `f_1..f_81,dose,bmi_z`.
pub fn warfarin_header() -> Vec<String> {
    let mut h: Vec<String> = (1..=WARFARIN_FEATURES).map(|k| format!("f_{k}")).collect();
    h.push("dose".into());
    h.push("bmi_z".into());
    h
}

pub fn write_warfarin<W: Write>(table: &WarfarinTable, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(warfarin_header())?;
    let mut row = Vec::new();
    for i in 0..table.len() {
        row.clear();
        let f = &table.features[i * table.n_features..(i + 1) * table.n_features];
        row.extend(f.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(table.dose[i]));
        row.push(fmt_f64(table.bmi_z[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_warfarin(path: &Path, table: &WarfarinTable) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_warfarin(table, BufWriter::new(f)).map_err(csv_err(path))
}

/// Reads a preprocessed patient table. Doses must be positive; errors name
/// the column at fault.
pub fn read_warfarin<R: Read>(input: R, path: &Path) -> Result<WarfarinTable> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err(path))?.clone();
    let expect = warfarin_header();
    for (k, want) in expect.iter().enumerate() {
        if header.get(k).map(str::trim) != Some(want.as_str()) {
            return Err(schema(path, want.as_str(), "missing or out of order"));
        }
    }
    if let Some(extra) = header.get(expect.len()) {
        return Err(schema(path, extra, "unexpected extra column"));
    }
    let (mut features, mut dose, mut bmi_z) = (vec![], vec![], vec![]);
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        for (k, cell) in rec.iter().enumerate() {
            let v = parse_cell(path, &expect[k], row + 1, cell)?;
            if k < WARFARIN_FEATURES {
                features.push(v);
            } else if k == WARFARIN_FEATURES {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(schema(
                        path,
                        "dose",
                        format!("row {}: dose must be positive, got {v}", row + 1),
                    ));
                }
                dose.push(v);
            } else {
                bmi_z.push(v);
            }
        }
    }
    Ok(WarfarinTable {
        features,
        n_features: WARFARIN_FEATURES,
        dose,
        bmi_z,
    })
}

pub fn load_warfarin(path: &Path) -> Result<WarfarinTable> {
    let f = File::open(path).map_err(io_err(path))?;
    read_warfarin(BufReader::new(f), path)
}

pub const MODEL_FORMAT: &str = "kmis-reward-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk reward model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBlob {
    pub format: String,
    pub version: u32,
    pub model: RewardModel,
    pub fit: Option<FitReport>,
}

pub fn save_model(path: &Path, model: &RewardModel, fit: Option<&FitReport>) -> Result<()> {
    let blob = ModelBlob {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        model: model.clone(),
        fit: fit.cloned(),
    };
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &blob).map_err(json_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<ModelBlob> {
    let f = File::open(path).map_err(io_err(path))?;
    let blob: ModelBlob = serde_json::from_reader(BufReader::new(f)).map_err(json_err(path))?;
    if blob.format != MODEL_FORMAT || blob.version != MODEL_VERSION {
        return Err(schema(
            path,
            "version",
            format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                blob.format, blob.version
            ),
        ));
    }
    Ok(blob)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(json_err(path))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(json_err(path))
}
