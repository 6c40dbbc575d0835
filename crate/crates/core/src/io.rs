//! On-disk formats.
//!
//! * Field: `<stem>.bin` (row-major little-endian `f64`) plus `<stem>.json`
//!   header `{nx, ny, dx, dy}`.
//! * Trajectory: a directory of fields `t0000_u.bin`, … with
//!   `manifest.json` `{dt, n, components, times}`.
//! * Dataset: `manifest.json` plus one trajectory directory per sample.
//! * Model checkpoint: JSON [`ModelRecord`].
//! * Parameter vector: `<stem>.bin` plus `<stem>.layout.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diff::{ParamLayout, ParamVector};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, State};
use crate::model::{ModelRecord, PdeNetModel};
use crate::simulator::{PdeSpec, TrajectorySet};

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn bytes_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::shape(format!(
            "binary payload of {} bytes is not a whole number of doubles",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_field(stem: &Path, f: &Field) -> Result<()> {
    write_json(&with_ext(stem, ".json"), f.grid())?;
    fs::write(with_ext(stem, ".bin"), f64_bytes(f.values()))?;
    Ok(())
}

pub fn read_field(stem: &Path) -> Result<Field> {
    let g: Grid = read_json(&with_ext(stem, ".json"))?;
    let g = Grid::new(g.nx, g.ny, g.dx, g.dy)?;
    Field::from_values(g, bytes_f64(&fs::read(with_ext(stem, ".bin"))?)?)
}

/// `ix,iy,x,y,value` rows.
pub fn field_csv(f: &Field) -> String {
    let g = f.grid();
    let mut s = String::from("ix,iy,x,y,value\n");
    for ix in 0..g.nx {
        for iy in 0..g.ny {
            let _ = writeln!(s, "{ix},{iy},{},{},{:e}", g.x(ix), g.y(iy), f.get(ix, iy));
        }
    }
    s
}

/// All components of a state side by side: `ix,iy,x,y,<c0>,<c1>,…`.
pub fn state_csv(s: &State, components: &[String]) -> String {
    let g = s.grid();
    let mut out = format!("ix,iy,x,y,{}\n", components.join(","));
    for ix in 0..g.nx {
        for iy in 0..g.ny {
            let _ = write!(out, "{ix},{iy},{},{}", g.x(ix), g.y(iy));
            for c in &s.components {
                let _ = write!(out, ",{:e}", c.get(ix, iy));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub dt: f64,
    /// Snapshots after the first.
    pub n: usize,
    pub components: Vec<String>,
    pub times: Vec<f64>,
}

fn snapshot_stem(dir: &Path, i: usize, comp: &str) -> PathBuf {
    dir.join(format!("t{i:04}_{comp}"))
}

pub fn write_trajectory(
    dir: &Path,
    states: &[State],
    components: &[String],
    dt: f64,
) -> Result<()> {
    if states.is_empty() {
        return Err(Error::invalid("cannot write an empty trajectory"));
    }
    fs::create_dir_all(dir)?;
    for (i, s) in states.iter().enumerate() {
        if s.n_components() != components.len() {
            return Err(Error::shape("state and component names disagree"));
        }
        for (f, name) in s.components.iter().zip(components) {
            write_field(&snapshot_stem(dir, i, name), f)?;
        }
    }
    let manifest = TrajectoryManifest {
        dt,
        n: states.len() - 1,
        components: components.to_vec(),
        times: states.iter().map(|s| s.time).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_trajectory(dir: &Path) -> Result<(TrajectoryManifest, Vec<State>)> {
    let m: TrajectoryManifest = read_json(&dir.join("manifest.json"))?;
    if m.times.len() != m.n + 1 {
        return Err(Error::shape(
            "trajectory manifest lists the wrong number of times",
        ));
    }
    let states = (0..=m.n)
        .map(|i| {
            let comps = m
                .components
                .iter()
                .map(|c| read_field(&snapshot_stem(dir, i, c)))
                .collect::<Result<Vec<_>>>()?;
            State::new(comps, m.times[i])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, states))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: PdeSpec,
    pub seed: u64,
    pub grid: Grid,
    pub dt: f64,
    pub components: Vec<String>,
    pub snapshots: usize,
    pub samples: Vec<String>,
}

pub fn write_dataset(dir: &Path, set: &TrajectorySet, spec: &PdeSpec, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (j, s) in set.samples.iter().enumerate() {
        let name = format!("sample_{j:04}");
        write_trajectory(&dir.join(&name), s, &set.components, set.dt)?;
        names.push(name);
    }
    let manifest = DatasetManifest {
        spec: *spec,
        seed,
        grid: set.grid,
        dt: set.dt,
        components: set.components.clone(),
        snapshots: set.n_snapshots(),
        samples: names,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, TrajectorySet)> {
    let m: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    let samples = m
        .samples
        .iter()
        .map(|name| read_trajectory(&dir.join(name)).map(|(_, s)| s))
        .collect::<Result<Vec<_>>>()?;
    let set = TrajectorySet {
        grid: m.grid,
        dt: m.dt,
        components: m.components.clone(),
        samples,
    };
    Ok((m, set))
}

pub fn save_model(path: &Path, model: &PdeNetModel) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(path, &model.to_record())
}

pub fn load_model(path: &Path) -> Result<PdeNetModel> {
    let rec: ModelRecord = read_json(path)?;
    PdeNetModel::from_record(&rec)
}

pub fn write_params(stem: &Path, p: &ParamVector) -> Result<()> {
    write_json(&with_ext(stem, ".layout.json"), &p.layout)?;
    fs::write(with_ext(stem, ".bin"), p.to_bytes())?;
    Ok(())
}

pub fn read_params(stem: &Path) -> Result<ParamVector> {
    let layout: ParamLayout = read_json(&with_ext(stem, ".layout.json"))?;
    ParamVector::from_bytes(layout, &fs::read(with_ext(stem, ".bin"))?)
}
