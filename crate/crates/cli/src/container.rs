//! Dataset directories: `meta.json` plus raw little-endian `f64` payloads.
//!
//! `inputs.bin` and `outputs.bin` hold `n_samples x n_points x channels`
//! values, sample-major and row-major. `ic.bin` holds initial-condition
//! tokens when present and `coords.bin` the sample locations of an
//! irregular grid.

use std::fs;
use std::path::Path;

use attnop_core::{Dataset, Domain, Grid, GridSpec, Sample, SampledFunction};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{parse_json, DataSource};
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const META: &str = "meta.json";
pub const INPUTS: &str = "inputs.bin";
pub const OUTPUTS: &str = "outputs.bin";
pub const IC: &str = "ic.bin";
pub const COORDS: &str = "coords.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridMeta {
    Uniform { shape: Vec<usize>, periodic: bool },
    /// Coordinates live in `coords.bin`.
    Irregular { n_points: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub problem: String,
    pub d: usize,
    pub domain: Vec<(f64, f64)>,
    pub grid: GridMeta,
    pub n_points: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    pub ic_channels: usize,
    pub n_samples: usize,
    pub dtype: String,
    pub endianness: String,
    pub generator: Option<DataSource>,
    pub seed: Option<u64>,
}

fn to_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(f64::to_le_bytes).collect()
}

fn read_f64s(path: &Path, expected: usize) -> CliResult<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(CliError::Io(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 8,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes `data` to `dir`, creating it if needed.
pub fn write_container(dir: &Path, data: &Dataset, generator: Option<&DataSource>) -> CliResult<DatasetMeta> {
    let first = data.get(0).ok_or_else(|| CliError::Config("refusing to write an empty dataset".into()))?;
    let grid = first.input.grid();
    if data.samples().iter().any(|s| s.input.grid() != grid) {
        return Err(CliError::Config("containers need one grid for every sample".into()));
    }
    let ic_channels = first.ic.as_ref().map_or(0, Vec::len);
    let (grid_meta, coords) = match grid.spec() {
        GridSpec::Uniform { shape, periodic } => (GridMeta::Uniform { shape: shape.clone(), periodic: *periodic }, None),
        GridSpec::Irregular1D { coords } => (GridMeta::Irregular { n_points: coords.len() }, Some(coords.clone())),
    };
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        problem: generator.map_or("external", DataSource::problem).to_string(),
        d: grid.dim(),
        domain: grid.domain().bounds().to_vec(),
        grid: grid_meta,
        n_points: grid.len(),
        channels_in: first.input.channels(),
        channels_out: first.target.channels(),
        ic_channels,
        n_samples: data.len(),
        dtype: "f64".into(),
        endianness: "little".into(),
        generator: generator.cloned(),
        seed: generator.and_then(DataSource::seed),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let samples = data.samples();
    write(&dir.join(INPUTS), &to_bytes(samples.iter().flat_map(|s| s.input.values().iter().copied())))?;
    write(&dir.join(OUTPUTS), &to_bytes(samples.iter().flat_map(|s| s.target.values().iter().copied())))?;
    if ic_channels > 0 {
        if samples.iter().any(|s| s.ic.as_ref().map_or(0, Vec::len) != ic_channels) {
            return Err(CliError::Config("initial-condition tokens differ in length".into()));
        }
        write(&dir.join(IC), &to_bytes(samples.iter().flat_map(|s| s.ic.clone().unwrap_or_default())))?;
    }
    if let Some(c) = coords {
        write(&dir.join(COORDS), &to_bytes(c.into_iter()))?;
    }
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write(&dir.join(META), text.as_bytes())?;
    Ok(meta)
}

pub fn read_meta(dir: &Path) -> CliResult<DatasetMeta> {
    let path = dir.join(META);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let meta: DatasetMeta = parse_json(&text)?;
    if meta.schema_version != SCHEMA_VERSION || meta.dtype != "f64" || meta.endianness != "little" {
        return Err(CliError::Config(format!(
            "unsupported container: schema {}, {} {}-endian",
            meta.schema_version, meta.dtype, meta.endianness
        )));
    }
    Ok(meta)
}

/// Reads a container, validating every payload size before use.
pub fn read_container(dir: &Path) -> CliResult<(Dataset, DatasetMeta)> {
    let meta = read_meta(dir)?;
    let domain = Domain::new(meta.domain.clone())?;
    let spec = match &meta.grid {
        GridMeta::Uniform { shape, periodic } => GridSpec::Uniform { shape: shape.clone(), periodic: *periodic },
        GridMeta::Irregular { n_points } => GridSpec::irregular(read_f64s(&dir.join(COORDS), *n_points)?),
    };
    let grid = Grid::new(domain, spec)?;
    if grid.len() != meta.n_points || grid.dim() != meta.d {
        return Err(CliError::Config("grid description disagrees with n_points or d".into()));
    }
    let (n, s) = (meta.n_points, meta.n_samples);
    let inputs = read_f64s(&dir.join(INPUTS), s * n * meta.channels_in)?;
    let outputs = read_f64s(&dir.join(OUTPUTS), s * n * meta.channels_out)?;
    let ic = if meta.ic_channels > 0 { Some(read_f64s(&dir.join(IC), s * meta.ic_channels)?) } else { None };
    let block = |v: &[f64], c: usize, i: usize| {
        Array2::from_shape_vec((n, c), v[i * n * c..(i + 1) * n * c].to_vec()).expect("sized above")
    };
    let samples = (0..s)
        .map(|i| {
            let input = SampledFunction::new(grid.clone(), block(&inputs, meta.channels_in, i))?;
            let target = SampledFunction::new(grid.clone(), block(&outputs, meta.channels_out, i))?;
            let token = ic.as_ref().map(|t| t[i * meta.ic_channels..(i + 1) * meta.ic_channels].to_vec());
            Ok(Sample::new(input, target, token)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((Dataset::new(samples)?, meta))
}
