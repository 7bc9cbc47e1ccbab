//! BLASTNet volume files, `info.json` metadata and Momentum128 manifests.
//!
//! Volumes are headerless little-endian IEEE-754 binary32 arrays of length
//! `nx * ny * nz`, flattened z-fastest (see [`crate::field`]).

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::field::{FlowState, GridSpec, ScalarField3D};

pub const RHO: &str = "RHO_kgm-3";
pub const UX: &str = "UX_ms-1";
pub const UY: &str = "UY_ms-1";
pub const UZ: &str = "UZ_ms-1";

/// Channel names of a [`FlowState`], in `[rho, u1, u2, u3]` order.
pub const FLOW_VARIABLES: [&str; 4] = [RHO, UX, UY, UZ];

const CHUNK_VOXELS: usize = 1 << 18;

/// Unit tag embedded in a BLASTNet variable name (`"RHO_kgm-3"` -> `"kgm-3"`).
pub fn unit_of(variable: &str) -> &str {
    variable.split_once('_').map(|(_, u)| u).unwrap_or("")
}

/// Decodes a volume file, streaming it in fixed-size chunks.
pub fn read_volume(path: impl AsRef<Path>, grid: GridSpec) -> Result<ScalarField3D> {
    read_volume_with_unit(path, grid, "")
}

pub fn read_volume_with_unit(
    path: impl AsRef<Path>,
    grid: GridSpec,
    unit: &str,
) -> Result<ScalarField3D> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let actual = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let expected = 4 * grid.len() as u64;
    if actual != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    let mut reader = BufReader::new(file);
    let mut values = Vec::with_capacity(grid.len());
    let mut buf = vec![0u8; 4 * CHUNK_VOXELS];
    while values.len() < grid.len() {
        let n = (grid.len() - values.len()).min(CHUNK_VOXELS);
        let bytes = &mut buf[..4 * n];
        reader.read_exact(bytes).map_err(|e| Error::io(path, e))?;
        decode_le_f32(bytes, &mut values);
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index,
            context: path.display().to_string(),
        });
    }
    Ok(ScalarField3D::from_parts_unchecked(grid, values, unit.to_string()))
}

/// Appends the little-endian binary32 words in `bytes` to `out`, widened to f64.
pub fn decode_le_f32(bytes: &[u8], out: &mut Vec<f64>) {
    out.extend(
        bytes
            .chunks_exact(4)
            .map(|w| f32::from_le_bytes([w[0], w[1], w[2], w[3]]) as f64),
    );
}

/// Narrows to binary32 (round-to-nearest-even) and encodes little-endian.
pub fn encode_le_f32(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(4 * values.len());
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

pub fn write_volume(field: &ScalarField3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(index) = field
        .values()
        .iter()
        .position(|&v| !(v as f32).is_finite())
    {
        return Err(Error::NonFinite {
            index,
            context: format!("refusing to write {}", path.display()),
        });
    }
    write_atomic(path, &encode_le_f32(field.values()))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::other("target is a directory"),
        ));
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// `metadata['global']` of an `info.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMeta {
    pub dataset_id: String,
    #[serde(rename = "Nxyz")]
    pub nxyz: [usize; 3],
    pub snapshots: usize,
    pub variables: Vec<String>,
    #[serde(default)]
    pub grid: BTreeMap<String, String>,
    /// Numerics, boundary/initial conditions, doi, contributors and any unknown keys.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

/// One entry of `metadata['local']`: a snapshot and its per-variable files.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMeta {
    pub id: usize,
    /// Simulation time in seconds.
    pub time: Option<f64>,
    /// Variable name -> file path relative to the dataset root.
    pub files: BTreeMap<String, String>,
}

const FILENAME_SUFFIX: &str = " filename";
const TIME_KEY: &str = "time [s]";

impl LocalMeta {
    fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Metadata("local entry is not an object".into()))?;
        let id = obj
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Metadata("local entry without integer id".into()))?
            as usize;
        let mut time = None;
        let mut files = BTreeMap::new();
        for (key, v) in obj {
            let key = key.trim();
            if key == TIME_KEY {
                time = Some(
                    v.as_f64()
                        .ok_or_else(|| Error::Metadata(format!("snapshot {id}: bad time")))?,
                );
            } else if let Some(var) = key.strip_suffix(FILENAME_SUFFIX) {
                let path = v.as_str().ok_or_else(|| {
                    Error::Metadata(format!("snapshot {id}: file for {var} is not a string"))
                })?;
                files.insert(var.trim().to_string(), path.to_string());
            }
        }
        Ok(Self { id, time, files })
    }

    fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::from(self.id));
        if let Some(t) = self.time {
            obj.insert(TIME_KEY.into(), Value::from(t));
        }
        for (var, path) in &self.files {
            obj.insert(format!("{var}{FILENAME_SUFFIX}"), Value::from(path.clone()));
        }
        Value::Object(obj)
    }
}

/// A parsed `info.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoFile {
    pub global: GlobalMeta,
    pub local: Vec<LocalMeta>,
}

impl InfoFile {
    pub fn parse(text: &str) -> Result<Self> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| Error::Metadata(e.to_string()))?;
        let global = root
            .get("global")
            .ok_or_else(|| Error::Metadata("missing \"global\" section".into()))?;
        let global: GlobalMeta =
            serde_json::from_value(global.clone()).map_err(|e| Error::Metadata(e.to_string()))?;
        let local = match root.get("local") {
            None => Vec::new(),
            Some(Value::Array(entries)) => entries
                .iter()
                .map(LocalMeta::from_json)
                .collect::<Result<Vec<_>>>()?,
            Some(_) => return Err(Error::Metadata("\"local\" is not a list".into())),
        };
        let info = Self { global, local };
        info.validate()?;
        Ok(info)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json_string(&self) -> String {
        let mut root = Map::new();
        root.insert(
            "global".into(),
            serde_json::to_value(&self.global).expect("global metadata serializes"),
        );
        root.insert(
            "local".into(),
            Value::Array(self.local.iter().map(LocalMeta::to_json).collect()),
        );
        serde_json::to_string_pretty(&Value::Object(root)).expect("metadata serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.global;
        if g.variables.is_empty() {
            return Err(Error::Metadata("no variables listed".into()));
        }
        if g.nxyz.contains(&0) {
            return Err(Error::Metadata(format!("invalid Nxyz {:?}", g.nxyz)));
        }
        let known: HashSet<&str> = g.variables.iter().map(String::as_str).collect();
        let mut ids: Vec<usize> = self.local.iter().map(|l| l.id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| i != id) {
            return Err(Error::Metadata(
                "snapshot ids must be unique and contiguous from 0".into(),
            ));
        }
        for l in &self.local {
            if let Some(var) = l.files.keys().find(|v| !known.contains(v.as_str())) {
                return Err(Error::Metadata(format!(
                    "snapshot {} references unknown variable {var}",
                    l.id
                )));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self, id: usize) -> Option<&LocalMeta> {
        self.local.iter().find(|l| l.id == id)
    }
}

/// Reads the density and velocity channels of one snapshot.
///
/// File paths in `local` are resolved against `root`; `dx` is the uniform
/// voxel spacing of the volume.
pub fn load_flow_state(
    meta: &GlobalMeta,
    local: &LocalMeta,
    root: impl AsRef<Path>,
    dx: f64,
) -> Result<FlowState> {
    let [nx, ny, nz] = meta.nxyz;
    let grid = GridSpec::new(nx, ny, nz, dx)?;
    let root = root.as_ref();
    let mut fields = Vec::with_capacity(4);
    for var in FLOW_VARIABLES {
        if !meta.variables.iter().any(|v| v == var) {
            return Err(Error::MissingChannel(format!("{var} not in variables")));
        }
        let rel = local.files.get(var).ok_or_else(|| {
            Error::MissingChannel(format!("snapshot {} has no {var} file", local.id))
        })?;
        fields.push(read_volume_with_unit(root.join(rel), grid, unit_of(var))?);
    }
    let mut it = fields.into_iter();
    let rho = it.next().unwrap();
    FlowState::new(rho, [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// `"<Var>_id<hash>.dat"`, the Momentum128 per-channel file name.
pub fn momentum_filename(var: &str, hash: &str) -> Result<String> {
    if var.is_empty() || hash.is_empty() {
        return Err(Error::InvalidArgument(
            "variable name and hash id must be non-empty".into(),
        ));
    }
    Ok(format!("{var}_id{hash}.dat"))
}

/// Reads the four channels of sample `hash` from `dir`.
pub fn read_momentum_state(dir: impl AsRef<Path>, hash: &str, grid: GridSpec) -> Result<FlowState> {
    let dir = dir.as_ref();
    let mut fields = Vec::with_capacity(4);
    for var in FLOW_VARIABLES {
        let path = dir.join(momentum_filename(var, hash)?);
        if !path.exists() {
            return Err(Error::MissingChannel(path.display().to_string()));
        }
        fields.push(read_volume_with_unit(path, grid, unit_of(var))?);
    }
    let mut it = fields.into_iter();
    let rho = it.next().unwrap();
    FlowState::new(rho, [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Writes the four channels of `state` into `dir`; returns the written paths.
pub fn write_momentum_state(
    state: &FlowState,
    dir: impl AsRef<Path>,
    hash: &str,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    FLOW_VARIABLES
        .iter()
        .zip(state.channels())
        .map(|(var, field)| {
            let path = dir.join(momentum_filename(var, hash)?);
            write_volume(field, &path)?;
            Ok(path)
        })
        .collect()
}

/// Dataset split label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
    ParamVariation,
    ForcedHit,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::ParamVariation => "param-variation",
            Split::ForcedHit => "forced-hit",
        })
    }
}

/// One row of a Momentum128 manifest. Cluster and split are empty until assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub hash_id: String,
    pub kaggle_id: String,
    pub description: String,
    pub cluster: Option<usize>,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub split: Option<Split>,
}

impl ManifestRecord {
    pub fn grid(&self, dx: f64) -> Result<GridSpec> {
        GridSpec::new(self.nx, self.ny, self.nz, dx)
    }
}

pub const MANIFEST_HEADER: [&str; 8] = [
    "hash_id",
    "kaggle_id",
    "description",
    "cluster",
    "nx",
    "ny",
    "nz",
    "split",
];

pub fn parse_manifest_str(text: &str) -> Result<Vec<ManifestRecord>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Manifest(e.to_string()))?
        .clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(Error::Manifest(format!(
            "unexpected header {:?}, want {}",
            header.iter().collect::<Vec<_>>(),
            MANIFEST_HEADER.join(",")
        )));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (row, rec) in reader.deserialize::<ManifestRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Manifest(format!("row {}: {e}", row + 1)))?;
        if !seen.insert(rec.hash_id.clone()) {
            return Err(Error::DuplicateHash(rec.hash_id));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text)
}

pub fn manifest_to_string(records: &[ManifestRecord]) -> Result<String> {
    let mut seen = HashSet::new();
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    writer
        .write_record(MANIFEST_HEADER)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for rec in records {
        if !seen.insert(rec.hash_id.as_str()) {
            return Err(Error::DuplicateHash(rec.hash_id.clone()));
        }
        writer
            .serialize(rec)
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Manifest(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_manifest(records: &[ManifestRecord], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), manifest_to_string(records)?.as_bytes())
}
