//! Binary checkpoints with a JSON sidecar.
//!
//! Layout of the `.bin` file, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SPLTSEL\0"
//! version  u32
//! count    u32      number of arrays
//! per array:
//!   name_len u32, name (UTF-8)
//!   dtype    u8     1 = f64, 2 = u8, 3 = u32
//!   ndim     u8,    dims: ndim x u64
//!   data     product(dims) elements, row-major
//! ```
//!
//! The sidecar (same path, `.json` extension) carries the run configuration,
//! selection state, optimizer scalars and RNG position.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::trainer::{Milestones, Trainer};
use crate::densify::GradStats;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian2D;
use crate::optimizer::{LrPhase, Moments, OptimConfig, OptimState, PARAMS_PER_PRIMITIVE};
use crate::report::TrainReport;
use crate::scene::Scene;
use crate::selection::SelectionState;

pub const MAGIC: &[u8; 8] = b"SPLTSEL\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl ArrayData {
    fn dtype(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 1,
            ArrayData::U8(_) => 2,
            ArrayData::U32(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: ArrayData,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_arrays(mut w: impl Write, arrays: &[Array]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in arrays {
        let expected: u64 = a.dims.iter().product();
        if expected != a.data.len() as u64 {
            return Err(bad(format!("array `{}` dims do not match its data", a.name)));
        }
        w.write_all(&(a.name.len() as u32).to_le_bytes())?;
        w.write_all(a.name.as_bytes())?;
        w.write_all(&[a.data.dtype(), a.dims.len() as u8])?;
        for d in &a.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        match &a.data {
            ArrayData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            ArrayData::U8(v) => w.write_all(v)?,
            ArrayData::U32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        }
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

pub fn read_arrays(mut r: impl Read) -> Result<Vec<Array>> {
    if &read_exact::<8>(&mut r)? != MAGIC {
        return Err(bad("bad magic header"));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| bad(e.to_string()))?;
        let name = String::from_utf8(name).map_err(|_| bad("array name is not UTF-8"))?;
        let [dtype, ndim] = read_exact::<2>(&mut r)?;
        let dims = (0..ndim)
            .map(|_| read_exact::<8>(&mut r).map(u64::from_le_bytes))
            .collect::<Result<Vec<u64>>>()?;
        let n: u64 = dims.iter().product();
        let n = usize::try_from(n).map_err(|_| bad("array too large"))?;
        let data = match dtype {
            1 => ArrayData::F64(
                (0..n)
                    .map(|_| read_exact::<8>(&mut r).map(f64::from_le_bytes))
                    .collect::<Result<_>>()?,
            ),
            2 => {
                let mut v = vec![0u8; n];
                r.read_exact(&mut v).map_err(|e| bad(e.to_string()))?;
                ArrayData::U8(v)
            }
            3 => ArrayData::U32(
                (0..n)
                    .map(|_| read_exact::<4>(&mut r).map(u32::from_le_bytes))
                    .collect::<Result<_>>()?,
            ),
            other => return Err(bad(format!("unknown dtype {other} for `{name}`"))),
        };
        out.push(Array { name, dims, data });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub iteration: u64,
    pub primitives: usize,
    pub arrays: Vec<String>,
    pub config: RunConfig,
    pub selection: SelectionState,
    pub milestones: Milestones,
    pub initial_count: usize,
    pub optim_step: u64,
    pub optim_config: OptimConfig,
    pub optim_phase: LrPhase,
    pub opacity_lr_scale: f64,
    pub opacity_multiplier: f64,
    pub rng_seed: u64,
    /// ChaCha word position, as a decimal string (it is a u128).
    pub rng_word_pos: String,
}

/// Full training state, enough to resume bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub scene: Scene,
    pub stats: GradStats,
    pub sidecar: Sidecar,
    pub log: Vec<TrainReport>,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

fn f64s<const K: usize>(rows: impl Iterator<Item = [f64; K]>) -> Vec<f64> {
    rows.flat_map(|r| r.into_iter()).collect()
}

impl Checkpoint {
    pub fn capture(t: &Trainer) -> Self {
        let o = &t.scene.optim;
        let sidecar = Sidecar {
            format: "splatsel-checkpoint".into(),
            version: VERSION,
            iteration: t.iteration,
            primitives: t.scene.len(),
            arrays: Vec::new(),
            config: t.config.clone(),
            selection: t.selection.clone(),
            milestones: t.milestones.clone(),
            initial_count: t.initial_count,
            optim_step: o.step,
            optim_config: o.config.clone(),
            optim_phase: o.phase,
            opacity_lr_scale: o.opacity_lr_scale,
            opacity_multiplier: o.opacity_multiplier,
            rng_seed: t.config.seed,
            rng_word_pos: t.rng.get_word_pos().to_string(),
        };
        Self {
            scene: t.scene.clone(),
            stats: t.stats.clone(),
            sidecar,
            log: t.log.clone(),
        }
    }

    fn arrays(&self) -> Vec<Array> {
        let gs = &self.scene.gaussians;
        let n = gs.len() as u64;
        let m = &self.scene.optim.moments;
        let p = PARAMS_PER_PRIMITIVE as u64;
        let f = |name: &str, dims: Vec<u64>, v: Vec<f64>| Array {
            name: name.into(),
            dims,
            data: ArrayData::F64(v),
        };
        vec![
            f("mean", vec![n, 2], f64s(gs.iter().map(|g| g.mean))),
            f("log_scale", vec![n, 2], f64s(gs.iter().map(|g| g.log_scale))),
            f("rotation", vec![n], gs.iter().map(|g| g.rotation).collect()),
            f("v", vec![n], gs.iter().map(|g| g.v).collect()),
            f("color", vec![n, 3], f64s(gs.iter().map(|g| g.color))),
            f("layer", vec![n], gs.iter().map(|g| g.layer).collect()),
            Array {
                name: "alive".into(),
                dims: vec![n],
                data: ArrayData::U8(self.scene.alive.iter().map(|&a| a as u8).collect()),
            },
            f("moment1", vec![n, p], f64s(m.iter().map(|m| m.first))),
            f("moment2", vec![n, p], f64s(m.iter().map(|m| m.second))),
            f("grad_accum", vec![self.stats.accum.len() as u64], self.stats.accum.clone()),
            Array {
                name: "grad_count".into(),
                dims: vec![self.stats.count.len() as u64],
                data: ArrayData::U32(self.stats.count.clone()),
            },
        ]
    }

    /// Writes the binary to `path` and the sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let arrays = self.arrays();
        let mut sidecar = self.sidecar.clone();
        sidecar.arrays = arrays.iter().map(|a| a.name.clone()).collect();
        let mut buf = Vec::new();
        write_arrays(&mut buf, &arrays)?;
        std::fs::write(path, buf)?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Reads a checkpoint, picking up `log.csv` from the same directory when
    /// present.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let arrays = read_arrays(bytes.as_slice())?;
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let map: BTreeMap<&str, &Array> = arrays.iter().map(|a| (a.name.as_str(), a)).collect();
        let n = sidecar.primitives;
        let get_f64 = |name: &str, width: usize| -> Result<&Vec<f64>> {
            match map.get(name).map(|a| &a.data) {
                Some(ArrayData::F64(v)) if v.len() == n * width => Ok(v),
                Some(_) => Err(bad(format!("array `{name}` has the wrong type or length"))),
                None => Err(bad(format!("missing array `{name}`"))),
            }
        };
        let mean = get_f64("mean", 2)?;
        let log_scale = get_f64("log_scale", 2)?;
        let rotation = get_f64("rotation", 1)?;
        let v = get_f64("v", 1)?;
        let color = get_f64("color", 3)?;
        let layer = get_f64("layer", 1)?;
        let m1 = get_f64("moment1", PARAMS_PER_PRIMITIVE)?;
        let m2 = get_f64("moment2", PARAMS_PER_PRIMITIVE)?;
        let alive = match map.get("alive").map(|a| &a.data) {
            Some(ArrayData::U8(a)) if a.len() == n => a.iter().map(|&x| x != 0).collect(),
            _ => return Err(bad("missing or malformed `alive`")),
        };
        let accum = match map.get("grad_accum").map(|a| &a.data) {
            Some(ArrayData::F64(a)) => a.clone(),
            _ => return Err(bad("missing or malformed `grad_accum`")),
        };
        let count = match map.get("grad_count").map(|a| &a.data) {
            Some(ArrayData::U32(a)) if a.len() == accum.len() => a.clone(),
            _ => return Err(bad("missing or malformed `grad_count`")),
        };
        let gaussians = (0..n)
            .map(|i| Gaussian2D {
                mean: [mean[2 * i], mean[2 * i + 1]],
                log_scale: [log_scale[2 * i], log_scale[2 * i + 1]],
                rotation: rotation[i],
                v: v[i],
                color: [color[3 * i], color[3 * i + 1], color[3 * i + 2]],
                layer: layer[i],
            })
            .collect();
        let p = PARAMS_PER_PRIMITIVE;
        let moments = (0..n)
            .map(|i| {
                let mut m = Moments::default();
                m.first.copy_from_slice(&m1[i * p..(i + 1) * p]);
                m.second.copy_from_slice(&m2[i * p..(i + 1) * p]);
                m
            })
            .collect();
        let optim = OptimState {
            moments,
            step: sidecar.optim_step,
            config: sidecar.optim_config.clone(),
            phase: sidecar.optim_phase,
            opacity_lr_scale: sidecar.opacity_lr_scale,
            opacity_multiplier: sidecar.opacity_multiplier,
        };
        let scene = Scene {
            gaussians,
            alive,
            optim,
            iteration: sidecar.iteration,
        };
        let log_path = path.with_file_name("log.csv");
        let log = if log_path.is_file() {
            crate::report::read_log_csv(&log_path)?
        } else {
            Vec::new()
        };
        Ok(Self {
            scene,
            stats: GradStats { accum, count },
            sidecar,
            log,
        })
    }

    /// Rebuilds a trainer that continues exactly where this checkpoint left off.
    pub fn into_trainer(self, images: &[crate::image::Image]) -> Result<Trainer> {
        let sc = self.sidecar;
        let mut t = Trainer::new(sc.config, images)?;
        t.scene = self.scene;
        t.stats = self.stats;
        t.selection = sc.selection;
        t.milestones = sc.milestones;
        t.initial_count = sc.initial_count;
        t.iteration = sc.iteration;
        t.log = self.log;
        let pos: u128 = sc.rng_word_pos.parse().map_err(|_| bad("bad rng_word_pos"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(sc.rng_seed);
        rng.set_word_pos(pos);
        t.rng = rng;
        Ok(t)
    }
}
