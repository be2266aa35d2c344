//! Binary value-function dumps and run-length encoded reachable masks, each
//! with a JSON sidecar describing the grid.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{Grid3, Motion, ReachableSet, TargetSet, ValueFunction};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunctionMeta {
    pub format: String,
    pub layout: String,
    pub grid: Grid3,
    pub turning_radius: f64,
    pub speed: f64,
    pub motion: Motion,
    pub target: TargetSet,
}

/// Writes `<stem>.f64` (little-endian, x1 fastest, then x2, then θ) and
/// `<stem>.json`. Returns both paths.
pub fn write_value_function(vf: &ValueFunction, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    let bin = dir.join(format!("{stem}.f64"));
    let meta_path = dir.join(format!("{stem}.json"));
    let mut bytes = Vec::with_capacity(vf.values.len() * 8);
    for v in &vf.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes)?;
    let meta = ValueFunctionMeta {
        format: "f64-le".into(),
        layout: "x1-fastest,x2,theta".into(),
        grid: vf.grid,
        turning_radius: vf.turning_radius,
        speed: vf.speed,
        motion: vf.motion,
        target: vf.target.clone(),
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok([bin, meta_path])
}

pub fn read_value_function(dir: &Path, stem: &str) -> Result<ValueFunction> {
    let meta: ValueFunctionMeta =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let bytes = fs::read(dir.join(format!("{stem}.f64")))?;
    if bytes.len() != meta.grid.len() * 8 {
        return Err(Error::GridMismatch(format!(
            "value dump has {} bytes, grid needs {}",
            bytes.len(),
            meta.grid.len() * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(ValueFunction {
        grid: meta.grid,
        values,
        target: meta.target,
        speed: meta.speed,
        turning_radius: meta.turning_radius,
        motion: meta.motion,
        sweeps: 0,
    })
}

/// Encodes a boolean slice as `(first value, run lengths)`.
pub fn encode_mask_rle(mask: &[bool]) -> (bool, Vec<usize>) {
    let first = mask.first().copied().unwrap_or(false);
    let mut runs = Vec::new();
    let mut cur = first;
    let mut len = 0;
    for &m in mask {
        if m == cur {
            len += 1;
        } else {
            runs.push(len);
            cur = m;
            len = 1;
        }
    }
    if len > 0 {
        runs.push(len);
    }
    (first, runs)
}

pub fn decode_mask_rle(first: bool, runs: &[usize]) -> Vec<bool> {
    let mut out = Vec::with_capacity(runs.iter().sum());
    let mut cur = first;
    for &r in runs {
        out.extend(std::iter::repeat_n(cur, r));
        cur = !cur;
    }
    out
}

#[derive(Serialize)]
struct MaskMeta<'a> {
    format: &'a str,
    layout: &'a str,
    station: usize,
    filter: super::AngleFilter,
    n1: usize,
    n2: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    times: &'a [f64],
}

/// Writes `<stem>.rle` (one line per slice: `slice time first_bit runs...`)
/// and `<stem>.json`.
pub fn write_reachable_set(rs: &ReachableSet, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    let rle = dir.join(format!("{stem}.rle"));
    let meta_path = dir.join(format!("{stem}.json"));
    let mut f = std::io::BufWriter::new(fs::File::create(&rle)?);
    for (s, &t) in rs.grid.times.iter().enumerate() {
        let (first, runs) = encode_mask_rle(rs.slice(s));
        write!(f, "{s} {} {}", fmt_f64(t), u8::from(first))?;
        for r in runs {
            write!(f, " {r}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    let meta = MaskMeta {
        format: "rle-text".into(),
        layout: "x1-fastest,x2",
        station: rs.station,
        filter: rs.filter,
        n1: rs.grid.n1,
        n2: rs.grid.n2,
        lo: rs.grid.lo,
        hi: rs.grid.hi,
        times: &rs.grid.times,
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok([rle, meta_path])
}

/// Reads back the slices of a `.rle` mask file.
pub fn read_mask_rle(path: &Path) -> Result<Vec<Vec<bool>>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        let mut it = line.split_whitespace();
        let bad = || Error::Config(format!("malformed mask line: {line}"));
        it.next().ok_or_else(bad)?;
        it.next().ok_or_else(bad)?;
        let first = it.next().ok_or_else(bad)? == "1";
        let runs: std::result::Result<Vec<usize>, _> = it.map(str::parse).collect();
        out.push(decode_mask_rle(first, &runs.map_err(|_| bad())?));
    }
    Ok(out)
}
