//! Trajectory export: per-sample CSV and a compact little-endian binary container.
//!
//! Binary layout: magic `PASTRAJ\0`, `u32` version, `u64` dimension, `u64` steps,
//! `u64` sample count, then for each sample `N+1` rows of
//! `time, state[D], direction[D]` as `f64`. Row `i` holds `t_i`, `x_{t_i}` and the
//! direction used for the step leaving `t_i`; row 0 has no step and stores zeros.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{PasError, Result};
use crate::solvers::TrajectoryRecord;
use crate::Vector;

pub const MAGIC: &[u8; 8] = b"PASTRAJ\0";
pub const BINARY_VERSION: u32 = 1;

/// `step,time,x0..x{D-1},d0..d{D-1}`, rows in sampling order (`i = N` first).
pub fn trajectory_csv(record: &TrajectoryRecord) -> String {
    let dim = record.dim();
    let mut out = String::from("step,time");
    for j in 0..dim {
        out.push_str(&format!(",x{j}"));
    }
    for j in 0..dim {
        out.push_str(&format!(",d{j}"));
    }
    out.push('\n');
    for i in (0..=record.n_steps()).rev() {
        out.push_str(&format!("{i},{}", record.times()[i]));
        for v in record.state(i).iter() {
            out.push_str(&format!(",{v}"));
        }
        if i > 0 {
            for v in record.direction(i).iter() {
                out.push_str(&format!(",{v}"));
            }
        } else {
            out.push_str(&",".repeat(dim));
        }
        out.push('\n');
    }
    out
}

pub fn write_binary<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> Result<()> {
    let (dim, n) = match records.first() {
        Some(r) => (r.dim(), r.n_steps()),
        None => (0, 0),
    };
    if records.iter().any(|r| r.dim() != dim || r.n_steps() != n) {
        return Err(PasError::invalid("all trajectories in a container must share D and N"));
    }
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(BINARY_VERSION)?;
    w.write_u64::<LittleEndian>(dim as u64)?;
    w.write_u64::<LittleEndian>(n as u64)?;
    w.write_u64::<LittleEndian>(records.len() as u64)?;
    let zeros = Vector::zeros(dim);
    for r in records {
        for i in 0..=n {
            w.write_f64::<LittleEndian>(r.times()[i])?;
            for v in r.state(i).iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
            let d = if i > 0 { r.direction(i) } else { &zeros };
            for v in d.iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<TrajectoryRecord>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PasError::invalid("not a trajectory container (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != BINARY_VERSION {
        return Err(PasError::invalid(format!("unsupported trajectory container version {version}")));
    }
    let dim = r.read_u64::<LittleEndian>()? as usize;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let read_vec = |r: &mut R| -> Result<Vector> {
        let mut buf = vec![0.0; dim];
        r.read_f64_into::<LittleEndian>(&mut buf)?;
        Ok(Vector::from_vec(buf))
    };
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let mut times = Vec::with_capacity(n + 1);
        let mut states = Vec::with_capacity(n + 1);
        let mut directions = Vec::with_capacity(n);
        for i in 0..=n {
            times.push(r.read_f64::<LittleEndian>()?);
            states.push(read_vec(&mut r)?);
            let d = read_vec(&mut r)?;
            if i > 0 {
                directions.push(d);
            }
        }
        out.push(TrajectoryRecord::from_parts(times, states, directions)?);
    }
    Ok(out)
}
