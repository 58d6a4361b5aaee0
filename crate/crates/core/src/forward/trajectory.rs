use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NLWTRAJ1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrajectoryMeta {
    pub coefficients_hash: String,
    pub scheme: String,
    pub label: String,
}

/// Solution samples on the full grid: `u[:, n]` and `v[:, n]` at `times[n]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.u.nrows()
    }

    /// Rows `idx` of `u` (e.g. the interior nodes).
    pub fn u_rows(&self, idx: &[usize]) -> DMatrix<f64> {
        self.u.select_rows(idx)
    }

    pub fn v_rows(&self, idx: &[usize]) -> DMatrix<f64> {
        self.v.select_rows(idx)
    }

    pub fn max_abs_u(&self) -> f64 {
        self.u.amax()
    }

    /// Long-format CSV with columns `time,node,u,v`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time", "node", "u", "v"])?;
        for (n, t) in self.times.iter().enumerate() {
            for k in 0..self.n_nodes() {
                w.write_record([
                    format!("{t:.17e}"),
                    k.to_string(),
                    format!("{:.17e}", self.u[(k, n)]),
                    format!("{:.17e}", self.v[(k, n)]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Compact little-endian dump: magic, node and instant counts, times, `u`, `v`
    /// (column-major).
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u64::<LittleEndian>(self.n_nodes() as u64)?;
        w.write_u64::<LittleEndian>(self.n_times() as u64)?;
        for &t in &self.times {
            w.write_f64::<LittleEndian>(t)?;
        }
        for &x in self.u.iter().chain(self.v.iter()) {
            w.write_f64::<LittleEndian>(x)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Config(format!("{} is not a trajectory dump", path.display())));
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        let nt = r.read_u64::<LittleEndian>()? as usize;
        let mut times = vec![0.0; nt];
        r.read_f64_into::<LittleEndian>(&mut times)?;
        let mut u = vec![0.0; n * nt];
        r.read_f64_into::<LittleEndian>(&mut u)?;
        let mut v = vec![0.0; n * nt];
        r.read_f64_into::<LittleEndian>(&mut v)?;
        Ok(Self {
            times,
            u: DMatrix::from_vec(n, nt, u),
            v: DMatrix::from_vec(n, nt, v),
            meta: TrajectoryMeta {
                scheme: "implicit-midpoint".into(),
                ..Default::default()
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_roundtrip() {
        let traj = Trajectory {
            times: vec![0.0, 0.5, 1.0],
            u: DMatrix::from_fn(4, 3, |i, j| (i as f64) - 0.25 * j as f64),
            v: DMatrix::from_fn(4, 3, |i, j| (i * j) as f64 + 0.1),
            meta: TrajectoryMeta::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        traj.write_binary(&p).unwrap();
        let back = Trajectory::read_binary(&p).unwrap();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.u, traj.u);
        assert_eq!(back.v, traj.v);
        traj.write_csv(&dir.path().join("t.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 12);
    }
}
