//! Time-ordered PDE states, their binary file format and dataset splitting.
//!
//! File layout: one UTF-8 JSON header line terminated by `'\n'`, followed by
//! raw little-endian `f64` values ordered `[time][channel][y][x]`.

use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, RealField};

pub const FILE_FORMAT: &str = "spectral-refiner-trajectory";
pub const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    channels: Vec<String>,
    t0: f64,
    dt: f64,
    states: Vec<RealField>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: Vec<RealField>) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::InvalidParams("trajectory needs at least one state".into()))?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParams(format!("time spacing must be > 0, got {dt}")));
        }
        for (i, s) in states.iter().enumerate() {
            if s.grid() != first.grid() || s.channels() != first.channels() {
                return Err(Error::ShapeMismatch(format!(
                    "state {i} has a different grid or channel set"
                )));
            }
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("trajectory state {i}")));
            }
        }
        Ok(Self {
            grid: first.grid().clone(),
            channels: first.channels().to_vec(),
            t0,
            dt,
            states,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn states(&self) -> &[RealField] {
        &self.states
    }

    pub fn into_states(self) -> Vec<RealField> {
        self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.t0 + i as f64 * self.dt).collect()
    }

    /// Elapsed time between the first and the last state.
    pub fn horizon(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt
    }

    /// States `start..end` as a new trajectory.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidParams(format!(
                "bad slice {start}..{end} of trajectory with {} states",
                self.len()
            )));
        }
        Self::new(
            self.t0 + start as f64 * self.dt,
            self.dt,
            self.states[start..end].to_vec(),
        )
    }

    pub fn same_shape(&self, other: &Trajectory) -> bool {
        self.grid == other.grid && self.channels.len() == other.channels.len() && self.len() == other.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = FileHeader {
            format: FILE_FORMAT.into(),
            version: FILE_VERSION,
            dims: self.grid.points().to_vec(),
            spacing: self.grid.spacing().to_vec(),
            t0: self.t0,
            dt: self.dt,
            num_times: self.len(),
            channels: self.channels.clone(),
            endianness: "little".into(),
            dtype: "f64".into(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(self.len() * self.grid.len() * self.channels.len() * 8);
        for s in &self.states {
            for v in s.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_reader<R: BufRead>(mut reader: R) -> Result<Self> {
        let mut line = Vec::new();
        reader.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Format("missing header line".into()));
        }
        let header: FileHeader = serde_json::from_slice(&line[..line.len() - 1])?;
        if header.format != FILE_FORMAT || header.version != FILE_VERSION {
            return Err(Error::Format(format!(
                "unsupported trajectory format {} v{}",
                header.format, header.version
            )));
        }
        if header.endianness != "little" || header.dtype != "f64" {
            return Err(Error::Format(format!(
                "unsupported encoding {}/{}",
                header.endianness, header.dtype
            )));
        }
        let grid = Grid::new(header.dims, header.spacing)?;
        let per_state = grid.len() * header.channels.len();
        let mut raw = Vec::new();
        reader.read_to_end(&mut raw)?;
        if raw.len() != per_state * header.num_times * 8 {
            return Err(Error::Format(format!(
                "payload has {} bytes, expected {}",
                raw.len(),
                per_state * header.num_times * 8
            )));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let states = values
            .chunks_exact(per_state.max(1))
            .map(|c| RealField::new(grid.clone(), header.channels.clone(), c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(header.t0, header.dt, states)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    /// Raw little-endian payload only (no header), e.g. for hashing.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in &self.states {
            for v in s.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHeader {
    format: String,
    version: u32,
    dims: Vec<usize>,
    spacing: Vec<f64>,
    t0: f64,
    dt: f64,
    num_times: usize,
    channels: Vec<String>,
    endianness: String,
    dtype: String,
}

/// Indices of a train/valid/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded split of `n` whole trajectories by `ratios = [train, valid, test]`.
/// Valid and test sizes are rounded; train takes the remainder. Every split
/// with a positive ratio receives at least one trajectory.
pub fn dataset_split(n: usize, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Split(format!("ratios must be >= 0, got {ratios:?}")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios must sum to 1, got {ratios:?}")));
    }
    let wanted = ratios.iter().filter(|r| **r > 0.0).count();
    if n < wanted {
        return Err(Error::Split(format!(
            "{n} trajectories cannot fill {wanted} non-empty splits"
        )));
    }
    let size = |r: f64| if r > 0.0 { ((n as f64 * r).round() as usize).max(1) } else { 0 };
    let (n_valid, n_test) = (size(ratios[1]), size(ratios[2]));
    if n_valid + n_test > n || (ratios[0] > 0.0 && n_valid + n_test == n) {
        return Err(Error::Split(format!(
            "{n} trajectories are too few for ratios {ratios:?}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n - n_test);
    let valid = idx.split_off(idx.len() - n_valid);
    Ok(DatasetSplit {
        train: idx,
        valid,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj() -> Trajectory {
        let grid = Grid::new_2d(4, 6, 0.5, 0.25).unwrap();
        let states = (0..3)
            .map(|t| {
                RealField::from_fn(grid.clone(), vec!["a".into(), "b".into()], |c, y, x| {
                    t as f64 + 10.0 * c as f64 + y * 3.0 - x
                })
            })
            .collect();
        Trajectory::new(0.0, 1.5, states).unwrap()
    }

    #[test]
    fn file_round_trip() {
        let t = traj();
        let bytes = t.to_bytes().unwrap();
        let back = Trajectory::from_reader(&bytes[..]).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn layout_is_time_channel_y_x() {
        let t = traj();
        let bytes = t.to_bytes().unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["endianness"], "little");
        assert_eq!(header["dtype"], "f64");
        assert_eq!(header["dims"], serde_json::json!([4, 6]));
        let payload = &bytes[nl + 1..];
        let at = |i: usize| f64::from_le_bytes(payload[i * 8..i * 8 + 8].try_into().unwrap());
        // time 1, channel 1, y index 2, x index 3
        let i = ((1 * 2 + 1) * 4 + 2) * 6 + 3;
        assert_eq!(at(i), 1.0 + 10.0 + 1.0 * 3.0 - 0.75);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = traj().to_bytes().unwrap();
        assert!(Trajectory::from_reader(&bytes[..bytes.len() - 8]).is_err());
        assert!(Trajectory::from_reader(&b"{}"[..]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = dataset_split(10, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, dataset_split(10, [0.8, 0.1, 0.1], 7).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).cloned().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_errors() {
        assert!(dataset_split(2, [0.8, 0.1, 0.1], 0).is_err());
        assert!(dataset_split(10, [0.5, 0.1, 0.1], 0).is_err());
        assert!(dataset_split(10, [1.2, -0.1, -0.1], 0).is_err());
        assert!(dataset_split(3, [1.0, 0.0, 0.0], 0).unwrap().train.len() == 3);
    }
}
