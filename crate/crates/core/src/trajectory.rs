//! Sampling schedule and on-disk snapshot store.
//!
//! File layout (little-endian): `DLTR`, version u32, n u64, t u64, then `t`
//! records of (epoch u32, global_step u64, `n` f64). The writer appends to a
//! temp file and renames it into place on [`TrajectoryWriter::finish`].

use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::binio::{self, put_f64s, Reader};
use crate::subspace::Snapshots;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DLTR";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 24;

/// When to take snapshots during baseline training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingSchedule {
    pub samples_per_epoch: usize,
    pub start_epoch: usize,
    pub end_epoch: usize,
}

impl SamplingSchedule {
    pub fn new(samples_per_epoch: usize, start_epoch: usize, end_epoch: usize) -> Result<Self> {
        if samples_per_epoch == 0 {
            return Err(Error::config("sampling.per_epoch", "must be at least 1"));
        }
        if start_epoch >= end_epoch {
            return Err(Error::config(
                "sampling.start",
                format!("start epoch {start_epoch} must be below end epoch {end_epoch}"),
            ));
        }
        Ok(SamplingSchedule { samples_per_epoch, start_epoch, end_epoch })
    }

    /// Whether to sample after step `step_in_epoch` (0-based) of `epoch`.
    ///
    /// Sample `i` of an epoch with `S` steps is taken after step
    /// `floor((i + 1) S / k) - 1`, so `k = 1` samples at the end of the epoch.
    pub fn due(&self, epoch: usize, step_in_epoch: usize, steps_per_epoch: usize) -> bool {
        if epoch < self.start_epoch || epoch >= self.end_epoch || step_in_epoch >= steps_per_epoch {
            return false;
        }
        let (s, k) = (steps_per_epoch, self.samples_per_epoch);
        // Smallest i whose offset is at or beyond this step.
        let i = ((step_in_epoch + 1) * k).div_ceil(s).saturating_sub(1);
        i < k && (i + 1) * s / k == step_in_epoch + 1
    }

    /// Snapshots a full run produces.
    pub fn expected_samples(&self, steps_per_epoch: usize) -> usize {
        let per_epoch = (0..steps_per_epoch).filter(|&j| self.due(self.start_epoch, j, steps_per_epoch)).count();
        per_epoch * (self.end_epoch - self.start_epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepMeta {
    pub epoch: u32,
    pub global_step: u64,
}

/// Append-only writer for a trajectory file.
pub struct TrajectoryWriter {
    path: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
    n: Option<usize>,
    t: u64,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let tmp = binio::tmp_path(path);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = TrajectoryWriter { path: path.to_path_buf(), tmp, out: BufWriter::new(file), n: None, t: 0 };
        w.write_header(0)?;
        Ok(w)
    }

    fn write_header(&mut self, n: usize) -> Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN as usize);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        buf.extend_from_slice(&self.t.to_le_bytes());
        self.out.write_all(&buf).map_err(|e| Error::io(&self.tmp, e))
    }

    pub fn n(&self) -> Option<usize> {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t as usize
    }

    /// Appends a verbatim copy of `w`. The first call fixes `n`.
    pub fn record(&mut self, meta: StepMeta, w: &[f64]) -> Result<()> {
        match self.n {
            Some(n) if n != w.len() => {
                return Err(Error::Shape(format!("snapshot has length {}, trajectory holds length {n}", w.len())))
            }
            Some(_) => {}
            None => self.n = Some(w.len()),
        }
        let mut buf = Vec::with_capacity(12 + 8 * w.len());
        buf.extend_from_slice(&meta.epoch.to_le_bytes());
        buf.extend_from_slice(&meta.global_step.to_le_bytes());
        put_f64s(&mut buf, w);
        self.out.write_all(&buf).map_err(|e| Error::io(&self.tmp, e))?;
        self.t += 1;
        Ok(())
    }

    /// Fixes up the header, syncs and renames the file into place.
    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.tmp, e))?;
        let mut file = self.out.into_inner().map_err(|e| Error::io(&self.tmp, e.into_error()))?;
        file.seek(SeekFrom::Start(8)).map_err(|e| Error::io(&self.tmp, e))?;
        let mut counts = Vec::with_capacity(16);
        counts.extend_from_slice(&(self.n.unwrap_or(0) as u64).to_le_bytes());
        counts.extend_from_slice(&self.t.to_le_bytes());
        file.write_all(&counts).map_err(|e| Error::io(&self.tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&self.tmp, e))?;
        drop(file);
        std::fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))
    }
}

/// A loaded trajectory: snapshots in record order plus their metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub metas: Vec<StepMeta>,
    pub data: Vec<f64>,
}

impl Trajectory {
    pub fn t(&self) -> usize {
        self.metas.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn into_snapshots(self) -> Result<Snapshots> {
        if self.metas.is_empty() {
            return Err(Error::DegenerateTrajectory("trajectory holds no snapshots".into()));
        }
        Snapshots::new(self.n, self.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN as usize + self.t() * (12 + 8 * self.n));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        buf.extend_from_slice(&(self.t() as u64).to_le_bytes());
        for (j, m) in self.metas.iter().enumerate() {
            buf.extend_from_slice(&m.epoch.to_le_bytes());
            buf.extend_from_slice(&m.global_step.to_le_bytes());
            put_f64s(&mut buf, self.column(j));
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "trajectory file");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("trajectory file: unsupported version {version}")));
        }
        let n = r.usize_from_u64()?;
        let t = r.usize_from_u64()?;
        let record = n.checked_mul(8).and_then(|x| x.checked_add(12));
        let body = record.and_then(|x| x.checked_mul(t));
        match body {
            Some(b) if b as u64 + HEADER_LEN == bytes.len() as u64 => {}
            _ => {
                return Err(Error::Format(format!(
                    "trajectory file: header promises {t} records of length {n}, file has {} bytes",
                    bytes.len()
                )))
            }
        }
        let mut metas = Vec::with_capacity(t);
        let mut data = Vec::with_capacity(n * t);
        for _ in 0..t {
            let epoch = r.u32()?;
            let global_step = r.u64()?;
            metas.push(StepMeta { epoch, global_step });
            data.extend(r.f64s(n)?);
        }
        r.finish()?;
        Ok(Trajectory { n, metas, data })
    }
}

/// Reads every snapshot back, bit-exactly and in record order.
pub fn load_all(path: &Path) -> Result<Trajectory> {
    Trajectory::from_bytes(&binio::read_file(path)?)
}

/// Stores a single parameter vector as a one-record trajectory.
pub fn save_vector(path: &Path, meta: StepMeta, w: &[f64]) -> Result<()> {
    let traj = Trajectory { n: w.len(), metas: vec![meta], data: w.to_vec() };
    binio::write_atomic(path, &traj.to_bytes())
}

/// Reads a file written by [`save_vector`].
pub fn load_vector(path: &Path) -> Result<Vec<f64>> {
    let traj = load_all(path)?;
    if traj.t() != 1 {
        return Err(Error::Format(format!("{}: expected one snapshot, found {}", path.display(), traj.t())));
    }
    Ok(traj.data)
}
