//! Binary persistence for ground truths, task batches, and learner states,
//! plus a JSON sampling manifest for reproducibility audits.
//!
//! Format: 8-byte magic `LINREP01`, a record tag byte, then u64 dimensions and
//! little-endian f64 payloads in column-major order. The loader revalidates
//! structural invariants (orthonormality, PSD) instead of trusting the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::MetaParams;
use crate::rng::RngSpec;
use crate::task_model::{GroundTruth, TaskBatch};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LINREP01";
const TAG_GROUND_TRUTH: u8 = 1;
const TAG_TASK_BATCH: u8 = 2;
const TAG_META_PARAMS: u8 = 3;

/// JSON sidecar describing how a ground truth / batch was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub d: usize,
    pub k: usize,
    pub n_tasks: usize,
    pub m_in: usize,
    pub m_out: usize,
    pub cov_spec: String,
    pub mean_spec: String,
    pub noise_var: f64,
    pub rng: RngSpec,
}

impl SampleManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Container(format!("manifest encode: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Container(format!("manifest decode: {e}")))
    }
}

fn write_header<W: Write>(w: &mut W, tag: u8) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[tag])?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, expect_tag: u8) -> Result<()> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    if tag[0] != expect_tag {
        return Err(Error::Container(format!("expected record tag {expect_tag}, found {}", tag[0])));
    }
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, x: u64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_f64<W: Write>(w: &mut W, x: f64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_slice<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    write_slice(w, m.as_slice())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    if rows.checked_mul(cols).is_none_or(|n| n > (1 << 32)) {
        return Err(Error::Container(format!("implausible matrix shape {rows}x{cols}")));
    }
    Ok(DMatrix::from_vec(rows, cols, read_vec(r, rows * cols)?))
}

fn write_vector<W: Write>(w: &mut W, v: &DVector<f64>) -> Result<()> {
    write_u64(w, v.len() as u64)?;
    write_slice(w, v.as_slice())
}

fn read_vector<R: Read>(r: &mut R) -> Result<DVector<f64>> {
    let n = read_u64(r)? as usize;
    if n > (1 << 32) {
        return Err(Error::Container(format!("implausible vector length {n}")));
    }
    Ok(DVector::from_vec(read_vec(r, n)?))
}

pub fn write_ground_truth<W: Write>(w: &mut W, gt: &GroundTruth) -> Result<()> {
    write_header(w, TAG_GROUND_TRUTH)?;
    write_matrix(w, &gt.b_star)?;
    write_matrix(w, &gt.sigma_star)?;
    write_vector(w, &gt.mu_star)?;
    write_f64(w, gt.noise_var)
}

pub fn read_ground_truth<R: Read>(r: &mut R) -> Result<GroundTruth> {
    read_header(r, TAG_GROUND_TRUTH)?;
    let b_star = read_matrix(r)?;
    let sigma_star = read_matrix(r)?;
    let mu_star = read_vector(r)?;
    let noise_var = read_f64(r)?;
    GroundTruth::from_parts(b_star, sigma_star, mu_star, noise_var)
}

pub fn write_task_batch<W: Write>(w: &mut W, batch: &TaskBatch) -> Result<()> {
    write_header(w, TAG_TASK_BATCH)?;
    write_u64(w, batch.n_tasks() as u64)?;
    write_u64(w, batch.m_in as u64)?;
    write_u64(w, batch.m_out as u64)?;
    write_matrix(w, &batch.w_star)?;
    for i in 0..batch.n_tasks() {
        write_matrix(w, &batch.x_in[i])?;
        write_vector(w, &batch.y_in[i])?;
        write_matrix(w, &batch.x_out[i])?;
        write_vector(w, &batch.y_out[i])?;
    }
    Ok(())
}

pub fn read_task_batch<R: Read>(r: &mut R) -> Result<TaskBatch> {
    read_header(r, TAG_TASK_BATCH)?;
    let n = read_u64(r)? as usize;
    let m_in = read_u64(r)? as usize;
    let m_out = read_u64(r)? as usize;
    let w_star = read_matrix(r)?;
    let mut x_in = Vec::with_capacity(n);
    let mut y_in = Vec::with_capacity(n);
    let mut x_out = Vec::with_capacity(n);
    let mut y_out = Vec::with_capacity(n);
    for _ in 0..n {
        x_in.push(read_matrix(r)?);
        y_in.push(read_vector(r)?);
        x_out.push(read_matrix(r)?);
        y_out.push(read_vector(r)?);
    }
    if w_star.ncols() != n {
        return Err(Error::Container("w_star column count does not match task count".into()));
    }
    Ok(TaskBatch { m_in, m_out, x_in, y_in, x_out, y_out, w_star })
}

pub fn write_meta_params<W: Write>(w: &mut W, p: &MetaParams) -> Result<()> {
    write_header(w, TAG_META_PARAMS)?;
    write_f64(w, p.alpha)?;
    write_f64(w, p.beta)?;
    write_matrix(w, &p.b)?;
    write_vector(w, &p.w)
}

pub fn read_meta_params<R: Read>(r: &mut R) -> Result<MetaParams> {
    read_header(r, TAG_META_PARAMS)?;
    let alpha = read_f64(r)?;
    let beta = read_f64(r)?;
    let b = read_matrix(r)?;
    let w = read_vector(r)?;
    if w.len() != b.ncols() {
        return Err(Error::Container("head length does not match representation width".into()));
    }
    Ok(MetaParams { b, w, alpha, beta })
}

pub fn save_meta_params(path: &Path, p: &MetaParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_meta_params(&mut w, p)?;
    w.flush()?;
    Ok(())
}

pub fn load_meta_params(path: &Path) -> Result<MetaParams> {
    read_meta_params(&mut BufReader::new(File::open(path)?))
}

pub fn save_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ground_truth(&mut w, gt)?;
    w.flush()?;
    Ok(())
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    read_ground_truth(&mut BufReader::new(File::open(path)?))
}
