//! Patch correspondence and network feature vectors.
//!
//! A patch is one 2x2 miniature cell `(p, q, r, s)` (row-major:
//! `(i, j), (i, j+1), (i+1, j), (i+1, j+1)`) paired with the
//! `(f+1) x (f+1)` target block it spans, also row-major. For `f = 2` that is
//! the 3x3 block `o..w`.
//!
//! Input vectors concatenate the patch state at `t-2, t-1, t`
//! (`[s_{t-2}, s_{t-1}, s_t]`, 36 values). Output vectors hold the target
//! block at `t` (27 values for `f = 2`, `3 (f+1)^2` in general).
//!
//! Normalisation (local-frame mode): let `c` be the centroid of the four
//! miniature particles at `t`. Input positions are stored as `x - c`;
//! target positions as `x - f c`. Decoding adds `f c` back. Raw mode stores
//! world coordinates unchanged.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsds::{down_sample_frames, DsdsMapping};
use crate::error::{Error, Result};
use crate::frames::FrameSequence;
use crate::io_util::{read_f64s, read_u32, read_u64, write_f64s};
use crate::Vec3;

/// Which miniature quantities feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Positions at `t-2, t-1, t` (36 values).
    Pos3Frames,
    /// Positions at `t` only (12 values).
    Pos,
    /// Positions at `t` plus per-frame displacement `x_t - x_{t-1}` (24 values).
    PosVel,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Pos3Frames, FeatureKind::Pos, FeatureKind::PosVel];

    pub fn input_dim(self) -> usize {
        match self {
            FeatureKind::Pos3Frames => 36,
            FeatureKind::Pos => 12,
            FeatureKind::PosVel => 24,
        }
    }

    fn code(self) -> u8 {
        match self {
            FeatureKind::Pos3Frames => 0,
            FeatureKind::Pos => 1,
            FeatureKind::PosVel => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.code() == c).ok_or_else(|| Error::Format(format!("unknown feature kind {c}")))
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Pos3Frames => "pos3frames",
            FeatureKind::Pos => "pos",
            FeatureKind::PosVel => "posvel",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Format(format!("unknown feature kind '{s}' (pos3frames|pos|posvel)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Coordinates relative to the patch centroid at `t`.
    Local,
    /// World coordinates.
    Raw,
}

impl NormMode {
    fn code(self) -> u8 {
        match self {
            NormMode::Local => 0,
            NormMode::Raw => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(NormMode::Local),
            1 => Ok(NormMode::Raw),
            _ => Err(Error::Format(format!("unknown normalisation mode {c}"))),
        }
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Local => "local",
            NormMode::Raw => "raw",
        })
    }
}

/// Ordering tag written into datasets and models.
pub const PATCH_ORDER: &str = "row-major-pqrs/row-major-block";

pub fn output_dim(factor: usize) -> usize {
    3 * (factor + 1) * (factor + 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchPair {
    pub i: usize,
    pub j: usize,
    /// Miniature indices `p, q, r, s`.
    pub mini: [usize; 4],
    /// Target block indices, row-major, `(f+1)^2` entries.
    pub target: Vec<usize>,
}

/// All miniature cells in row-major order.
pub fn enumerate_patches(mapping: &DsdsMapping) -> Result<Vec<PatchPair>> {
    if mapping.mini_rows < 2 || mapping.mini_cols < 2 {
        return Err(Error::GridTooSmall(format!(
            "miniature grid {}x{} has no 2x2 cell",
            mapping.mini_rows, mapping.mini_cols
        )));
    }
    let (mc, f, tc) = (mapping.mini_cols, mapping.factor, mapping.target_cols);
    let mut out = Vec::with_capacity((mapping.mini_rows - 1) * (mc - 1));
    for i in 0..mapping.mini_rows - 1 {
        for j in 0..mc - 1 {
            let m = i * mc + j;
            let target = (0..=f)
                .flat_map(|a| (0..=f).map(move |b| (f * i + a) * tc + f * j + b))
                .collect();
            out.push(PatchPair { i, j, mini: [m, m + 1, m + mc, m + mc + 1], target });
        }
    }
    Ok(out)
}

/// How many patches cover each target particle.
pub fn coverage(patches: &[PatchPair], target_count: usize) -> Vec<usize> {
    let mut c = vec![0; target_count];
    for p in patches {
        for &t in &p.target {
            c[t] += 1;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    Input(FeatureKind),
    Output { factor: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub kind: VectorKind,
    pub values: Vec<f64>,
}

/// Feature encoding settings shared by dataset generation and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEncoder {
    pub kind: FeatureKind,
    pub norm: NormMode,
    pub factor: usize,
}

impl PatchEncoder {
    pub fn input_dim(&self) -> usize {
        self.kind.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        output_dim(self.factor)
    }

    /// Centroid of the patch's miniature particles in the current frame, or
    /// zero in raw mode.
    pub fn anchor(&self, current: &[Vec3], patch: &PatchPair) -> Vec3 {
        match self.norm {
            NormMode::Raw => Vec3::zeros(),
            NormMode::Local => patch.mini.iter().fold(Vec3::zeros(), |acc, &m| acc + current[m]) / 4.0,
        }
    }

    /// Write the input vector for `window = [x_{t-2}, x_{t-1}, x_t]` into `out`
    /// and return the anchor used.
    pub fn encode_input(&self, window: [&[Vec3]; 3], patch: &PatchPair, out: &mut [f64]) -> Vec3 {
        debug_assert_eq!(out.len(), self.input_dim());
        let c = self.anchor(window[2], patch);
        let mut put = |k: &mut usize, v: Vec3| {
            out[*k..*k + 3].copy_from_slice(v.as_slice());
            *k += 3;
        };
        let mut k = 0;
        match self.kind {
            FeatureKind::Pos3Frames => {
                for frame in window {
                    for &m in &patch.mini {
                        put(&mut k, frame[m] - c);
                    }
                }
            }
            FeatureKind::Pos => {
                for &m in &patch.mini {
                    put(&mut k, window[2][m] - c);
                }
            }
            FeatureKind::PosVel => {
                for &m in &patch.mini {
                    put(&mut k, window[2][m] - c);
                }
                for &m in &patch.mini {
                    put(&mut k, window[2][m] - window[1][m]);
                }
            }
        }
        c
    }

    /// Target block relative to `f * anchor`.
    pub fn encode_output(&self, target: &[Vec3], patch: &PatchPair, anchor: Vec3, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.output_dim());
        let base = anchor * self.factor as f64;
        for (k, &t) in patch.target.iter().enumerate() {
            out[3 * k..3 * k + 3].copy_from_slice((target[t] - base).as_slice());
        }
    }

    /// Back to target world coordinates.
    pub fn decode_output(&self, values: &[f64], anchor: Vec3) -> Vec<Vec3> {
        let base = anchor * self.factor as f64;
        values.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2]) + base).collect()
    }
}

/// Frames `t-2, t-1, t`; with `bootstrap`, missing history replicates frame 0.
pub fn window(frames: &FrameSequence, t: usize, bootstrap: bool) -> Result<[&[Vec3]; 3]> {
    if t >= frames.len() || (t < 2 && !bootstrap) {
        return Err(Error::FrameOutOfRange { t, available: frames.len() });
    }
    let at = |k: usize| frames.frames[t.saturating_sub(k)].as_slice();
    Ok([at(2), at(1), at(0)])
}

/// Input feature vector of `patch` at miniature frame `t`.
pub fn extract_input(
    frames: &FrameSequence,
    t: usize,
    patch: &PatchPair,
    encoder: &PatchEncoder,
    bootstrap: bool,
) -> Result<(FeatureVector, Vec3)> {
    let w = window(frames, t, bootstrap)?;
    let mut values = vec![0.0; encoder.input_dim()];
    let anchor = encoder.encode_input(w, patch, &mut values);
    Ok((FeatureVector { kind: VectorKind::Input(encoder.kind), values }, anchor))
}

/// Output feature vector of `patch` for one target frame, relative to the
/// anchor of the paired input.
pub fn extract_output(target: &[Vec3], patch: &PatchPair, encoder: &PatchEncoder, anchor: Vec3) -> Result<FeatureVector> {
    if let Some(&bad) = patch.target.iter().find(|&&t| t >= target.len()) {
        return Err(Error::DimensionMismatch(format!("target index {bad} outside frame of {} particles", target.len())));
    }
    let mut values = vec![0.0; encoder.output_dim()];
    encoder.encode_output(target, patch, anchor, &mut values);
    Ok(FeatureVector { kind: VectorKind::Output { factor: encoder.factor }, values })
}

/// Merge per-patch target blocks (already in world coordinates) by averaging
/// every particle over the patches that cover it. Summation follows patch
/// order, so the result does not depend on how predictions were computed.
pub fn assemble_target(predictions: &[Vec<Vec3>], patches: &[PatchPair], mapping: &DsdsMapping) -> Result<Vec<Vec3>> {
    if predictions.len() != patches.len() {
        return Err(Error::MissingPrediction { expected: patches.len(), got: predictions.len() });
    }
    let n = mapping.target_count();
    let mut sum = vec![Vec3::zeros(); n];
    let mut count = vec![0u32; n];
    for (pred, patch) in predictions.iter().zip(patches) {
        if pred.len() != patch.target.len() {
            return Err(Error::DimensionMismatch(format!(
                "patch ({}, {}) prediction has {} particles, block has {}",
                patch.i,
                patch.j,
                pred.len(),
                patch.target.len()
            )));
        }
        for (x, &t) in pred.iter().zip(&patch.target) {
            sum[t] += x;
            count[t] += 1;
        }
    }
    Ok(sum.into_iter().zip(count).map(|(s, c)| if c == 1 { s } else { s / c as f64 }).collect())
}

/// (input, ground-truth output) training pairs, stored row-major.
///
/// File layout (little-endian):
///
/// ```text
/// magic "MCDS" | version u32 | kind u8 | norm u8 | factor u32
/// input_dim u32 | output_dim u32 | pairs u64
/// pairs x (input_dim f64, output_dim f64)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub encoder: PatchEncoder,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
}

pub const DATASET_MAGIC: [u8; 4] = *b"MCDS";
pub const DATASET_VERSION: u32 = 1;

impl Dataset {
    pub fn new(encoder: PatchEncoder) -> Self {
        Self { encoder, inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, k: usize) -> &[f64] {
        let d = self.input_dim();
        &self.inputs[k * d..(k + 1) * d]
    }

    pub fn output(&self, k: usize) -> &[f64] {
        let d = self.output_dim();
        &self.outputs[k * d..(k + 1) * d]
    }

    pub fn push(&mut self, input: &[f64], output: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() || output.len() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "pair dims ({}, {}) vs dataset ({}, {})",
                input.len(),
                output.len(),
                self.input_dim(),
                self.output_dim()
            )));
        }
        self.inputs.extend_from_slice(input);
        self.outputs.extend_from_slice(output);
        Ok(())
    }

    pub fn append(&mut self, other: &Dataset) -> Result<()> {
        if other.encoder != self.encoder {
            return Err(Error::DimensionMismatch(format!(
                "cannot mix datasets ({} / {} / f={}) and ({} / {} / f={})",
                self.encoder.kind, self.encoder.norm, self.encoder.factor, other.encoder.kind, other.encoder.norm, other.encoder.factor
            )));
        }
        self.inputs.extend_from_slice(&other.inputs);
        self.outputs.extend_from_slice(&other.outputs);
        Ok(())
    }

    /// Pairs for every patch and every frame `t >= 2` of a target trajectory,
    /// with inputs taken from its down-sampled miniature.
    pub fn from_trajectory(target: &FrameSequence, encoder: PatchEncoder) -> Result<Self> {
        let mapping = DsdsMapping::new(target.rows, target.cols, encoder.factor)?;
        let mini = down_sample_frames(target, &mapping)?;
        let patches = enumerate_patches(&mapping)?;
        let pairs = patches.len() * target.len().saturating_sub(2);
        let mut ds = Self::new(encoder);
        ds.inputs = vec![0.0; pairs * encoder.input_dim()];
        ds.outputs = vec![0.0; pairs * encoder.output_dim()];
        let (di, dout) = (encoder.input_dim(), encoder.output_dim());
        let mut k = 0;
        for t in 2..target.len() {
            let w = window(&mini, t, false)?;
            for patch in &patches {
                let anchor = encoder.encode_input(w, patch, &mut ds.inputs[k * di..(k + 1) * di]);
                encoder.encode_output(&target.frames[t], patch, anchor, &mut ds.outputs[k * dout..(k + 1) * dout]);
                k += 1;
            }
        }
        Ok(ds)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&[self.encoder.kind.code(), self.encoder.norm.code()])?;
        w.write_all(&(self.encoder.factor as u32).to_le_bytes())?;
        w.write_all(&(self.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.output_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for k in 0..self.len() {
            write_f64s(w, self.input(k))?;
            write_f64s(w, self.output(k))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != DATASET_MAGIC {
            return Err(Error::Format("not a dataset (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Version { found: version, expected: DATASET_VERSION });
        }
        let mut codes = [0u8; 2];
        r.read_exact(&mut codes)?;
        let kind = FeatureKind::from_code(codes[0])?;
        let norm = NormMode::from_code(codes[1])?;
        let factor = read_u32(r)? as usize;
        if factor < 2 {
            return Err(Error::InvalidFactor(factor));
        }
        let encoder = PatchEncoder { kind, norm, factor };
        let (di, dout) = (read_u32(r)? as usize, read_u32(r)? as usize);
        if di != encoder.input_dim() || dout != encoder.output_dim() {
            return Err(Error::Format(format!(
                "header dims ({di}, {dout}) disagree with {kind} at f={factor} ({}, {})",
                encoder.input_dim(),
                encoder.output_dim()
            )));
        }
        let pairs = read_u64(r)? as usize;
        let mut ds = Self::new(encoder);
        let mut rec = vec![0.0; di + dout];
        for _ in 0..pairs {
            read_f64s(r, &mut rec)?;
            ds.inputs.extend_from_slice(&rec[..di]);
            ds.outputs.extend_from_slice(&rec[di..]);
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
