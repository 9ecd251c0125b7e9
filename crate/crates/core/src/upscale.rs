//! Miniature-to-target upscaling: the patch network and interpolation baselines.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsds::DsdsMapping;
use crate::error::{Error, Result};
use crate::frames::{FrameMeta, FrameSequence};
use crate::mlp::{check_encoder, MlpModel};
use crate::patches::{assemble_target, enumerate_patches, window, PatchEncoder, PatchPair, PATCH_ORDER};
use crate::Vec3;

/// Patches per inference batch. Fixed so results do not depend on the
/// number of worker threads.
const PATCH_CHUNK: usize = 128;

/// Leading frames whose history is bootstrapped.
pub const WARMUP_FRAMES: usize = 2;

pub struct DnnUpscaler {
    model: MlpModel,
    encoder: PatchEncoder,
    mapping: DsdsMapping,
    patches: Vec<PatchPair>,
}

impl DnnUpscaler {
    /// Binds a model to a miniature/target grid pair. The model's recorded
    /// feature layout must agree with `mapping` and, if given, `requested`.
    /// Models without recorded metadata need `requested`.
    pub fn new(model: MlpModel, mapping: DsdsMapping, requested: Option<PatchEncoder>) -> Result<Self> {
        model.validate()?;
        let encoder = match (&model.meta, requested) {
            (Some(meta), req) => {
                if meta.patch_order != PATCH_ORDER {
                    return Err(Error::ModelMismatch {
                        field: "patch_order",
                        model: meta.patch_order.clone(),
                        scene: PATCH_ORDER.into(),
                    });
                }
                if let Some(req) = req {
                    check_encoder(&meta.encoder, &req)?;
                }
                meta.encoder
            }
            (None, Some(req)) => req,
            (None, None) => return Err(Error::InvalidModel("model records no feature layout".into())),
        };
        if encoder.factor != mapping.factor {
            return Err(Error::ModelMismatch {
                field: "dsds_factor",
                model: encoder.factor.to_string(),
                scene: mapping.factor.to_string(),
            });
        }
        for (field, m, e) in [("input_dim", model.input_dim(), encoder.input_dim()), ("output_dim", model.output_dim(), encoder.output_dim())] {
            if m != e {
                return Err(Error::ModelMismatch { field, model: m.to_string(), scene: e.to_string() });
            }
        }
        let patches = enumerate_patches(&mapping)?;
        Ok(Self { model, encoder, mapping, patches })
    }

    pub fn mapping(&self) -> &DsdsMapping {
        &self.mapping
    }

    pub fn encoder(&self) -> &PatchEncoder {
        &self.encoder
    }

    /// Target frame at `t` from miniature frames `[t-2, t-1, t]`.
    pub fn upscale(&self, window: [&[Vec3]; 3]) -> Result<Vec<Vec3>> {
        let n = self.mapping.mini_count();
        if let Some(bad) = window.iter().find(|f| f.len() != n) {
            return Err(Error::DimensionMismatch(format!("miniature frame has {} particles, mapping expects {n}", bad.len())));
        }
        let (din, dout) = (self.encoder.input_dim(), self.encoder.output_dim());
        let blocks: Vec<Vec<Vec<Vec3>>> = self
            .patches
            .par_chunks(PATCH_CHUNK)
            .map(|chunk| {
                let mut x = ndarray::Array2::zeros((chunk.len(), din));
                let mut anchors = Vec::with_capacity(chunk.len());
                for (row, patch) in chunk.iter().enumerate() {
                    let out = x.row_mut(row).into_slice().expect("contiguous row");
                    anchors.push(self.encoder.encode_input(window, patch, out));
                }
                let y = self.model.forward_batch(x.view());
                anchors
                    .iter()
                    .enumerate()
                    .map(|(row, &a)| self.encoder.decode_output(&y.as_slice().expect("standard layout")[row * dout..(row + 1) * dout], a))
                    .collect()
            })
            .collect();
        let preds: Vec<Vec<Vec3>> = blocks.into_iter().flatten().collect();
        assemble_target(&preds, &self.patches, &self.mapping)
    }

    /// Upscale frame `t` of a miniature sequence, bootstrapping `t < 2`.
    pub fn upscale_frame(&self, mini: &FrameSequence, t: usize) -> Result<Vec<Vec3>> {
        self.upscale(window(mini, t, true)?)
    }

    pub fn upscale_sequence(&self, mini: &FrameSequence) -> Result<FrameSequence> {
        let mut out = target_sequence(mini, &self.mapping, "dnn")?;
        for t in 0..mini.len() {
            out.frames.push(self.upscale_frame(mini, t)?);
        }
        Ok(out)
    }
}

fn target_sequence(mini: &FrameSequence, mapping: &DsdsMapping, method: &str) -> Result<FrameSequence> {
    if mini.rows != mapping.mini_rows || mini.cols != mapping.mini_cols {
        return Err(Error::DimensionMismatch(format!(
            "miniature frames are {}x{}, mapping expects {}x{}",
            mini.rows, mini.cols, mapping.mini_rows, mapping.mini_cols
        )));
    }
    let meta = FrameMeta {
        label: format!("{}-{method}x{}", mini.meta.label, mapping.factor),
        cloth: mini.meta.cloth.as_ref().map(|c| crate::cloth::GridClothSpec { rows: mapping.target_rows, cols: mapping.target_cols, ..c.clone() }),
        warmup_frames: if method == "dnn" { WARMUP_FRAMES.min(mini.len()) } else { 0 },
        ..mini.meta.clone()
    };
    Ok(FrameSequence::new(mapping.target_rows, mapping.target_cols, mini.world_scale * mapping.factor as f64, meta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMethod {
    Bilinear,
    Biquadratic,
    Bicubic,
}

impl InterpMethod {
    pub const ALL: [InterpMethod; 3] = [InterpMethod::Bilinear, InterpMethod::Biquadratic, InterpMethod::Bicubic];

    /// Samples per axis in the stencil.
    pub fn stencil(self) -> usize {
        match self {
            InterpMethod::Bilinear => 2,
            InterpMethod::Biquadratic => 3,
            InterpMethod::Bicubic => 4,
        }
    }

    /// First stencil node for parameter `u` on an axis of `n` samples.
    fn first_node(self, u: f64, n: usize) -> usize {
        let s = self.stencil();
        let start = match self {
            InterpMethod::Bilinear => u.floor() as isize,
            InterpMethod::Biquadratic => u.round() as isize - 1,
            InterpMethod::Bicubic => u.floor() as isize - 1,
        };
        start.clamp(0, (n - s) as isize) as usize
    }

    /// Stencil start and Lagrange weights for each target sample of one axis.
    fn axis_weights(self, mini_n: usize, factor: usize) -> Vec<(usize, Vec<f64>)> {
        let target_n = (mini_n - 1) * factor + 1;
        (0..target_n)
            .map(|k| {
                let u = k as f64 / factor as f64;
                let first = self.first_node(u, mini_n);
                let nodes: Vec<f64> = (first..first + self.stencil()).map(|v| v as f64).collect();
                let w = nodes
                    .iter()
                    .enumerate()
                    .map(|(a, &xa)| {
                        let (mut num, mut den) = (1.0, 1.0);
                        for (b, &xb) in nodes.iter().enumerate() {
                            if a != b {
                                num *= u - xb;
                                den *= xa - xb;
                            }
                        }
                        num / den
                    })
                    .collect();
                (first, w)
            })
            .collect()
    }
}

impl fmt::Display for InterpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterpMethod::Bilinear => "bilinear",
            InterpMethod::Biquadratic => "biquadratic",
            InterpMethod::Bicubic => "bicubic",
        })
    }
}

impl FromStr for InterpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Format(format!("unknown interpolation method '{s}'")))
    }
}

/// Tensor-product Lagrange interpolation of each coordinate over grid
/// parameters, evaluated at `(i/f, j/f)` and scaled by `f`. Stencils shift
/// inward at the borders.
pub fn upscale_interp(frame: &[Vec3], mapping: &DsdsMapping, method: InterpMethod) -> Result<Vec<Vec3>> {
    if frame.len() != mapping.mini_count() {
        return Err(Error::DimensionMismatch(format!(
            "miniature frame has {} particles, mapping expects {}",
            frame.len(),
            mapping.mini_count()
        )));
    }
    let s = method.stencil();
    if mapping.mini_rows < s || mapping.mini_cols < s {
        return Err(Error::GridTooSmall(format!(
            "{method} needs {s} samples per axis, miniature grid is {}x{}",
            mapping.mini_rows, mapping.mini_cols
        )));
    }
    let f = mapping.factor;
    let rows = method.axis_weights(mapping.mini_rows, f);
    let cols = method.axis_weights(mapping.mini_cols, f);
    let mc = mapping.mini_cols;
    let scale = f as f64;
    Ok(rows
        .par_iter()
        .flat_map_iter(|(r0, wr)| {
            cols.iter().map(move |(c0, wc)| {
                let mut acc = Vec3::zeros();
                for (a, &wa) in wr.iter().enumerate() {
                    let row = (r0 + a) * mc;
                    let mut line = Vec3::zeros();
                    for (b, &wb) in wc.iter().enumerate() {
                        line += frame[row + c0 + b] * wb;
                    }
                    acc += line * wa;
                }
                acc * scale
            })
        })
        .collect())
}

pub fn upscale_interp_sequence(mini: &FrameSequence, mapping: &DsdsMapping, method: InterpMethod) -> Result<FrameSequence> {
    let mut out = target_sequence(mini, mapping, &method.to_string())?;
    for frame in &mini.frames {
        out.frames.push(upscale_interp(frame, mapping, method)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloth::{rest_state, Layout};
    use crate::mlp::{init_model, ModelMeta};
    use crate::patches::{FeatureKind, NormMode};
    use crate::scene::presets;
    use proptest::prelude::*;

    fn field(map: &DsdsMapping, scale: f64, g: impl Fn(f64, f64) -> Vec3) -> (Vec<Vec3>, Vec<Vec3>) {
        let mini = (0..map.mini_count())
            .map(|k| g((k / map.mini_cols) as f64, (k % map.mini_cols) as f64) * scale)
            .collect();
        let f = map.factor as f64;
        let target = (0..map.target_count())
            .map(|k| g((k / map.target_cols) as f64 / f, (k % map.target_cols) as f64 / f) * scale * f)
            .collect();
        (mini, target)
    }

    fn max_err(a: &[Vec3], b: &[Vec3]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn polynomial_precision() {
        let map = DsdsMapping::new(13, 17, 2).unwrap();
        let planar = |u: f64, v: f64| Vec3::new(0.3 * u - 0.2 * v + 1.0, 2.0 * u, -v + 0.5);
        let quad = |u: f64, v: f64| Vec3::new(u * u, u * v + v * v, 1.0 - u * u * v * v);
        let cubic = |u: f64, v: f64| Vec3::new(u * u * u - 2.0 * u, v * v * v * u * u, u * u * u * v * v * v);
        for m in InterpMethod::ALL {
            let (mini, target) = field(&map, 0.1, planar);
            assert!(max_err(&upscale_interp(&mini, &map, m).unwrap(), &target) < 1e-10, "{m} planar");
        }
        for m in [InterpMethod::Biquadratic, InterpMethod::Bicubic] {
            let (mini, target) = field(&map, 0.1, quad);
            assert!(max_err(&upscale_interp(&mini, &map, m).unwrap(), &target) < 1e-10, "{m} quadratic");
        }
        let (mini, target) = field(&map, 0.01, cubic);
        assert!(max_err(&upscale_interp(&mini, &map, InterpMethod::Bicubic).unwrap(), &target) < 1e-10);
        assert!(max_err(&upscale_interp(&mini, &map, InterpMethod::Bilinear).unwrap(), &target) > 1e-4);
    }

    #[test]
    fn flat_rest_is_reproduced_for_each_factor() {
        for f in [2, 3, 4] {
            let spec = crate::cloth::GridClothSpec { rows: 4 * f + 1, cols: 5 * f + 1, ..presets::flag().cloth };
            let (ms, map) = crate::dsds::down_sample_spec(&spec, f).unwrap();
            let layout = Layout::hanging(Vec3::new(0.0, 1.0, 0.0));
            let target = rest_state(&spec, &layout).unwrap().positions;
            let mini = rest_state(&ms, &Layout { origin: layout.origin / f as f64, ..layout }).unwrap().positions;
            for m in InterpMethod::ALL {
                assert!(max_err(&upscale_interp(&mini, &map, m).unwrap(), &target) < 1e-12, "{m} f={f}");
            }
        }
    }

    #[test]
    fn stencil_size_errors() {
        let map = DsdsMapping::new(5, 9, 2).unwrap();
        let frame = vec![Vec3::zeros(); map.mini_count()];
        assert!(upscale_interp(&frame, &map, InterpMethod::Biquadratic).is_ok());
        assert!(matches!(upscale_interp(&frame, &map, InterpMethod::Bicubic), Err(Error::GridTooSmall(_))));
        let map = DsdsMapping::new(3, 9, 2).unwrap();
        assert!(matches!(upscale_interp(&vec![Vec3::zeros(); 10], &map, InterpMethod::Biquadratic), Err(Error::GridTooSmall(_))));
        assert!(upscale_interp(&frame, &map, InterpMethod::Bilinear).is_err(), "wrong particle count");
    }

    fn encoder(f: usize) -> PatchEncoder {
        PatchEncoder { kind: FeatureKind::Pos3Frames, norm: NormMode::Local, factor: f }
    }

    #[test]
    fn metadata_checks() {
        let map = DsdsMapping::new(9, 9, 2).unwrap();
        let model = init_model(&[36, 8, 27], 0).unwrap();
        assert!(DnnUpscaler::new(model.clone(), map, None).is_err());
        assert!(DnnUpscaler::new(model.clone(), map, Some(encoder(2))).is_ok());
        let tagged = model.with_meta(ModelMeta::new(encoder(2)));
        let err = DnnUpscaler::new(tagged.clone(), DsdsMapping::new(9, 9, 4).unwrap(), None).err().unwrap();
        assert!(matches!(err, Error::ModelMismatch { field: "dsds_factor", .. }));
        let want_pos = PatchEncoder { kind: FeatureKind::Pos, ..encoder(2) };
        let err = DnnUpscaler::new(tagged, map, Some(want_pos)).err().unwrap();
        assert!(matches!(err, Error::ModelMismatch { field: "feature_kind", .. }));
    }

    #[test]
    fn dnn_output_shape_and_thread_independence() {
        let map = DsdsMapping::new(33, 49, 2).unwrap();
        let model = init_model(&[36, 16, 27], 3).unwrap().with_meta(ModelMeta::new(encoder(2)));
        let up = DnnUpscaler::new(model, map, None).unwrap();
        let frame: Vec<Vec3> = (0..map.mini_count()).map(|k| Vec3::new(k as f64 * 0.01, (k % 7) as f64 * 0.02, 0.0)).collect();
        let out = up.upscale([&frame, &frame, &frame]).unwrap();
        assert_eq!(out.len(), 33 * 49);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| up.upscale([&frame, &frame, &frame]).unwrap());
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| up.upscale([&frame, &frame, &frame]).unwrap());
        assert_eq!(serial, out);
        assert_eq!(wide, out);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sample_points_are_exact(seed in 0u64..1000, f in 2usize..5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let map = DsdsMapping::new(5 * f + 1, 6 * f + 1, f).unwrap();
            let frame: Vec<Vec3> = (0..map.mini_count())
                .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            for m in InterpMethod::ALL {
                let out = upscale_interp(&frame, &map, m).unwrap();
                for (k, &t) in map.kept_indices().iter().enumerate() {
                    prop_assert_eq!(out[t], frame[k] * f as f64);
                }
            }
        }
    }
}
