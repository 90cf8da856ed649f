//! Model parameters: the per-point feature MLP, channel gating vector,
//! encoder stack, and the two prediction heads, plus the versioned JSON
//! checkpoint format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::{init_gating, GatingParams};
use crate::matrix::FeatureMatrix;
use crate::model::encoder::EncoderBlock;
use crate::model::linear::{Linear, Mlp};
use crate::rng::{derive_seed, SplitMix64};

pub const CHECKPOINT_VERSION: u32 = 1;
/// Input width of the per-point feature extractor: x, y, z, r, g, b.
pub const POINT_INPUT_DIM: usize = 6;
/// Box head output width: 3 center offsets + 3 log-sizes.
pub const BOX_OUTPUT_DIM: usize = 6;

/// Shape-defining hyperparameters, stored with every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature channels C produced per point.
    pub channels: usize,
    /// Hidden width of the point MLP and both heads.
    pub hidden: usize,
    /// Number of self-attention blocks.
    pub encoder_layers: usize,
    /// Real object classes K; the class head emits K+1 logits, the last one
    /// being "no object".
    pub num_classes: usize,
    /// Decay coefficient for the geometry weights.
    pub alpha: f64,
    /// Superpoint voxel size in meters.
    pub voxel_size: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 32,
            hidden: 64,
            encoder_layers: 2,
            num_classes: 1,
            alpha: 2.0,
            voxel_size: 0.25,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 || self.encoder_layers == 0 {
            return Err(Error::config(
                "channels, hidden width and encoder layers must all be at least 1",
            ));
        }
        if self.num_classes == 0 {
            return Err(Error::config("at least one object class is required"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::config(format!(
                "voxel size must be positive, got {}",
                self.voxel_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Per-point feature extractor, 6 -> hidden -> C.
    pub backbone: Mlp,
    pub gating: GatingParams,
    /// Fused-width projection, 2C -> C.
    pub projection: Linear,
    pub blocks: Vec<EncoderBlock>,
    /// C -> hidden -> 6 (center offset, log size).
    pub box_head: Mlp,
    /// C -> hidden -> K+1.
    pub class_head: Mlp,
}

impl ModelParams {
    /// Deterministic initialization from a seed. The gating vector starts at
    /// its fixed init value; everything else is Xavier-uniform.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut rng = SplitMix64::new(derive_seed(seed, 0x60de7));
        let backbone = Mlp::init(POINT_INPUT_DIM, config.hidden, c, &mut rng);
        let gating = init_gating(c)?;
        let projection = Linear::init(2 * c, c, &mut rng);
        let blocks = (0..config.encoder_layers)
            .map(|_| EncoderBlock::init(c, &mut rng))
            .collect();
        let box_head = Mlp::init(c, config.hidden, BOX_OUTPUT_DIM, &mut rng);
        let class_head = Mlp::init(c, config.hidden, config.num_classes + 1, &mut rng);
        Ok(ModelParams {
            config,
            backbone,
            gating,
            projection,
            blocks,
            box_head,
            class_head,
        })
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config,
            backbone: self.backbone.zeros_like(),
            gating: GatingParams {
                raw_weights: vec![0.0; self.gating.channels()],
            },
            projection: self.projection.zeros_like(),
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
            box_head: self.box_head.zeros_like(),
            class_head: self.class_head.zeros_like(),
        }
    }

    fn tensors(&self) -> Vec<Tensor<'_>> {
        fn push_mlp<'a>(name: &'static str, m: &'a Mlp, out: &mut Vec<Tensor<'a>>) {
            out.push(Tensor::mat(name, &m.l1.w, true));
            out.push(Tensor::vec(name, &m.l1.b, false));
            out.push(Tensor::mat(name, &m.l2.w, true));
            out.push(Tensor::vec(name, &m.l2.b, false));
        }
        let mut out = Vec::new();
        push_mlp("backbone", &self.backbone, &mut out);
        out.push(Tensor::vec("gating", &self.gating.raw_weights, false));
        out.push(Tensor::mat("projection", &self.projection.w, true));
        out.push(Tensor::vec("projection", &self.projection.b, false));
        for block in &self.blocks {
            for linear in [
                &block.query,
                &block.key,
                &block.value,
                &block.output,
                &block.ff1,
                &block.ff2,
            ] {
                out.push(Tensor::mat("encoder", &linear.w, true));
                out.push(Tensor::vec("encoder", &linear.b, false));
            }
        }
        push_mlp("box_head", &self.box_head, &mut out);
        push_mlp("class_head", &self.class_head, &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        fn push_mlp<'a>(m: &'a mut Mlp, out: &mut Vec<&'a mut [f64]>) {
            out.push(m.l1.w.data_mut());
            out.push(&mut m.l1.b);
            out.push(m.l2.w.data_mut());
            out.push(&mut m.l2.b);
        }
        let mut out: Vec<&mut [f64]> = Vec::new();
        push_mlp(&mut self.backbone, &mut out);
        out.push(&mut self.gating.raw_weights);
        out.push(self.projection.w.data_mut());
        out.push(&mut self.projection.b);
        for block in &mut self.blocks {
            for linear in [
                &mut block.query,
                &mut block.key,
                &mut block.value,
                &mut block.output,
                &mut block.ff1,
                &mut block.ff2,
            ] {
                out.push(linear.w.data_mut());
                out.push(&mut linear.b);
            }
        }
        push_mlp(&mut self.box_head, &mut out);
        push_mlp(&mut self.class_head, &mut out);
        out
    }

    /// All parameters in one flat vector, in a fixed traversal order shared
    /// with [`Self::assign_from_flat`], [`Self::decay_mask`] and
    /// [`Self::group_ranges`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            flat.extend_from_slice(t.values);
        }
        flat
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for slice in self.tensors_mut() {
            slice.copy_from_slice(&flat[offset..offset + slice.len()]);
            offset += slice.len();
        }
        debug_assert_eq!(offset, flat.len());
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    /// True where decoupled weight decay applies: weight matrices only, not
    /// biases and not the gating vector.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            mask.extend(std::iter::repeat(t.decay).take(t.values.len()));
        }
        mask
    }

    /// Named half-open flat index ranges per parameter group. Consecutive
    /// tensors with the same group name are merged.
    pub fn group_ranges(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let mut ranges: Vec<(&'static str, std::ops::Range<usize>)> = Vec::new();
        let mut offset = 0;
        for t in self.tensors() {
            let end = offset + t.values.len();
            match ranges.last_mut() {
                Some((name, range)) if *name == t.group => range.end = end,
                _ => ranges.push((t.group, offset..end)),
            }
            offset = end;
        }
        ranges
    }

    pub fn first_non_finite(&self) -> Option<String> {
        for (k, t) in self.tensors().iter().enumerate() {
            if let Some(i) = t.values.iter().position(|v| !v.is_finite()) {
                return Some(format!("{} tensor #{k} index {i}", t.group));
            }
        }
        None
    }

    /// Internal consistency between `config` and tensor shapes.
    pub fn validate_shapes(&self) -> Result<()> {
        let c = self.config.channels;
        let checks = [
            ("backbone input", self.backbone.l1.in_dim(), POINT_INPUT_DIM),
            ("backbone hidden", self.backbone.l1.out_dim(), self.config.hidden),
            ("backbone output", self.backbone.l2.out_dim(), c),
            ("gating width", self.gating.channels(), c),
            ("projection input", self.projection.in_dim(), 2 * c),
            ("projection output", self.projection.out_dim(), c),
            ("encoder depth", self.blocks.len(), self.config.encoder_layers),
            ("box head output", self.box_head.l2.out_dim(), BOX_OUTPUT_DIM),
            (
                "class head output",
                self.class_head.l2.out_dim(),
                self.config.num_classes + 1,
            ),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::shape(format!("{what}: expected {want}, found {got}")));
            }
        }
        for (i, block) in self.blocks.iter().enumerate() {
            if block.channels() != c || block.ff1.out_dim() != 4 * c || block.ff2.in_dim() != 4 * c
            {
                return Err(Error::shape(format!("encoder block {i} width mismatch")));
            }
        }
        Ok(())
    }
}

struct Tensor<'a> {
    group: &'static str,
    values: &'a [f64],
    decay: bool,
}

impl<'a> Tensor<'a> {
    fn mat(group: &'static str, m: &'a FeatureMatrix, decay: bool) -> Self {
        Tensor {
            group,
            values: m.data(),
            decay,
        }
    }

    fn vec(group: &'static str, v: &'a [f64], decay: bool) -> Self {
        Tensor {
            group,
            values: v,
            decay,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    params: ModelParams,
}

/// Serialize parameters to the versioned JSON checkpoint. `f64` values are
/// written with shortest round-trip formatting, so save/load is exact.
pub fn save_checkpoint(params: &ModelParams) -> Vec<u8> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        params: params.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&ckpt).expect("checkpoint serialization");
    out.push(b'\n');
    out
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::validation(format!(
            "unsupported checkpoint version {} (expected {})",
            ckpt.version, CHECKPOINT_VERSION
        )));
    }
    ckpt.params.config.validate()?;
    ckpt.params.validate_shapes()?;
    if let Some(what) = ckpt.params.first_non_finite() {
        return Err(Error::validation(format!("checkpoint contains non-finite value in {what}")));
    }
    Ok(ckpt.params)
}
