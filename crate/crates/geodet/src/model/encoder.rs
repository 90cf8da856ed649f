//! Self-attention encoder over superpoint queries.
//!
//! The fused per-superpoint features are projected from `2C` to `C`, then
//! pass through `L` blocks of single-head softmax self-attention with a
//! residual connection, followed by a two-layer feed-forward with another
//! residual. There is no positional encoding: all geometric information
//! already lives in the query features, which keeps the encoder exactly
//! permutation-equivariant over queries.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::FeatureMatrix;
use crate::model::linear::Linear;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Intermediates of one block's forward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    pub input: FeatureMatrix,
    pub q: FeatureMatrix,
    pub k: FeatureMatrix,
    pub v: FeatureMatrix,
    /// Row-stochastic attention matrix.
    pub attn: FeatureMatrix,
    /// `attn @ v`.
    pub ctx: FeatureMatrix,
    /// After attention residual, input to the feed-forward.
    pub mid: FeatureMatrix,
    /// tanh hidden of the feed-forward.
    pub ff_hidden: FeatureMatrix,
}

impl EncoderBlock {
    pub fn init(channels: usize, rng: &mut SplitMix64) -> Self {
        EncoderBlock {
            query: Linear::init(channels, channels, rng),
            key: Linear::init(channels, channels, rng),
            value: Linear::init(channels, channels, rng),
            output: Linear::init(channels, channels, rng),
            ff1: Linear::init(channels, 4 * channels, rng),
            ff2: Linear::init(4 * channels, channels, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderBlock {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
            output: self.output.zeros_like(),
            ff1: self.ff1.zeros_like(),
            ff2: self.ff2.zeros_like(),
        }
    }

    pub fn channels(&self) -> usize {
        self.query.in_dim()
    }

    pub fn forward(&self, x: &FeatureMatrix) -> Result<(FeatureMatrix, BlockCache)> {
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;

        let scale = 1.0 / (self.channels() as f64).sqrt();
        let mut scores = q.matmul_transposed(&k)?;
        scores.scale(scale);
        let attn = softmax_rows(&scores);
        let ctx = attn.matmul(&v)?;
        let proj = self.output.forward(&ctx)?;

        let mut mid = x.clone();
        mid.add_assign(&proj)?;

        let ff_hidden = self.ff1.forward(&mid)?.map(f64::tanh);
        let ff_out = self.ff2.forward(&ff_hidden)?;
        let mut out = mid.clone();
        out.add_assign(&ff_out)?;

        Ok((
            out,
            BlockCache {
                input: x.clone(),
                q,
                k,
                v,
                attn,
                ctx,
                mid,
                ff_hidden,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &BlockCache,
        grad_out: &FeatureMatrix,
        grads: &mut EncoderBlock,
    ) -> Result<FeatureMatrix> {
        // Feed-forward residual: out = mid + ff2(tanh(ff1(mid)))
        let grad_ff_out = grad_out;
        let grad_hidden = self.ff2.backward(&cache.ff_hidden, grad_ff_out, &mut grads.ff2)?;
        let mut grad_ff_pre = grad_hidden;
        for (g, &h) in grad_ff_pre.data_mut().iter_mut().zip(cache.ff_hidden.data()) {
            *g *= 1.0 - h * h;
        }
        let mut grad_mid = self.ff1.backward(&cache.mid, &grad_ff_pre, &mut grads.ff1)?;
        grad_mid.add_assign(grad_out)?; // residual path

        // Attention residual: mid = x + output(attn @ v)
        let grad_ctx = self.output.backward(&cache.ctx, &grad_mid, &mut grads.output)?;

        // ctx = attn @ v
        let grad_attn = grad_ctx.matmul_transposed(&cache.v)?;
        let grad_v = cache.attn.transposed_matmul(&grad_ctx)?;

        // softmax backward per row: ds = a * (da - sum(da * a))
        let grad_scores = softmax_backward(&cache.attn, &grad_attn);

        // scores = (q @ k^T) * scale
        let scale = 1.0 / (self.channels() as f64).sqrt();
        let mut grad_q = grad_scores.matmul(&cache.k)?;
        grad_q.scale(scale);
        let mut grad_k = grad_scores.transposed_matmul(&cache.q)?;
        grad_k.scale(scale);

        let mut grad_x = self.query.backward(&cache.input, &grad_q, &mut grads.query)?;
        grad_x.add_assign(&self.key.backward(&cache.input, &grad_k, &mut grads.key)?)?;
        grad_x.add_assign(&self.value.backward(&cache.input, &grad_v, &mut grads.value)?)?;
        grad_x.add_assign(&grad_mid)?; // residual into the block input
        Ok(grad_x)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(scores: &FeatureMatrix) -> FeatureMatrix {
    let mut out = scores.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Jacobian-vector product of row-wise softmax: given the softmax output
/// `a` and upstream `da`, returns `a .* (da - rowsum(da .* a))`.
pub fn softmax_backward(a: &FeatureMatrix, da: &FeatureMatrix) -> FeatureMatrix {
    let mut out = FeatureMatrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let a_row = a.row(i);
        let da_row = da.row(i);
        let dot: f64 = a_row.iter().zip(da_row).map(|(&x, &y)| x * y).sum();
        let out_row = out.row_mut(i);
        for j in 0..a_row.len() {
            out_row[j] = a_row[j] * (da_row[j] - dot);
        }
    }
    out
}

/// Encoder stack: input projection from the fused width down to `C`, then
/// the blocks in order.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub fused: FeatureMatrix,
    pub projected: FeatureMatrix,
    pub blocks: Vec<BlockCache>,
}

pub fn encoder_forward(
    projection: &Linear,
    blocks: &[EncoderBlock],
    fused: &FeatureMatrix,
) -> Result<(FeatureMatrix, EncoderCache)> {
    let projected = projection.forward(fused)?;
    let mut x = projected.clone();
    let mut caches = Vec::with_capacity(blocks.len());
    for block in blocks {
        let (next, cache) = block.forward(&x)?;
        caches.push(cache);
        x = next;
    }
    Ok((
        x,
        EncoderCache {
            fused: fused.clone(),
            projected,
            blocks: caches,
        },
    ))
}

/// Backward through the block stack and projection; returns the gradient on
/// the fused input and accumulates parameter gradients.
pub fn encoder_backward(
    projection: &Linear,
    blocks: &[EncoderBlock],
    cache: &EncoderCache,
    grad_out: &FeatureMatrix,
    grad_projection: &mut Linear,
    grad_blocks: &mut [EncoderBlock],
) -> Result<FeatureMatrix> {
    let mut grad = grad_out.clone();
    for ((block, block_cache), block_grads) in blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grad_blocks.iter_mut())
        .rev()
    {
        grad = block.backward(block_cache, &grad, block_grads)?;
    }
    projection.backward(&cache.fused, &grad, grad_projection)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> FeatureMatrix {
        FeatureMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.range_f64(-1.0, 1.0)).collect())
            .unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = SplitMix64::new(8);
        let scores = random_matrix(7, 7, &mut rng);
        let a = softmax_rows(&scores);
        for i in 0..a.rows() {
            let sum: f64 = a.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_query_attends_to_itself_fully() {
        let mut rng = SplitMix64::new(12);
        let block = EncoderBlock::init(4, &mut rng);
        let x = random_matrix(1, 4, &mut rng);
        let (_, cache) = block.forward(&x).unwrap();
        assert_eq!(cache.attn.shape(), (1, 1));
        assert!((cache.attn.get(0, 0) - 1.0).abs() < 1e-12);
        // with a singleton softmax the context is exactly the value row
        assert!(cache.ctx.max_abs_diff(&cache.v) < 1e-12);
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let mut rng = SplitMix64::new(19);
        let c = 6;
        let projection = Linear::init(2 * c, c, &mut rng);
        let blocks = vec![EncoderBlock::init(c, &mut rng), EncoderBlock::init(c, &mut rng)];
        let m = 9;
        let fused = random_matrix(m, 2 * c, &mut rng);
        let (out, _) = encoder_forward(&projection, &blocks, &fused).unwrap();

        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            let j = rng.below(i + 1);
            perm.swap(i, j);
        }
        let mut fused_perm = FeatureMatrix::zeros(m, 2 * c);
        for (new_i, &old_i) in perm.iter().enumerate() {
            fused_perm.row_mut(new_i).copy_from_slice(fused.row(old_i));
        }
        let (out_perm, _) = encoder_forward(&projection, &blocks, &fused_perm).unwrap();
        for (new_i, &old_i) in perm.iter().enumerate() {
            for ch in 0..c {
                assert!(
                    (out_perm.get(new_i, ch) - out.get(old_i, ch)).abs() < 1e-9,
                    "row {old_i} -> {new_i} channel {ch}"
                );
            }
        }
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(33);
        let c = 3;
        let block = EncoderBlock::init(c, &mut rng);
        let x = random_matrix(4, c, &mut rng);
        let target = random_matrix(4, c, &mut rng);
        let objective = |b: &EncoderBlock, x: &FeatureMatrix| -> f64 {
            let (y, _) = b.forward(x).unwrap();
            y.data().iter().zip(target.data()).map(|(a, t)| a * t).sum()
        };

        let (_, cache) = block.forward(&x).unwrap();
        let mut grads = block.zeros_like();
        let grad_x = block.backward(&cache, &target, &mut grads).unwrap();

        let h = 1e-5;
        let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-2);

        // spot-check every parameter tensor of the block
        let tensors: Vec<(&str, &FeatureMatrix, &FeatureMatrix)> = vec![
            ("query.w", &block.query.w, &grads.query.w),
            ("key.w", &block.key.w, &grads.key.w),
            ("value.w", &block.value.w, &grads.value.w),
            ("output.w", &block.output.w, &grads.output.w),
            ("ff1.w", &block.ff1.w, &grads.ff1.w),
            ("ff2.w", &block.ff2.w, &grads.ff2.w),
        ];
        for (name, param, grad) in tensors {
            for idx in 0..param.data().len() {
                let mut plus = block.clone();
                let mut minus = block.clone();
                match name {
                    "query.w" => {
                        plus.query.w.data_mut()[idx] += h;
                        minus.query.w.data_mut()[idx] -= h;
                    }
                    "key.w" => {
                        plus.key.w.data_mut()[idx] += h;
                        minus.key.w.data_mut()[idx] -= h;
                    }
                    "value.w" => {
                        plus.value.w.data_mut()[idx] += h;
                        minus.value.w.data_mut()[idx] -= h;
                    }
                    "output.w" => {
                        plus.output.w.data_mut()[idx] += h;
                        minus.output.w.data_mut()[idx] -= h;
                    }
                    "ff1.w" => {
                        plus.ff1.w.data_mut()[idx] += h;
                        minus.ff1.w.data_mut()[idx] -= h;
                    }
                    "ff2.w" => {
                        plus.ff2.w.data_mut()[idx] += h;
                        minus.ff2.w.data_mut()[idx] -= h;
                    }
                    _ => unreachable!(),
                }
                let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
                assert!(close(fd, grad.data()[idx]), "{name}[{idx}]: fd={fd} an={}", grad.data()[idx]);
            }
        }
        for idx in 0..x.data().len() {
            let mut plus = x.clone();
            plus.data_mut()[idx] += h;
            let mut minus = x.clone();
            minus.data_mut()[idx] -= h;
            let fd = (objective(&block, &plus) - objective(&block, &minus)) / (2.0 * h);
            assert!(close(fd, grad_x.data()[idx]), "x[{idx}]");
        }
    }
}
