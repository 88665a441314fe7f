//! Parameter containers.
//!
//! Every trainable structure exposes its weights as an ordered list of named
//! matrix blocks. Gradients use the same type as the parameters they belong
//! to, so a zeroed clone of a network is its gradient buffer.

use crate::Matrix;

pub trait Params {
    /// Blocks in a fixed order with dotted names, e.g. `actor.l0.weight`.
    fn named_blocks(&self) -> Vec<(String, &Matrix)>;

    /// Same order as [`Params::named_blocks`].
    fn blocks_mut(&mut self) -> Vec<&mut Matrix>;

    fn blocks(&self) -> Vec<&Matrix> {
        self.named_blocks().into_iter().map(|(_, m)| m).collect()
    }

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|m| m.len()).sum()
    }
}

/// A zero-filled copy, used as a gradient accumulator.
pub fn zeros_like<P: Params + Clone>(p: &P) -> P {
    let mut g = p.clone();
    for b in g.blocks_mut() {
        b.fill(0.0);
    }
    g
}

pub fn zero_grads<P: Params>(g: &mut P) {
    for b in g.blocks_mut() {
        b.fill(0.0);
    }
}

/// `dst += src`, block by block.
pub fn accumulate<P: Params>(dst: &mut P, src: &P) {
    let src = src.blocks();
    for (d, s) in dst.blocks_mut().into_iter().zip(src) {
        d.add_assign(s);
    }
}

pub fn copy_params<P: Params>(dst: &mut P, src: &P) {
    let src = src.blocks();
    for (d, s) in dst.blocks_mut().into_iter().zip(src) {
        assert_eq!(d.shape(), s.shape());
        d.data_mut().copy_from_slice(s.data());
    }
}

pub fn global_norm<P: Params>(g: &P) -> f64 {
    g.blocks().iter().map(|b| b.sum_sq()).sum::<f64>().sqrt()
}

/// Rescales `g` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<P: Params>(g: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(g);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for b in g.blocks_mut() {
            b.scale_assign(s);
        }
    }
    norm
}

/// Prefixes every block name of `inner` with `prefix.`.
pub fn prefixed<'a>(prefix: &str, inner: Vec<(String, &'a Matrix)>) -> Vec<(String, &'a Matrix)> {
    inner
        .into_iter()
        .map(|(n, m)| (format!("{prefix}.{n}"), m))
        .collect()
}
