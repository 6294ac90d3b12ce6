//! Channel masks at alternative boundaries and the cost bookkeeping that
//! goes with them.
//!
//! Pruning rescales cost linearly in the kept fraction of boundary channels:
//! `flops' = ⌊flops · (p_in/c_in) · (p_out/c_out)⌋`, the same for params,
//! latency untouched. When the rule is applied to a whole layer fragment the
//! per-layer floors are taken first and the rounding remainder is charged to
//! the output layer, so the fragment always sums to the sub-network figure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Alternative;
use crate::ir::{CostVector, Layer, SubNetwork};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("alternative `{0}` has no mask")]
    NoMask(String),
    #[error("mask length {got} does not match {side} width {want}")]
    MaskLengthMismatch {
        side: &'static str,
        got: usize,
        want: u32,
    },
    #[error("mask keeps no {0} channel")]
    EmptyMask(&'static str),
}

/// Boolean keep-vectors for the input and output channels of a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    keep_in: Vec<bool>,
    keep_out: Vec<bool>,
}

impl ChannelMask {
    pub fn new(keep_in: Vec<bool>, keep_out: Vec<bool>) -> Result<Self, MaskError> {
        if !keep_in.iter().any(|&b| b) {
            return Err(MaskError::EmptyMask("input"));
        }
        if !keep_out.iter().any(|&b| b) {
            return Err(MaskError::EmptyMask("output"));
        }
        Ok(ChannelMask { keep_in, keep_out })
    }

    /// Keeps the first `k_in` of `w_in` and the first `k_out` of `w_out`.
    pub fn keep_first(w_in: u32, k_in: u32, w_out: u32, k_out: u32) -> Result<Self, MaskError> {
        ChannelMask::new(first_k(w_in, k_in), first_k(w_out, k_out))
    }

    pub fn keep_in(&self) -> &[bool] {
        &self.keep_in
    }

    pub fn keep_out(&self) -> &[bool] {
        &self.keep_out
    }

    pub fn popcount_in(&self) -> u32 {
        self.keep_in.iter().filter(|&&b| b).count() as u32
    }

    pub fn popcount_out(&self) -> u32 {
        self.keep_out.iter().filter(|&&b| b).count() as u32
    }

    /// Kept input channel indices, ascending.
    pub fn kept_in(&self) -> Vec<usize> {
        kept(&self.keep_in)
    }

    pub fn kept_out(&self) -> Vec<usize> {
        kept(&self.keep_out)
    }

    fn check(&self, in_width: u32, out_width: u32) -> Result<(), MaskError> {
        if self.keep_in.len() != in_width as usize {
            return Err(MaskError::MaskLengthMismatch {
                side: "input",
                got: self.keep_in.len(),
                want: in_width,
            });
        }
        if self.keep_out.len() != out_width as usize {
            return Err(MaskError::MaskLengthMismatch {
                side: "output",
                got: self.keep_out.len(),
                want: out_width,
            });
        }
        Ok(())
    }
}

fn kept(bits: &[bool]) -> Vec<usize> {
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i)
        .collect()
}

fn first_k(width: u32, k: u32) -> Vec<bool> {
    (0..width).map(|i| i < k).collect()
}

/// Keeps the `k` highest-scoring of `width` channels; ties go to the lower
/// index. Falls back to the first `k` when `scores` is absent or has the
/// wrong length.
pub(crate) fn top_k(width: u32, k: u32, scores: Option<&[f64]>) -> Vec<bool> {
    match scores {
        Some(s) if s.len() == width as usize => {
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            let mut keep = vec![false; width as usize];
            for &i in order.iter().take(k as usize) {
                keep[i] = true;
            }
            keep
        }
        _ => first_k(width, k),
    }
}

/// Per-channel importance scores for one alternative's boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScores {
    #[serde(rename = "in")]
    pub scores_in: Vec<f64>,
    #[serde(rename = "out")]
    pub scores_out: Vec<f64>,
}

/// Scores keyed by alternative id.
pub type ScoreTable = BTreeMap<String, ChannelScores>;

fn keep_ratio(p_in: u32, c_in: u32, p_out: u32, c_out: u32) -> Rational {
    Rational::from(u64::from(p_in) * u64::from(p_out))
        / Rational::from(u64::from(c_in) * u64::from(c_out))
}

fn rescale(cost: &CostVector, ratio: &Rational) -> CostVector {
    CostVector {
        flops: ratio.floor_scale_u64(cost.flops),
        params: ratio.floor_scale_u64(cost.params),
        latency_us: cost.latency_us.clone(),
    }
}

/// Narrows a sub-network's boundary widths to `p_in`/`p_out` and rescales
/// its cost.
pub(crate) fn narrow_subnet(sub: &SubNetwork, p_in: u32, p_out: u32) -> SubNetwork {
    let ratio = keep_ratio(p_in, sub.in_channels, p_out, sub.out_channels);
    SubNetwork {
        in_channels: p_in,
        out_channels: p_out,
        cost: rescale(&sub.cost, &ratio),
        ..sub.clone()
    }
}

/// Narrows a layer fragment consistently with [`narrow_subnet`].
pub(crate) fn narrow_fragment(sub: &SubNetwork, layers: &[Layer], p_in: u32, p_out: u32) -> Vec<Layer> {
    let ratio = keep_ratio(p_in, sub.in_channels, p_out, sub.out_channels);
    let target = rescale(&sub.cost, &ratio);
    let mut out: Vec<Layer> = layers
        .iter()
        .map(|l| {
            let mut l = l.clone();
            l.cost = rescale(&l.cost, &ratio);
            if l.id == sub.input_layer {
                l.in_channels = p_in;
            }
            if l.id == sub.output_layer {
                l.out_channels = p_out;
            }
            l
        })
        .collect();
    let flops: u64 = out.iter().map(|l| l.cost.flops).sum();
    let params: u64 = out.iter().map(|l| l.cost.params).sum();
    if let Some(o) = out.iter_mut().find(|l| l.id == sub.output_layer) {
        o.cost.flops += target.flops - flops;
        o.cost.params += target.params - params;
    }
    out
}

/// The pruned sub-network an alternative turns into once its mask is
/// applied: boundary widths equal the mask popcounts and cost is rescaled.
pub fn apply_mask(alt: &Alternative) -> Result<SubNetwork, MaskError> {
    let mask = alt.mask.as_ref().ok_or_else(|| MaskError::NoMask(alt.id.clone()))?;
    mask.check(alt.subnet.in_channels, alt.subnet.out_channels)?;
    Ok(narrow_subnet(&alt.subnet, mask.popcount_in(), mask.popcount_out()))
}

/// The alternative as it will be spliced: masked when a mask is present.
pub fn effective_subnet(alt: &Alternative) -> Result<SubNetwork, MaskError> {
    match alt.mask {
        Some(_) => apply_mask(alt),
        None => Ok(alt.subnet.clone()),
    }
}

/// Layers of the alternative with the mask applied, costs summing exactly
/// to [`effective_subnet`]'s cost.
pub fn masked_layers(alt: &Alternative) -> Result<Vec<Layer>, MaskError> {
    match &alt.mask {
        None => Ok(alt.layers.clone()),
        Some(mask) => {
            mask.check(alt.subnet.in_channels, alt.subnet.out_channels)?;
            Ok(narrow_fragment(
                &alt.subnet,
                &alt.layers,
                mask.popcount_in(),
                mask.popcount_out(),
            ))
        }
    }
}
