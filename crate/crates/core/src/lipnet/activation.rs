use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm-preserving activations. Sorting only permutes coordinates, so the
/// output has the same multiset of entries (and the same l2 norm) as the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    GroupSort { group_size: usize },
    FullSort,
    Identity,
}

impl Activation {
    /// Group length for a vector of `width` entries, checking divisibility.
    pub fn group_len(&self, width: usize) -> Result<Option<usize>> {
        match *self {
            Activation::Identity => Ok(None),
            Activation::FullSort => Ok(Some(width.max(1))),
            Activation::GroupSort { group_size } => {
                if group_size == 0 || width % group_size != 0 {
                    Err(Error::Config(format!("group size {group_size} does not divide layer width {width}")))
                } else {
                    Ok(Some(group_size))
                }
            }
        }
    }
}

/// Sorts each contiguous group of `v` in ascending order.
pub fn group_sort(v: &[f64], group_size: usize) -> Result<Vec<f64>> {
    if group_size == 0 || v.len() % group_size != 0 {
        return Err(Error::Config(format!("group size {group_size} does not divide vector length {}", v.len())));
    }
    let mut out = vec![0.0; v.len()];
    let mut perm = vec![0u32; v.len()];
    sort_groups_into(v, group_size, &mut out, &mut perm);
    Ok(out)
}

/// Writes the sorted groups into `out` and, for each output slot, the index of
/// the input coordinate it came from into `perm`. Ties keep their original
/// order, which fixes the subgradient used on the backward pass.
pub(crate) fn sort_groups_into(v: &[f64], group_size: usize, out: &mut [f64], perm: &mut [u32]) {
    for (g, chunk) in v.chunks(group_size).enumerate() {
        let base = g * group_size;
        let idx = &mut perm[base..base + group_size];
        for (k, slot) in idx.iter_mut().enumerate() {
            *slot = (base + k) as u32;
        }
        if group_size == 2 {
            if chunk[1] < chunk[0] {
                idx.swap(0, 1);
            }
        } else {
            idx.sort_by(|&a, &b| v[a as usize].total_cmp(&v[b as usize]));
        }
        for (k, &src) in idx.iter().enumerate() {
            out[base + k] = v[src as usize];
        }
    }
}
