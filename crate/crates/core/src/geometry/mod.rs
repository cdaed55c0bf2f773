//! Sampling a scalar field on a lattice and extracting its level sets as
//! triangle meshes.

mod marching;
mod obj;

pub use marching::{case_loops, marching_cubes};
pub use obj::{export_obj, obj_string, parse_obj};

use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Scorer;
use crate::sampler::DomainBox;

/// Scalar field on a regular 3D lattice; `values` is indexed `(i·ny + j)·nz + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(origin: [f64; 3], spacing: [f64; 3], dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!("grid spacing must be positive, got {spacing:?}")));
        }
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch { expected: dims.iter().product(), got: values.len() });
        }
        Ok(Self { origin, spacing, dims, values })
    }

    /// Lattice over `domain` with `resolution` points per axis, evaluating `f` at each.
    pub fn from_fn(domain: &DomainBox, resolution: [usize; 3], f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let (origin, spacing) = lattice(domain, resolution)?;
        let [nx, ny, nz] = resolution;
        let mut values = Vec::with_capacity(nx * ny * nz);
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    values.push(f(point(origin, spacing, i, j, k)));
                }
            }
        }
        Self::new(origin, spacing, resolution, values)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        point(self.origin, self.spacing, i, j, k)
    }
}

fn point(origin: [f64; 3], spacing: [f64; 3], i: usize, j: usize, k: usize) -> [f64; 3] {
    [origin[0] + i as f64 * spacing[0], origin[1] + j as f64 * spacing[1], origin[2] + k as f64 * spacing[2]]
}

fn lattice(domain: &DomainBox, resolution: [usize; 3]) -> Result<([f64; 3], [f64; 3])> {
    if domain.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: domain.dim() });
    }
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::Config(format!("resolution must be at least 2 per axis, got {resolution:?}")));
    }
    let origin = [domain.low()[0], domain.low()[1], domain.low()[2]];
    let spacing = std::array::from_fn(|a| (domain.high()[a] - domain.low()[a]) / (resolution[a] - 1) as f64);
    Ok((origin, spacing))
}

/// Evaluates `net` on the lattice, one `x` slab per batch.
pub fn voxelize<S: Scorer + ?Sized>(net: &S, domain: &DomainBox, resolution: [usize; 3]) -> Result<VoxelGrid> {
    if net.input_dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: net.input_dim() });
    }
    let (origin, spacing) = lattice(domain, resolution)?;
    let [nx, ny, nz] = resolution;
    let slabs = (0..nx)
        .into_par_iter()
        .map(|i| {
            let pts = Array2::from_shape_fn((ny * nz, 3), |(r, a)| point(origin, spacing, i, r / nz, r % nz)[a]);
            net.scores(pts.view()).map(|s| s.to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    VoxelGrid::new(origin, spacing, resolution, slabs.concat())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Indices in range and three distinct indices per face.
    pub fn validate(&self) -> Result<()> {
        for (n, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::Data(format!("face {n} references a missing vertex")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Data(format!("face {n} is degenerate")));
            }
        }
        Ok(())
    }

    /// Number of faces on each undirected edge.
    pub fn edge_face_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge bounds exactly two faces.
    pub fn is_closed(&self) -> bool {
        self.edge_face_counts().values().all(|&c| c == 2)
    }
}

/// Linear-interpolation percentile of the scores (the usual "linear" rule).
pub fn choose_level(train_scores: &[f64], percentile: f64) -> Result<f64> {
    if train_scores.is_empty() {
        return Err(Error::Empty("train scores"));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::Config(format!("percentile must lie in [0, 100], got {percentile}")));
    }
    let mut s = train_scores.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = percentile / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(s[lo] + (s[hi] - s[lo]) * (pos - lo as f64))
}

pub const DEFAULT_LEVEL_PERCENTILE: f64 = 1.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lipnet::{Activation, Layer, LipNet, OrthoDense};
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_net_corners() {
        let net = LipNet::from_layers(
            3,
            vec![Layer {
                dense: OrthoDense::new(array![[0.0, 0.6, 0.8]], Array1::from(vec![0.1]), 15).unwrap(),
                activation: Activation::Identity,
            }],
        )
        .unwrap();
        let cube = DomainBox::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let g = voxelize(&net, &cube, [2, 2, 2]).unwrap();
        assert_eq!(g.values.len(), 8);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let exact = net.score_batch(array![[i as f64, j as f64, k as f64]].view()).unwrap()[0];
                    assert_eq!(g.value(i, j, k), exact);
                }
            }
        }
    }

    #[test]
    fn closure_grid_matches_closed_form() {
        let b = DomainBox::symmetric(3, 1.5).unwrap();
        let g = VoxelGrid::from_fn(&b, [5, 6, 7], |p| 1.0 - (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).unwrap();
        assert_eq!(g.values.len(), 5 * 6 * 7);
        for (i, j, k) in [(0, 0, 0), (4, 5, 6), (2, 3, 1)] {
            let p = g.point(i, j, k);
            assert_eq!(g.value(i, j, k), 1.0 - (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
        }
        assert_eq!(g.spacing, [0.75, 0.6, 0.5]);
    }

    #[test]
    fn resolution_checked() {
        let b = DomainBox::symmetric(3, 1.0).unwrap();
        assert!(VoxelGrid::from_fn(&b, [1, 4, 4], |_| 0.0).is_err());
        let b2 = DomainBox::symmetric(2, 1.0).unwrap();
        assert!(VoxelGrid::from_fn(&b2, [4, 4, 4], |_| 0.0).is_err());
    }

    #[test]
    fn level_examples() {
        assert_eq!(choose_level(&[4.0, 1.0, 3.0, 2.0], 50.0).unwrap(), 2.5);
        assert_eq!(choose_level(&[4.0, 1.0, 3.0, 2.0], 0.0).unwrap(), 1.0);
        assert_eq!(choose_level(&[4.0, 1.0, 3.0, 2.0], 100.0).unwrap(), 4.0);
        assert!(choose_level(&[], 1.0).is_err());
        assert!(choose_level(&[1.0], 101.0).is_err());
    }

    #[test]
    fn level_order_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let l = choose_level(&s, 1.0).unwrap();
        assert!((l - 0.01).abs() < 0.01, "{l}");
    }

    #[test]
    fn mesh_checks() {
        let tet = TriMesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            faces: vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
        };
        assert!(tet.validate().is_ok());
        assert!(tet.is_closed());
        let open = TriMesh { faces: tet.faces[..3].to_vec(), ..tet.clone() };
        assert!(!open.is_closed());
        let bad = TriMesh { faces: vec![[0, 0, 1]], ..tet };
        assert!(bad.validate().is_err());
    }
}
