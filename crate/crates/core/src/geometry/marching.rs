//! Table-driven marching cubes.
//!
//! The case table is derived rather than typed in: for each of the 256 corner
//! configurations, every cube face contributes segments joining the level
//! crossings on its boundary, the segments are chained into closed loops, and
//! each loop is fanned into triangles. On a face with two diagonal inside
//! corners the segments cut off each inside corner separately. Both cubes
//! sharing a face make the same choice, so the mesh has no cracks.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{TriMesh, VoxelGrid};
use crate::error::Result;

/// Corner offsets in the usual numbering.
const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

const EDGES: [[usize; 2]; 12] =
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Faces as corner cycles, counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [3, 7, 6, 2], [0, 4, 7, 3], [1, 2, 6, 5]];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES.iter().position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a)).expect("adjacent corners")
}

/// Closed loops of crossed edges for the configuration `mask`, where bit `c`
/// set means corner `c` is below the level.
fn build_case(mask: usize) -> Vec<Vec<u8>> {
    let inside = |c: usize| mask >> c & 1 == 1;
    let mut next: [Option<usize>; 12] = [None; 12];
    for face in FACES {
        // (edge, entering) for each crossing along the cycle; entering means
        // the walk goes from an outside corner to an inside one.
        let crossings: Vec<(usize, bool)> = (0..4)
            .filter_map(|i| {
                let (a, b) = (face[i], face[(i + 1) % 4]);
                (inside(a) != inside(b)).then(|| (edge_between(a, b), inside(b)))
            })
            .collect();
        for (i, &(edge, entering)) in crossings.iter().enumerate() {
            if entering {
                let exit = crossings[(i + 1) % crossings.len()];
                debug_assert!(!exit.1);
                next[edge] = Some(exit.0);
            }
        }
    }
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if seen[start] || next[start].is_none() {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            lp.push(e as u8);
            e = next[e].expect("crossings pair up into loops");
        }
        loops.push(lp);
    }
    loops
}

fn table() -> &'static [Vec<Vec<u8>>] {
    static TABLE: OnceLock<Vec<Vec<Vec<u8>>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

/// Edge loops for one corner configuration.
pub fn case_loops(mask: u8) -> &'static [Vec<u8>] {
    &table()[mask as usize]
}

/// Triangulates `{field = level}`. A corner counts as inside when its value
/// is below the level. Vertices sit on lattice edges at the linear
/// interpolation point and are shared between neighbouring cubes. Face
/// normals (counter-clockwise) point toward values below the level.
pub fn marching_cubes(grid: &VoxelGrid, level: f64) -> Result<TriMesh> {
    let [nx, ny, nz] = grid.dims;
    let mut mesh = TriMesh::default();
    let mut vertex_of: HashMap<usize, usize> = HashMap::new();
    if nx < 2 || ny < 2 || nz < 2 {
        return Ok(mesh);
    }
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for k in 0..nz - 1 {
                let corner = |c: usize| [i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]];
                let mut mask = 0usize;
                for c in 0..8 {
                    let [a, b, d] = corner(c);
                    if grid.value(a, b, d) < level {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                for lp in case_loops(mask as u8) {
                    let ids: Vec<usize> = lp
                        .iter()
                        .map(|&e| {
                            let [ca, cb] = EDGES[e as usize];
                            let (pa, pb) = (corner(ca), corner(cb));
                            let lower = if pa <= pb { pa } else { pb };
                            let axis = (0..3).find(|&a| pa[a] != pb[a]).expect("lattice edge");
                            let key = grid.index(lower[0], lower[1], lower[2]) * 3 + axis;
                            *vertex_of.entry(key).or_insert_with(|| {
                                mesh.vertices.push(interpolate(grid, pa, pb, level));
                                mesh.vertices.len() - 1
                            })
                        })
                        .collect();
                    for t in 1..ids.len() - 1 {
                        mesh.faces.push([ids[0], ids[t + 1], ids[t]]);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

fn interpolate(grid: &VoxelGrid, pa: [usize; 3], pb: [usize; 3], level: f64) -> [f64; 3] {
    let (va, vb) = (grid.value(pa[0], pa[1], pa[2]), grid.value(pb[0], pb[1], pb[2]));
    let t = (level - va) / (vb - va);
    let xa = grid.point(pa[0], pa[1], pa[2]);
    let xb = grid.point(pb[0], pb[1], pb[2]);
    std::array::from_fn(|a| xa[a] + t * (xb[a] - xa[a]))
}
