use std::collections::HashMap;

use super::tables::{CORNERS, EDGES, EDGE_TABLE, TRIANGLE_TABLE};
use super::VoxelGrid;
use crate::geometry::Vec3;
use crate::mesh::TriangleMesh;

const MIN_AREA: f64 = 1e-12;

/// Extracts the `iso` level set. Only cells with eight valid corners emit
/// triangles; triangles are wound so that normals point toward increasing SDF.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> TriangleMesh {
    let g = &grid.geometry;
    let [nx, ny, nz] = g.dims;
    let mut mesh = TriangleMesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    // (lower corner linear index, axis) -> vertex index
    let mut edge_vertex: HashMap<(usize, u8), usize> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut ids = [0usize; 8];
                let mut vals = [0.0f64; 8];
                let mut all_valid = true;
                for (c, off) in CORNERS.iter().enumerate() {
                    let idx = g.linear(i + off[0], j + off[1], k + off[2]);
                    all_valid &= grid.valid[idx];
                    ids[c] = idx;
                    vals[c] = grid.sdf[idx];
                }
                if !all_valid {
                    continue;
                }
                let case = (0..8).fold(0usize, |acc, c| acc | (usize::from(vals[c] < iso) << c));
                let mask = EDGE_TABLE[case];
                if mask == 0 {
                    continue;
                }
                let mut verts = [usize::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if mask & (1 << e) == 0 {
                        continue;
                    }
                    // Key the edge by its lower-index endpoint and axis.
                    let (lo, hi) = if ids[a] < ids[b] { (a, b) } else { (b, a) };
                    let axis = (0..3).find(|&d| CORNERS[lo][d] != CORNERS[hi][d]).unwrap() as u8;
                    // A crossing exactly at a corner is shared by all its edges.
                    let key = if vals[lo] == iso {
                        (ids[lo], 3)
                    } else if vals[hi] == iso {
                        (ids[hi], 3)
                    } else {
                        (ids[lo], axis)
                    };
                    verts[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let t = (iso - vals[lo]) / (vals[hi] - vals[lo]);
                        let p0 = g.center_of(ids[lo]);
                        let p1 = g.center_of(ids[hi]);
                        mesh.vertices.push(p0 + (p1 - p0) * t);
                        mesh.vertices.len() - 1
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [
                        verts[tri[0] as usize],
                        verts[tri[2] as usize],
                        verts[tri[1] as usize],
                    ];
                    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                        continue;
                    }
                    let [a, b, c] = t.map(|v| mesh.vertices[v]);
                    if 0.5 * (b - a).cross(&(c - a)).norm() <= MIN_AREA {
                        continue;
                    }
                    mesh.triangles.push(t);
                }
            }
        }
    }
    compact(&mut mesh);
    mesh.recompute_normals();
    mesh
}

/// Drops vertices no triangle references.
fn compact(mesh: &mut TriangleMesh) {
    let mut remap = vec![usize::MAX; mesh.vertices.len()];
    let mut verts: Vec<Vec3> = Vec::with_capacity(mesh.vertices.len());
    for tri in &mut mesh.triangles {
        for v in tri.iter_mut() {
            if remap[*v] == usize::MAX {
                remap[*v] = verts.len();
                verts.push(mesh.vertices[*v]);
            }
            *v = remap[*v];
        }
    }
    mesh.vertices = verts;
}
