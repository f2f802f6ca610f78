//! Indexed triangle meshes.

use rand::Rng;

use crate::geometry::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Unit per-vertex normals; empty or parallel to `vertices`.
    pub normals: Vec<Vec3>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Area-weighted vertex normals from the triangle winding.
    pub fn recompute_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let n = (b - a).cross(&(c - a));
            for &i in &self.triangles[t] {
                acc[i] += n;
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::z()
                }
            })
            .collect();
    }

    pub fn translated(&self, offset: &Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            ..self.clone()
        }
    }

    /// Appends `other`, reindexing its triangles.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
        if self.normals.len() + other.normals.len() == self.vertices.len() {
            self.normals.extend_from_slice(&other.normals);
        } else {
            self.normals.clear();
        }
    }

    /// `n` points distributed uniformly over the surface area.
    pub fn sample_points<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cdf.push(total);
        }
        if total <= 0.0 {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let r = rng.random::<f64>() * total;
                let t = cdf.partition_point(|&c| c < r).min(cdf.len() - 1);
                let [a, b, c] = self.triangle(t);
                let (mut s, mut u) = (rng.random::<f64>(), rng.random::<f64>());
                if s + u > 1.0 {
                    s = 1.0 - s;
                    u = 1.0 - u;
                }
                a + (b - a) * s + (c - a) * u
            })
            .collect()
    }
}
