//! Graph-based (Felzenszwalb) superpixel segmentation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Image;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("image {0}x{1} is smaller than 2x2")]
    TooSmall(usize, usize),
    #[error("invalid segmentation parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub k: f64,
    pub min_size: usize,
    pub sigma: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            k: 300.0,
            min_size: 500,
            sigma: 0.8,
        }
    }
}

/// Per-pixel segment labels, numbered `0..num_segments` in raster order of
/// first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub num_segments: usize,
}

impl SuperpixelMap {
    #[inline]
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_segments];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins two roots; the larger (then lower-index) root survives.
    fn union(&mut self, a: usize, b: usize, w: f64) -> usize {
        let (keep, gone) = if self.size[a] > self.size[b] || (self.size[a] == self.size[b] && a < b) {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[gone] = keep;
        self.size[keep] += self.size[gone];
        self.internal[keep] = w;
        keep
    }
}

#[derive(Clone, Copy)]
struct Edge {
    w: f64,
    a: usize,
    b: usize,
}

fn sort_edges(edges: &mut [Edge]) {
    edges.sort_by(|x, y| x.w.total_cmp(&y.w).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));
}

/// Separable Gaussian blur with clamped borders; `sigma <= 0` is a no-op.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let r = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let pass = |src: &Image, horizontal: bool| {
        let mut out = Image::new(w, h, ch);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for (ki, k) in kernel.iter().enumerate() {
                        let o = ki as isize - r;
                        let (sx, sy) = if horizontal {
                            ((x as isize + o).clamp(0, w as isize - 1) as usize, y)
                        } else {
                            (x, (y as isize + o).clamp(0, h as isize - 1) as usize)
                        };
                        acc += k * src.get(sx, sy, c);
                    }
                    out.set(x, y, c, acc);
                }
            }
        }
        out
    };
    pass(&pass(image, true), false)
}

fn color_distance(img: &Image, p: usize, q: usize) -> f64 {
    let w = img.width();
    let (a, b) = (img.pixel(p % w, p / w), img.pixel(q % w, q / w));
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() * 255.0
}

fn grid_edges(img: &Image, eight: bool) -> Vec<Edge> {
    let (w, h) = (img.width(), img.height());
    let mut edges = Vec::with_capacity(w * h * if eight { 4 } else { 2 });
    let mut push = |a: usize, b: usize| edges.push(Edge { w: color_distance(img, a, b), a, b });
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                push(p, p + 1);
            }
            if y + 1 < h {
                push(p, p + w);
                if eight && x + 1 < w {
                    push(p, p + w + 1);
                }
                if eight && x > 0 {
                    push(p, p + w - 1);
                }
            }
        }
    }
    edges
}

/// Segments an image whose channels lie in `[0, 1]`.
///
/// Edge weights are Euclidean color distances on the 0..255 scale over the
/// 8-neighborhood. After the greedy merge, segments are split into
/// 4-connected pieces and pieces below `min_size` are absorbed through their
/// cheapest 4-neighbor edge, so every output segment is 4-connected.
pub fn felzenszwalb_segment(image: &Image, params: &SegmentParams) -> Result<SuperpixelMap, SegmentError> {
    let (w, h) = (image.width(), image.height());
    if w < 2 || h < 2 {
        return Err(SegmentError::TooSmall(w, h));
    }
    if !(params.k > 0.0) {
        return Err(SegmentError::InvalidParameter(format!("k must be positive, got {}", params.k)));
    }
    if params.min_size == 0 {
        return Err(SegmentError::InvalidParameter("min_size must be at least 1".into()));
    }
    let smooth = gaussian_blur(image, params.sigma);
    let n = w * h;

    let mut edges = grid_edges(&smooth, true);
    sort_edges(&mut edges);
    let mut ds = DisjointSet::new(n);
    for e in &edges {
        let (a, b) = (ds.find(e.a), ds.find(e.b));
        if a == b {
            continue;
        }
        let ta = ds.internal[a] + params.k / ds.size[a] as f64;
        let tb = ds.internal[b] + params.k / ds.size[b] as f64;
        if e.w <= ta.min(tb) {
            ds.union(a, b, e.w);
        }
    }
    let coarse: Vec<usize> = (0..n).map(|p| ds.find(p)).collect();

    // 4-connected pieces of each segment
    let mut four = grid_edges(&smooth, false);
    sort_edges(&mut four);
    let mut pieces = DisjointSet::new(n);
    for e in &four {
        if coarse[e.a] == coarse[e.b] {
            let (a, b) = (pieces.find(e.a), pieces.find(e.b));
            if a != b {
                pieces.union(a, b, e.w);
            }
        }
    }
    for e in &four {
        let (a, b) = (pieces.find(e.a), pieces.find(e.b));
        if a != b && (pieces.size[a] < params.min_size || pieces.size[b] < params.min_size) {
            pieces.union(a, b, e.w);
        }
    }

    let mut remap = vec![u32::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut next = 0u32;
    for p in 0..n {
        let r = pieces.find(p);
        if remap[r] == u32::MAX {
            remap[r] = next;
            next += 1;
        }
        labels.push(remap[r]);
    }
    Ok(SuperpixelMap {
        width: w,
        height: h,
        labels,
        num_segments: next as usize,
    })
}
