//! File formats: PFM/PNG rasters, PLY meshes, trajectories, fragment
//! manifests and binary grid checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Matrix4;
use thiserror::Error;

use crate::fusion::Fragment;
use crate::geometry::{CameraGeometry, Intrinsics, Pose, Vec3};
use crate::mesh::TriangleMesh;
use crate::raster::{DepthMap, Image};
use crate::voxel::{GridGeometry, VoxelGrid};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn bad(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Single-channel little-endian PFM (scale -1), rows stored bottom to top.
pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(32 + width * height * 4);
    out.extend_from_slice(format!("Pf\n{width} {height}\n-1\n").as_bytes());
    for y in (0..height).rev() {
        for x in 0..width {
            out.extend_from_slice(&(data[y * width + x] as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a single-channel PFM of either endianness.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>), IoError> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(bad(path, format!("unsupported PFM kind {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(path, format!("bad size {s:?}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f64 = fields[3].parse().map_err(|_| bad(path, "bad scale"))?;
    let payload = bytes.get(pos..pos + w * h * 4).ok_or_else(|| bad(path, "truncated payload"))?;
    let mut data = vec![0.0; w * h];
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let raw = [c[0], c[1], c[2], c[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (x, row) = (i % w, i / w);
        data[(h - 1 - row) * w + x] = v as f64;
    }
    Ok((w, h, data))
}

pub fn write_depth_pfm(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    write_pfm(path, depth.width(), depth.height(), depth.data())
}

pub fn read_depth_pfm(path: &Path) -> Result<DepthMap, IoError> {
    let (w, h, d) = read_pfm(path)?;
    Ok(DepthMap::from_vec(w, h, d))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit PNG of a 1- or 3-channel image with values in `[0, 1]`.
pub fn write_png(path: &Path, img: &Image) -> Result<(), IoError> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    match img.channels() {
        3 => image::RgbImage::from_raw(w, h, img.data().iter().map(|&v| to_u8(v)).collect())
            .expect("buffer size")
            .save(path)?,
        1 => image::GrayImage::from_raw(w, h, img.data().iter().map(|&v| to_u8(v)).collect())
            .expect("buffer size")
            .save(path)?,
        c => return Err(bad(path, format!("cannot write {c}-channel PNG"))),
    }
    Ok(())
}

/// Any PNG as an RGB image in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Image, IoError> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Image::from_vec(
        w as usize,
        h as usize,
        3,
        rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    ))
}

/// 16-bit grayscale depth preview in millimeters (0 = invalid).
pub fn write_depth_png16(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    let buf: Vec<u16> = depth.data().iter().map(|&d| (d * 1000.0).round().clamp(0.0, 65535.0) as u16).collect();
    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, buf)
        .expect("buffer size")
        .save(path)?;
    Ok(())
}

/// ASCII PLY with optional vertex normals.
pub fn write_ply(path: &Path, mesh: &TriangleMesh) -> Result<(), IoError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let normals = mesh.normals.len() == mesh.vertices.len() && !mesh.vertices.is_empty();
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if normals {
        writeln!(w, "property float nx\nproperty float ny\nproperty float nz")?;
    }
    writeln!(w, "element face {}\nproperty list uchar int vertex_indices\nend_header", mesh.triangles.len())?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        if normals {
            let n = mesh.normals[i];
            writeln!(w, "{} {} {} {} {} {}", v.x, v.y, v.z, n.x, n.y, n.z)?;
        } else {
            writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
        }
    }
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads ASCII PLY files with `x y z` leading each vertex and triangle or
/// polygon faces (polygons are fanned).
pub fn read_ply(path: &Path) -> Result<TriangleMesh, IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad(path, "missing ply magic"));
    }
    let (mut nv, mut nf) = (0usize, 0usize);
    let mut vertex_props = 0usize;
    let mut current = "";
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad(path, "only ASCII PLY is supported")),
            ["element", "vertex", n] => {
                nv = n.parse().map_err(|_| bad(path, "bad vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                nf = n.parse().map_err(|_| bad(path, "bad face count"))?;
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", ..] if current == "vertex" => vertex_props += 1,
            ["end_header"] => break,
            _ => {}
        }
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(path, format!("bad number {s:?}")));
    let mut mesh = TriangleMesh::default();
    let mut normals = Vec::new();
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| bad(path, "truncated vertices"))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 3 || t.len() < vertex_props {
            return Err(bad(path, "short vertex line"));
        }
        mesh.vertices.push(Vec3::new(num(t[0])?, num(t[1])?, num(t[2])?));
        if vertex_props >= 6 {
            normals.push(Vec3::new(num(t[3])?, num(t[4])?, num(t[5])?));
        }
    }
    for _ in 0..nf {
        let line = lines.next().ok_or_else(|| bad(path, "truncated faces"))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(path, format!("bad index {s:?}"))))
            .collect::<Result<_, _>>()?;
        let (&k, rest) = idx.split_first().ok_or_else(|| bad(path, "empty face"))?;
        if rest.len() != k || k < 3 || rest.iter().any(|&i| i >= nv) {
            return Err(bad(path, "malformed face"));
        }
        for j in 1..k - 1 {
            mesh.triangles.push([rest[0], rest[j], rest[j + 1]]);
        }
    }
    if normals.len() == mesh.vertices.len() {
        mesh.normals = normals;
    }
    Ok(mesh)
}

/// One line per frame: index, the 16 row-major entries of the
/// world-to-camera matrix, then `fx fy cx cy width height`.
pub fn write_trajectory(path: &Path, cams: &[CameraGeometry]) -> Result<(), IoError> {
    let mut s = String::new();
    for (i, c) in cams.iter().enumerate() {
        let m = c.pose.to_matrix();
        write!(s, "{i}").unwrap();
        for r in 0..4 {
            for col in 0..4 {
                write!(s, " {}", m[(r, col)]).unwrap();
            }
        }
        let k = &c.intrinsics;
        writeln!(s, " {} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height).unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<CameraGeometry>, IoError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.is_empty() {
            continue;
        }
        if t.len() != 23 {
            return Err(bad(path, format!("line {}: expected 23 fields, got {}", ln + 1, t.len())));
        }
        let v: Vec<f64> = t[1..21]
            .iter()
            .map(|s| s.parse().map_err(|_| bad(path, format!("line {}: bad number {s:?}", ln + 1))))
            .collect::<Result<_, _>>()?;
        let size = |s: &str| s.parse::<usize>().map_err(|_| bad(path, format!("line {}: bad size {s:?}", ln + 1)));
        let m = Matrix4::from_row_slice(&v[..16]);
        let pose = Pose::from_matrix(&m).map_err(|e| bad(path, format!("line {}: {e}", ln + 1)))?;
        let intr = Intrinsics::new(v[16], v[17], v[18], v[19], size(t[21])?, size(t[22])?)
            .map_err(|e| bad(path, format!("line {}: {e}", ln + 1)))?;
        out.push(CameraGeometry::new(intr, pose));
    }
    Ok(out)
}

/// `fragment <i> keyframes=a,b,... origin=x,y,z dims=nx,ny,nz`
pub fn format_manifest(fragments: &[Fragment]) -> String {
    let mut s = String::new();
    for f in fragments {
        let frames: Vec<String> = f.frames.iter().map(|i| i.to_string()).collect();
        let o = f.region.origin;
        let d = f.region.dims;
        writeln!(
            s,
            "fragment {} keyframes={} origin={},{},{} dims={},{},{}",
            f.index,
            frames.join(","),
            o[0],
            o[1],
            o[2],
            d[0],
            d[1],
            d[2]
        )
        .unwrap();
    }
    s
}

const MAGIC: &[u8; 8] = b"VOXSDF01";

/// Header, `f32` SDF payload, then the validity bits (LSB first).
pub fn encode_checkpoint(grid: &VoxelGrid) -> Vec<u8> {
    let g = &grid.geometry;
    let n = grid.len();
    let mut out = Vec::with_capacity(8 + 12 + 40 + n * 4 + n.div_ceil(8));
    out.extend_from_slice(MAGIC);
    for d in g.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in g.origin.iter().chain([&g.voxel_size, &g.truncation]) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &s in &grid.sdf {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    let mut bits = vec![0u8; n.div_ceil(8)];
    for (i, &v) in grid.valid.iter().enumerate() {
        if v {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<VoxelGrid, IoError> {
    if bytes.len() < 60 || &bytes[..8] != MAGIC {
        return Err(bad(path, "not a grid checkpoint"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dims = [u32_at(8), u32_at(12), u32_at(16)];
    let geometry = GridGeometry::new(
        Vec3::new(f64_at(20), f64_at(28), f64_at(36)),
        f64_at(44),
        dims,
        f64_at(52),
    )
    .map_err(|e| bad(path, e.to_string()))?;
    let n = geometry.len();
    let body = &bytes[60..];
    if body.len() != n * 4 + n.div_ceil(8) {
        return Err(bad(path, format!("payload is {} bytes, expected {}", body.len(), n * 4 + n.div_ceil(8))));
    }
    let sdf = body[..n * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let bits = &body[n * 4..];
    let valid = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok(VoxelGrid { geometry, sdf, valid })
}

pub fn write_checkpoint(path: &Path, grid: &VoxelGrid) -> Result<(), IoError> {
    fs::write(path, encode_checkpoint(grid))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<VoxelGrid, IoError> {
    decode_checkpoint(&fs::read(path)?, path)
}
