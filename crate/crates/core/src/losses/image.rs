use super::LossError;
use crate::raster::{DepthMap, Image};

const WIN: usize = 7;
const HALF: usize = WIN / 2;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_same(a: &Image, b: &Image) -> Result<(), LossError> {
    if !a.same_shape(b) {
        return Err(LossError::SizeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    if a.width() < WIN || a.height() < WIN {
        return Err(LossError::SizeMismatch(format!(
            "SSIM needs at least {WIN}x{WIN} pixels, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

/// Summed-area table with a zero border row and column.
struct Integral {
    w: usize,
    t: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut t = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(x, y);
                t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, t }
    }

    /// Sum over `[x0, x1) x [y0, y1)`.
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.w + 1;
        self.t[y1 * s + x1] - self.t[y0 * s + x1] - self.t[y1 * s + x0] + self.t[y0 * s + x0]
    }
}

/// Per-window statistics and the partials of SSIM with respect to `a`.
fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Image>) {
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let (cw, chh) = (w - 2 * HALF, h - 2 * HALF);
    let n = (WIN * WIN) as f64;
    let count = (cw * chh * ch) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h, ch));

    for c in 0..ch {
        let ia = Integral::new(w, h, |x, y| a.get(x, y, c));
        let ib = Integral::new(w, h, |x, y| b.get(x, y, c));
        let iaa = Integral::new(w, h, |x, y| a.get(x, y, c).powi(2));
        let ibb = Integral::new(w, h, |x, y| b.get(x, y, c).powi(2));
        let iab = Integral::new(w, h, |x, y| a.get(x, y, c) * b.get(x, y, c));
        // coefficients of d S_w / d a_q = (alpha + beta a_q + gamma b_q) / n
        let mut coef = vec![[0.0f64; 3]; cw * chh];
        for cy in 0..chh {
            for cx in 0..cw {
                let (x0, y0, x1, y1) = (cx, cy, cx + WIN, cy + WIN);
                let ma = ia.sum(x0, y0, x1, y1) / n;
                let mb = ib.sum(x0, y0, x1, y1) / n;
                let va = iaa.sum(x0, y0, x1, y1) / n - ma * ma;
                let vb = ibb.sum(x0, y0, x1, y1) / n - mb * mb;
                let cov = iab.sum(x0, y0, x1, y1) / n - ma * mb;
                let num1 = 2.0 * ma * mb + C1;
                let num2 = 2.0 * cov + C2;
                let den1 = ma * ma + mb * mb + C1;
                let den2 = va + vb + C2;
                let s = num1 * num2 / (den1 * den2);
                total += s;
                if want_grad {
                    let ds_dma = 2.0 * mb * num2 / (den1 * den2) - s * 2.0 * ma / den1;
                    let ds_dva = -s / den2;
                    let ds_dcov = 2.0 * num1 / (den1 * den2);
                    coef[cy * cw + cx] = [
                        ds_dma - 2.0 * ma * ds_dva - mb * ds_dcov,
                        2.0 * ds_dva,
                        ds_dcov,
                    ];
                }
            }
        }
        if let Some(g) = grad.as_mut() {
            let sums: Vec<Integral> = (0..3)
                .map(|k| Integral::new(cw, chh, |x, y| coef[y * cw + x][k]))
                .collect();
            for y in 0..h {
                // window centers (in center-grid coordinates) covering pixel y
                let y0 = y.saturating_sub(WIN - 1);
                let y1 = (y + 1).min(chh);
                for x in 0..w {
                    let x0 = x.saturating_sub(WIN - 1);
                    let x1 = (x + 1).min(cw);
                    if x0 >= x1 || y0 >= y1 {
                        continue;
                    }
                    let al = sums[0].sum(x0, y0, x1, y1);
                    let be = sums[1].sum(x0, y0, x1, y1);
                    let ga = sums[2].sum(x0, y0, x1, y1);
                    let v = (al + be * a.get(x, y, c) + ga * b.get(x, y, c)) / (n * count);
                    g.set(x, y, c, v);
                }
            }
        }
    }
    (total / count, grad)
}

/// Mean SSIM over all fully contained 7x7 windows and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, LossError> {
    check_same(a, b)?;
    Ok(ssim_impl(a, b, false).0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_grad(a: &Image, b: &Image) -> Result<(f64, Image), LossError> {
    check_same(a, b)?;
    let (s, g) = ssim_impl(a, b, true);
    Ok((s, g.unwrap()))
}

fn edge_weights(image: &Image) -> (Vec<f64>, Vec<f64>) {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let diff = |x0: usize, y0: usize, x1: usize, y1: usize| {
        let s: f64 = (0..ch).map(|c| (image.get(x1, y1, c) - image.get(x0, y0, c)).abs()).sum();
        (-s / ch as f64).exp()
    };
    let mut wu = vec![0.0; w * h];
    let mut wv = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                wu[y * w + x] = diff(x, y, x + 1, y);
            }
            if y + 1 < h {
                wv[y * w + x] = diff(x, y, x, y + 1);
            }
        }
    }
    (wu, wv)
}

fn smooth_impl(depth: &[f64], w: usize, h: usize, image: &Image, want_grad: bool) -> (f64, Vec<f64>) {
    let n = depth.len();
    let mean = depth.iter().sum::<f64>() / n as f64;
    let mut grad = vec![0.0; if want_grad { n } else { 0 }];
    if !(mean > 0.0) {
        return (0.0, grad);
    }
    let (wu, wv) = edge_weights(image);
    let nu = ((w - 1) * h) as f64;
    let nv = (w * (h - 1)) as f64;
    let mut value = 0.0;
    // gradient with respect to the normalized depth
    let mut gn = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                let d = (depth[p + 1] - depth[p]) / mean;
                value += d.abs() * wu[p] / nu;
                let s = if d == 0.0 { 0.0 } else { d.signum() } * wu[p] / nu;
                gn[p + 1] += s;
                gn[p] -= s;
            }
            if y + 1 < h {
                let d = (depth[p + w] - depth[p]) / mean;
                value += d.abs() * wv[p] / nv;
                let s = if d == 0.0 { 0.0 } else { d.signum() } * wv[p] / nv;
                gn[p + w] += s;
                gn[p] -= s;
            }
        }
    }
    if want_grad {
        let dot: f64 = gn.iter().zip(depth).map(|(g, d)| g * d).sum();
        for q in 0..n {
            grad[q] = gn[q] / mean - dot / (mean * mean * n as f64);
        }
    }
    (value, grad)
}

/// Edge-aware first-order smoothness of mean-normalized depth.
pub fn smooth_loss(depth: &DepthMap, image: &Image) -> Result<f64, LossError> {
    check_depth(depth, image)?;
    Ok(smooth_impl(depth.data(), depth.width(), depth.height(), image, false).0)
}

/// [`smooth_loss`] on raw values, with its gradient.
pub fn smooth_loss_grad(depth: &[f64], image: &Image) -> Result<(f64, Vec<f64>), LossError> {
    if depth.len() != image.width() * image.height() {
        return Err(LossError::SizeMismatch(format!(
            "{} depth values for a {}x{} image",
            depth.len(),
            image.width(),
            image.height()
        )));
    }
    Ok(smooth_impl(depth, image.width(), image.height(), image, true))
}

fn check_depth(depth: &DepthMap, image: &Image) -> Result<(), LossError> {
    if depth.width() != image.width() || depth.height() != image.height() {
        return Err(LossError::SizeMismatch(format!(
            "depth {}x{} vs image {}x{}",
            depth.width(),
            depth.height(),
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// One rendered view: color and raw (possibly zero) depth values.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPair {
    pub image: Image,
    pub depth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NerfLoss {
    pub value: f64,
    pub per_view: Vec<f64>,
    pub d_image: Vec<Image>,
    pub d_depth: Vec<Vec<f64>>,
}

/// Mean L1 color error, smoothness and `1 - SSIM`, summed over views. Edges
/// for the smoothness weights come from the input images.
pub fn nerf_loss(rendered: &[RenderedPair], inputs: &[Image]) -> Result<NerfLoss, LossError> {
    if rendered.is_empty() {
        return Err(LossError::TooFew(1, 0));
    }
    if rendered.len() != inputs.len() {
        return Err(LossError::SizeMismatch(format!(
            "{} renderings for {} inputs",
            rendered.len(),
            inputs.len()
        )));
    }
    let mut out = NerfLoss {
        value: 0.0,
        per_view: Vec::with_capacity(inputs.len()),
        d_image: Vec::with_capacity(inputs.len()),
        d_depth: Vec::with_capacity(inputs.len()),
    };
    for (r, input) in rendered.iter().zip(inputs) {
        check_same(&r.image, input)?;
        let n = r.image.data().len() as f64;
        let (ssim_v, mut d_img) = ssim_grad(&r.image, input)?;
        let mut rgb = 0.0;
        for ((g, &x), &y) in d_img.data_mut().iter_mut().zip(r.image.data()).zip(input.data()) {
            let d = x - y;
            rgb += d.abs();
            *g = -*g + if d == 0.0 { 0.0 } else { d.signum() } / n;
        }
        let (smooth, d_depth) = smooth_loss_grad(&r.depth, input)?;
        let v = rgb / n + smooth + (1.0 - ssim_v);
        out.value += v;
        out.per_view.push(v);
        out.d_image.push(d_img);
        out.d_depth.push(d_depth);
    }
    Ok(out)
}
