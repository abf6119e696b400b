//! Uniform-window SSIM over all valid `N x N` windows, with the analytic
//! gradient with respect to the second image.

use ndarray::{ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use super::RegistrationError;

/// Window size and stabilizing constants of the SSIM index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl SsimParams {
    /// `c1 = (0.01 L)^2`, `c2 = (0.03 L)^2` for dynamic range `L`.
    pub fn from_dynamic_range(window: usize, range: f64) -> Self {
        let l = if range > 0.0 && range.is_finite() { range } else { 1.0 };
        Self {
            window,
            c1: (0.01 * l).powi(2),
            c2: (0.03 * l).powi(2),
        }
    }
}

/// Sums over every valid `n x n` window of `K` interleaved channels; output
/// is `(h-n+1) x (w-n+1)`.
fn box_valid<const K: usize>(src: &[[f64; K]], h: usize, w: usize, n: usize) -> Vec<[f64; K]> {
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut rows = vec![[0.0; K]; h * ow];
    for r in 0..h {
        let line = &src[r * w..(r + 1) * w];
        let out = &mut rows[r * ow..(r + 1) * ow];
        let mut acc = [0.0; K];
        for v in &line[..n] {
            for k in 0..K {
                acc[k] += v[k];
            }
        }
        out[0] = acc;
        for c in 1..ow {
            let (add, sub) = (line[c + n - 1], line[c - 1]);
            for k in 0..K {
                acc[k] += add[k] - sub[k];
            }
            out[c] = acc;
        }
    }
    let mut out = vec![[0.0; K]; oh * ow];
    out[..ow].copy_from_slice(&rows[..ow]);
    for r in 1..n {
        for c in 0..ow {
            for k in 0..K {
                out[c][k] += rows[r * ow + c][k];
            }
        }
    }
    for r in 1..oh {
        let (done, rest) = out.split_at_mut(r * ow);
        let prev = &done[(r - 1) * ow..];
        let add = &rows[(r + n - 1) * ow..(r + n) * ow];
        let sub = &rows[(r - 1) * ow..r * ow];
        for c in 0..ow {
            for k in 0..K {
                rest[c][k] = prev[c][k] + add[c][k] - sub[c][k];
            }
        }
    }
    out
}

/// Adjoint of [`box_valid`]: for every pixel, the sum of the window values
/// of all windows that contain it.
fn box_adjoint<const K: usize>(win: &[[f64; K]], h: usize, w: usize, n: usize) -> Vec<[f64; K]> {
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    // row pass: out-of-range windows contribute zero
    let mut rows = vec![[0.0; K]; oh * w];
    for r in 0..oh {
        let line = &win[r * ow..(r + 1) * ow];
        let out = &mut rows[r * w..(r + 1) * w];
        let mut acc = [0.0; K];
        for c in 0..w {
            if c < ow {
                for k in 0..K {
                    acc[k] += line[c][k];
                }
            }
            if c >= n {
                for k in 0..K {
                    acc[k] -= line[c - n][k];
                }
            }
            out[c] = acc;
        }
    }
    let mut out = vec![[0.0; K]; h * w];
    let mut acc = vec![[0.0; K]; w];
    for r in 0..h {
        if r < oh {
            for (a, v) in acc.iter_mut().zip(&rows[r * w..(r + 1) * w]) {
                for k in 0..K {
                    a[k] += v[k];
                }
            }
        }
        if r >= n {
            for (a, v) in acc.iter_mut().zip(&rows[(r - n) * w..(r - n + 1) * w]) {
                for k in 0..K {
                    a[k] -= v[k];
                }
            }
        }
        out[r * w..(r + 1) * w].copy_from_slice(&acc);
    }
    out
}

/// Window sums of the reference image: `[sum x, sum x^2]` per window.
pub(crate) fn reference_sums(x: &[f64], h: usize, w: usize, n: usize) -> Vec<[f64; 2]> {
    let src: Vec<[f64; 2]> = x.iter().map(|&v| [v, v * v]).collect();
    box_valid(&src, h, w, n)
}

/// Mean SSIM of one slice; when `grad` is given, it receives
/// `scale * d mean_ssim / d y` for every pixel.
pub(crate) fn ssim_slice(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    p: &SsimParams,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let sums = reference_sums(x, h, w, p.window);
    ssim_slice_with(x, &sums, y, h, w, p, grad)
}

/// [`ssim_slice`] with precomputed reference window sums.
pub(crate) fn ssim_slice_with(
    x: &[f64],
    xsums: &[[f64; 2]],
    y: &[f64],
    h: usize,
    w: usize,
    p: &SsimParams,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let n = p.window;
    let np = (n * n) as f64;
    let src: Vec<[f64; 3]> = x.iter().zip(y).map(|(&a, &b)| [b, b * b, a * b]).collect();
    let ysums = box_valid(&src, h, w, n);
    let nwin = ysums.len();

    let want_grad = grad.is_some();
    let mut coef = if want_grad { vec![[0.0; 3]; nwin] } else { Vec::new() };
    let mut total = 0.0;
    for i in 0..nwin {
        let [sx, sxx] = xsums[i];
        let [sy, syy, sxy] = ysums[i];
        let mx = sx / np;
        let my = sy / np;
        let vx = sxx / np - mx * mx;
        let vy = syy / np - my * my;
        let cxy = sxy / np - mx * my;
        let a1 = 2.0 * mx * my + p.c1;
        let a2 = 2.0 * cxy + p.c2;
        let b1 = mx * mx + my * my + p.c1;
        let b2 = vx + vy + p.c2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        if want_grad {
            // dS/dy_k = 2/(n B1 B2) [mx A2 + A1 (x_k - mx) - S (my B2 + B1 (y_k - my))]
            let k = 2.0 / (np * b1 * b2);
            coef[i] = [
                k * (mx * a2 - a1 * mx - s * my * b2 + s * b1 * my),
                k * a1,
                -k * s * b1,
            ];
        }
    }
    let inv = 1.0 / nwin as f64;
    if let Some((g, scale)) = grad {
        let adj = box_adjoint(&coef, h, w, n);
        let f = scale * inv;
        for k in 0..h * w {
            let [a, b, c] = adj[k];
            g[k] = f * (a + x[k] * b + y[k] * c);
        }
    }
    total * inv
}

pub(crate) fn check_shapes(xs: &[usize], ys: &[usize], window: usize) -> Result<(), RegistrationError> {
    if xs != ys {
        return Err(RegistrationError::ShapeMismatch(format!("{xs:?} vs {ys:?}")));
    }
    if window < 3 || window % 2 == 0 {
        return Err(RegistrationError::InvalidConfig(format!(
            "SSIM window must be odd and >= 3, got {window}"
        )));
    }
    let n = xs.len();
    if xs[n - 2] < window || xs[n - 1] < window {
        return Err(RegistrationError::TooSmall {
            shape: xs.to_vec(),
            window,
        });
    }
    Ok(())
}

/// Mean SSIM over all `N x N` windows of two equally sized 2D images.
pub fn ssim(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, params: &SsimParams) -> Result<f64, RegistrationError> {
    check_shapes(x.shape(), y.shape(), params.window)?;
    let (h, w) = x.dim();
    let xs = x.as_standard_layout();
    let ys = y.as_standard_layout();
    Ok(ssim_slice(
        xs.as_slice().unwrap(),
        ys.as_slice().unwrap(),
        h,
        w,
        params,
        None,
    ))
}

/// 2D SSIM averaged over the Z slices of two volumes.
pub fn ssim3d(x: ArrayView3<'_, f64>, y: ArrayView3<'_, f64>, params: &SsimParams) -> Result<f64, RegistrationError> {
    check_shapes(x.shape(), y.shape(), params.window)?;
    let (d, h, w) = x.dim();
    let xs = x.as_standard_layout();
    let ys = y.as_standard_layout();
    let (xs, ys) = (xs.as_slice().unwrap(), ys.as_slice().unwrap());
    let plane = h * w;
    let sum: f64 = (0..d)
        .map(|z| {
            let r = z * plane..(z + 1) * plane;
            ssim_slice(&xs[r.clone()], &ys[r], h, w, params, None)
        })
        .sum();
    Ok(sum / d as f64)
}
