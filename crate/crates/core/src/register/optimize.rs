use ndarray::{Array4, ArrayView3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::smooth::{smoothness_grad_into, smoothness_raw};
use super::ssim::{check_shapes, reference_sums, ssim_slice_with};
use super::warp::warp_lattice;
use super::{RegistrationConfig, RegistrationError, SsimParams, VectorField3D};
use crate::imgvol::Lattice;

/// Loss components: `total = sim + lambda * smooth`, `sim = 1 - SSIM3D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub sim: f64,
    pub smooth: f64,
}

/// Optimization record of one pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: usize,
    pub shape: [usize; 3],
    pub iterations: usize,
    pub start_loss: f64,
    pub end_loss: f64,
    /// Full-resolution loss of the best field after this level.
    pub full_res_loss: f64,
    /// Whether this level's result improved the full-resolution loss.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRegistration {
    pub field: VectorField3D,
    pub initial_loss: f64,
    pub levels: Vec<LevelTrace>,
}

impl PairRegistration {
    pub fn final_loss(&self) -> f64 {
        self.levels.last().map_or(self.initial_loss, |l| l.full_res_loss)
    }
}

/// One resolution of the fixed/moving pair.
struct Level {
    dims: [usize; 3],
    fixed: Vec<f64>,
    moving: Vec<f64>,
}

struct Objective<'a> {
    level: &'a Level,
    params: SsimParams,
    lambda: f64,
    /// Window sums of every fixed slice.
    fixed_sums: Vec<Vec<[f64; 2]>>,
}

impl<'a> Objective<'a> {
    fn new(level: &'a Level, params: SsimParams, lambda: f64) -> Self {
        let [nz, ny, nx] = level.dims;
        let plane = ny * nx;
        let fixed_sums = (0..nz)
            .into_par_iter()
            .map(|z| reference_sums(&level.fixed[z * plane..(z + 1) * plane], ny, nx, params.window))
            .collect();
        Self { level, params, lambda, fixed_sums }
    }

    fn eval(&self, disp: &[f64], want_grad: bool) -> (LossValue, Vec<f64>) {
        let [nz, ny, nx] = self.level.dims;
        let plane = ny * nx;
        let lat = Lattice::new(&self.level.moving, self.level.dims);
        let (warped, igrad) = warp_lattice(&lat, disp, want_grad);
        let slice = |z: usize, g: Option<(&mut [f64], f64)>| {
            let r = z * plane..(z + 1) * plane;
            ssim_slice_with(&self.level.fixed[r.clone()], &self.fixed_sums[z], &warped[r], ny, nx, &self.params, g)
        };
        let mut grad = Vec::new();
        let ssim_sum: f64 = if want_grad {
            // d loss / d y, expanded in place to d loss / d u
            grad = vec![0.0; disp.len()];
            let scale = -1.0 / nz as f64;
            grad.par_chunks_mut(plane * 3)
                .zip(igrad.par_chunks(plane * 3))
                .enumerate()
                .map(|(z, (g, ig))| {
                    let s = slice(z, Some((&mut g[..plane], scale)));
                    for k in (0..plane).rev() {
                        let d = g[k];
                        for c in 0..3 {
                            g[k * 3 + c] = d * ig[k * 3 + c];
                        }
                    }
                    s
                })
                .sum()
        } else {
            (0..nz).into_par_iter().map(|z| slice(z, None)).sum()
        };
        let smooth = if want_grad {
            smoothness_grad_into(disp, self.level.dims, self.lambda, &mut grad)
        } else {
            smoothness_raw(disp, self.level.dims)
        };
        let sim = 1.0 - ssim_sum / nz as f64;
        let value = LossValue {
            total: sim + self.lambda * smooth,
            sim,
            smooth,
        };
        (value, grad)
    }
}

fn check_pair(fixed: &ArrayView3<'_, f64>, moving: &ArrayView3<'_, f64>, cfg: &RegistrationConfig) -> Result<(), RegistrationError> {
    cfg.validate()?;
    check_shapes(fixed.shape(), moving.shape(), cfg.ssim_window)
}

fn full_level(fixed: ArrayView3<'_, f64>, moving: ArrayView3<'_, f64>) -> Level {
    let (z, y, x) = fixed.dim();
    Level {
        dims: [z, y, x],
        fixed: fixed.iter().copied().collect(),
        moving: moving.iter().copied().collect(),
    }
}

/// Evaluates the registration loss of `field` for warping `moving` onto `fixed`.
pub fn loss(
    fixed: ArrayView3<'_, f64>,
    moving: ArrayView3<'_, f64>,
    field: &VectorField3D,
    cfg: &RegistrationConfig,
) -> Result<LossValue, RegistrationError> {
    check_pair(&fixed, &moving, cfg)?;
    check_field(&fixed, field)?;
    let level = full_level(fixed, moving);
    let obj = Objective::new(&level, cfg.ssim_params(fixed), cfg.lambda);
    Ok(obj.eval(field.as_slice(), false).0)
}

/// Loss and its analytic gradient with respect to every displacement component.
pub fn loss_gradient(
    fixed: ArrayView3<'_, f64>,
    moving: ArrayView3<'_, f64>,
    field: &VectorField3D,
    cfg: &RegistrationConfig,
) -> Result<(LossValue, Array4<f64>), RegistrationError> {
    check_pair(&fixed, &moving, cfg)?;
    check_field(&fixed, field)?;
    let level = full_level(fixed, moving);
    let obj = Objective::new(&level, cfg.ssim_params(fixed), cfg.lambda);
    let (v, g) = obj.eval(field.as_slice(), true);
    let [z, y, x] = level.dims;
    Ok((v, Array4::from_shape_vec((z, y, x, 3), g).expect("shape")))
}

fn check_field(fixed: &ArrayView3<'_, f64>, field: &VectorField3D) -> Result<(), RegistrationError> {
    let (z, y, x) = fixed.dim();
    if field.dims() != [z, y, x] {
        return Err(RegistrationError::ShapeMismatch(format!(
            "image {:?} vs field {:?}",
            [z, y, x],
            field.dims()
        )));
    }
    Ok(())
}

/// Per-axis coarsening factors for the next pyramid level, or `None` when
/// the in-plane size would drop below the SSIM window.
fn coarsen_factors(dims: [usize; 3], window: usize) -> Option<[usize; 3]> {
    if dims[1] / 2 < window || dims[2] / 2 < window {
        return None;
    }
    Some([if dims[0] >= 4 { 2 } else { 1 }, 2, 2])
}

fn downsample(src: &[f64], dims: [usize; 3], f: [usize; 3], comps: usize) -> (Vec<f64>, [usize; 3]) {
    let out = [dims[0] / f[0], dims[1] / f[1], dims[2] / f[2]];
    let norm = 1.0 / (f[0] * f[1] * f[2]) as f64;
    let mut dst = vec![0.0; out[0] * out[1] * out[2] * comps];
    for z in 0..out[0] {
        for y in 0..out[1] {
            for x in 0..out[2] {
                let o = ((z * out[1] + y) * out[2] + x) * comps;
                for a in 0..f[0] {
                    for b in 0..f[1] {
                        for c in 0..f[2] {
                            let i = (((z * f[0] + a) * dims[1] + y * f[1] + b) * dims[2] + x * f[2] + c) * comps;
                            for k in 0..comps {
                                dst[o + k] += src[i + k];
                            }
                        }
                    }
                }
                for k in 0..comps {
                    dst[o + k] *= norm;
                }
            }
        }
    }
    (dst, out)
}

/// Restricts a displacement field to the coarser grid, rescaling values.
fn restrict_field(disp: &[f64], dims: [usize; 3], f: [usize; 3]) -> Vec<f64> {
    let (mut d, _) = downsample(disp, dims, f, 3);
    for v in d.chunks_exact_mut(3) {
        for a in 0..3 {
            v[a] /= f[a] as f64;
        }
    }
    d
}

/// Trilinear prolongation of a coarse field onto `fine` dims, rescaling values.
fn prolong_field(disp: &[f64], coarse: [usize; 3], fine: [usize; 3], f: [usize; 3]) -> Vec<f64> {
    let n = coarse[0] * coarse[1] * coarse[2];
    let comps: Vec<Vec<f64>> = (0..3).map(|c| (0..n).map(|i| disp[i * 3 + c]).collect()).collect();
    let lats: Vec<Lattice<'_>> = comps.iter().map(|c| Lattice::new(c, coarse)).collect();
    let map = |j: usize, a: usize| {
        if f[a] == 1 {
            j as f64
        } else {
            (j as f64 + 0.5) / f[a] as f64 - 0.5
        }
    };
    let mut out = vec![0.0; fine[0] * fine[1] * fine[2] * 3];
    for z in 0..fine[0] {
        for y in 0..fine[1] {
            for x in 0..fine[2] {
                let c = [map(z, 0), map(y, 1), map(x, 2)];
                let o = ((z * fine[1] + y) * fine[2] + x) * 3;
                for a in 0..3 {
                    out[o + a] = lats[a].sample(c) * f[a] as f64;
                }
            }
        }
    }
    out
}

/// Fixed-step gradient descent; the step is halved on loss increase.
fn descend(
    obj: &Objective<'_>,
    disp: &mut Vec<f64>,
    cfg: &RegistrationConfig,
    level: usize,
) -> Result<(usize, f64, f64), RegistrationError> {
    let (mut cur, mut grad) = obj.eval(disp, true);
    if !cur.total.is_finite() {
        return Err(RegistrationError::NonFinite { level, iteration: 0 });
    }
    let start = cur.total;
    let gmax = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax == 0.0 {
        return Ok((0, start, start));
    }
    let mut eta = cfg.step_size / gmax;
    let mut trial = vec![0.0; disp.len()];
    let mut iters = 0;
    'outer: for it in 1..=cfg.iters_per_level {
        iters = it;
        let mut halvings = 0;
        loop {
            for ((t, d), g) in trial.iter_mut().zip(disp.iter()).zip(&grad) {
                *t = d - eta * g;
            }
            let (next, next_grad) = obj.eval(&trial, true);
            if !next.total.is_finite() {
                return Err(RegistrationError::NonFinite { level, iteration: it });
            }
            if next.total < cur.total {
                let rel = (cur.total - next.total) / cur.total.abs().max(1e-12);
                std::mem::swap(disp, &mut trial);
                cur = next;
                grad = next_grad;
                if rel < cfg.convergence_tol {
                    break 'outer;
                }
                break;
            }
            halvings += 1;
            eta *= 0.5;
            if halvings > 30 {
                break 'outer;
            }
        }
    }
    Ok((iters, start, cur.total))
}

/// Registers `moving` onto `fixed`; unit grid spacing.
pub fn register_pair(
    moving: ArrayView3<'_, f64>,
    fixed: ArrayView3<'_, f64>,
    cfg: &RegistrationConfig,
) -> Result<VectorField3D, RegistrationError> {
    register_pair_traced(moving, fixed, cfg, 1.0).map(|r| r.field)
}

/// Coarse-to-fine minimization of the loss. The returned field satisfies
/// `fixed(p) ~ moving(p + u(p))`; its full-resolution loss never exceeds
/// that of the zero field.
pub fn register_pair_traced(
    moving: ArrayView3<'_, f64>,
    fixed: ArrayView3<'_, f64>,
    cfg: &RegistrationConfig,
    grid_spacing: f64,
) -> Result<PairRegistration, RegistrationError> {
    check_pair(&fixed, &moving, cfg)?;
    if !(grid_spacing > 0.0 && grid_spacing.is_finite()) {
        return Err(RegistrationError::InvalidConfig(format!("grid spacing must be positive, got {grid_spacing}")));
    }
    let params = cfg.ssim_params(fixed);
    let mut levels = vec![full_level(fixed, moving)];
    let mut factors: Vec<[usize; 3]> = Vec::new();
    while levels.len() < cfg.pyramid_levels {
        let last = levels.last().unwrap();
        let Some(f) = coarsen_factors(last.dims, cfg.ssim_window) else { break };
        let (fx, dims) = downsample(&last.fixed, last.dims, f, 1);
        let (mv, _) = downsample(&last.moving, last.dims, f, 1);
        factors.push(f);
        levels.push(Level { dims, fixed: fx, moving: mv });
    }
    let full = Objective::new(&levels[0], params, cfg.lambda);
    let n0 = levels[0].fixed.len() * 3;
    let mut best = vec![0.0; n0];
    let initial_loss = full.eval(&best, false).0.total;
    if !initial_loss.is_finite() {
        return Err(RegistrationError::NonFinite { level: 0, iteration: 0 });
    }
    let mut best_loss = initial_loss;
    let mut trace = Vec::new();

    let coarsest = levels.len() - 1;
    let mut disp = restrict_to(&best, &levels, &factors, coarsest);
    for l in (0..=coarsest).rev() {
        let obj = Objective::new(&levels[l], params, cfg.lambda);
        let (iterations, start_loss, end_loss) = descend(&obj, &mut disp, cfg, l)?;
        let candidate = prolong_to_full(&disp, &levels, &factors, l);
        let cand_loss = if l == 0 { end_loss } else { full.eval(&candidate, false).0.total };
        if !cand_loss.is_finite() {
            return Err(RegistrationError::NonFinite { level: l, iteration: iterations });
        }
        let accepted = cand_loss <= best_loss;
        if accepted {
            best = candidate;
            best_loss = cand_loss;
        }
        trace.push(LevelTrace {
            level: l,
            shape: levels[l].dims,
            iterations,
            start_loss,
            end_loss,
            full_res_loss: best_loss,
            accepted,
        });
        if l > 0 {
            disp = if accepted {
                prolong_field(&disp, levels[l].dims, levels[l - 1].dims, factors[l - 1])
            } else {
                restrict_to(&best, &levels, &factors, l - 1)
            };
        }
    }
    let [z, y, x] = levels[0].dims;
    let field = VectorField3D::new(Array4::from_shape_vec((z, y, x, 3), best).expect("shape"), grid_spacing)?;
    Ok(PairRegistration { field, initial_loss, levels: trace })
}

fn restrict_to(full: &[f64], levels: &[Level], factors: &[[usize; 3]], target: usize) -> Vec<f64> {
    let mut d = full.to_vec();
    for l in 0..target {
        d = restrict_field(&d, levels[l].dims, factors[l]);
    }
    d
}

fn prolong_to_full(disp: &[f64], levels: &[Level], factors: &[[usize; 3]], from: usize) -> Vec<f64> {
    let mut d = disp.to_vec();
    for l in (0..from).rev() {
        d = prolong_field(&d, levels[l + 1].dims, levels[l].dims, factors[l]);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(dims: (usize, usize, usize), c: [f64; 3], s: f64) -> Array3<f64> {
        Array3::from_shape_fn(dims, |(z, y, x)| {
            let r2 = (z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2);
            (-r2 / (2.0 * s * s)).exp()
        })
    }

    #[test]
    fn aligned_pair_stays_near_zero() {
        let f = blob((8, 24, 24), [3.5, 11.5, 11.5], 3.0);
        let u = register_pair(f.view(), f.view(), &RegistrationConfig::default()).unwrap();
        assert!(u.magnitudes().mean().unwrap() < 0.05);
    }

    #[test]
    fn recovers_unit_translation() {
        let dims = (10, 32, 32);
        let fixed = blob(dims, [4.5, 15.5, 15.0], 3.0);
        let moving = blob(dims, [4.5, 15.5, 16.0], 3.0);
        let r = register_pair_traced(moving.view(), fixed.view(), &RegistrationConfig::default(), 1.0).unwrap();
        let support = fixed.mapv(|v| v > 0.2);
        let mut err = 0.0;
        let mut n = 0;
        for ((z, y, x), &m) in support.indexed_iter() {
            if m {
                let u = r.field.vector(z, y, x);
                err += (u[0].powi(2) + u[1].powi(2) + (u[2] - 1.0).powi(2)).sqrt();
                n += 1;
            }
        }
        assert!(err / (n as f64) < 0.5, "epe {}", err / n as f64);
        assert!(r.final_loss() <= r.initial_loss);
    }

    #[test]
    fn level_trace_is_non_increasing() {
        let dims = (8, 28, 28);
        let fixed = blob(dims, [3.5, 13.0, 13.5], 4.0);
        let moving = blob(dims, [3.5, 14.2, 13.0], 3.6);
        let r = register_pair_traced(moving.view(), fixed.view(), &RegistrationConfig::default(), 2.5).unwrap();
        let mut prev = r.initial_loss;
        for l in &r.levels {
            assert!(l.full_res_loss <= prev);
            prev = l.full_res_loss;
        }
        assert_eq!(r.field.grid_spacing(), 2.5);
    }

    #[test]
    fn zero_lambda_total_is_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Array3::from_shape_fn((3, 8, 8), |_| rng.random_range(0.0..1.0));
        let b = Array3::from_shape_fn((3, 8, 8), |_| rng.random_range(0.0..1.0));
        let u = VectorField3D::from_fn([3, 8, 8], 1.0, |z, y, x| [0.1 * z as f64, -0.05 * y as f64, 0.2 * (x as f64).sin()]);
        let cfg = RegistrationConfig { lambda: 0.0, ..Default::default() };
        let v = loss(a.view(), b.view(), &u, &cfg).unwrap();
        assert_eq!(v.total, v.sim);
        let cfg = RegistrationConfig { lambda: 0.37, ..Default::default() };
        let v = loss(a.view(), b.view(), &u, &cfg).unwrap();
        assert!((v.total - (v.sim + 0.37 * v.smooth)).abs() < 1e-9);
        let same = loss(a.view(), a.view(), &VectorField3D::zeros([3, 8, 8], 1.0), &cfg).unwrap();
        assert!(same.sim.abs() < 1e-6 && same.smooth == 0.0);
    }

    #[test]
    fn prolongation_preserves_uniform_fields() {
        let coarse = [4, 8, 8];
        let fine = [8, 16, 16];
        let d: Vec<f64> = (0..coarse.iter().product::<usize>()).flat_map(|_| [0.5, -0.25, 1.0]).collect();
        let up = prolong_field(&d, coarse, fine, [2, 2, 2]);
        for v in up.chunks_exact(3) {
            assert_eq!(v, [1.0, -0.5, 2.0]);
        }
        let back = restrict_field(&up, fine, [2, 2, 2]);
        assert_eq!(back, d);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let a = Array3::<f64>::zeros((2, 8, 8));
        let b = Array3::<f64>::zeros((2, 8, 9));
        assert!(register_pair(a.view(), b.view(), &RegistrationConfig::default()).is_err());
        let small = Array3::<f64>::zeros((2, 5, 5));
        assert!(matches!(
            register_pair(small.view(), small.view(), &RegistrationConfig::default()),
            Err(RegistrationError::TooSmall { .. })
        ));
    }
}
