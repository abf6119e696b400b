use super::VectorField3D;

/// Sum over voxels of the squared forward-difference Jacobian of the
/// displacement. Differences that would leave the grid are omitted.
pub fn smoothness(field: &VectorField3D) -> f64 {
    smoothness_raw(field.as_slice(), field.dims())
}

pub(crate) fn smoothness_raw(disp: &[f64], dims: [usize; 3]) -> f64 {
    let mut total = 0.0;
    for_each_run(dims, |i, j, len| {
        total += disp[i..i + len]
            .iter()
            .zip(&disp[j..j + len])
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>();
    });
    total
}

/// Smoothness value; adds `scale * d smoothness / d disp` into `grad`.
pub(crate) fn smoothness_grad_into(disp: &[f64], dims: [usize; 3], scale: f64, grad: &mut [f64]) -> f64 {
    let k = 2.0 * scale;
    let mut total = 0.0;
    let mut diff = Vec::with_capacity(dims[2] * 3);
    for_each_run(dims, |i, j, len| {
        diff.clear();
        diff.extend(disp[i..i + len].iter().zip(&disp[j..j + len]).map(|(a, b)| b - a));
        total += diff.iter().map(|d| d * d).sum::<f64>();
        for (g, d) in grad[j..j + len].iter_mut().zip(&diff) {
            *g += k * d;
        }
        for (g, d) in grad[i..i + len].iter_mut().zip(&diff) {
            *g -= k * d;
        }
    });
    total
}

/// Calls `f(i, j, len)` for contiguous runs of flat offsets such that every
/// `(i + k, j + k)`, `k < len`, is a forward-difference pair `(p, p + e_a)`
/// inside the grid; the runs cover every pair exactly once, in a fixed order.
fn for_each_run(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let [nz, ny, nx] = dims;
    let row = nx * 3;
    let plane = ny * row;
    for z in 0..nz {
        for y in 0..ny {
            let i = z * plane + y * row;
            if nx > 1 {
                f(i, i + 3, row - 3);
            }
            if y + 1 < ny {
                f(i, i + row, row);
            }
            if z + 1 < nz {
                f(i, i + plane, row);
            }
        }
    }
}
