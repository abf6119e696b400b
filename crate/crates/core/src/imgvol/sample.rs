use ndarray::ArrayView3;

/// Borrowed contiguous 3D grid in `(z, y, x)` C order.
#[derive(Debug, Clone, Copy)]
pub struct Lattice<'a> {
    data: &'a [f64],
    dims: [usize; 3],
}

#[derive(Debug, Clone, Copy)]
struct AxisCell {
    i0: usize,
    i1: usize,
    frac: f64,
    inside: bool,
}

#[inline]
fn axis_cell(c: f64, n: usize) -> AxisCell {
    if n == 1 {
        return AxisCell {
            i0: 0,
            i1: 0,
            frac: 0.0,
            inside: false,
        };
    }
    let hi = (n - 1) as f64;
    let cc = c.clamp(0.0, hi);
    // cc >= 0, so truncation is floor
    let i0 = (cc as usize).min(n - 2);
    AxisCell {
        i0,
        i1: i0 + 1,
        frac: cc - i0 as f64,
        inside: (0.0..=hi).contains(&c),
    }
}

impl<'a> Lattice<'a> {
    pub fn new(data: &'a [f64], dims: [usize; 3]) -> Self {
        assert_eq!(data.len(), dims[0] * dims[1] * dims[2], "lattice size mismatch");
        Self { data, dims }
    }

    /// Borrows a standard-layout view; `None` if the view is not contiguous.
    pub fn from_view(view: &ArrayView3<'a, f64>) -> Option<Self> {
        let (z, y, x) = view.dim();
        view.to_slice().map(|s| Self::new(s, [z, y, x]))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    #[inline]
    fn corners(&self, cz: &AxisCell, cy: &AxisCell, cx: &AxisCell) -> [[[f64; 2]; 2]; 2] {
        let [_, ny, nx] = self.dims;
        let base = (cz.i0 * ny + cy.i0) * nx + cx.i0;
        let dz = (cz.i1 - cz.i0) * ny * nx;
        let dy = (cy.i1 - cy.i0) * nx;
        let dx = cx.i1 - cx.i0;
        let d = self.data;
        let row = |o: usize| [d[o], d[o + dx]];
        [[row(base), row(base + dy)], [row(base + dz), row(base + dz + dy)]]
    }

    /// Trilinear interpolation with clamp-to-edge borders.
    #[inline]
    pub fn sample(&self, coord: [f64; 3]) -> f64 {
        let cz = axis_cell(coord[0], self.dims[0]);
        let cy = axis_cell(coord[1], self.dims[1]);
        let cx = axis_cell(coord[2], self.dims[2]);
        let v = self.corners(&cz, &cy, &cx);
        let lerp = |a: f64, b: f64, f: f64| a * (1.0 - f) + b * f;
        let mut plane = [0.0; 2];
        for a in 0..2 {
            let r0 = lerp(v[a][0][0], v[a][0][1], cx.frac);
            let r1 = lerp(v[a][1][0], v[a][1][1], cx.frac);
            plane[a] = lerp(r0, r1, cy.frac);
        }
        let out = lerp(plane[0], plane[1], cz.frac);
        // rounding must not push the result outside the corner hull
        let (lo, hi) = v
            .iter()
            .flatten()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        out.clamp(lo, hi)
    }

    /// Interpolated value and its partial derivatives with respect to
    /// `(z, y, x)`. Derivatives along an axis vanish where that coordinate
    /// is clamped to the border.
    #[inline]
    pub fn sample_grad(&self, coord: [f64; 3]) -> (f64, [f64; 3]) {
        let cz = axis_cell(coord[0], self.dims[0]);
        let cy = axis_cell(coord[1], self.dims[1]);
        let cx = axis_cell(coord[2], self.dims[2]);
        let v = self.corners(&cz, &cy, &cx);
        let (fz, fy, fx) = (cz.frac, cy.frac, cx.frac);
        // x edges: value and x-difference
        let e = |a: usize, b: usize| {
            let (p, q) = (v[a][b][0], v[a][b][1]);
            (p + (q - p) * fx, q - p)
        };
        let (l00, d00) = e(0, 0);
        let (l01, d01) = e(0, 1);
        let (l10, d10) = e(1, 0);
        let (l11, d11) = e(1, 1);
        let p0 = l00 + (l01 - l00) * fy;
        let p1 = l10 + (l11 - l10) * fy;
        let q0 = d00 + (d01 - d00) * fy;
        let q1 = d10 + (d11 - d10) * fy;
        let val = p0 + (p1 - p0) * fz;
        let mut g = [
            p1 - p0,
            (l01 - l00) + ((l11 - l10) - (l01 - l00)) * fz,
            q0 + (q1 - q0) * fz,
        ];
        if !cz.inside {
            g[0] = 0.0;
        }
        if !cy.inside {
            g[1] = 0.0;
        }
        if !cx.inside {
            g[2] = 0.0;
        }
        (val, g)
    }
}

/// Trilinear interpolation of `frame` at continuous `(z, y, x)`; out-of-grid
/// coordinates replicate the border voxel.
pub fn trilinear_sample(frame: ArrayView3<'_, f64>, coord: [f64; 3]) -> f64 {
    match Lattice::from_view(&frame) {
        Some(l) => l.sample(coord),
        None => {
            let owned = frame.as_standard_layout().into_owned();
            let (z, y, x) = owned.dim();
            Lattice::new(owned.as_slice().unwrap(), [z, y, x]).sample(coord)
        }
    }
}

/// Value and spatial gradient of the trilinear interpolant at `coord`.
pub fn trilinear_sample_grad(frame: ArrayView3<'_, f64>, coord: [f64; 3]) -> (f64, [f64; 3]) {
    let owned;
    let lattice = match Lattice::from_view(&frame) {
        Some(l) => l,
        None => {
            owned = frame.as_standard_layout().into_owned();
            let (z, y, x) = owned.dim();
            Lattice::new(owned.as_slice().unwrap(), [z, y, x])
        }
    };
    lattice.sample_grad(coord)
}
