//! Raw-buffer kernels shared by the forward and backward passes.

use crate::tensor::fft::{retained_index, transform_axis};
use crate::tensor::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `y[b] = w * x[b] + bias` for `x: (batch, cin, p)`, `w: (cout, cin)`.
pub(crate) fn channel_linear(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    cin: usize,
    cout: usize,
    p: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * cout * p];
    for b in 0..batch {
        let xb = &x[b * cin * p..(b + 1) * cin * p];
        let yb = &mut y[b * cout * p..(b + 1) * cout * p];
        if let Some(bias) = bias {
            for (o, row) in yb.chunks_exact_mut(p).enumerate() {
                row.fill(bias[o]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        // SAFETY: slice lengths match the (m, k, n) dimensions and strides.
        unsafe {
            matrixmultiply::dgemm(
                cout,
                cin,
                p,
                1.0,
                w.as_ptr(),
                cin as isize,
                1,
                xb.as_ptr(),
                p as isize,
                1,
                beta,
                yb.as_mut_ptr(),
                p as isize,
                1,
            );
        }
    }
    y
}

/// Backward of [`channel_linear`]: accumulates into `gw` and `gb`, returns `gx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn channel_linear_backward(
    g: &[f64],
    x: &[f64],
    w: &[f64],
    batch: usize,
    cin: usize,
    cout: usize,
    p: usize,
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
    want_gx: bool,
) -> Option<Vec<f64>> {
    if let Some(gw) = gw {
        for b in 0..batch {
            let gbuf = &g[b * cout * p..(b + 1) * cout * p];
            let xb = &x[b * cin * p..(b + 1) * cin * p];
            // SAFETY: gw is cout x cin, gbuf is cout x p, xb^T is p x cin.
            unsafe {
                matrixmultiply::dgemm(
                    cout,
                    p,
                    cin,
                    1.0,
                    gbuf.as_ptr(),
                    p as isize,
                    1,
                    xb.as_ptr(),
                    1,
                    p as isize,
                    1.0,
                    gw.as_mut_ptr(),
                    cin as isize,
                    1,
                );
            }
        }
    }
    if let Some(gb) = gb {
        for b in 0..batch {
            for (o, row) in g[b * cout * p..(b + 1) * cout * p].chunks_exact(p).enumerate() {
                gb[o] += row.iter().sum::<f64>();
            }
        }
    }
    if !want_gx {
        return None;
    }
    let mut gx = vec![0.0; batch * cin * p];
    for b in 0..batch {
        let gbuf = &g[b * cout * p..(b + 1) * cout * p];
        let gxb = &mut gx[b * cin * p..(b + 1) * cin * p];
        // SAFETY: w^T is cin x cout, gbuf is cout x p, gxb is cin x p.
        unsafe {
            matrixmultiply::dgemm(
                cin,
                cout,
                p,
                1.0,
                w.as_ptr(),
                1,
                cin as isize,
                gbuf.as_ptr(),
                p as isize,
                1,
                0.0,
                gxb.as_mut_ptr(),
                p as isize,
                1,
            );
        }
    }
    Some(gx)
}

/// Geometry of a space-time spectral block: grid `(t, s1, ...)` and
/// per-axis cutoffs; the retained block has shape `2 * cutoffs`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Block {
    pub grid: Vec<usize>,
    pub cutoffs: Vec<usize>,
}

impl Block {
    pub fn grid_len(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn modes(&self) -> usize {
        self.cutoffs.iter().map(|c| 2 * c).product()
    }

    fn mid_shape(&self) -> Vec<usize> {
        let mut s = vec![self.grid[0]];
        s.extend(self.cutoffs[1..].iter().map(|c| 2 * c));
        s
    }
}

/// Copies retained entries of `src` (shape `src_shape`) into the compact
/// `dst`, or the reverse when `scatter` is set. `cutoffs[a] == None` marks an
/// axis that is copied whole.
fn move_retained(
    full: &mut [C64],
    full_shape: &[usize],
    compact: &mut [C64],
    cutoffs: &[Option<usize>],
    scatter: bool,
) {
    let rank = full_shape.len();
    let compact_shape: Vec<usize> = full_shape
        .iter()
        .zip(cutoffs)
        .map(|(&n, c)| c.map_or(n, |c| 2 * c))
        .collect();
    let strides = crate::tensor::strides(full_shape);
    let maps: Vec<Vec<usize>> = (0..rank)
        .map(|a| {
            (0..compact_shape[a])
                .map(|j| {
                    let i = match cutoffs[a] {
                        Some(c) => retained_index(j, c, full_shape[a]),
                        None => j,
                    };
                    i * strides[a]
                })
                .collect()
        })
        .collect();
    let last = rank - 1;
    let row = compact_shape[last];
    let mut idx = vec![0usize; rank];
    for chunk in compact.chunks_exact_mut(row) {
        let base: usize = (0..last).map(|a| maps[a][idx[a]]).sum();
        for (j, v) in chunk.iter_mut().enumerate() {
            let off = base + maps[last][j];
            if scatter {
                full[off] = *v;
            } else {
                *v = full[off];
            }
        }
        for a in (0..last).rev() {
            idx[a] += 1;
            if idx[a] < compact_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Unnormalized space-time DFT of one real field restricted to the retained
/// block. Spatial axes are transformed in full first, then only the
/// retained spatial columns are transformed in time.
pub(crate) fn forward_retained(field: &[f64], block: &Block, scale: f64, out: &mut [C64]) {
    let d = block.grid.len();
    let mut buf: Vec<C64> = field.iter().map(|&x| C64::new(x, 0.0)).collect();
    for a in 1..d {
        transform_axis(&mut buf, &block.grid, a, false);
    }
    let mid_shape = block.mid_shape();
    let mut mid = vec![ZERO; mid_shape.iter().product()];
    let mut cut: Vec<Option<usize>> = vec![None];
    cut.extend(block.cutoffs[1..].iter().map(|&c| Some(c)));
    move_retained(&mut buf, &block.grid, &mut mid, &cut, false);
    transform_axis(&mut mid, &mid_shape, 0, false);
    let mut cut_t: Vec<Option<usize>> = vec![Some(block.cutoffs[0])];
    cut_t.extend(std::iter::repeat_n(None, d - 1));
    move_retained(&mut mid, &mid_shape, out, &cut_t, false);
    if scale != 1.0 {
        out.iter_mut().for_each(|z| *z *= scale);
    }
}

/// Embeds a retained block into the full spectrum, applies the
/// unnormalized inverse DFT and writes `scale * Re(.)` into `out`.
pub(crate) fn inverse_retained(modes: &[C64], block: &Block, scale: f64, out: &mut [f64]) {
    let d = block.grid.len();
    let mid_shape = block.mid_shape();
    let mut mid = vec![ZERO; mid_shape.iter().product()];
    let mut compact = modes.to_vec();
    let mut cut_t: Vec<Option<usize>> = vec![Some(block.cutoffs[0])];
    cut_t.extend(std::iter::repeat_n(None, d - 1));
    move_retained(&mut mid, &mid_shape, &mut compact, &cut_t, true);
    transform_axis(&mut mid, &mid_shape, 0, true);
    let mut buf = vec![ZERO; block.grid_len()];
    let mut cut: Vec<Option<usize>> = vec![None];
    cut.extend(block.cutoffs[1..].iter().map(|&c| Some(c)));
    move_retained(&mut buf, &block.grid, &mut mid, &cut, true);
    for a in 1..d {
        transform_axis(&mut buf, &block.grid, a, true);
    }
    for (o, z) in out.iter_mut().zip(&buf) {
        *o = z.re * scale;
    }
}

/// Forward of the fused spectral convolution. Returns the output and the
/// retained input spectrum in `(batch, mode, channel)` layout.
pub(crate) fn spectral_conv(
    x: &[f64],
    k: &[C64],
    block: &Block,
    batch: usize,
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<C64>) {
    let n = block.grid_len();
    let m = block.modes();
    let mut xh = vec![ZERO; batch * m * cin];
    let mut tmp = vec![ZERO; m];
    for b in 0..batch {
        for c in 0..cin {
            forward_retained(&x[(b * cin + c) * n..(b * cin + c + 1) * n], block, 1.0, &mut tmp);
            for (j, z) in tmp.iter().enumerate() {
                xh[(b * m + j) * cin + c] = *z;
            }
        }
    }
    let mut yh = vec![ZERO; batch * m * cout];
    for j in 0..m {
        // Y_j (cout x batch) = K_j (cout x cin) X_j (cin x batch)
        zgemm(
            (cout, cin, batch),
            &k[j * cout * cin..],
            (cin, 1),
            &xh[j * cin..],
            (1, m * cin),
            false,
            &mut yh[j * cout..],
            (1, m * cout),
        );
    }
    let mut out = vec![0.0; batch * cout * n];
    let scale = 1.0 / n as f64;
    for b in 0..batch {
        for o in 0..cout {
            for j in 0..m {
                tmp[j] = yh[(b * m + j) * cout + o];
            }
            inverse_retained(&tmp, block, scale, &mut out[(b * cout + o) * n..(b * cout + o + 1) * n]);
        }
    }
    (out, xh)
}

/// `C (+)= A B` on complex strided matrices; dims are `(rows, inner, cols)`
/// and each stride pair is `(row, col)`. Slices start at the first element.
#[allow(clippy::too_many_arguments)]
fn zgemm(
    (rows, inner, cols): (usize, usize, usize),
    a: &[C64],
    (rsa, csa): (usize, usize),
    b: &[C64],
    (rsb, csb): (usize, usize),
    accumulate: bool,
    c: &mut [C64],
    (rsc, csc): (usize, usize),
) {
    let last = |r: usize, cc: usize, rs: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(a.len() > last(rows, inner, rsa, csa));
    assert!(b.len() > last(inner, cols, rsb, csb));
    assert!(c.len() > last(rows, cols, rsc, csc));
    let beta = if accumulate { [1.0, 0.0] } else { [0.0, 0.0] };
    // SAFETY: C64 is repr(C) {re, im}, the same layout as [f64; 2]; bounds
    // are checked above and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            rows,
            inner,
            cols,
            [1.0, 0.0],
            a.as_ptr().cast(),
            rsa as isize,
            csa as isize,
            b.as_ptr().cast(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr().cast(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Backward of [`spectral_conv`]: accumulates the real gradient of the
/// kernel into `gk` and returns the input cotangent when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn spectral_conv_backward(
    g: &[f64],
    xh: &[C64],
    k: &[C64],
    block: &Block,
    batch: usize,
    cin: usize,
    cout: usize,
    gk: Option<&mut [C64]>,
    want_gx: bool,
) -> Option<Vec<f64>> {
    let n = block.grid_len();
    let m = block.modes();
    let mut gy = vec![ZERO; batch * m * cout];
    let mut tmp = vec![ZERO; m];
    let scale = 1.0 / n as f64;
    for b in 0..batch {
        for o in 0..cout {
            forward_retained(&g[(b * cout + o) * n..(b * cout + o + 1) * n], block, scale, &mut tmp);
            for (j, z) in tmp.iter().enumerate() {
                gy[(b * m + j) * cout + o] = *z;
            }
        }
    }
    if let Some(gk) = gk {
        let xc: Vec<C64> = xh.iter().map(|z| z.conj()).collect();
        for j in 0..m {
            // gK_j += gY_j (cout x batch) conj(X_j)^T (batch x cin)
            zgemm(
                (cout, batch, cin),
                &gy[j * cout..],
                (1, m * cout),
                &xc[j * cin..],
                (m * cin, 1),
                true,
                &mut gk[j * cout * cin..],
                (cin, 1),
            );
        }
    }
    if !want_gx {
        return None;
    }
    let kc: Vec<C64> = k.iter().map(|z| z.conj()).collect();
    let mut gxh = vec![ZERO; batch * m * cin];
    for j in 0..m {
        // gX_j (cin x batch) = conj(K_j)^T (cin x cout) gY_j (cout x batch)
        zgemm(
            (cin, cout, batch),
            &kc[j * cout * cin..],
            (1, cin),
            &gy[j * cout..],
            (1, m * cout),
            false,
            &mut gxh[j * cin..],
            (1, m * cin),
        );
    }
    let mut gx = vec![0.0; batch * cin * n];
    for b in 0..batch {
        for i in 0..cin {
            for (j, z) in tmp.iter_mut().enumerate() {
                *z = gxh[(b * m + j) * cin + i];
            }
            inverse_retained(&tmp, block, 1.0, &mut gx[(b * cin + i) * n..(b * cin + i + 1) * n]);
        }
    }
    Some(gx)
}
