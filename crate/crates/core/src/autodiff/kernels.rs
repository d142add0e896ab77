//! Forward and backward numeric kernels behind the tape operations.
//!
//! All layouts are row-major and channel-last. Every kernel writes disjoint
//! output chunks, and reductions over pixels go through per-chunk partials
//! summed in chunk order, so results do not depend on the thread count.

use crate::exec::{for_each_chunk, map_indices};
use crate::tensor::Scalar;

/// Accumulated splat weight below which a warped cell is treated as empty.
pub const WARP_EPS: Scalar = 1e-6;

#[inline]
fn axpy(acc: &mut [Scalar], a: Scalar, x: &[Scalar]) {
    for (o, &v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot(a: &[Scalar], b: &[Scalar]) -> Scalar {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sum_partials(partials: Vec<Vec<Scalar>>, len: usize) -> Vec<Scalar> {
    let mut out = vec![0.0; len];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Geometry of a same-padded 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    #[inline]
    fn tap(&self, y: usize, ky: usize) -> Option<usize> {
        let v = y as isize + ky as isize - self.pad();
        (v >= 0 && v < self.height as isize).then_some(v as usize)
    }

    #[inline]
    fn tap_x(&self, x: usize, kx: usize) -> Option<usize> {
        let v = x as isize + kx as isize - self.pad();
        (v >= 0 && v < self.width as isize).then_some(v as usize)
    }
}

/// `c = a · b + beta · c` for strided row-major operands; `c` has unit
/// column stride and row stride `rsc`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[Scalar],
    (rsa, csa): (usize, usize),
    b: &[Scalar],
    (rsb, csb): (usize, usize),
    beta: Scalar,
    c: &mut [Scalar],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, 1) < c.len());
    // SAFETY: every element addressed through the given strides lies inside
    // the corresponding slice (checked above), and `c` is uniquely borrowed.
    unsafe {
        #[cfg(not(feature = "f32"))]
        use matrixmultiply::dgemm as xgemm;
        #[cfg(feature = "f32")]
        use matrixmultiply::sgemm as xgemm;
        xgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Rows of the output image per convolution work item.
const CONV_ROWS: usize = 8;

/// Patch matrix of output rows `y0..y0 + rows`: one row per pixel, columns
/// ordered `(ky, kx, ci)` like the kernel, zeros outside the image.
fn im2col(input: &[Scalar], d: ConvDims, y0: usize, rows: usize) -> Vec<Scalar> {
    let (w, cin, k) = (d.width, d.in_channels, d.kernel);
    let cols = k * k * cin;
    let mut patches = vec![0.0; rows * w * cols];
    for (r, prow) in patches.chunks_exact_mut(w * cols).enumerate() {
        let y = y0 + r;
        for x in 0..w {
            let p = &mut prow[x * cols..(x + 1) * cols];
            for ky in 0..k {
                let Some(iy) = d.tap(y, ky) else { continue };
                for kx in 0..k {
                    let Some(ix) = d.tap_x(x, kx) else { continue };
                    let off = (ky * k + kx) * cin;
                    p[off..off + cin].copy_from_slice(&input[(iy * w + ix) * cin..(iy * w + ix + 1) * cin]);
                }
            }
        }
    }
    patches
}

/// Cross-correlation with zero padding; kernel layout `[k, k, cin, cout]`.
pub fn conv2d_forward(
    input: &[Scalar],
    kernel: &[Scalar],
    bias: &[Scalar],
    d: ConvDims,
) -> Vec<Scalar> {
    let (w, cin, cout, k) = (d.width, d.in_channels, d.out_channels, d.kernel);
    let cols = k * k * cin;
    let mut out = vec![0.0; d.height * w * cout];
    for_each_chunk(&mut out, CONV_ROWS * w * cout, |c, chunk| {
        let y0 = c * CONV_ROWS;
        let rows = chunk.len() / (w * cout);
        for px in chunk.chunks_exact_mut(cout) {
            px.copy_from_slice(bias);
        }
        let owned;
        let patches = if k == 1 {
            &input[y0 * w * cin..(y0 + rows) * w * cin]
        } else {
            owned = im2col(input, d, y0, rows);
            &owned[..]
        };
        gemm((rows * w, cols, cout), patches, (cols, 1), kernel, (cout, 1), 1.0, chunk, cout);
    });
    out
}

/// Gradients of [`conv2d_forward`] w.r.t. input, kernel and bias.
pub fn conv2d_backward(
    input: &[Scalar],
    kernel: &[Scalar],
    grad_out: &[Scalar],
    d: ConvDims,
    need_input: bool,
) -> (Option<Vec<Scalar>>, Vec<Scalar>, Vec<Scalar>) {
    let (h, w, cin, cout, k) = (d.height, d.width, d.in_channels, d.out_channels, d.kernel);

    // The input gradient is a same-padded correlation of the output gradient
    // with the spatially flipped, channel-transposed kernel.
    let d_input = need_input.then(|| {
        let mut flipped = vec![0.0; kernel.len()];
        for ky in 0..k {
            for kx in 0..k {
                let src = ((k - 1 - ky) * k + (k - 1 - kx)) * cin * cout;
                let dst = (ky * k + kx) * cout * cin;
                for ci in 0..cin {
                    for co in 0..cout {
                        flipped[dst + co * cin + ci] = kernel[src + ci * cout + co];
                    }
                }
            }
        }
        let back = ConvDims {
            in_channels: cout,
            out_channels: cin,
            ..d
        };
        conv2d_forward(grad_out, &flipped, &vec![0.0; cin], back)
    });

    let cols = k * k * cin;
    let partials = map_indices(h.div_ceil(CONV_ROWS), |c| {
        let y0 = c * CONV_ROWS;
        let rows = CONV_ROWS.min(h - y0);
        let owned;
        let patches = if k == 1 {
            &input[y0 * w * cin..(y0 + rows) * w * cin]
        } else {
            owned = im2col(input, d, y0, rows);
            &owned[..]
        };
        let g = &grad_out[y0 * w * cout..(y0 + rows) * w * cout];
        let mut dk = vec![0.0; cols * cout];
        gemm((cols, rows * w, cout), patches, (1, cols), g, (cout, 1), 0.0, &mut dk, cout);
        dk
    });
    let d_kernel = sum_partials(partials, cols * cout);

    let mut d_bias = vec![0.0; cout];
    for g in grad_out.chunks_exact(cout) {
        axpy(&mut d_bias, 1.0, g);
    }
    (d_input, d_kernel, d_bias)
}

/// Rows of the left operand per matmul work item.
const MATMUL_ROWS: usize = 64;

/// `[m, k] x [k, n]`.
pub fn matmul_forward(a: &[Scalar], b: &[Scalar], m: usize, k: usize, n: usize) -> Vec<Scalar> {
    let mut out = vec![0.0; m * n];
    for_each_chunk(&mut out, MATMUL_ROWS * n, |c, chunk| {
        let i0 = c * MATMUL_ROWS;
        let rows = chunk.len() / n;
        gemm((rows, k, n), &a[i0 * k..(i0 + rows) * k], (k, 1), b, (n, 1), 0.0, chunk, n);
    });
    out
}

/// `dA = G Bᵀ`, `dB = Aᵀ G`.
pub fn matmul_backward(
    a: &[Scalar],
    b: &[Scalar],
    g: &[Scalar],
    (m, k, n): (usize, usize, usize),
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<Scalar>>, Option<Vec<Scalar>>) {
    let da = need_a.then(|| {
        let mut da = vec![0.0; m * k];
        for_each_chunk(&mut da, MATMUL_ROWS * k, |c, chunk| {
            let i0 = c * MATMUL_ROWS;
            let rows = chunk.len() / k;
            gemm((rows, n, k), &g[i0 * n..(i0 + rows) * n], (n, 1), b, (1, n), 0.0, chunk, k);
        });
        da
    });
    let db = need_b.then(|| {
        let partials = map_indices(m.div_ceil(MATMUL_ROWS), |c| {
            let i0 = c * MATMUL_ROWS;
            let rows = MATMUL_ROWS.min(m - i0);
            let mut p = vec![0.0; k * n];
            gemm(
                (k, rows, n),
                &a[i0 * k..(i0 + rows) * k],
                (1, k),
                &g[i0 * n..(i0 + rows) * n],
                (n, 1),
                0.0,
                &mut p,
                n,
            );
            p
        });
        sum_partials(partials, k * n)
    });
    (da, db)
}

/// Clamped interpolation coordinate along one axis of extent `n >= 2`:
/// `(lower index, fraction, derivative passes through)`.
#[inline]
pub fn axis_coord(c: Scalar, n: usize) -> (usize, Scalar, bool) {
    let hi = (n - 1) as Scalar;
    let inside = (0.0..=hi).contains(&c);
    let cc = c.clamp(0.0, hi);
    let i0 = (cc.floor() as usize).min(n - 2);
    (i0, cc - i0 as Scalar, inside)
}

/// Bilinear samples of a `[rows, cols, ch]` plane at `(px = col, py = row)`
/// coordinate pairs.
pub fn sample2d_forward(
    plane: &[Scalar],
    (rows, cols, ch): (usize, usize, usize),
    coords: &[Scalar],
) -> Vec<Scalar> {
    let points = coords.len() / 2;
    let mut out = vec![0.0; points * ch];
    const PTS: usize = 256;
    for_each_chunk(&mut out, PTS * ch, |c, chunk| {
        for (local, o) in chunk.chunks_exact_mut(ch).enumerate() {
            let p = c * PTS + local;
            let (x0, fx, _) = axis_coord(coords[2 * p], cols);
            let (y0, fy, _) = axis_coord(coords[2 * p + 1], rows);
            let at = |y: usize, x: usize| &plane[(y * cols + x) * ch..(y * cols + x + 1) * ch];
            axpy(o, (1.0 - fx) * (1.0 - fy), at(y0, x0));
            axpy(o, fx * (1.0 - fy), at(y0, x0 + 1));
            axpy(o, (1.0 - fx) * fy, at(y0 + 1, x0));
            axpy(o, fx * fy, at(y0 + 1, x0 + 1));
        }
    });
    out
}

pub fn sample2d_backward(
    plane: &[Scalar],
    (rows, cols, ch): (usize, usize, usize),
    coords: &[Scalar],
    g: &[Scalar],
    need_plane: bool,
    need_coords: bool,
) -> (Option<Vec<Scalar>>, Option<Vec<Scalar>>) {
    let points = coords.len() / 2;
    let d_plane = need_plane.then(|| {
        let mut dp = vec![0.0; rows * cols * ch];
        for p in 0..points {
            let (x0, fx, _) = axis_coord(coords[2 * p], cols);
            let (y0, fy, _) = axis_coord(coords[2 * p + 1], rows);
            let gp = &g[p * ch..(p + 1) * ch];
            for (y, x, wgt) in [
                (y0, x0, (1.0 - fx) * (1.0 - fy)),
                (y0, x0 + 1, fx * (1.0 - fy)),
                (y0 + 1, x0, (1.0 - fx) * fy),
                (y0 + 1, x0 + 1, fx * fy),
            ] {
                axpy(&mut dp[(y * cols + x) * ch..(y * cols + x + 1) * ch], wgt, gp);
            }
        }
        dp
    });
    let d_coords = need_coords.then(|| {
        let mut dc = vec![0.0; coords.len()];
        for_each_chunk(&mut dc, 2, |p, out| {
            let (x0, fx, in_x) = axis_coord(coords[2 * p], cols);
            let (y0, fy, in_y) = axis_coord(coords[2 * p + 1], rows);
            let at = |y: usize, x: usize| &plane[(y * cols + x) * ch..(y * cols + x + 1) * ch];
            let gp = &g[p * ch..(p + 1) * ch];
            let (v00, v01, v10, v11) = (at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1));
            let mut dx = 0.0;
            let mut dy = 0.0;
            for c in 0..ch {
                dx += gp[c] * ((1.0 - fy) * (v01[c] - v00[c]) + fy * (v11[c] - v10[c]));
                dy += gp[c] * ((1.0 - fx) * (v10[c] - v00[c]) + fx * (v11[c] - v01[c]));
            }
            out[0] = if in_x { dx } else { 0.0 };
            out[1] = if in_y { dy } else { 0.0 };
        });
        dc
    });
    (d_plane, d_coords)
}

/// Corner offsets and trilinear weights for one `(px, py, pz)` sample in a
/// `[depth, rows, cols, ch]` volume.
#[inline]
fn trilinear_corners(
    p: &[Scalar],
    (depth, rows, cols): (usize, usize, usize),
) -> ([(usize, Scalar); 8], [Scalar; 3], [bool; 3], [usize; 3]) {
    let (x0, fx, ix) = axis_coord(p[0], cols);
    let (y0, fy, iy) = axis_coord(p[1], rows);
    let (z0, fz, iz) = axis_coord(p[2], depth);
    let mut corners = [(0usize, 0.0); 8];
    for (n, c) in corners.iter_mut().enumerate() {
        let (dz, dy, dx) = (n >> 2 & 1, n >> 1 & 1, n & 1);
        let wz = if dz == 1 { fz } else { 1.0 - fz };
        let wy = if dy == 1 { fy } else { 1.0 - fy };
        let wx = if dx == 1 { fx } else { 1.0 - fx };
        *c = (((z0 + dz) * rows + y0 + dy) * cols + x0 + dx, wz * wy * wx);
    }
    (corners, [fx, fy, fz], [ix, iy, iz], [x0, y0, z0])
}

pub fn sample3d_forward(
    volume: &[Scalar],
    dims: (usize, usize, usize, usize),
    coords: &[Scalar],
) -> Vec<Scalar> {
    let (depth, rows, cols, ch) = dims;
    let points = coords.len() / 3;
    let mut out = vec![0.0; points * ch];
    const PTS: usize = 256;
    for_each_chunk(&mut out, PTS * ch, |c, chunk| {
        for (local, o) in chunk.chunks_exact_mut(ch).enumerate() {
            let p = c * PTS + local;
            let (corners, ..) = trilinear_corners(&coords[3 * p..3 * p + 3], (depth, rows, cols));
            for (cell, w) in corners {
                axpy(o, w, &volume[cell * ch..(cell + 1) * ch]);
            }
        }
    });
    out
}

pub fn sample3d_backward(
    volume: &[Scalar],
    dims: (usize, usize, usize, usize),
    coords: &[Scalar],
    g: &[Scalar],
    need_volume: bool,
    need_coords: bool,
) -> (Option<Vec<Scalar>>, Option<Vec<Scalar>>) {
    let (depth, rows, cols, ch) = dims;
    let points = coords.len() / 3;
    let d_volume = need_volume.then(|| {
        let mut dv = vec![0.0; depth * rows * cols * ch];
        for p in 0..points {
            let (corners, ..) = trilinear_corners(&coords[3 * p..3 * p + 3], (depth, rows, cols));
            let gp = &g[p * ch..(p + 1) * ch];
            for (cell, w) in corners {
                axpy(&mut dv[cell * ch..(cell + 1) * ch], w, gp);
            }
        }
        dv
    });
    let d_coords = need_coords.then(|| {
        let mut dc = vec![0.0; coords.len()];
        for_each_chunk(&mut dc, 3, |p, out| {
            let (corners, f, inside, _) =
                trilinear_corners(&coords[3 * p..3 * p + 3], (depth, rows, cols));
            let gp = &g[p * ch..(p + 1) * ch];
            for (n, (cell, _)) in corners.iter().enumerate() {
                let bits = [n & 1, n >> 1 & 1, n >> 2 & 1];
                let gv = dot(gp, &volume[cell * ch..(cell + 1) * ch]);
                for axis in 0..3 {
                    // d(weight)/d(coord along axis): product of the other two
                    // factors, signed by which side of the cell the corner is.
                    let mut w = if bits[axis] == 1 { 1.0 } else { -1.0 };
                    for other in (0..3).filter(|&o| o != axis) {
                        w *= if bits[other] == 1 { f[other] } else { 1.0 - f[other] };
                    }
                    out[axis] += w * gv;
                }
            }
            for axis in 0..3 {
                if !inside[axis] {
                    out[axis] = 0.0;
                }
            }
        });
        dc
    });
    (d_volume, d_coords)
}

/// One bilinear splat target of a warped source cell.
#[derive(Debug, Clone, Copy)]
struct Splat {
    target: usize,
    weight: Scalar,
    d_fx: Scalar,
    d_fy: Scalar,
}

/// Targets of source cell `(i, j)` displaced by `(dx, dy)` that land inside
/// the grid.
#[inline]
fn splats(i: usize, j: usize, dx: Scalar, dy: Scalar, rows: usize, cols: usize) -> ([Splat; 4], usize) {
    let tx = j as Scalar + dx;
    let ty = i as Scalar + dy;
    let x0 = tx.floor();
    let y0 = ty.floor();
    let fx = tx - x0;
    let fy = ty - y0;
    let candidates = [
        (0.0, 0.0, (1.0 - fx) * (1.0 - fy), -(1.0 - fy), -(1.0 - fx)),
        (1.0, 0.0, fx * (1.0 - fy), 1.0 - fy, -fx),
        (0.0, 1.0, (1.0 - fx) * fy, -fy, 1.0 - fx),
        (1.0, 1.0, fx * fy, fy, fx),
    ];
    let mut out = [Splat {
        target: 0,
        weight: 0.0,
        d_fx: 0.0,
        d_fy: 0.0,
    }; 4];
    let mut n = 0;
    for (ox, oy, weight, d_fx, d_fy) in candidates {
        let x = x0 + ox;
        let y = y0 + oy;
        if x < 0.0 || y < 0.0 || x >= cols as Scalar || y >= rows as Scalar {
            continue;
        }
        out[n] = Splat {
            target: y as usize * cols + x as usize,
            weight,
            d_fx,
            d_fy,
        };
        n += 1;
    }
    (out, n)
}

/// Normalized bilinear forward splatting of `[rows, cols, ch]` features by a
/// `[rows, cols, 2]` flow of `(dx, dy)` cell displacements. Returns the
/// warped features and the per-target accumulated weight.
pub fn forward_warp(
    features: &[Scalar],
    flow: &[Scalar],
    (rows, cols, ch): (usize, usize, usize),
) -> (Vec<Scalar>, Vec<Scalar>) {
    let cells = rows * cols;
    if flow.iter().all(|&v| v == 0.0) {
        return (features.to_vec(), vec![1.0; cells]);
    }
    let mut acc = vec![0.0; cells * ch];
    let mut wsum = vec![0.0; cells];
    for i in 0..rows {
        for j in 0..cols {
            let p = i * cols + j;
            let (targets, n) = splats(i, j, flow[2 * p], flow[2 * p + 1], rows, cols);
            let src = &features[p * ch..(p + 1) * ch];
            for s in &targets[..n] {
                axpy(&mut acc[s.target * ch..(s.target + 1) * ch], s.weight, src);
                wsum[s.target] += s.weight;
            }
        }
    }
    for (t, &w) in wsum.iter().enumerate() {
        let cell = &mut acc[t * ch..(t + 1) * ch];
        if w < WARP_EPS {
            cell.iter_mut().for_each(|v| *v = 0.0);
        } else {
            cell.iter_mut().for_each(|v| *v /= w);
        }
    }
    (acc, wsum)
}

/// Gradients of [`forward_warp`] w.r.t. features and flow.
pub fn forward_warp_backward(
    features: &[Scalar],
    flow: &[Scalar],
    out: &[Scalar],
    weight_sum: &[Scalar],
    g: &[Scalar],
    (rows, cols, ch): (usize, usize, usize),
) -> (Vec<Scalar>, Vec<Scalar>) {
    let cells = rows * cols;
    // Per target: dL/dA = g / W and dL/dW = -<g, out> / W.
    let mut d_acc = vec![0.0; cells * ch];
    let mut d_w = vec![0.0; cells];
    for t in 0..cells {
        let w = weight_sum[t];
        if w < WARP_EPS {
            continue;
        }
        let gt = &g[t * ch..(t + 1) * ch];
        for (o, &gv) in d_acc[t * ch..(t + 1) * ch].iter_mut().zip(gt) {
            *o = gv / w;
        }
        d_w[t] = -dot(gt, &out[t * ch..(t + 1) * ch]) / w;
    }

    let mut d_feat = vec![0.0; cells * ch];
    let mut d_flow = vec![0.0; cells * 2];
    for_each_chunk(&mut d_feat, ch, |p, df| {
        let (i, j) = (p / cols, p % cols);
        let (targets, n) = splats(i, j, flow[2 * p], flow[2 * p + 1], rows, cols);
        for s in &targets[..n] {
            axpy(df, s.weight, &d_acc[s.target * ch..(s.target + 1) * ch]);
        }
    });
    for_each_chunk(&mut d_flow, 2, |p, dfl| {
        let (i, j) = (p / cols, p % cols);
        let (targets, n) = splats(i, j, flow[2 * p], flow[2 * p + 1], rows, cols);
        let src = &features[p * ch..(p + 1) * ch];
        for s in &targets[..n] {
            if weight_sum[s.target] < WARP_EPS {
                continue;
            }
            let dw = dot(src, &d_acc[s.target * ch..(s.target + 1) * ch]) + d_w[s.target];
            dfl[0] += dw * s.d_fx;
            dfl[1] += dw * s.d_fy;
        }
    });
    (d_feat, d_flow)
}
