//! Grid kernels: GEMM, im2col convolution, bilinear sampling and upsampling.
//!
//! All loops run in a fixed order; per-element reductions are sequential so
//! results are bit-identical across runs.

use super::{seed_acc_with, Tensor};

const TILE_N: usize = 256;

/// out[m,n] = a[m,k] · b[k,n] (out overwritten).
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    gemm_nn_acc(m, k, n, a, b, out);
}

/// out[m,n] += a[m,k] · b[k,n]. Tiled over columns so the hot rows of `b`
/// and `out` stay cache-resident.
pub fn gemm_nn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + TILE_N).min(n);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n + j0..i * n + j1];
            for (kk, &aik) in arow.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = &b[kk * n + j0..kk * n + j1];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        j0 = j1;
    }
}

/// out[m,k] += a[m,n] · bᵀ where b is [k,n] (i.e. dot products of rows).
pub fn gemm_nt_acc(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            out[i * k + kk] += acc;
        }
    }
}

/// out[k,n] += aᵀ · g where a is [m,k] and g is [m,n].
pub fn gemm_tn_acc(k: usize, m: usize, n: usize, a: &[f64], g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
}

/// Unfold `[C,H,W]` into `[C·kh·kw, Ho·Wo]` columns with zero padding.
pub fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut cols = vec![0.0; c * kh * kw * ho * wo];
    let n = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * n..((ci * kh + ky) * kw + kx + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row[oy * wo + ox] = plane[iy * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Fold `[C·kh·kw, Ho·Wo]` columns back onto a `[C,H,W]` buffer (adds).
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out: &mut [f64],
) {
    let n = ho * wo;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * n..((ci * kh + ky) * kw + kx + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        plane[iy * w + ix as usize] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation of `[Cin,H,W]` with `[Cout,Cin,kh,kw]` weights
    /// plus optional `[Cout]` bias. Zero padding. Columns are rebuilt in the
    /// backward pass instead of being retained.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
        let (cin, h, w) = match self.shape() {
            [c, h, w] => (*c, *h, *w),
            s => panic!("conv2d input must be [C,H,W], got {s:?}"),
        };
        let (cout, cin2, kh, kw) = match weight.shape() {
            [o, i, kh, kw] => (*o, *i, *kh, *kw),
            s => panic!("conv2d weight must be [Cout,Cin,kh,kw], got {s:?}"),
        };
        assert_eq!(cin, cin2, "conv2d channel mismatch: input {cin}, weight {cin2}");
        assert!(stride >= 1);
        let ho = (h + 2 * pad).checked_sub(kh).map(|v| v / stride + 1);
        let wo = (w + 2 * pad).checked_sub(kw).map(|v| v / stride + 1);
        let (ho, wo) = match (ho, wo) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => panic!(
                "conv2d produces non-positive output extent for input {:?} kernel {kh}x{kw} stride {stride} pad {pad}",
                self.shape()
            ),
        };
        if let Some(b) = bias {
            assert_eq!(b.shape(), &[cout], "conv2d bias shape");
        }

        let k = cin * kh * kw;
        let n = ho * wo;
        let cols = im2col(&self.0.data.borrow(), cin, h, w, kh, kw, stride, pad, ho, wo);
        let mut out = vec![0.0; cout * n];
        gemm_nn_acc(cout, k, n, &weight.0.data.borrow(), &cols, &mut out);
        if let Some(b) = bias {
            let bv = b.0.data.borrow();
            for co in 0..cout {
                let row = &mut out[co * n..(co + 1) * n];
                for v in row.iter_mut() {
                    *v += bv[co];
                }
            }
        }
        drop(cols);

        let px = self.clone();
        let pw = weight.clone();
        let pb = bias.cloned();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Tensor::result(
            vec![cout, ho, wo],
            out,
            parents,
            Box::new(move |g| {
                // Weight gradient: g[Cout,n] · colsᵀ.
                seed_acc_with(&pw, cout * k, |buf| {
                    let cols =
                        im2col(&px.0.data.borrow(), cin, h, w, kh, kw, stride, pad, ho, wo);
                    gemm_nt_acc(cout, n, k, g, &cols, buf);
                });
                // Input gradient: fold Wᵀ·g back to the input plane.
                seed_acc_with(&px, cin * h * w, |buf| {
                    let mut gcols = vec![0.0; k * n];
                    gemm_tn_acc(k, cout, n, &pw.0.data.borrow(), g, &mut gcols);
                    col2im_acc(&gcols, cin, h, w, kh, kw, stride, pad, ho, wo, buf);
                });
                if let Some(b) = &pb {
                    seed_acc_with(b, cout, |buf| {
                        for co in 0..cout {
                            let mut acc = 0.0;
                            for v in &g[co * n..(co + 1) * n] {
                                acc += v;
                            }
                            buf[co] += acc;
                        }
                    });
                }
            }),
        )
    }

    /// Bilinear read of `[C,H,W]` at continuous (row, col) points.
    /// Neighbors outside the map read zero. Differentiable in both the
    /// feature map and the point coordinates.
    pub fn bilinear_sample(&self, points: &Tensor) -> Tensor {
        let (c, h, w) = match self.shape() {
            [c, h, w] => (*c, *h, *w),
            s => panic!("bilinear_sample input must be [C,H,W], got {s:?}"),
        };
        let npts = match points.shape() {
            [n, 2] => *n,
            s => panic!("bilinear_sample points must be [N,2], got {s:?}"),
        };
        let fm = self.0.data.borrow();
        let pts = points.0.data.borrow();
        let read = |ci: usize, r: isize, cc: isize| -> f64 {
            if r < 0 || cc < 0 || r >= h as isize || cc >= w as isize {
                0.0
            } else {
                fm[ci * h * w + r as usize * w + cc as usize]
            }
        };
        let mut out = vec![0.0; c * npts];
        for p in 0..npts {
            let r = pts[p * 2];
            let cc = pts[p * 2 + 1];
            let r0 = r.floor();
            let c0 = cc.floor();
            let fr = r - r0;
            let fc = cc - c0;
            let (r0, c0) = (r0 as isize, c0 as isize);
            for ci in 0..c {
                let v00 = read(ci, r0, c0);
                let v01 = read(ci, r0, c0 + 1);
                let v10 = read(ci, r0 + 1, c0);
                let v11 = read(ci, r0 + 1, c0 + 1);
                out[ci * npts + p] = v00 * (1.0 - fr) * (1.0 - fc)
                    + v01 * (1.0 - fr) * fc
                    + v10 * fr * (1.0 - fc)
                    + v11 * fr * fc;
            }
        }
        drop(fm);
        drop(pts);

        let pf = self.clone();
        let pp = points.clone();
        Tensor::result(
            vec![c, npts],
            out,
            vec![self.clone(), points.clone()],
            Box::new(move |g| {
                let pts = pp.0.data.borrow().clone();
                seed_acc_with(&pf, c * h * w, |buf| {
                    for p in 0..npts {
                        let r = pts[p * 2];
                        let cc = pts[p * 2 + 1];
                        let r0f = r.floor();
                        let c0f = cc.floor();
                        let fr = r - r0f;
                        let fc = cc - c0f;
                        let (r0, c0) = (r0f as isize, c0f as isize);
                        let mut scatter = |rr: isize, ccx: isize, wgt: f64, ci: usize, gv: f64| {
                            if rr >= 0 && ccx >= 0 && rr < h as isize && ccx < w as isize {
                                buf[ci * h * w + rr as usize * w + ccx as usize] += wgt * gv;
                            }
                        };
                        for ci in 0..c {
                            let gv = g[ci * npts + p];
                            scatter(r0, c0, (1.0 - fr) * (1.0 - fc), ci, gv);
                            scatter(r0, c0 + 1, (1.0 - fr) * fc, ci, gv);
                            scatter(r0 + 1, c0, fr * (1.0 - fc), ci, gv);
                            scatter(r0 + 1, c0 + 1, fr * fc, ci, gv);
                        }
                    }
                });
                seed_acc_with(&pp, npts * 2, |buf| {
                    let fm = pf.0.data.borrow();
                    let read = |ci: usize, r: isize, cc: isize| -> f64 {
                        if r < 0 || cc < 0 || r >= h as isize || cc >= w as isize {
                            0.0
                        } else {
                            fm[ci * h * w + r as usize * w + cc as usize]
                        }
                    };
                    for p in 0..npts {
                        let r = pts[p * 2];
                        let cc = pts[p * 2 + 1];
                        let r0f = r.floor();
                        let c0f = cc.floor();
                        let fr = r - r0f;
                        let fc = cc - c0f;
                        let (r0, c0) = (r0f as isize, c0f as isize);
                        let mut dr = 0.0;
                        let mut dc = 0.0;
                        for ci in 0..c {
                            let gv = g[ci * npts + p];
                            let v00 = read(ci, r0, c0);
                            let v01 = read(ci, r0, c0 + 1);
                            let v10 = read(ci, r0 + 1, c0);
                            let v11 = read(ci, r0 + 1, c0 + 1);
                            dr += gv
                                * ((v10 - v00) * (1.0 - fc) + (v11 - v01) * fc);
                            dc += gv
                                * ((v01 - v00) * (1.0 - fr) + (v11 - v10) * fr);
                        }
                        buf[p * 2] += dr;
                        buf[p * 2 + 1] += dc;
                    }
                });
            }),
        )
    }

    /// Bilinear 2× upsample of `[C,H,W]` (half-pixel centers).
    pub fn upsample2x(&self) -> Tensor {
        let (c, h, w) = match self.shape() {
            [c, h, w] => (*c, *h, *w),
            s => panic!("upsample2x input must be [C,H,W], got {s:?}"),
        };
        let (ho, wo) = (h * 2, w * 2);
        // Precompute the source taps for each output coordinate.
        let taps = |o: usize, extent: usize| -> (usize, usize, f64) {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let s0 = src.floor();
            let f = src - s0;
            let i0 = s0.max(0.0) as usize;
            let i1 = ((s0 as isize + 1).max(0) as usize).min(extent - 1);
            let i0 = i0.min(extent - 1);
            (i0, i1, f)
        };
        let row_taps: Vec<_> = (0..ho).map(|o| taps(o, h)).collect();
        let col_taps: Vec<_> = (0..wo).map(|o| taps(o, w)).collect();
        let x = self.0.data.borrow();
        let mut out = vec![0.0; c * ho * wo];
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            let oplane = &mut out[ci * ho * wo..(ci + 1) * ho * wo];
            for (oy, &(r0, r1, fr)) in row_taps.iter().enumerate() {
                for (ox, &(c0, c1, fc)) in col_taps.iter().enumerate() {
                    let v = plane[r0 * w + c0] * (1.0 - fr) * (1.0 - fc)
                        + plane[r0 * w + c1] * (1.0 - fr) * fc
                        + plane[r1 * w + c0] * fr * (1.0 - fc)
                        + plane[r1 * w + c1] * fr * fc;
                    oplane[oy * wo + ox] = v;
                }
            }
        }
        drop(x);
        let px = self.clone();
        Tensor::result(
            vec![c, ho, wo],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                seed_acc_with(&px, c * h * w, |buf| {
                    let taps = |o: usize, extent: usize| -> (usize, usize, f64) {
                        let src = (o as f64 + 0.5) / 2.0 - 0.5;
                        let s0 = src.floor();
                        let f = src - s0;
                        let i0 = (s0.max(0.0) as usize).min(extent - 1);
                        let i1 = ((s0 as isize + 1).max(0) as usize).min(extent - 1);
                        (i0, i1, f)
                    };
                    for ci in 0..c {
                        let gplane = &g[ci * ho * wo..(ci + 1) * ho * wo];
                        let bplane = &mut buf[ci * h * w..(ci + 1) * h * w];
                        for oy in 0..ho {
                            let (r0, r1, fr) = taps(oy, h);
                            for ox in 0..wo {
                                let (c0, c1, fc) = taps(ox, w);
                                let gv = gplane[oy * wo + ox];
                                bplane[r0 * w + c0] += gv * (1.0 - fr) * (1.0 - fc);
                                bplane[r0 * w + c1] += gv * (1.0 - fr) * fc;
                                bplane[r1 * w + c0] += gv * fr * (1.0 - fc);
                                bplane[r1 * w + c1] += gv * fr * fc;
                            }
                        }
                    }
                });
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop convolution used as the oracle.
    fn conv_naive(
        x: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        wt: &[f64],
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[ci * h * w + iy as usize * w + ix as usize]
                                    * wt[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[co * ho * wo + oy * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_one_by_one_identity() {
        let x = Tensor::from_vec(&[1, 3, 3], (1..=9).map(|v| v as f64).collect());
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]);
        let y = x.conv2d(&w, None, 1, 0);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn conv_all_ones_interior() {
        let x = Tensor::full(&[1, 5, 5], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&w, None, 1, 1);
        // Interior pixels see the whole 3×3 window.
        let v = y.to_vec();
        assert_eq!(v[2 * 5 + 2], 9.0);
        assert_eq!(v[0], 4.0); // corner
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(cin, h, w, cout, k, stride, pad) in &[
            (3usize, 8usize, 8usize, 4usize, 3usize, 1usize, 1usize),
            (3, 8, 8, 4, 3, 2, 1),
            (2, 7, 5, 3, 3, 2, 1),
            (4, 6, 6, 2, 1, 1, 0),
        ] {
            let x: Vec<f64> = (0..cin * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wt: Vec<f64> = (0..cout * cin * k * k)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let tx = Tensor::from_vec(&[cin, h, w], x.clone());
            let tw = Tensor::from_vec(&[cout, cin, k, k], wt.clone());
            let got = tx.conv2d(&tw, None, stride, pad).to_vec();
            let want = conv_naive(&x, cin, h, w, &wt, cout, k, stride, pad);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "conv mismatch: {a} vs {b}");
            }
        }
    }

    #[test]
    #[should_panic(expected = "non-positive output extent")]
    fn conv_too_small_panics() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let _ = x.conv2d(&w, None, 1, 0);
    }

    #[test]
    fn bilinear_exact_and_midpoint() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let pts = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 0.5, 0.5]);
        let y = x.bilinear_sample(&pts);
        let v = y.to_vec();
        assert_eq!(v[0], 2.0); // integer grid point reads the pixel
        assert!((v[1] - 2.5).abs() < 1e-12); // midpoint of 4 pixels = mean
    }

    #[test]
    fn bilinear_out_of_range_reads_zero() {
        let x = Tensor::full(&[1, 2, 2], 5.0);
        let pts = Tensor::from_vec(&[2, 2], vec![-3.0, 0.0, 0.0, 4.5]);
        let y = x.bilinear_sample(&pts);
        assert_eq!(y.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn upsample_constant_plane() {
        let x = Tensor::full(&[2, 3, 4], 2.5);
        let y = x.upsample2x();
        assert_eq!(y.shape(), &[2, 6, 8]);
        for v in y.to_vec() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }
}
