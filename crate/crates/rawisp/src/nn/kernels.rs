//! Raw numeric kernels behind the autodiff ops.
//!
//! Every kernel is generic over the element type and the execution strategy.
//! Work is split into chunks owned by exactly one task (an output plane, a
//! weight slice), so results do not depend on the number of threads.

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::nn::tensor::Scalar;

/// Geometry of a (transposed) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub n: usize,
    pub ic: usize,
    pub ih: usize,
    pub iw: usize,
    pub oc: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn conv_out_hw(&self) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Parameter("stride must be >= 1".into()));
        }
        if self.ih + 2 * self.pad < self.kh || self.iw + 2 * self.pad < self.kw {
            return Err(Error::Dimension(format!(
                "kernel {}x{} larger than padded input {}x{}",
                self.kh,
                self.kw,
                self.ih + 2 * self.pad,
                self.iw + 2 * self.pad
            )));
        }
        Ok((
            (self.ih + 2 * self.pad - self.kh) / self.stride + 1,
            (self.iw + 2 * self.pad - self.kw) / self.stride + 1,
        ))
    }

    pub fn tconv_out_hw(&self) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Parameter("stride must be >= 1".into()));
        }
        let oh = (self.ih - 1) * self.stride + self.kh;
        let ow = (self.iw - 1) * self.stride + self.kw;
        if oh < 2 * self.pad || ow < 2 * self.pad {
            return Err(Error::Dimension("transposed conv padding exceeds output".into()));
        }
        Ok((oh - 2 * self.pad, ow - 2 * self.pad))
    }
}

/// Index range of `j` such that `0 <= j*stride + k - pad < limit`, inclusive
/// bounds; `None` when empty.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, limit: usize, max_j: usize) -> Option<(usize, usize)> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if limit + pad <= k {
        return None;
    }
    let hi = (limit - 1 + pad - k) / stride;
    let hi = hi.min(max_j);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// out[n,oc,oh,ow] = sum_{ic,kh,kw} x[n,ic,oh*s+kh-p, ow*s+kw-p] * w[oc,ic,kh,kw]
pub fn conv2d_forward<T: Scalar, E: Executor>(x: &[T], w: &[T], s: &ConvSpec) -> Result<Vec<T>> {
    let (oh_n, ow_n) = s.conv_out_hw()?;
    let mut out = vec![T::zero(); s.n * s.oc * oh_n * ow_n];
    let plane = oh_n * ow_n;
    E::for_each_chunk_mut(&mut out, plane, |cidx, chunk| {
        let n = cidx / s.oc;
        let oc = cidx % s.oc;
        for ic in 0..s.ic {
            let x_plane = &x[((n * s.ic + ic) * s.ih) * s.iw..((n * s.ic + ic) * s.ih + s.ih) * s.iw];
            for kh in 0..s.kh {
                let Some((oh_lo, oh_hi)) = valid_range(kh, s.pad, s.stride, s.ih, oh_n - 1) else {
                    continue;
                };
                for oh in oh_lo..=oh_hi {
                    let ihr = oh * s.stride + kh - s.pad;
                    let xrow = &x_plane[ihr * s.iw..(ihr + 1) * s.iw];
                    let orow = &mut chunk[oh * ow_n..(oh + 1) * ow_n];
                    for kw in 0..s.kw {
                        let wv = w[((oc * s.ic + ic) * s.kh + kh) * s.kw + kw];
                        let Some((ow_lo, ow_hi)) = valid_range(kw, s.pad, s.stride, s.iw, ow_n - 1)
                        else {
                            continue;
                        };
                        let src = ow_lo * s.stride + kw - s.pad;
                        if s.stride == 1 {
                            for (o, &xv) in
                                orow[ow_lo..=ow_hi].iter_mut().zip(&xrow[src..src + ow_hi - ow_lo + 1])
                            {
                                *o += wv * xv;
                            }
                        } else {
                            for ow in ow_lo..=ow_hi {
                                orow[ow] += wv * xrow[ow * s.stride + kw - s.pad];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradient w.r.t. the convolution input.
pub fn conv2d_backward_input<T: Scalar, E: Executor>(
    dy: &[T],
    w: &[T],
    s: &ConvSpec,
) -> Result<Vec<T>> {
    let (oh_n, ow_n) = s.conv_out_hw()?;
    let mut dx = vec![T::zero(); s.n * s.ic * s.ih * s.iw];
    let plane = s.ih * s.iw;
    E::for_each_chunk_mut(&mut dx, plane, |cidx, chunk| {
        let n = cidx / s.ic;
        let ic = cidx % s.ic;
        for oc in 0..s.oc {
            let dy_plane = &dy[(n * s.oc + oc) * oh_n * ow_n..(n * s.oc + oc + 1) * oh_n * ow_n];
            for kh in 0..s.kh {
                let Some((oh_lo, oh_hi)) = valid_range(kh, s.pad, s.stride, s.ih, oh_n - 1) else {
                    continue;
                };
                for oh in oh_lo..=oh_hi {
                    let ihr = oh * s.stride + kh - s.pad;
                    let dxrow = &mut chunk[ihr * s.iw..(ihr + 1) * s.iw];
                    let dyrow = &dy_plane[oh * ow_n..(oh + 1) * ow_n];
                    for kw in 0..s.kw {
                        let wv = w[((oc * s.ic + ic) * s.kh + kh) * s.kw + kw];
                        let Some((ow_lo, ow_hi)) = valid_range(kw, s.pad, s.stride, s.iw, ow_n - 1)
                        else {
                            continue;
                        };
                        let dst = ow_lo * s.stride + kw - s.pad;
                        if s.stride == 1 {
                            for (x, &g) in
                                dxrow[dst..dst + ow_hi - ow_lo + 1].iter_mut().zip(&dyrow[ow_lo..=ow_hi])
                            {
                                *x += wv * g;
                            }
                        } else {
                            for ow in ow_lo..=ow_hi {
                                dxrow[ow * s.stride + kw - s.pad] += wv * dyrow[ow];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(dx)
}

/// Gradient w.r.t. the convolution weights.
pub fn conv2d_backward_weight<T: Scalar, E: Executor>(
    dy: &[T],
    x: &[T],
    s: &ConvSpec,
) -> Result<Vec<T>> {
    let (oh_n, ow_n) = s.conv_out_hw()?;
    let mut dw = vec![T::zero(); s.oc * s.ic * s.kh * s.kw];
    let slice = s.ic * s.kh * s.kw;
    E::for_each_chunk_mut(&mut dw, slice, |oc, chunk| {
        for ic in 0..s.ic {
            for kh in 0..s.kh {
                let oh_range = valid_range(kh, s.pad, s.stride, s.ih, oh_n - 1);
                for kw in 0..s.kw {
                    let ow_range = valid_range(kw, s.pad, s.stride, s.iw, ow_n - 1);
                    let (Some((oh_lo, oh_hi)), Some((ow_lo, ow_hi))) = (oh_range, ow_range) else {
                        continue;
                    };
                    let mut acc = T::zero();
                    for n in 0..s.n {
                        let dy_plane =
                            &dy[(n * s.oc + oc) * oh_n * ow_n..(n * s.oc + oc + 1) * oh_n * ow_n];
                        let x_plane =
                            &x[(n * s.ic + ic) * s.ih * s.iw..(n * s.ic + ic + 1) * s.ih * s.iw];
                        for oh in oh_lo..=oh_hi {
                            let ihr = oh * s.stride + kh - s.pad;
                            let dyrow = &dy_plane[oh * ow_n..oh * ow_n + ow_n];
                            let xrow = &x_plane[ihr * s.iw..(ihr + 1) * s.iw];
                            let src = ow_lo * s.stride + kw - s.pad;
                            if s.stride == 1 {
                                for (&g, &xv) in
                                    dyrow[ow_lo..=ow_hi].iter().zip(&xrow[src..src + ow_hi - ow_lo + 1])
                                {
                                    acc += g * xv;
                                }
                            } else {
                                for ow in ow_lo..=ow_hi {
                                    acc += dyrow[ow] * xrow[ow * s.stride + kw - s.pad];
                                }
                            }
                        }
                    }
                    chunk[(ic * s.kh + kh) * s.kw + kw] = acc;
                }
            }
        }
    });
    Ok(dw)
}

/// Transposed convolution forward; weight layout [IC, OC, KH, KW].
/// out[n,oc,ih*s+kh-p, iw*s+kw-p] += x[n,ic,ih,iw] * w[ic,oc,kh,kw]
pub fn tconv2d_forward<T: Scalar, E: Executor>(x: &[T], w: &[T], s: &ConvSpec) -> Result<Vec<T>> {
    let (oh_n, ow_n) = s.tconv_out_hw()?;
    let mut out = vec![T::zero(); s.n * s.oc * oh_n * ow_n];
    let plane = oh_n * ow_n;
    E::for_each_chunk_mut(&mut out, plane, |cidx, chunk| {
        let n = cidx / s.oc;
        let oc = cidx % s.oc;
        for ic in 0..s.ic {
            let x_plane = &x[(n * s.ic + ic) * s.ih * s.iw..(n * s.ic + ic + 1) * s.ih * s.iw];
            for kh in 0..s.kh {
                let Some((ih_lo, ih_hi)) = valid_range(kh, s.pad, s.stride, oh_n, s.ih - 1) else {
                    continue;
                };
                for ihr in ih_lo..=ih_hi {
                    let oh = ihr * s.stride + kh - s.pad;
                    let xrow = &x_plane[ihr * s.iw..(ihr + 1) * s.iw];
                    let orow = &mut chunk[oh * ow_n..(oh + 1) * ow_n];
                    for kw in 0..s.kw {
                        let wv = w[((ic * s.oc + oc) * s.kh + kh) * s.kw + kw];
                        let Some((iw_lo, iw_hi)) = valid_range(kw, s.pad, s.stride, ow_n, s.iw - 1)
                        else {
                            continue;
                        };
                        let dst = iw_lo * s.stride + kw - s.pad;
                        if s.stride == 1 {
                            for (o, &xv) in
                                orow[dst..dst + iw_hi - iw_lo + 1].iter_mut().zip(&xrow[iw_lo..=iw_hi])
                            {
                                *o += wv * xv;
                            }
                        } else {
                            for iw in iw_lo..=iw_hi {
                                orow[iw * s.stride + kw - s.pad] += wv * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradient w.r.t. the transposed convolution input: a plain gather.
pub fn tconv2d_backward_input<T: Scalar, E: Executor>(
    dy: &[T],
    w: &[T],
    s: &ConvSpec,
) -> Result<Vec<T>> {
    let (oh_n, ow_n) = s.tconv_out_hw()?;
    let mut dx = vec![T::zero(); s.n * s.ic * s.ih * s.iw];
    let plane = s.ih * s.iw;
    E::for_each_chunk_mut(&mut dx, plane, |cidx, chunk| {
        let n = cidx / s.ic;
        let ic = cidx % s.ic;
        for oc in 0..s.oc {
            let dy_plane = &dy[(n * s.oc + oc) * oh_n * ow_n..(n * s.oc + oc + 1) * oh_n * ow_n];
            for kh in 0..s.kh {
                let Some((ih_lo, ih_hi)) = valid_range(kh, s.pad, s.stride, oh_n, s.ih - 1) else {
                    continue;
                };
                for ihr in ih_lo..=ih_hi {
                    let oh = ihr * s.stride + kh - s.pad;
                    let dxrow = &mut chunk[ihr * s.iw..(ihr + 1) * s.iw];
                    let dyrow = &dy_plane[oh * ow_n..(oh + 1) * ow_n];
                    for kw in 0..s.kw {
                        let wv = w[((ic * s.oc + oc) * s.kh + kh) * s.kw + kw];
                        let Some((iw_lo, iw_hi)) = valid_range(kw, s.pad, s.stride, ow_n, s.iw - 1)
                        else {
                            continue;
                        };
                        let src = iw_lo * s.stride + kw - s.pad;
                        if s.stride == 1 {
                            for (x, &g) in
                                dxrow[iw_lo..=iw_hi].iter_mut().zip(&dyrow[src..src + iw_hi - iw_lo + 1])
                            {
                                *x += wv * g;
                            }
                        } else {
                            for iw in iw_lo..=iw_hi {
                                dxrow[iw] += wv * dyrow[iw * s.stride + kw - s.pad];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(dx)
}

/// Gradient w.r.t. the transposed convolution weights.
pub fn tconv2d_backward_weight<T: Scalar, E: Executor>(
    dy: &[T],
    x: &[T],
    s: &ConvSpec,
) -> Result<Vec<T>> {
    let (oh_n, ow_n) = s.tconv_out_hw()?;
    let mut dw = vec![T::zero(); s.ic * s.oc * s.kh * s.kw];
    let slice = s.oc * s.kh * s.kw;
    E::for_each_chunk_mut(&mut dw, slice, |ic, chunk| {
        for oc in 0..s.oc {
            for kh in 0..s.kh {
                let ih_range = valid_range(kh, s.pad, s.stride, oh_n, s.ih - 1);
                for kw in 0..s.kw {
                    let iw_range = valid_range(kw, s.pad, s.stride, ow_n, s.iw - 1);
                    let (Some((ih_lo, ih_hi)), Some((iw_lo, iw_hi))) = (ih_range, iw_range) else {
                        continue;
                    };
                    let mut acc = T::zero();
                    for n in 0..s.n {
                        let dy_plane =
                            &dy[(n * s.oc + oc) * oh_n * ow_n..(n * s.oc + oc + 1) * oh_n * ow_n];
                        let x_plane =
                            &x[(n * s.ic + ic) * s.ih * s.iw..(n * s.ic + ic + 1) * s.ih * s.iw];
                        for ihr in ih_lo..=ih_hi {
                            let oh = ihr * s.stride + kh - s.pad;
                            let xrow = &x_plane[ihr * s.iw..(ihr + 1) * s.iw];
                            let dyrow = &dy_plane[oh * ow_n..(oh + 1) * ow_n];
                            let src = iw_lo * s.stride + kw - s.pad;
                            if s.stride == 1 {
                                for (&xv, &g) in
                                    xrow[iw_lo..=iw_hi].iter().zip(&dyrow[src..src + iw_hi - iw_lo + 1])
                                {
                                    acc += xv * g;
                                }
                            } else {
                                for iw in iw_lo..=iw_hi {
                                    acc += xrow[iw] * dyrow[iw * s.stride + kw - s.pad];
                                }
                            }
                        }
                    }
                    chunk[(oc * s.kh + kh) * s.kw + kw] = acc;
                }
            }
        }
    });
    Ok(dw)
}

/// out[n,m] = sum_k a[n,k] * b[k,m]
pub fn matmul_forward<T: Scalar, E: Executor>(
    a: &[T],
    b: &[T],
    n: usize,
    k: usize,
    m: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    E::for_each_chunk_mut(&mut out, m, |row, orow| {
        let arow = &a[row * k..(row + 1) * k];
        for (ki, &av) in arow.iter().enumerate() {
            let brow = &b[ki * m..(ki + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    out
}

/// da[n,k] = sum_m dy[n,m] * b[k,m]
pub fn matmul_backward_a<T: Scalar, E: Executor>(
    dy: &[T],
    b: &[T],
    n: usize,
    k: usize,
    m: usize,
) -> Vec<T> {
    let mut da = vec![T::zero(); n * k];
    E::for_each_chunk_mut(&mut da, k, |row, darow| {
        let dyrow = &dy[row * m..(row + 1) * m];
        for (ki, dv) in darow.iter_mut().enumerate() {
            let brow = &b[ki * m..(ki + 1) * m];
            let mut acc = T::zero();
            for (&g, &bv) in dyrow.iter().zip(brow) {
                acc += g * bv;
            }
            *dv = acc;
        }
    });
    da
}

/// db[k,m] = sum_n a[n,k] * dy[n,m]
pub fn matmul_backward_b<T: Scalar, E: Executor>(
    dy: &[T],
    a: &[T],
    n: usize,
    k: usize,
    m: usize,
) -> Vec<T> {
    let mut db = vec![T::zero(); k * m];
    E::for_each_chunk_mut(&mut db, m, |ki, dbrow| {
        for ni in 0..n {
            let av = a[ni * k + ki];
            let dyrow = &dy[ni * m..(ni + 1) * m];
            for (d, &g) in dbrow.iter_mut().zip(dyrow) {
                *d += av * g;
            }
        }
    });
    db
}
