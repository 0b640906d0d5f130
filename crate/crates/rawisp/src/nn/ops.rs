//! Differentiable operations. Each op computes its forward value eagerly and
//! registers a closure that scatters the upstream gradient into its parents.

use crate::error::{Error, Result};
use crate::exec::Par;
use crate::nn::kernels::{self as k, ConvSpec};
use crate::nn::tensor::{Scalar, Tensor};

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} vs {b:?}"))
}

/// Elementwise sum with bias broadcasting: `b` may share `a`'s shape, be a
/// per-channel vector `[C]` (with `a = [N, C, ...]`), or a per-sample bias
/// `[N, C]` against `a = [N, C, spatial...]`.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ash = a.shape();
    let bsh = b.shape();
    if ash == bsh {
        let data: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
        let (pa, pb) = (a.clone(), b.clone());
        return Ok(Tensor::from_op(ash, data, vec![a.clone(), b.clone()], move |g| {
            if pa.requires_grad() {
                pa.accumulate_grad(g);
            }
            if pb.requires_grad() {
                pb.accumulate_grad(g);
            }
        }));
    }

    // Channel-bias broadcasts need a leading [N, C].
    if ash.len() < 2 {
        return Err(shape_err("add", &ash, &bsh));
    }
    let n = ash[0];
    let c = ash[1];
    let spatial: usize = ash[2..].iter().product();
    let per_sample = if bsh.len() == 1 && bsh[0] == c {
        false
    } else if bsh.len() == 2 && bsh[0] == n && bsh[1] == c {
        true
    } else {
        return Err(shape_err("add", &ash, &bsh));
    };

    let mut data = a.to_vec();
    {
        let bd = b.data();
        for ni in 0..n {
            for ci in 0..c {
                let bias = if per_sample { bd[ni * c + ci] } else { bd[ci] };
                let base = (ni * c + ci) * spatial;
                for v in &mut data[base..base + spatial] {
                    *v += bias;
                }
            }
        }
    }
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(ash, data, vec![a.clone(), b.clone()], move |g| {
        if pa.requires_grad() {
            pa.accumulate_grad(g);
        }
        if pb.requires_grad() {
            let mut db = vec![T::zero(); if per_sample { n * c } else { c }];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * spatial;
                    let mut acc = T::zero();
                    for &gv in &g[base..base + spatial] {
                        acc += gv;
                    }
                    let slot = if per_sample { ni * c + ci } else { ci };
                    db[slot] += acc;
                }
            }
            pb.accumulate_grad(&db);
        }
    }))
}

/// Elementwise product of same-shape tensors.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ash = a.shape();
    if ash != b.shape() {
        return Err(shape_err("mul", &ash, &b.shape()));
    }
    let data: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(ash, data, vec![a.clone(), b.clone()], move |g| {
        if pa.requires_grad() {
            let da: Vec<T> = { pb.data().iter().zip(g).map(|(&y, &gv)| y * gv).collect() };
            pa.accumulate_grad(&da);
        }
        if pb.requires_grad() {
            let db: Vec<T> = { pa.data().iter().zip(g).map(|(&x, &gv)| x * gv).collect() };
            pb.accumulate_grad(&db);
        }
    }))
}

/// Multiply by a constant.
pub fn scale<T: Scalar>(a: &Tensor<T>, factor: T) -> Tensor<T> {
    let data: Vec<T> = a.data().iter().map(|&x| x * factor).collect();
    let pa = a.clone();
    Tensor::from_op(a.shape(), data, vec![a.clone()], move |g| {
        if pa.requires_grad() {
            let da: Vec<T> = g.iter().map(|&gv| gv * factor).collect();
            pa.accumulate_grad(&da);
        }
    })
}

/// Multiply each sample of a batched tensor `[N, ...]` by its own factor.
pub fn scale_per_sample<T: Scalar>(a: &Tensor<T>, factors: &[T]) -> Result<Tensor<T>> {
    let ash = a.shape();
    if ash.is_empty() || ash[0] != factors.len() {
        return Err(Error::Dimension(format!(
            "scale_per_sample: {} factors for shape {:?}",
            factors.len(),
            ash
        )));
    }
    let per = a.len() / factors.len();
    let mut data = a.to_vec();
    for (ni, &f) in factors.iter().enumerate() {
        for v in &mut data[ni * per..(ni + 1) * per] {
            *v = *v * f;
        }
    }
    let pa = a.clone();
    let fs: Vec<T> = factors.to_vec();
    Ok(Tensor::from_op(ash, data, vec![a.clone()], move |g| {
        if pa.requires_grad() {
            let mut da = vec![T::zero(); g.len()];
            for (ni, &f) in fs.iter().enumerate() {
                for (d, &gv) in da[ni * per..(ni + 1) * per].iter_mut().zip(&g[ni * per..(ni + 1) * per]) {
                    *d = gv * f;
                }
            }
            pa.accumulate_grad(&da);
        }
    }))
}

/// Matrix product `[N, K] x [K, M]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ash = a.shape();
    let bsh = b.shape();
    if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
        return Err(shape_err("matmul", &ash, &bsh));
    }
    let (n, kk, m) = (ash[0], ash[1], bsh[1]);
    let data = k::matmul_forward::<T, Par>(&a.data(), &b.data(), n, kk, m);
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(vec![n, m], data, vec![a.clone(), b.clone()], move |g| {
        if pa.requires_grad() {
            let da = { k::matmul_backward_a::<T, Par>(g, &pb.data(), n, kk, m) };
            pa.accumulate_grad(&da);
        }
        if pb.requires_grad() {
            let db = { k::matmul_backward_b::<T, Par>(g, &pa.data(), n, kk, m) };
            pb.accumulate_grad(&db);
        }
    }))
}

/// Affine map `y = x W^T + b` with `x = [N, K]`, `w = [M, K]`, `b = [M]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let xsh = x.shape();
    let wsh = w.shape();
    if xsh.len() != 2 || wsh.len() != 2 || xsh[1] != wsh[1] {
        return Err(shape_err("linear", &xsh, &wsh));
    }
    let (n, kk, m) = (xsh[0], xsh[1], wsh[0]);
    if let Some(bias) = b {
        if bias.shape() != vec![m] {
            return Err(shape_err("linear bias", &[m], &bias.shape()));
        }
    }
    let mut data = vec![T::zero(); n * m];
    {
        let xd = x.data();
        let wd = w.data();
        for ni in 0..n {
            let xrow = &xd[ni * kk..(ni + 1) * kk];
            for mi in 0..m {
                let wrow = &wd[mi * kk..(mi + 1) * kk];
                let mut acc = T::zero();
                for (&xv, &wv) in xrow.iter().zip(wrow) {
                    acc += xv * wv;
                }
                data[ni * m + mi] = acc;
            }
        }
        if let Some(bias) = b {
            let bd = bias.data();
            for ni in 0..n {
                for mi in 0..m {
                    data[ni * m + mi] += bd[mi];
                }
            }
        }
    }
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(bias) = b {
        parents.push(bias.clone());
    }
    let (px, pw) = (x.clone(), w.clone());
    let pb = b.cloned();
    Ok(Tensor::from_op(vec![n, m], data, parents, move |g| {
        if px.requires_grad() {
            let dx = {
                let wd = pw.data();
                let mut dx = vec![T::zero(); n * kk];
                for ni in 0..n {
                    let grow = &g[ni * m..(ni + 1) * m];
                    let drow = &mut dx[ni * kk..(ni + 1) * kk];
                    for (mi, &gv) in grow.iter().enumerate() {
                        let wrow = &wd[mi * kk..(mi + 1) * kk];
                        for (d, &wv) in drow.iter_mut().zip(wrow) {
                            *d += gv * wv;
                        }
                    }
                }
                dx
            };
            px.accumulate_grad(&dx);
        }
        if pw.requires_grad() {
            let dw = {
                let xd = px.data();
                let mut dw = vec![T::zero(); m * kk];
                for ni in 0..n {
                    let xrow = &xd[ni * kk..(ni + 1) * kk];
                    let grow = &g[ni * m..(ni + 1) * m];
                    for (mi, &gv) in grow.iter().enumerate() {
                        let drow = &mut dw[mi * kk..(mi + 1) * kk];
                        for (d, &xv) in drow.iter_mut().zip(xrow) {
                            *d += gv * xv;
                        }
                    }
                }
                dw
            };
            pw.accumulate_grad(&dw);
        }
        if let Some(bias) = &pb {
            if bias.requires_grad() {
                let mut db = vec![T::zero(); m];
                for ni in 0..n {
                    for (d, &gv) in db.iter_mut().zip(&g[ni * m..(ni + 1) * m]) {
                        *d += gv;
                    }
                }
                bias.accumulate_grad(&db);
            }
        }
    }))
}

fn conv_spec<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    transposed: bool,
) -> Result<ConvSpec> {
    let xsh = x.shape();
    let wsh = w.shape();
    if xsh.len() != 4 || wsh.len() != 4 {
        return Err(shape_err("conv2d", &xsh, &wsh));
    }
    let (ic_w, oc) = if transposed { (wsh[0], wsh[1]) } else { (wsh[1], wsh[0]) };
    if xsh[1] != ic_w {
        return Err(Error::Dimension(format!(
            "conv2d: input channels {} do not match weight {:?}",
            xsh[1], wsh
        )));
    }
    Ok(ConvSpec {
        n: xsh[0],
        ic: xsh[1],
        ih: xsh[2],
        iw: xsh[3],
        oc,
        kh: wsh[2],
        kw: wsh[3],
        stride,
        pad,
    })
}

/// 2D convolution, input `[N, IC, H, W]`, weight `[OC, IC, KH, KW]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let spec = conv_spec(x, w, stride, pad, false)?;
    let (oh, ow) = spec.conv_out_hw()?;
    let data = k::conv2d_forward::<T, Par>(&x.data(), &w.data(), &spec)?;
    let (px, pw) = (x.clone(), w.clone());
    Ok(Tensor::from_op(
        vec![spec.n, spec.oc, oh, ow],
        data,
        vec![x.clone(), w.clone()],
        move |g| {
            if px.requires_grad() {
                let dx = {
                    k::conv2d_backward_input::<T, Par>(g, &pw.data(), &spec)
                        .expect("spec validated at forward")
                };
                px.accumulate_grad(&dx);
            }
            if pw.requires_grad() {
                let dw = {
                    k::conv2d_backward_weight::<T, Par>(g, &px.data(), &spec)
                        .expect("spec validated at forward")
                };
                pw.accumulate_grad(&dw);
            }
        },
    ))
}

/// Transposed 2D convolution, input `[N, IC, H, W]`, weight `[IC, OC, KH, KW]`.
pub fn transposed_conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let spec = conv_spec(x, w, stride, pad, true)?;
    let (oh, ow) = spec.tconv_out_hw()?;
    let data = k::tconv2d_forward::<T, Par>(&x.data(), &w.data(), &spec)?;
    let (px, pw) = (x.clone(), w.clone());
    Ok(Tensor::from_op(
        vec![spec.n, spec.oc, oh, ow],
        data,
        vec![x.clone(), w.clone()],
        move |g| {
            if px.requires_grad() {
                let dx = {
                    k::tconv2d_backward_input::<T, Par>(g, &pw.data(), &spec)
                        .expect("spec validated at forward")
                };
                px.accumulate_grad(&dx);
            }
            if pw.requires_grad() {
                let dw = {
                    k::tconv2d_backward_weight::<T, Par>(g, &px.data(), &spec)
                        .expect("spec validated at forward")
                };
                pw.accumulate_grad(&dw);
            }
        },
    ))
}

const GROUP_NORM_EPS: f64 = 1e-5;

/// Group normalization over `[N, C, ...]` with affine parameters per channel.
pub fn group_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
) -> Result<Tensor<T>> {
    let xsh = x.shape();
    if xsh.len() < 2 {
        return Err(Error::Dimension(format!("group_norm needs [N, C, ...], got {xsh:?}")));
    }
    let (n, c) = (xsh[0], xsh[1]);
    let spatial: usize = xsh[2..].iter().product();
    if groups == 0 || c % groups != 0 {
        return Err(Error::Parameter(format!("{c} channels not divisible into {groups} groups")));
    }
    if gamma.shape() != vec![c] || beta.shape() != vec![c] {
        return Err(shape_err("group_norm affine", &[c], &gamma.shape()));
    }
    let cg = c / groups;
    let m = cg * spatial;
    let eps = T::from_f64(GROUP_NORM_EPS);

    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); n * groups];
    let mut data = vec![T::zero(); x.len()];
    {
        let xd = x.data();
        let gd = gamma.data();
        let bd = beta.data();
        for ni in 0..n {
            for gi in 0..groups {
                let base = (ni * c + gi * cg) * spatial;
                let slice = &xd[base..base + m];
                let mut mean = T::zero();
                for &v in slice {
                    mean += v;
                }
                mean = mean / T::from_f64(m as f64);
                let mut var = T::zero();
                for &v in slice {
                    let d = v - mean;
                    var += d * d;
                }
                var = var / T::from_f64(m as f64);
                let r = T::one() / (var + eps).sqrt();
                inv_std[ni * groups + gi] = r;
                for (j, &v) in slice.iter().enumerate() {
                    let xh = (v - mean) * r;
                    xhat[base + j] = xh;
                    let ci = gi * cg + j / spatial;
                    data[base + j] = gd[ci] * xh + bd[ci];
                }
            }
        }
    }

    let (px, pg, pbt) = (x.clone(), gamma.clone(), beta.clone());
    let shape = xsh.clone();
    Ok(Tensor::from_op(
        shape,
        data,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g| {
            if pg.requires_grad() || pbt.requires_grad() {
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * spatial;
                        for j in 0..spatial {
                            dgamma[ci] += g[base + j] * xhat[base + j];
                            dbeta[ci] += g[base + j];
                        }
                    }
                }
                if pg.requires_grad() {
                    pg.accumulate_grad(&dgamma);
                }
                if pbt.requires_grad() {
                    pbt.accumulate_grad(&dbeta);
                }
            }
            if px.requires_grad() {
                let dx = {
                    let gd = pg.data();
                    let mut dx = vec![T::zero(); g.len()];
                    let m_t = T::from_f64(m as f64);
                    for ni in 0..n {
                        for gi in 0..groups {
                            let base = (ni * c + gi * cg) * spatial;
                            let r = inv_std[ni * groups + gi];
                            let mut sum_dxhat = T::zero();
                            let mut sum_dxhat_xhat = T::zero();
                            for j in 0..m {
                                let ci = gi * cg + j / spatial;
                                let dxh = g[base + j] * gd[ci];
                                sum_dxhat += dxh;
                                sum_dxhat_xhat += dxh * xhat[base + j];
                            }
                            for j in 0..m {
                                let ci = gi * cg + j / spatial;
                                let dxh = g[base + j] * gd[ci];
                                dx[base + j] = r / m_t
                                    * (m_t * dxh - sum_dxhat - xhat[base + j] * sum_dxhat_xhat);
                            }
                        }
                    }
                    dx
                };
                px.accumulate_grad(&dx);
            }
        },
    ))
}

/// SiLU activation `x * sigmoid(x)`.
pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let sig: Vec<T> = x
        .data()
        .iter()
        .map(|&v| T::one() / (T::one() + (-v).exp()))
        .collect();
    let data: Vec<T> = x.data().iter().zip(&sig).map(|(&v, &s)| v * s).collect();
    let px = x.clone();
    Tensor::from_op(x.shape(), data, vec![x.clone()], move |g| {
        if px.requires_grad() {
            let dx: Vec<T> = {
                let xd = px.data();
                xd.iter()
                    .zip(&sig)
                    .zip(g)
                    .map(|((&v, &s), &gv)| gv * s * (T::one() + v * (T::one() - s)))
                    .collect()
            };
            px.accumulate_grad(&dx);
        }
    })
}

/// Average pooling with a square window and equal stride.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, ksize: usize) -> Result<Tensor<T>> {
    let xsh = x.shape();
    if xsh.len() != 4 {
        return Err(Error::Dimension(format!("avg_pool needs [N, C, H, W], got {xsh:?}")));
    }
    let (n, c, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
    if ksize == 0 || h % ksize != 0 || w % ksize != 0 {
        return Err(Error::Dimension(format!("avg_pool: {h}x{w} not divisible by {ksize}")));
    }
    let (oh, ow) = (h / ksize, w / ksize);
    let inv = T::from_f64(1.0 / (ksize * ksize) as f64);
    let mut data = vec![T::zero(); n * c * oh * ow];
    {
        let xd = x.data();
        for plane in 0..n * c {
            let xp = &xd[plane * h * w..(plane + 1) * h * w];
            let op = &mut data[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ky in 0..ksize {
                        for kx in 0..ksize {
                            acc += xp[(oy * ksize + ky) * w + ox * ksize + kx];
                        }
                    }
                    op[oy * ow + ox] = acc * inv;
                }
            }
        }
    }
    let px = x.clone();
    Ok(Tensor::from_op(vec![n, c, oh, ow], data, vec![x.clone()], move |g| {
        if px.requires_grad() {
            let mut dx = vec![T::zero(); n * c * h * w];
            for plane in 0..n * c {
                let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                let dp = &mut dx[plane * h * w..(plane + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = gp[oy * ow + ox] * inv;
                        for ky in 0..ksize {
                            for kx in 0..ksize {
                                dp[(oy * ksize + ky) * w + ox * ksize + kx] += gv;
                            }
                        }
                    }
                }
            }
            px.accumulate_grad(&dx);
        }
    }))
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn nearest_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let xsh = x.shape();
    if xsh.len() != 4 {
        return Err(Error::Dimension(format!("nearest_upsample needs [N, C, H, W], got {xsh:?}")));
    }
    if factor == 0 {
        return Err(Error::Parameter("upsample factor must be >= 1".into()));
    }
    let (n, c, h, w) = (xsh[0], xsh[1], xsh[2], xsh[3]);
    let (oh, ow) = (h * factor, w * factor);
    let mut data = vec![T::zero(); n * c * oh * ow];
    {
        let xd = x.data();
        for plane in 0..n * c {
            let xp = &xd[plane * h * w..(plane + 1) * h * w];
            let op = &mut data[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    op[oy * ow + ox] = xp[(oy / factor) * w + ox / factor];
                }
            }
        }
    }
    let px = x.clone();
    Ok(Tensor::from_op(vec![n, c, oh, ow], data, vec![x.clone()], move |g| {
        if px.requires_grad() {
            let mut dx = vec![T::zero(); n * c * h * w];
            for plane in 0..n * c {
                let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                let dp = &mut dx[plane * h * w..(plane + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        dp[(oy / factor) * w + ox / factor] += gp[oy * ow + ox];
                    }
                }
            }
            px.accumulate_grad(&dx);
        }
    }))
}

/// Row lookup into an embedding table `[V, E]`.
pub fn embedding_lookup<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let tsh = table.shape();
    if tsh.len() != 2 {
        return Err(Error::Dimension(format!("embedding table must be [V, E], got {tsh:?}")));
    }
    let (v, e) = (tsh[0], tsh[1]);
    if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
        return Err(Error::Parameter(format!("embedding id {bad} out of range (vocab {v})")));
    }
    let n = ids.len();
    let mut data = vec![T::zero(); n * e];
    {
        let td = table.data();
        for (ni, &id) in ids.iter().enumerate() {
            data[ni * e..(ni + 1) * e].copy_from_slice(&td[id * e..(id + 1) * e]);
        }
    }
    let pt = table.clone();
    let ids_owned: Vec<usize> = ids.to_vec();
    Ok(Tensor::from_op(vec![n, e], data, vec![table.clone()], move |g| {
        if pt.requires_grad() {
            let mut dt = vec![T::zero(); v * e];
            for (ni, &id) in ids_owned.iter().enumerate() {
                for (d, &gv) in dt[id * e..(id + 1) * e].iter_mut().zip(&g[ni * e..(ni + 1) * e]) {
                    *d += gv;
                }
            }
            pt.accumulate_grad(&dt);
        }
    }))
}

/// Concatenate along the channel axis of `[N, C, ...]` tensors.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ash = a.shape();
    let bsh = b.shape();
    if ash.len() < 2 || ash.len() != bsh.len() || ash[0] != bsh[0] || ash[2..] != bsh[2..] {
        return Err(shape_err("concat_channels", &ash, &bsh));
    }
    let n = ash[0];
    let (ca, cb) = (ash[1], bsh[1]);
    let spatial: usize = ash[2..].iter().product();
    let mut shape = ash.clone();
    shape[1] = ca + cb;
    let mut data = vec![T::zero(); n * (ca + cb) * spatial];
    {
        let ad = a.data();
        let bd = b.data();
        for ni in 0..n {
            let dst = &mut data[ni * (ca + cb) * spatial..(ni + 1) * (ca + cb) * spatial];
            dst[..ca * spatial].copy_from_slice(&ad[ni * ca * spatial..(ni + 1) * ca * spatial]);
            dst[ca * spatial..].copy_from_slice(&bd[ni * cb * spatial..(ni + 1) * cb * spatial]);
        }
    }
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(shape, data, vec![a.clone(), b.clone()], move |g| {
        if pa.requires_grad() {
            let mut da = vec![T::zero(); n * ca * spatial];
            for ni in 0..n {
                da[ni * ca * spatial..(ni + 1) * ca * spatial]
                    .copy_from_slice(&g[ni * (ca + cb) * spatial..ni * (ca + cb) * spatial + ca * spatial]);
            }
            pa.accumulate_grad(&da);
        }
        if pb.requires_grad() {
            let mut db = vec![T::zero(); n * cb * spatial];
            for ni in 0..n {
                db[ni * cb * spatial..(ni + 1) * cb * spatial].copy_from_slice(
                    &g[ni * (ca + cb) * spatial + ca * spatial..(ni + 1) * (ca + cb) * spatial],
                );
            }
            pb.accumulate_grad(&db);
        }
    }))
}

/// Mean squared error, reduced to a scalar.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let psh = pred.shape();
    if psh != target.shape() {
        return Err(shape_err("mse_loss", &psh, &target.shape()));
    }
    let len = pred.len();
    let mut acc = T::zero();
    {
        let pd = pred.data();
        let td = target.data();
        for (&p, &t) in pd.iter().zip(td.iter()) {
            let d = p - t;
            acc += d * d;
        }
    }
    let value = acc / T::from_f64(len as f64);
    let (pp, pt) = (pred.clone(), target.clone());
    Ok(Tensor::from_op(vec![1], vec![value], vec![pred.clone(), target.clone()], move |g| {
        let gv = g[0];
        let two_over = T::from_f64(2.0 / len as f64) * gv;
        if pp.requires_grad() {
            let dp: Vec<T> = {
                let pd = pp.data();
                let td = pt.data();
                pd.iter().zip(td.iter()).map(|(&p, &t)| two_over * (p - t)).collect()
            };
            pp.accumulate_grad(&dp);
        }
        if pt.requires_grad() {
            let dt: Vec<T> = {
                let pd = pp.data();
                let td = pt.data();
                pd.iter().zip(td.iter()).map(|(&p, &t)| -two_over * (p - t)).collect()
            };
            pt.accumulate_grad(&dt);
        }
    }))
}
