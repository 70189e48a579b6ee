//! Network building blocks, each as an explicit forward that moves its
//! intermediates into a cache plus a backward that consumes the cache and
//! accumulates parameter gradients by name.

use super::params::{GradStore, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{
    add, add_backward, avg_pool, avg_pool_backward, batch_norm, batch_norm_backward,
    concat_channels, concat_channels_backward, conv2d, conv2d_backward, instance_norm,
    instance_norm_backward, leaky_relu, leaky_relu_backward, linear, linear_backward, mul,
    mul_backward, pixel_shuffle, pixel_shuffle_backward, relu, relu_backward, BnStats, Mode,
    Scalar, Shape, Tensor,
};

pub(crate) fn conv_fwd<T: Scalar>(
    x: &Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    conv2d(x, w, Some(b), stride, pad)
}

/// Backward of [`conv_fwd`]: accumulates the weight and bias gradients and
/// returns the input gradient.
pub(crate) fn conv_bwd<T: Scalar>(
    x: &Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
    stride: usize,
    pad: usize,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<Tensor<T>> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let g = conv2d_backward(x, w, true, stride, pad, dout)?;
    grads.accumulate(format!("{prefix}.weight"), g.dweight)?;
    grads.accumulate(format!("{prefix}.bias"), g.dbias.expect("bias grad"))?;
    Ok(g.dinput)
}

// ---------------------------------------------------------------- CCCB

/// Color-compression block: 1x1 conv, 2x2 average pool, leaky ReLU,
/// instance norm. Halves spatial dims.
#[derive(Debug)]
pub struct CccbCache<T: Scalar> {
    x: Tensor<T>,
    pre_pool_shape: Shape,
    pre_act: Tensor<T>,
    pre_norm: Tensor<T>,
}

pub fn cccb_forward<T: Scalar>(
    x: Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
    slope: f64,
    in_eps: f64,
) -> Result<(Tensor<T>, CccbCache<T>)> {
    let [_, _, h, w] = x.shape();
    if h < 2 || w < 2 {
        return Err(Error::shape(
            "cccb_forward",
            format!("needs at least 2x2 input, got {h}x{w}"),
        ));
    }
    let pre_pool = conv_fwd(&x, p, &format!("{prefix}.conv"), 1, 0)?;
    let pre_act = avg_pool(&pre_pool, 2, 2)?;
    let pre_norm = leaky_relu(&pre_act, slope)?;
    let gamma = p.get(&format!("{prefix}.inorm.gamma"))?;
    let beta = p.get(&format!("{prefix}.inorm.beta"))?;
    let out = instance_norm(&pre_norm, gamma, beta, in_eps)?;
    let cache = CccbCache {
        x,
        pre_pool_shape: pre_pool.shape(),
        pre_act,
        pre_norm,
    };
    Ok((out, cache))
}

pub fn cccb_backward<T: Scalar>(
    cache: &CccbCache<T>,
    p: &ParamStore<T>,
    prefix: &str,
    slope: f64,
    in_eps: f64,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<Tensor<T>> {
    let gamma = p.get(&format!("{prefix}.inorm.gamma"))?;
    let ng = instance_norm_backward(&cache.pre_norm, gamma, in_eps, dout)?;
    grads.accumulate(format!("{prefix}.inorm.gamma"), ng.dgamma)?;
    grads.accumulate(format!("{prefix}.inorm.beta"), ng.dbeta)?;
    let d_act = leaky_relu_backward(&cache.pre_act, slope, &ng.dinput)?;
    let d_pool = avg_pool_backward(cache.pre_pool_shape, 2, 2, &d_act)?;
    conv_bwd(&cache.x, p, &format!("{prefix}.conv"), 1, 0, &d_pool, grads)
}

// ---------------------------------------------------------------- SSCB

/// Structure-compression block: 3x3 stride-2 conv, ReLU, batch norm.
/// Halves spatial dims.
#[derive(Debug)]
pub struct SscbCache<T: Scalar> {
    x: Tensor<T>,
    pre_act: Tensor<T>,
    pre_norm: Tensor<T>,
    mode: Mode,
}

/// Returns the output, cache, and in train mode the refreshed running
/// statistics the caller must write back under `{prefix}.bn`.
pub fn sscb_forward<T: Scalar>(
    x: Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
    mode: Mode,
    momentum: f64,
    bn_eps: f64,
) -> Result<(Tensor<T>, SscbCache<T>, Option<BnStats<T>>)> {
    let [_, _, h, w] = x.shape();
    if h < 2 || w < 2 {
        return Err(Error::shape(
            "sscb_forward",
            format!("needs at least 2x2 input, got {h}x{w}"),
        ));
    }
    let pre_act = conv_fwd(&x, p, &format!("{prefix}.conv"), 2, 1)?;
    let pre_norm = relu(&pre_act);
    let gamma = p.get(&format!("{prefix}.bn.gamma"))?;
    let beta = p.get(&format!("{prefix}.bn.beta"))?;
    let running = BnStats {
        mean: p.get(&format!("{prefix}.bn.running_mean"))?.clone(),
        var: p.get(&format!("{prefix}.bn.running_var"))?.clone(),
    };
    let (out, new_stats) = batch_norm(&pre_norm, gamma, beta, Some(&running), mode, momentum, bn_eps)?;
    let cache = SscbCache {
        x,
        pre_act,
        pre_norm,
        mode,
    };
    Ok((out, cache, new_stats))
}

pub fn sscb_backward<T: Scalar>(
    cache: &SscbCache<T>,
    p: &ParamStore<T>,
    prefix: &str,
    bn_eps: f64,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<Tensor<T>> {
    if cache.mode != Mode::Train {
        return Err(Error::arg("sscb_backward", "cache built in eval mode"));
    }
    let gamma = p.get(&format!("{prefix}.bn.gamma"))?;
    let ng = batch_norm_backward(&cache.pre_norm, gamma, bn_eps, dout)?;
    grads.accumulate(format!("{prefix}.bn.gamma"), ng.dgamma)?;
    grads.accumulate(format!("{prefix}.bn.beta"), ng.dbeta)?;
    let d_act = relu_backward(&cache.pre_act, &ng.dinput)?;
    conv_bwd(&cache.x, p, &format!("{prefix}.conv"), 2, 1, &d_act, grads)
}

// ----------------------------------------------------------- base block

/// Conv3x3, ReLU, Conv3x3; shape preserving.
#[derive(Debug)]
pub struct BaseBlockCache<T: Scalar> {
    x: Tensor<T>,
    mid: Tensor<T>,
    mid_act: Tensor<T>,
}

pub fn base_block_forward<T: Scalar>(
    x: Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
) -> Result<(Tensor<T>, BaseBlockCache<T>)> {
    let mid = conv_fwd(&x, p, &format!("{prefix}.conv1"), 1, 1)?;
    let mid_act = relu(&mid);
    let out = conv_fwd(&mid_act, p, &format!("{prefix}.conv2"), 1, 1)?;
    Ok((out, BaseBlockCache { x, mid, mid_act }))
}

pub fn base_block_backward<T: Scalar>(
    cache: &BaseBlockCache<T>,
    p: &ParamStore<T>,
    prefix: &str,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<Tensor<T>> {
    let d_mid_act = conv_bwd(&cache.mid_act, p, &format!("{prefix}.conv2"), 1, 1, dout, grads)?;
    let d_mid = relu_backward(&cache.mid, &d_mid_act)?;
    conv_bwd(&cache.x, p, &format!("{prefix}.conv1"), 1, 1, &d_mid, grads)
}

// ---------------------------------------------------------------- SPCB

/// Spatial prior block: reduce to 8 channels, four parallel convs with
/// kernel sizes 3/5/7/9, concatenate, fuse to a single-channel map.
#[derive(Debug)]
pub struct SpcbCache<T: Scalar> {
    x: Tensor<T>,
    r: Tensor<T>,
    cat: Tensor<T>,
}

pub fn spcb_forward<T: Scalar>(
    x: Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
) -> Result<(Tensor<T>, SpcbCache<T>)> {
    let r = conv_fwd(&x, p, &format!("{prefix}.reduce"), 1, 0)?;
    let b3 = conv_fwd(&r, p, &format!("{prefix}.k3"), 1, 1)?;
    let b5 = conv_fwd(&r, p, &format!("{prefix}.k5"), 1, 2)?;
    let b7 = conv_fwd(&r, p, &format!("{prefix}.k7"), 1, 3)?;
    let b9 = conv_fwd(&r, p, &format!("{prefix}.k9"), 1, 4)?;
    let cat = concat_channels(&concat_channels(&b3, &b5)?, &concat_channels(&b7, &b9)?)?;
    let s = conv_fwd(&cat, p, &format!("{prefix}.fuse"), 1, 0)?;
    Ok((s, SpcbCache { x, r, cat }))
}

pub fn spcb_backward<T: Scalar>(
    cache: &SpcbCache<T>,
    p: &ParamStore<T>,
    prefix: &str,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<Tensor<T>> {
    let d_cat = conv_bwd(&cache.cat, p, &format!("{prefix}.fuse"), 1, 0, dout, grads)?;
    let half = cache.cat.c() / 2;
    let (d12, d34) = concat_channels_backward(&d_cat, half)?;
    let (d3, d5) = concat_channels_backward(&d12, half / 2)?;
    let (d7, d9) = concat_channels_backward(&d34, half / 2)?;
    let mut dr = conv_bwd(&cache.r, p, &format!("{prefix}.k3"), 1, 1, &d3, grads)?;
    for (branch, pad, d) in [("k5", 2, &d5), ("k7", 3, &d7), ("k9", 4, &d9)] {
        let part = conv_bwd(&cache.r, p, &format!("{prefix}.{branch}"), 1, pad, d, grads)?;
        dr = add(&dr, &part)?;
    }
    conv_bwd(&cache.x, p, &format!("{prefix}.reduce"), 1, 0, &dr, grads)
}

// ---------------------------------------------------------------- GSMB

/// Guided modulation: two FC maps of the priors vector give per-channel
/// vectors; adding the spatial map under broadcast yields full gamma/beta;
/// output is `gamma * F + beta`.
#[derive(Debug)]
pub struct GsmbCache<T: Scalar> {
    f: Tensor<T>,
    vg: Tensor<T>,
    s_j_shape: Shape,
    m_shape: Shape,
    gamma: Tensor<T>,
}

pub fn gsmb_forward<T: Scalar>(
    f: Tensor<T>,
    vg: &Tensor<T>,
    s_j: &Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
) -> Result<(Tensor<T>, GsmbCache<T>)> {
    if s_j.c() != 1 {
        return Err(Error::shape(
            "gsmb_forward",
            format!("spatial map must have 1 channel, got {}", s_j.c()),
        ));
    }
    let m1v = linear(
        vg,
        p.get(&format!("{prefix}.m1.weight"))?,
        p.get(&format!("{prefix}.m1.bias"))?,
    )?;
    let m2v = linear(
        vg,
        p.get(&format!("{prefix}.m2.weight"))?,
        p.get(&format!("{prefix}.m2.bias"))?,
    )?;
    let gamma = add(&m1v, s_j)?;
    let beta = add(&m2v, s_j)?;
    let out = add(&mul(&gamma, &f)?, &beta)?;
    let cache = GsmbCache {
        s_j_shape: s_j.shape(),
        m_shape: m1v.shape(),
        vg: vg.clone(),
        f,
        gamma,
    };
    Ok((out, cache))
}

/// Returns `(d_feature, d_priors, d_spatial_map)`.
pub fn gsmb_backward<T: Scalar>(
    cache: &GsmbCache<T>,
    p: &ParamStore<T>,
    prefix: &str,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (d_gamma, d_f) = mul_backward(&cache.gamma, &cache.f, dout)?;
    let (d_m1v, d_sj_a) = add_backward(cache.m_shape, cache.s_j_shape, &d_gamma)?;
    let (d_m2v, d_sj_b) = add_backward(cache.m_shape, cache.s_j_shape, dout)?;
    let d_sj = add(&d_sj_a, &d_sj_b)?;
    let g1 = linear_backward(&cache.vg, p.get(&format!("{prefix}.m1.weight"))?, &d_m1v)?;
    grads.accumulate(format!("{prefix}.m1.weight"), g1.dweight)?;
    grads.accumulate(format!("{prefix}.m1.bias"), g1.dbias)?;
    let g2 = linear_backward(&cache.vg, p.get(&format!("{prefix}.m2.weight"))?, &d_m2v)?;
    grads.accumulate(format!("{prefix}.m2.weight"), g2.dweight)?;
    grads.accumulate(format!("{prefix}.m2.bias"), g2.dbias)?;
    let d_vg = add(&g1.dinput, &g2.dinput)?;
    Ok((d_f, d_vg, d_sj))
}

// ----------------------------------------------------------------- GFM

/// Channel-only modulation from the priors vector.
#[derive(Debug)]
pub struct GfmCache<T: Scalar> {
    f: Tensor<T>,
    vg: Tensor<T>,
    m_shape: Shape,
    gamma: Tensor<T>,
}

pub fn gfm_forward<T: Scalar>(
    f: Tensor<T>,
    vg: &Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
) -> Result<(Tensor<T>, GfmCache<T>)> {
    let gamma = linear(
        vg,
        p.get(&format!("{prefix}.m1.weight"))?,
        p.get(&format!("{prefix}.m1.bias"))?,
    )?;
    let beta = linear(
        vg,
        p.get(&format!("{prefix}.m2.weight"))?,
        p.get(&format!("{prefix}.m2.bias"))?,
    )?;
    let out = add(&mul(&gamma, &f)?, &beta)?;
    let cache = GfmCache {
        m_shape: gamma.shape(),
        vg: vg.clone(),
        f,
        gamma,
    };
    Ok((out, cache))
}

/// Returns `(d_feature, d_priors)`.
pub fn gfm_backward<T: Scalar>(
    cache: &GfmCache<T>,
    p: &ParamStore<T>,
    prefix: &str,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (d_gamma, d_f) = mul_backward(&cache.gamma, &cache.f, dout)?;
    let d_beta = crate::tensor::reduce_to_shape(dout, cache.m_shape)?;
    let g1 = linear_backward(&cache.vg, p.get(&format!("{prefix}.m1.weight"))?, &d_gamma)?;
    grads.accumulate(format!("{prefix}.m1.weight"), g1.dweight)?;
    grads.accumulate(format!("{prefix}.m1.bias"), g1.dbias)?;
    let g2 = linear_backward(&cache.vg, p.get(&format!("{prefix}.m2.weight"))?, &d_beta)?;
    grads.accumulate(format!("{prefix}.m2.weight"), g2.dweight)?;
    grads.accumulate(format!("{prefix}.m2.bias"), g2.dbias)?;
    let d_vg = add(&g1.dinput, &g2.dinput)?;
    Ok((d_f, d_vg))
}

// ----------------------------------------------------------------- SFT

/// Condition head shared by every SFT block: two 3x3 convs with a ReLU
/// between, applied to the input image.
#[derive(Debug)]
pub struct SftHeadCache<T: Scalar> {
    x: Tensor<T>,
    mid: Tensor<T>,
    mid_act: Tensor<T>,
}

pub fn sft_head_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &ParamStore<T>,
) -> Result<(Tensor<T>, SftHeadCache<T>)> {
    let mid = conv_fwd(x, p, "sft_head.conv1", 1, 1)?;
    let mid_act = relu(&mid);
    let cond = conv_fwd(&mid_act, p, "sft_head.conv2", 1, 1)?;
    Ok((
        cond,
        SftHeadCache {
            x: x.clone(),
            mid,
            mid_act,
        },
    ))
}

pub fn sft_head_backward<T: Scalar>(
    cache: &SftHeadCache<T>,
    p: &ParamStore<T>,
    d_cond: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<Tensor<T>> {
    let d_mid_act = conv_bwd(&cache.mid_act, p, "sft_head.conv2", 1, 1, d_cond, grads)?;
    let d_mid = relu_backward(&cache.mid, &d_mid_act)?;
    conv_bwd(&cache.x, p, "sft_head.conv1", 1, 1, &d_mid, grads)
}

/// Spatial feature transform: full-resolution gamma/beta maps from the
/// condition features, `gamma * F + beta`.
#[derive(Debug)]
pub struct SftCache<T: Scalar> {
    f: Tensor<T>,
    gamma_map: Tensor<T>,
}

pub fn sft_forward<T: Scalar>(
    f: Tensor<T>,
    cond: &Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
) -> Result<(Tensor<T>, SftCache<T>)> {
    if (cond.h(), cond.w()) != (f.h(), f.w()) {
        return Err(Error::shape(
            "sft_forward",
            format!(
                "condition maps {}x{} vs features {}x{}",
                cond.h(),
                cond.w(),
                f.h(),
                f.w()
            ),
        ));
    }
    let gamma_map = conv_fwd(cond, p, &format!("{prefix}.gamma"), 1, 1)?;
    let beta_map = conv_fwd(cond, p, &format!("{prefix}.beta"), 1, 1)?;
    let out = add(&mul(&gamma_map, &f)?, &beta_map)?;
    Ok((out, SftCache { f, gamma_map }))
}

/// Returns `(d_feature, d_condition)`.
pub fn sft_backward<T: Scalar>(
    cache: &SftCache<T>,
    cond: &Tensor<T>,
    p: &ParamStore<T>,
    prefix: &str,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (d_gamma_map, d_f) = mul_backward(&cache.gamma_map, &cache.f, dout)?;
    let d_cond_a = conv_bwd(cond, p, &format!("{prefix}.gamma"), 1, 1, &d_gamma_map, grads)?;
    let d_cond_b = conv_bwd(cond, p, &format!("{prefix}.beta"), 1, 1, dout, grads)?;
    Ok((d_f, add(&d_cond_a, &d_cond_b)?))
}

// ------------------------------------------------------------ upsampler

/// Per doubling stage: 3x3 conv c -> 4c, then pixel shuffle r=2.
#[derive(Debug)]
pub struct UpStageCache<T: Scalar> {
    x: Tensor<T>,
}

pub fn upsampler_forward<T: Scalar>(
    f: Tensor<T>,
    p: &ParamStore<T>,
    scale: usize,
) -> Result<(Tensor<T>, Vec<UpStageCache<T>>)> {
    let stages = match scale {
        2 => 1,
        4 => 2,
        other => {
            return Err(Error::arg(
                "upsampler_forward",
                format!("scale must be 2 or 4, got {other}"),
            ))
        }
    };
    let mut x = f;
    let mut caches = Vec::with_capacity(stages);
    for i in 0..stages {
        let y = conv_fwd(&x, p, &format!("up.stage{i}"), 1, 1)?;
        let z = pixel_shuffle(&y, 2)?;
        caches.push(UpStageCache { x });
        x = z;
    }
    Ok((x, caches))
}

pub fn upsampler_backward<T: Scalar>(
    caches: &[UpStageCache<T>],
    p: &ParamStore<T>,
    dout: &Tensor<T>,
    grads: &mut GradStore<T>,
) -> Result<Tensor<T>> {
    let mut d = dout.clone();
    for (i, cache) in caches.iter().enumerate().rev() {
        let dy = pixel_shuffle_backward(2, &d)?;
        d = conv_bwd(&cache.x, p, &format!("up.stage{i}"), 1, 1, &dy, grads)?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, param_specs, ModelConfig, ParamKind};
    use crate::tensor::gradcheck::{grad_check, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_params(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_params(cfg, &mut rng).unwrap().cast::<f64>()
    }

    fn rand_t(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_tensor(shape, -1.0, 1.0, &mut rng)
    }

    /// Grad-check one block: inputs are [x, every named param]; forward
    /// rebuilds the store with the perturbed tensors.
    fn check_block<Fwd, Bwd>(
        base: &ParamStore<f64>,
        names: &[String],
        x: Tensor<f64>,
        fwd: Fwd,
        bwd: Bwd,
        tol: f64,
    ) where
        Fwd: Fn(&Tensor<f64>, &ParamStore<f64>) -> Result<Tensor<f64>>,
        Bwd: Fn(&Tensor<f64>, &ParamStore<f64>, &Tensor<f64>) -> Result<(Tensor<f64>, GradStore<f64>)>,
    {
        let mut inputs = vec![x];
        for n in names {
            inputs.push(base.get(n).unwrap().clone());
        }
        let rebuild = |tensors: &[Tensor<f64>]| {
            let mut p = base.clone();
            for (n, t) in names.iter().zip(&tensors[1..]) {
                p.insert(n.clone(), t.clone());
            }
            p
        };
        let report = grad_check(
            |ins| fwd(&ins[0], &rebuild(ins)),
            |ins, dout| {
                let p = rebuild(ins);
                let (dx, grads) = bwd(&ins[0], &p, dout)?;
                let mut out = vec![dx];
                for n in names {
                    out.push(grads.get(n).expect("missing grad").clone());
                }
                Ok(out)
            },
            &inputs,
            1e-5,
            tol,
            Some(160),
            11,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    fn names_with_prefix(cfg: &ModelConfig, prefix: &str) -> Vec<String> {
        param_specs(cfg)
            .into_iter()
            .filter(|s| s.name.starts_with(prefix) && !s.kind.is_buffer())
            .map(|s| s.name)
            .collect()
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            channels: 8,
            cccb_width: 6,
            sscb_width: 6,
            n_cccb: 2,
            n_sscb: 2,
            n_jmrm: 1,
            prior_dim_c: 3,
            prior_dim_s: 3,
            scale: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn cccb_shapes_and_grad() {
        let cfg = tiny_cfg();
        let p = small_params(&cfg, 3);
        let x = rand_t([2, 3, 8, 8], 5);
        let (out, _) = cccb_forward(x.clone(), &p, "gpem.ccp.cccb0", 0.1, 1e-5).unwrap();
        assert_eq!(out.shape(), [2, 6, 4, 4]);
        check_block(
            &p,
            &names_with_prefix(&cfg, "gpem.ccp.cccb0."),
            x,
            |x, p| Ok(cccb_forward(x.clone(), p, "gpem.ccp.cccb0", 0.1, 1e-5)?.0),
            |x, p, dout| {
                let (_, cache) = cccb_forward(x.clone(), p, "gpem.ccp.cccb0", 0.1, 1e-5)?;
                let mut g = GradStore::new();
                let dx = cccb_backward(&cache, p, "gpem.ccp.cccb0", 0.1, 1e-5, dout, &mut g)?;
                Ok((dx, g))
            },
            1e-4,
        );
    }

    #[test]
    fn cccb_normalizes_to_affine_stats() {
        let cfg = tiny_cfg();
        let mut p = small_params(&cfg, 9);
        let g = Tensor::from_vec([1, 6, 1, 1], vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0]).unwrap();
        let b = Tensor::from_vec([1, 6, 1, 1], vec![-1.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        p.insert("gpem.ccp.cccb0.inorm.gamma", g.clone());
        p.insert("gpem.ccp.cccb0.inorm.beta", b.clone());
        let x = rand_t([1, 3, 32, 32], 6);
        let (out, _) = cccb_forward(x, &p, "gpem.ccp.cccb0", 0.1, 1e-9).unwrap();
        for ch in 0..6 {
            let plane = out.plane(0, ch);
            let m = plane.iter().map(|v| *v).sum::<f64>() / plane.len() as f64;
            let var = plane.iter().map(|v| (v - m).powi(2)).sum::<f64>() / plane.len() as f64;
            assert!((m - b.data()[ch]).abs() < 1e-6, "mean ch{ch}: {m}");
            assert!(
                (var.sqrt() - g.data()[ch].abs()) < 1e-4,
                "std ch{ch}: {}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn sscb_halves_and_grad() {
        let cfg = tiny_cfg();
        let p = small_params(&cfg, 4);
        let x = rand_t([2, 3, 8, 8], 15);
        let (out, _, stats) =
            sscb_forward(x.clone(), &p, "gpem.ssp.sscb0", Mode::Train, 0.1, 1e-5).unwrap();
        assert_eq!(out.shape(), [2, 6, 4, 4]);
        assert!(stats.is_some());
        check_block(
            &p,
            &names_with_prefix(&cfg, "gpem.ssp.sscb0.conv")
                .into_iter()
                .chain(["gpem.ssp.sscb0.bn.gamma".into(), "gpem.ssp.sscb0.bn.beta".into()])
                .collect::<Vec<_>>(),
            x,
            |x, p| Ok(sscb_forward(x.clone(), p, "gpem.ssp.sscb0", Mode::Train, 0.1, 1e-5)?.0),
            |x, p, dout| {
                let (_, cache, _) =
                    sscb_forward(x.clone(), p, "gpem.ssp.sscb0", Mode::Train, 0.1, 1e-5)?;
                let mut g = GradStore::new();
                let dx = sscb_backward(&cache, p, "gpem.ssp.sscb0", 1e-5, dout, &mut g)?;
                Ok((dx, g))
            },
            1e-4,
        );
    }

    #[test]
    fn base_block_matches_manual_composition() {
        let cfg = tiny_cfg();
        let p = small_params(&cfg, 21);
        let x = rand_t([1, 8, 10, 10], 22);
        let (out, _) = base_block_forward(x.clone(), &p, "jmrm0.bb").unwrap();
        let manual = conv_fwd(
            &relu(&conv_fwd(&x, &p, "jmrm0.bb.conv1", 1, 1).unwrap()),
            &p,
            "jmrm0.bb.conv2",
            1,
            1,
        )
        .unwrap();
        let diff = out
            .data()
            .iter()
            .zip(manual.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6);
        assert_eq!(out.shape(), x.shape());
    }

    #[test]
    fn base_block_grad() {
        let cfg = tiny_cfg();
        let p = small_params(&cfg, 23);
        check_block(
            &p,
            &names_with_prefix(&cfg, "jmrm0.bb."),
            rand_t([1, 8, 6, 6], 24),
            |x, p| Ok(base_block_forward(x.clone(), p, "jmrm0.bb")?.0),
            |x, p, dout| {
                let (_, cache) = base_block_forward(x.clone(), p, "jmrm0.bb")?;
                let mut g = GradStore::new();
                let dx = base_block_backward(&cache, p, "jmrm0.bb", dout, &mut g)?;
                Ok((dx, g))
            },
            1e-4,
        );
    }

    #[test]
    fn spcb_single_channel_map_and_grad() {
        let cfg = tiny_cfg();
        let p = small_params(&cfg, 31);
        let x = rand_t([2, 8, 9, 9], 32);
        let (s, _) = spcb_forward(x.clone(), &p, "jmrm0.spcb").unwrap();
        assert_eq!(s.shape(), [2, 1, 9, 9]);
        check_block(
            &p,
            &names_with_prefix(&cfg, "jmrm0.spcb."),
            rand_t([1, 8, 7, 7], 33),
            |x, p| Ok(spcb_forward(x.clone(), p, "jmrm0.spcb")?.0),
            |x, p, dout| {
                let (_, cache) = spcb_forward(x.clone(), p, "jmrm0.spcb")?;
                let mut g = GradStore::new();
                let dx = spcb_backward(&cache, p, "jmrm0.spcb", dout, &mut g)?;
                Ok((dx, g))
            },
            1e-4,
        );
    }

    fn gsmb_loop_oracle(
        f: &Tensor<f64>,
        vg: &Tensor<f64>,
        s_j: &Tensor<f64>,
        p: &ParamStore<f64>,
        prefix: &str,
    ) -> Tensor<f64> {
        let [n, c, h, w] = f.shape();
        let d = vg.c();
        let w1 = p.get(&format!("{prefix}.m1.weight")).unwrap();
        let b1 = p.get(&format!("{prefix}.m1.bias")).unwrap();
        let w2 = p.get(&format!("{prefix}.m2.weight")).unwrap();
        let b2 = p.get(&format!("{prefix}.m2.bias")).unwrap();
        let mut out = Tensor::zeros(f.shape());
        for s in 0..n {
            for ch in 0..c {
                let mut g1 = b1.data()[ch];
                let mut g2 = b2.data()[ch];
                for k in 0..d {
                    g1 += w1.at(ch, k, 0, 0) * vg.at(s, k, 0, 0);
                    g2 += w2.at(ch, k, 0, 0) * vg.at(s, k, 0, 0);
                }
                for y in 0..h {
                    for x in 0..w {
                        let sj = s_j.at(s, 0, y, x);
                        let gamma = g1 + sj;
                        let beta = g2 + sj;
                        out.set(s, ch, y, x, gamma * f.at(s, ch, y, x) + beta);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gsmb_matches_loop_oracle() {
        let cfg = tiny_cfg();
        let p = small_params(&cfg, 41);
        for seed in 0..5 {
            let f = rand_t([2, 8, 5, 5], 100 + seed);
            let vg = rand_t([2, 6, 1, 1], 200 + seed);
            let sj = rand_t([2, 1, 5, 5], 300 + seed);
            let (out, _) = gsmb_forward(f.clone(), &vg, &sj, &p, "jmrm0.gsmb").unwrap();
            let oracle = gsmb_loop_oracle(&f, &vg, &sj, &p, "jmrm0.gsmb");
            let diff = out
                .data()
                .iter()
                .zip(oracle.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-6, "seed {seed}: {diff}");
        }
    }

    #[test]
    fn gsmb_zero_map_equals_gfm() {
        let cfg = tiny_cfg();
        let mut p = small_params(&cfg, 43);
        // mirror weights so both blocks read the same FC maps
        for t in ["m1.weight", "m1.bias", "m2.weight", "m2.bias"] {
            let src = p.get(&format!("jmrm0.gsmb.{t}")).unwrap().clone();
            p.insert(format!("jmrm0.gfm.{t}"), src);
        }
        let f = rand_t([1, 8, 4, 4], 44);
        let vg = rand_t([1, 6, 1, 1], 45);
        let zero_map = Tensor::zeros([1, 1, 4, 4]);
        let (a, _) = gsmb_forward(f.clone(), &vg, &zero_map, &p, "jmrm0.gsmb").unwrap();
        let (b, _) = gfm_forward(f, &vg, &p, "jmrm0.gfm").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gsmb_zero_fc_is_pure_spatial_modulation() {
        let cfg = tiny_cfg();
        let mut p = small_params(&cfg, 46);
        for t in ["m1.weight", "m2.weight"] {
            let shape = p.get(&format!("jmrm0.gsmb.{t}")).unwrap().shape();
            p.insert(format!("jmrm0.gsmb.{t}"), Tensor::zeros(shape));
        }
        for t in ["m1.bias", "m2.bias"] {
            let shape = p.get(&format!("jmrm0.gsmb.{t}")).unwrap().shape();
            p.insert(format!("jmrm0.gsmb.{t}"), Tensor::zeros(shape));
        }
        let f = rand_t([1, 8, 4, 4], 47);
        let vg = rand_t([1, 6, 1, 1], 48);
        let sj = rand_t([1, 1, 4, 4], 49);
        let (out, _) = gsmb_forward(f.clone(), &vg, &sj, &p, "jmrm0.gsmb").unwrap();
        let mut oracle = Tensor::zeros(f.shape());
        for ch in 0..8 {
            for i in 0..16 {
                let s = sj.data()[i];
                oracle.plane_mut(0, ch)[i] = s * f.plane(0, ch)[i] + s;
            }
        }
        let diff = out
            .data()
            .iter()
            .zip(oracle.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6);
    }

    #[test]
    fn gsmb_grad() {
        let cfg = tiny_cfg();
        let p = small_params(&cfg, 51);
        let names = names_with_prefix(&cfg, "jmrm0.gsmb.");
        let f = rand_t([2, 8, 4, 4], 52);
        let vg = rand_t([2, 6, 1, 1], 53);
        let sj = rand_t([2, 1, 4, 4], 54);
        let mut inputs = vec![f, vg, sj];
        for n in &names {
            inputs.push(p.get(n).unwrap().clone());
        }
        let rebuild = |tensors: &[Tensor<f64>]| {
            let mut q = p.clone();
            for (n, t) in names.iter().zip(&tensors[3..]) {
                q.insert(n.clone(), t.clone());
            }
            q
        };
        let report = grad_check(
            |ins| Ok(gsmb_forward(ins[0].clone(), &ins[1], &ins[2], &rebuild(ins), "jmrm0.gsmb")?.0),
            |ins, dout| {
                let q = rebuild(ins);
                let (_, cache) =
                    gsmb_forward(ins[0].clone(), &ins[1], &ins[2], &q, "jmrm0.gsmb")?;
                let mut g = GradStore::new();
                let (df, dvg, dsj) = gsmb_backward(&cache, &q, "jmrm0.gsmb", dout, &mut g)?;
                let mut out = vec![df, dvg, dsj];
                for n in &names {
                    out.push(g.get(n).unwrap().clone());
                }
                Ok(out)
            },
            &inputs,
            1e-5,
            1e-4,
            Some(120),
            55,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn gfm_identity_when_unit_affine() {
        let cfg = ModelConfig {
            modulation: super::super::Modulation::Gfm,
            ..tiny_cfg()
        };
        let mut p = small_params(&cfg, 61);
        let c = 8;
        p.insert("jmrm0.gfm.m1.weight", Tensor::zeros([c, 6, 1, 1]));
        p.insert("jmrm0.gfm.m1.bias", Tensor::filled([1, c, 1, 1], 1.0));
        p.insert("jmrm0.gfm.m2.weight", Tensor::zeros([c, 6, 1, 1]));
        p.insert("jmrm0.gfm.m2.bias", Tensor::zeros([1, c, 1, 1]));
        let f = rand_t([1, c, 4, 4], 62);
        let vg = rand_t([1, 6, 1, 1], 63);
        let (out, _) = gfm_forward(f.clone(), &vg, &p, "jmrm0.gfm").unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn gfm_grad() {
        let cfg = ModelConfig {
            modulation: super::super::Modulation::Gfm,
            ..tiny_cfg()
        };
        let p = small_params(&cfg, 64);
        let names = names_with_prefix(&cfg, "jmrm0.gfm.");
        let mut inputs = vec![rand_t([2, 8, 4, 4], 65), rand_t([2, 6, 1, 1], 66)];
        for n in &names {
            inputs.push(p.get(n).unwrap().clone());
        }
        let rebuild = |tensors: &[Tensor<f64>]| {
            let mut q = p.clone();
            for (n, t) in names.iter().zip(&tensors[2..]) {
                q.insert(n.clone(), t.clone());
            }
            q
        };
        let report = grad_check(
            |ins| Ok(gfm_forward(ins[0].clone(), &ins[1], &rebuild(ins), "jmrm0.gfm")?.0),
            |ins, dout| {
                let q = rebuild(ins);
                let (_, cache) = gfm_forward(ins[0].clone(), &ins[1], &q, "jmrm0.gfm")?;
                let mut g = GradStore::new();
                let (df, dvg) = gfm_backward(&cache, &q, "jmrm0.gfm", dout, &mut g)?;
                let mut out = vec![df, dvg];
                for n in &names {
                    out.push(g.get(n).unwrap().clone());
                }
                Ok(out)
            },
            &inputs,
            1e-5,
            1e-4,
            Some(120),
            67,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn sft_blocks_grad_and_identity() {
        let cfg = ModelConfig {
            modulation: super::super::Modulation::Sft,
            ..tiny_cfg()
        };
        let p = small_params(&cfg, 71);
        let img = rand_t([1, 3, 6, 6], 72);
        let (cond, _) = sft_head_forward(&img, &p).unwrap();
        assert_eq!(cond.shape(), [1, 6, 6, 6]);

        // gamma=1, beta=0 via zero weights and unit gamma bias
        let mut q = p.clone();
        q.insert("jmrm0.sft.gamma.weight", Tensor::zeros([8, 6, 3, 3]));
        q.insert("jmrm0.sft.gamma.bias", Tensor::filled([1, 8, 1, 1], 1.0));
        q.insert("jmrm0.sft.beta.weight", Tensor::zeros([8, 6, 3, 3]));
        q.insert("jmrm0.sft.beta.bias", Tensor::zeros([1, 8, 1, 1]));
        let f = rand_t([1, 8, 6, 6], 73);
        let (out, _) = sft_forward(f.clone(), &cond, &q, "jmrm0.sft").unwrap();
        assert_eq!(out, f);

        let names = names_with_prefix(&cfg, "jmrm0.sft.");
        let mut inputs = vec![rand_t([1, 8, 5, 5], 74), rand_t([1, 6, 5, 5], 75)];
        for n in &names {
            inputs.push(p.get(n).unwrap().clone());
        }
        let rebuild = |tensors: &[Tensor<f64>]| {
            let mut q = p.clone();
            for (n, t) in names.iter().zip(&tensors[2..]) {
                q.insert(n.clone(), t.clone());
            }
            q
        };
        let report = grad_check(
            |ins| Ok(sft_forward(ins[0].clone(), &ins[1], &rebuild(ins), "jmrm0.sft")?.0),
            |ins, dout| {
                let q = rebuild(ins);
                let (_, cache) = sft_forward(ins[0].clone(), &ins[1], &q, "jmrm0.sft")?;
                let mut g = GradStore::new();
                let (df, dcond) = sft_backward(&cache, &ins[1], &q, "jmrm0.sft", dout, &mut g)?;
                let mut out = vec![df, dcond];
                for n in &names {
                    out.push(g.get(n).unwrap().clone());
                }
                Ok(out)
            },
            &inputs,
            1e-5,
            1e-4,
            Some(120),
            76,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn upsampler_shapes_and_grad() {
        let cfg = tiny_cfg();
        let p = small_params(&cfg, 81);
        let x = rand_t([1, 8, 5, 5], 82);
        let (out, _) = upsampler_forward(x.clone(), &p, 2).unwrap();
        assert_eq!(out.shape(), [1, 8, 10, 10]);
        assert!(upsampler_forward(x.clone(), &p, 3).is_err());

        let names = names_with_prefix(&cfg, "up.");
        let mut inputs = vec![x];
        for n in &names {
            inputs.push(p.get(n).unwrap().clone());
        }
        let rebuild = |tensors: &[Tensor<f64>]| {
            let mut q = p.clone();
            for (n, t) in names.iter().zip(&tensors[1..]) {
                q.insert(n.clone(), t.clone());
            }
            q
        };
        let report = grad_check(
            |ins| Ok(upsampler_forward(ins[0].clone(), &rebuild(ins), 2)?.0),
            |ins, dout| {
                let q = rebuild(ins);
                let (_, caches) = upsampler_forward(ins[0].clone(), &q, 2)?;
                let mut g = GradStore::new();
                let dx = upsampler_backward(&caches, &q, dout, &mut g)?;
                let mut out = vec![dx];
                for n in &names {
                    out.push(g.get(n).unwrap().clone());
                }
                Ok(out)
            },
            &inputs,
            1e-5,
            1e-4,
            Some(120),
            83,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn x4_upsampler_contributes_two_stages() {
        let cfg = ModelConfig {
            scale: 4,
            ..tiny_cfg()
        };
        let specs = param_specs(&cfg);
        let stages: Vec<_> = specs
            .iter()
            .filter(|s| s.name.starts_with("up.stage"))
            .collect();
        assert_eq!(stages.len(), 4); // two weights, two biases
        let weight = stages.iter().find(|s| s.name == "up.stage1.weight").unwrap();
        assert_eq!(weight.shape, [32, 8, 3, 3]);
        assert!(matches!(weight.kind, ParamKind::Weight { fan_in: 72 }));
    }
}
