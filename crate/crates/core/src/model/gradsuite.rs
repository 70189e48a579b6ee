//! Finite-difference verification suite over every layer and the composed
//! network, runnable outside the test harness so the CLI can report it.
//!
//! Each check compares an analytic backward against central differences in
//! f64. Layer tolerance is 1e-4; the end-to-end network check runs at 1e-3.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::*;
use super::{init_params, GradStore, ModelConfig, ParamStore};
use crate::error::Result;
use crate::tensor::gradcheck::{grad_check, random_tensor};
use crate::tensor::{
    avg_pool, avg_pool_backward, batch_norm, batch_norm_backward, conv2d, conv2d_backward,
    drop_block, dropout, global_avg_pool, global_avg_pool_backward, instance_norm,
    instance_norm_backward, leaky_relu, leaky_relu_backward, linear, linear_backward,
    mask_backward, pixel_shuffle, pixel_shuffle_backward, relu, relu_backward, Mode, Tensor,
};

pub const LAYER_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{}\t{:.3e}\t(tol {:.0e})\t{}",
            self.name,
            self.max_rel_err,
            self.tolerance,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

const EPS: f64 = 1e-5;

fn run<F, B>(
    name: &'static str,
    fwd: F,
    bwd: B,
    inputs: Vec<Tensor<f64>>,
    tol: f64,
    per_input: usize,
) -> Result<CheckResult>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    let report = grad_check(fwd, bwd, &inputs, EPS, tol, Some(per_input), 0x5EED)?;
    Ok(CheckResult {
        name,
        max_rel_err: report.max_rel_err,
        tolerance: tol,
        pass: report.pass,
    })
}

/// Push values away from zero so activation kinks stay clear of the
/// finite-difference step.
fn off_kink(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
}

fn store_from(names: &[&str], tensors: &[Tensor<f64>]) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    for (n, t) in names.iter().zip(tensors) {
        p.insert(*n, t.clone());
    }
    p
}

fn grads_in_order(
    grads: &GradStore<f64>,
    names: &[&str],
    first: Vec<Tensor<f64>>,
) -> Vec<Tensor<f64>> {
    let mut out = first;
    for n in names {
        out.push(grads.get(n).expect("suite covers every param").clone());
    }
    out
}

/// Finite-difference checks for each primitive layer, at `LAYER_TOL`.
pub fn run_layer_checks() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut out = Vec::new();

    // convolution variants used by the graph
    {
        let x = random_tensor::<f64>([2, 3, 6, 6], -1.0, 1.0, &mut rng);
        let w = random_tensor::<f64>([4, 3, 3, 3], -0.5, 0.5, &mut rng);
        let b = random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, &mut rng);
        out.push(run(
            "conv2d_3x3_s1p1",
            |i| conv2d(&i[0], &i[1], Some(&i[2]), 1, 1),
            |i, d| {
                let g = conv2d_backward(&i[0], &i[1], true, 1, 1, d)?;
                Ok(vec![g.dinput, g.dweight, g.dbias.expect("bias")])
            },
            vec![x, w, b],
            LAYER_TOL,
            12,
        )?);
    }
    {
        let x = random_tensor::<f64>([2, 4, 5, 5], -1.0, 1.0, &mut rng);
        let w = random_tensor::<f64>([3, 4, 1, 1], -0.5, 0.5, &mut rng);
        let b = random_tensor::<f64>([1, 3, 1, 1], -0.2, 0.2, &mut rng);
        out.push(run(
            "conv2d_1x1",
            |i| conv2d(&i[0], &i[1], Some(&i[2]), 1, 0),
            |i, d| {
                let g = conv2d_backward(&i[0], &i[1], true, 1, 0, d)?;
                Ok(vec![g.dinput, g.dweight, g.dbias.expect("bias")])
            },
            vec![x, w, b],
            LAYER_TOL,
            12,
        )?);
    }
    {
        let x = random_tensor::<f64>([1, 3, 7, 7], -1.0, 1.0, &mut rng);
        let w = random_tensor::<f64>([4, 3, 3, 3], -0.5, 0.5, &mut rng);
        let b = random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, &mut rng);
        out.push(run(
            "conv2d_3x3_s2p1",
            |i| conv2d(&i[0], &i[1], Some(&i[2]), 2, 1),
            |i, d| {
                let g = conv2d_backward(&i[0], &i[1], true, 2, 1, d)?;
                Ok(vec![g.dinput, g.dweight, g.dbias.expect("bias")])
            },
            vec![x, w, b],
            LAYER_TOL,
            12,
        )?);
    }
    {
        let x = random_tensor::<f64>([2, 5, 1, 1], -1.0, 1.0, &mut rng);
        let w = random_tensor::<f64>([3, 5, 1, 1], -0.5, 0.5, &mut rng);
        let b = random_tensor::<f64>([1, 3, 1, 1], -0.2, 0.2, &mut rng);
        out.push(run(
            "linear",
            |i| linear(&i[0], &i[1], &i[2]),
            |i, d| {
                let g = linear_backward(&i[0], &i[1], d)?;
                Ok(vec![g.dinput, g.dweight, g.dbias])
            },
            vec![x, w, b],
            LAYER_TOL,
            12,
        )?);
    }

    // activations, clear of the kink
    {
        let x = off_kink(random_tensor::<f64>([1, 4, 5, 5], -1.0, 1.0, &mut rng));
        out.push(run(
            "relu",
            |i| Ok(relu(&i[0])),
            |i, d| Ok(vec![relu_backward(&i[0], d)?]),
            vec![x],
            LAYER_TOL,
            24,
        )?);
    }
    {
        let x = off_kink(random_tensor::<f64>([1, 4, 5, 5], -1.0, 1.0, &mut rng));
        out.push(run(
            "leaky_relu_0.1",
            |i| leaky_relu(&i[0], 0.1),
            |i, d| Ok(vec![leaky_relu_backward(&i[0], 0.1, d)?]),
            vec![x],
            LAYER_TOL,
            24,
        )?);
    }

    // normalization
    {
        let x = random_tensor::<f64>([2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let g = random_tensor::<f64>([1, 3, 1, 1], 0.5, 1.5, &mut rng);
        let b = random_tensor::<f64>([1, 3, 1, 1], -0.3, 0.3, &mut rng);
        out.push(run(
            "instance_norm",
            |i| instance_norm(&i[0], &i[1], &i[2], 1e-5),
            |i, d| {
                let g = instance_norm_backward(&i[0], &i[1], 1e-5, d)?;
                Ok(vec![g.dinput, g.dgamma, g.dbeta])
            },
            vec![x, g, b],
            LAYER_TOL,
            12,
        )?);
    }
    {
        let x = random_tensor::<f64>([2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let g = random_tensor::<f64>([1, 3, 1, 1], 0.5, 1.5, &mut rng);
        let b = random_tensor::<f64>([1, 3, 1, 1], -0.3, 0.3, &mut rng);
        out.push(run(
            "batch_norm_train",
            |i| Ok(batch_norm(&i[0], &i[1], &i[2], None, Mode::Train, 0.1, 1e-5)?.0),
            |i, d| {
                let g = batch_norm_backward(&i[0], &i[1], 1e-5, d)?;
                Ok(vec![g.dinput, g.dgamma, g.dbeta])
            },
            vec![x, g, b],
            LAYER_TOL,
            12,
        )?);
    }

    // pooling and rearrangement
    {
        let x = random_tensor::<f64>([1, 3, 6, 6], -1.0, 1.0, &mut rng);
        out.push(run(
            "avg_pool_2x2",
            |i| avg_pool(&i[0], 2, 2),
            |i, d| Ok(vec![avg_pool_backward(i[0].shape(), 2, 2, d)?]),
            vec![x],
            LAYER_TOL,
            24,
        )?);
    }
    {
        let x = random_tensor::<f64>([1, 4, 5, 5], -1.0, 1.0, &mut rng);
        out.push(run(
            "global_avg_pool",
            |i| global_avg_pool(&i[0]),
            |i, d| Ok(vec![global_avg_pool_backward(i[0].shape(), d)?]),
            vec![x],
            LAYER_TOL,
            24,
        )?);
    }
    {
        let x = random_tensor::<f64>([1, 8, 3, 3], -1.0, 1.0, &mut rng);
        out.push(run(
            "pixel_shuffle_r2",
            |i| pixel_shuffle(&i[0], 2),
            |_, d| Ok(vec![pixel_shuffle_backward(2, d)?]),
            vec![x],
            LAYER_TOL,
            24,
        )?);
    }

    // stochastic layers with the mask regenerated from a pinned seed, so
    // every finite-difference evaluation sees the same mask
    {
        let x = random_tensor::<f64>([1, 4, 4, 4], -1.0, 1.0, &mut rng);
        let masked = |i: &Tensor<f64>| -> Result<(Tensor<f64>, Tensor<f64>)> {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            let (out, mult) = dropout(i, 0.5, Mode::Train, &mut r)?;
            Ok((out, mult.expect("train mode")))
        };
        out.push(run(
            "dropout_train",
            |i| Ok(masked(&i[0])?.0),
            |i, d| {
                let (_, mult) = masked(&i[0])?;
                Ok(vec![mask_backward(&mult, d)?])
            },
            vec![x],
            LAYER_TOL,
            24,
        )?);
    }
    {
        let x = random_tensor::<f64>([1, 2, 8, 8], -1.0, 1.0, &mut rng);
        let masked = |i: &Tensor<f64>| -> Result<(Tensor<f64>, Tensor<f64>)> {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            let db = drop_block(i, 3, 0.9, Mode::Train, &mut r)?;
            Ok((db.out, db.mult.expect("train mode")))
        };
        out.push(run(
            "drop_block_train",
            |i| Ok(masked(&i[0])?.0),
            |i, d| {
                let (_, mult) = masked(&i[0])?;
                Ok(vec![mask_backward(&mult, d)?])
            },
            vec![x],
            LAYER_TOL,
            24,
        )?);
    }

    out.extend(run_block_checks(&mut rng)?);
    Ok(out)
}

/// Composite blocks, still at `LAYER_TOL`: parameters enter as inputs so
/// the check covers both data and weight gradients.
fn run_block_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();

    {
        let names = ["t.conv.weight", "t.conv.bias", "t.inorm.gamma", "t.inorm.beta"];
        let inputs = vec![
            random_tensor::<f64>([1, 3, 6, 6], -1.0, 1.0, rng),
            random_tensor::<f64>([4, 3, 1, 1], -0.5, 0.5, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
            random_tensor::<f64>([1, 4, 1, 1], 0.5, 1.5, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.3, 0.3, rng),
        ];
        out.push(run(
            "cccb_block",
            move |i| Ok(cccb_forward(i[0].clone(), &store_from(&names, &i[1..]), "t", 0.1, 1e-5)?.0),
            move |i, d| {
                let p = store_from(&names, &i[1..]);
                let (_, cache) = cccb_forward(i[0].clone(), &p, "t", 0.1, 1e-5)?;
                let mut grads = GradStore::new();
                let dx = cccb_backward(&cache, &p, "t", 0.1, 1e-5, d, &mut grads)?;
                Ok(grads_in_order(&grads, &names, vec![dx]))
            },
            inputs,
            LAYER_TOL,
            8,
        )?);
    }
    {
        let names = ["t.conv.weight", "t.conv.bias", "t.bn.gamma", "t.bn.beta"];
        let buffers = ["t.bn.running_mean", "t.bn.running_var"];
        let inputs = vec![
            random_tensor::<f64>([2, 3, 6, 6], -1.0, 1.0, rng),
            random_tensor::<f64>([4, 3, 3, 3], -0.4, 0.4, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
            random_tensor::<f64>([1, 4, 1, 1], 0.5, 1.5, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.3, 0.3, rng),
        ];
        let with_buffers = move |i: &[Tensor<f64>]| {
            let mut p = store_from(&names, &i[1..]);
            p.insert(buffers[0], Tensor::zeros([1, 4, 1, 1]));
            p.insert(buffers[1], Tensor::filled([1, 4, 1, 1], 1.0));
            p
        };
        out.push(run(
            "sscb_block_train",
            move |i| {
                Ok(sscb_forward(i[0].clone(), &with_buffers(i), "t", Mode::Train, 0.1, 1e-5)?.0)
            },
            move |i, d| {
                let p = with_buffers(i);
                let (_, cache, _) =
                    sscb_forward(i[0].clone(), &p, "t", Mode::Train, 0.1, 1e-5)?;
                let mut grads = GradStore::new();
                let dx = sscb_backward(&cache, &p, "t", 1e-5, d, &mut grads)?;
                Ok(grads_in_order(&grads, &names, vec![dx]))
            },
            inputs,
            LAYER_TOL,
            8,
        )?);
    }
    {
        let names = [
            "t.conv1.weight",
            "t.conv1.bias",
            "t.conv2.weight",
            "t.conv2.bias",
        ];
        let inputs = vec![
            random_tensor::<f64>([1, 4, 5, 5], -1.0, 1.0, rng),
            random_tensor::<f64>([4, 4, 3, 3], -0.3, 0.3, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
            random_tensor::<f64>([4, 4, 3, 3], -0.3, 0.3, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
        ];
        out.push(run(
            "base_block",
            move |i| Ok(base_block_forward(i[0].clone(), &store_from(&names, &i[1..]), "t")?.0),
            move |i, d| {
                let p = store_from(&names, &i[1..]);
                let (_, cache) = base_block_forward(i[0].clone(), &p, "t")?;
                let mut grads = GradStore::new();
                let dx = base_block_backward(&cache, &p, "t", d, &mut grads)?;
                Ok(grads_in_order(&grads, &names, vec![dx]))
            },
            inputs,
            LAYER_TOL,
            8,
        )?);
    }
    {
        let names = [
            "t.reduce.weight",
            "t.reduce.bias",
            "t.k3.weight",
            "t.k3.bias",
            "t.k5.weight",
            "t.k5.bias",
            "t.k7.weight",
            "t.k7.bias",
            "t.k9.weight",
            "t.k9.bias",
            "t.fuse.weight",
            "t.fuse.bias",
        ];
        let mut inputs = vec![random_tensor::<f64>([1, 4, 6, 6], -1.0, 1.0, rng)];
        inputs.push(random_tensor::<f64>([8, 4, 1, 1], -0.4, 0.4, rng));
        inputs.push(random_tensor::<f64>([1, 8, 1, 1], -0.2, 0.2, rng));
        for k in [3usize, 5, 7, 9] {
            inputs.push(random_tensor::<f64>([8, 8, k, k], -0.15, 0.15, rng));
            inputs.push(random_tensor::<f64>([1, 8, 1, 1], -0.2, 0.2, rng));
        }
        inputs.push(random_tensor::<f64>([1, 32, 1, 1], -0.3, 0.3, rng));
        inputs.push(random_tensor::<f64>([1, 1, 1, 1], -0.2, 0.2, rng));
        out.push(run(
            "spcb_block",
            move |i| Ok(spcb_forward(i[0].clone(), &store_from(&names, &i[1..]), "t")?.0),
            move |i, d| {
                let p = store_from(&names, &i[1..]);
                let (_, cache) = spcb_forward(i[0].clone(), &p, "t")?;
                let mut grads = GradStore::new();
                let dx = spcb_backward(&cache, &p, "t", d, &mut grads)?;
                Ok(grads_in_order(&grads, &names, vec![dx]))
            },
            inputs,
            LAYER_TOL,
            4,
        )?);
    }
    {
        let names = ["g.m1.weight", "g.m1.bias", "g.m2.weight", "g.m2.bias"];
        let inputs = vec![
            random_tensor::<f64>([2, 4, 5, 5], -1.0, 1.0, rng),
            random_tensor::<f64>([2, 6, 1, 1], -1.0, 1.0, rng),
            random_tensor::<f64>([2, 1, 5, 5], -0.5, 0.5, rng),
            random_tensor::<f64>([4, 6, 1, 1], -0.4, 0.4, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
            random_tensor::<f64>([4, 6, 1, 1], -0.4, 0.4, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
        ];
        out.push(run(
            "gsmb_block",
            move |i| {
                Ok(gsmb_forward(i[0].clone(), &i[1], &i[2], &store_from(&names, &i[3..]), "g")?.0)
            },
            move |i, d| {
                let p = store_from(&names, &i[3..]);
                let (_, cache) = gsmb_forward(i[0].clone(), &i[1], &i[2], &p, "g")?;
                let mut grads = GradStore::new();
                let (df, dvg, dsj) = gsmb_backward(&cache, &p, "g", d, &mut grads)?;
                Ok(grads_in_order(&grads, &names, vec![df, dvg, dsj]))
            },
            inputs,
            LAYER_TOL,
            8,
        )?);
    }
    {
        let names = ["g.m1.weight", "g.m1.bias", "g.m2.weight", "g.m2.bias"];
        let inputs = vec![
            random_tensor::<f64>([2, 4, 5, 5], -1.0, 1.0, rng),
            random_tensor::<f64>([2, 6, 1, 1], -1.0, 1.0, rng),
            random_tensor::<f64>([4, 6, 1, 1], -0.4, 0.4, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
            random_tensor::<f64>([4, 6, 1, 1], -0.4, 0.4, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
        ];
        out.push(run(
            "gfm_block",
            move |i| Ok(gfm_forward(i[0].clone(), &i[1], &store_from(&names, &i[2..]), "g")?.0),
            move |i, d| {
                let p = store_from(&names, &i[2..]);
                let (_, cache) = gfm_forward(i[0].clone(), &i[1], &p, "g")?;
                let mut grads = GradStore::new();
                let (df, dvg) = gfm_backward(&cache, &p, "g", d, &mut grads)?;
                Ok(grads_in_order(&grads, &names, vec![df, dvg]))
            },
            inputs,
            LAYER_TOL,
            8,
        )?);
    }
    {
        let names = [
            "sft_head.conv1.weight",
            "sft_head.conv1.bias",
            "sft_head.conv2.weight",
            "sft_head.conv2.bias",
        ];
        let inputs = vec![
            random_tensor::<f64>([1, 3, 5, 5], -1.0, 1.0, rng),
            random_tensor::<f64>([4, 3, 3, 3], -0.3, 0.3, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
            random_tensor::<f64>([4, 4, 3, 3], -0.3, 0.3, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
        ];
        out.push(run(
            "sft_head",
            move |i| Ok(sft_head_forward(&i[0], &store_from(&names, &i[1..]))?.0),
            move |i, d| {
                let p = store_from(&names, &i[1..]);
                let (_, cache) = sft_head_forward(&i[0], &p)?;
                let mut grads = GradStore::new();
                let dx = sft_head_backward(&cache, &p, d, &mut grads)?;
                Ok(grads_in_order(&grads, &names, vec![dx]))
            },
            inputs,
            LAYER_TOL,
            8,
        )?);
    }
    {
        let names = ["s.gamma.weight", "s.gamma.bias", "s.beta.weight", "s.beta.bias"];
        let inputs = vec![
            random_tensor::<f64>([1, 4, 5, 5], -1.0, 1.0, rng),
            random_tensor::<f64>([1, 3, 5, 5], -1.0, 1.0, rng),
            random_tensor::<f64>([4, 3, 3, 3], -0.3, 0.3, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
            random_tensor::<f64>([4, 3, 3, 3], -0.3, 0.3, rng),
            random_tensor::<f64>([1, 4, 1, 1], -0.2, 0.2, rng),
        ];
        out.push(run(
            "sft_block",
            move |i| Ok(sft_forward(i[0].clone(), &i[1], &store_from(&names, &i[2..]), "s")?.0),
            move |i, d| {
                let p = store_from(&names, &i[2..]);
                let (_, cache) = sft_forward(i[0].clone(), &i[1], &p, "s")?;
                let mut grads = GradStore::new();
                let (df, dcond) = sft_backward(&cache, &i[1], &p, "s", d, &mut grads)?;
                Ok(grads_in_order(&grads, &names, vec![df, dcond]))
            },
            inputs,
            LAYER_TOL,
            8,
        )?);
    }
    {
        let names = ["up.stage0.weight", "up.stage0.bias"];
        let inputs = vec![
            random_tensor::<f64>([1, 4, 4, 4], -1.0, 1.0, rng),
            random_tensor::<f64>([16, 4, 3, 3], -0.3, 0.3, rng),
            random_tensor::<f64>([1, 16, 1, 1], -0.2, 0.2, rng),
        ];
        out.push(run(
            "upsampler_x2_stage",
            move |i| Ok(upsampler_forward(i[0].clone(), &store_from(&names, &i[1..]), 2)?.0),
            move |i, d| {
                let p = store_from(&names, &i[1..]);
                let (_, caches) = upsampler_forward(i[0].clone(), &p, 2)?;
                let mut grads = GradStore::new();
                let dx = upsampler_backward(&caches, &p, d, &mut grads)?;
                Ok(grads_in_order(&grads, &names, vec![dx]))
            },
            inputs,
            LAYER_TOL,
            8,
        )?);
    }
    Ok(out)
}

/// End-to-end check in train mode: every learnable tensor of a snipped-down
/// config enters as an input, the internal mask RNG is pinned per call.
pub fn run_full_net_check() -> Result<CheckResult> {
    let cfg = ModelConfig {
        channels: 4,
        cccb_width: 3,
        sscb_width: 3,
        n_cccb: 1,
        n_sscb: 1,
        n_jmrm: 1,
        prior_dim_c: 2,
        prior_dim_s: 2,
        scale: 2,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut p = init_params(&cfg, &mut rng)?.cast::<f64>();
    // the reconstruction conv inits to zero; give it weight so this check
    // exercises gradient flow through every upstream layer
    let cl_shape = p.get("cl.weight")?.shape();
    p.insert(
        "cl.weight",
        random_tensor::<f64>(cl_shape, -0.3, 0.3, &mut rng),
    );
    let img = random_tensor::<f64>([1, 3, 6, 6], 0.0, 1.0, &mut rng);
    let names: Vec<String> = p
        .names()
        .filter(|n| !super::is_buffer_name(n))
        .cloned()
        .collect();
    let inputs: Vec<Tensor<f64>> = names
        .iter()
        .map(|n| p.get(n).map(|t| t.clone()))
        .collect::<Result<_>>()?;
    let rebuild = |tensors: &[Tensor<f64>]| {
        let mut q = p.clone();
        for (n, t) in names.iter().zip(tensors) {
            q.insert(n.clone(), t.clone());
        }
        q
    };
    let report = grad_check(
        |ins| {
            let mut mrng = ChaCha8Rng::seed_from_u64(77);
            Ok(super::gpgmnet_forward(&img, &rebuild(ins), &cfg, Mode::Train, &mut mrng)?.output)
        },
        |ins, dout| {
            let q = rebuild(ins);
            let mut mrng = ChaCha8Rng::seed_from_u64(77);
            let fwd = super::gpgmnet_forward(&img, &q, &cfg, Mode::Train, &mut mrng)?;
            let grads = super::gpgmnet_backward(&fwd.cache, &q, &cfg, dout)?;
            names
                .iter()
                .map(|n| {
                    grads
                        .get(n)
                        .cloned()
                        .ok_or_else(|| crate::error::Error::arg("gradsuite", "missing grad"))
                })
                .collect()
        },
        &inputs,
        EPS,
        NET_TOL,
        Some(12),
        17,
    )?;
    Ok(CheckResult {
        name: "full_network_train_mode",
        max_rel_err: report.max_rel_err,
        tolerance: NET_TOL,
        pass: report.pass,
    })
}

/// The whole suite: every layer, every composite block, then the network.
pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut results = run_layer_checks()?;
    results.push(run_full_net_check()?);
    Ok(results)
}
