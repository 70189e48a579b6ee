//! L2 loss, Adam, and the training loop: deterministic batch assembly from
//! per-iteration RNG streams, loss logging, checkpointing, and bit-exact
//! resume.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{ChromaFormat, Frame};
use crate::error::{Error, Result};
use crate::io::{
    chroma_420_to_444, load_named_tensors, read_yuv, sample_patches, save_named_tensors,
    stack_batch, Manifest, NamedTensors,
};
use crate::metrics::{psnr, PsnrResult};
use crate::model::{
    apply_bn_updates, gpgmnet_backward, gpgmnet_forward, gpgmnet_infer, init_params, GradStore,
    ModelConfig, ParamStore,
};
use crate::tensor::{Mode, Scalar, Tensor};

/// Mean squared error over all elements plus its gradient `2(p-t)/N`.
pub fn l2_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "l2_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for (g, (&p, &t)) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data().iter().zip(target.data().iter()))
    {
        let d = p.to_f64s() - t.to_f64s();
        sum += d * d;
        *g = T::from_f64(2.0 * d / n);
    }
    Ok((sum / n, grad))
}

/// Adam state: first/second moments per parameter, created lazily so only
/// tensors that receive gradients carry moments.
#[derive(Debug, Clone)]
pub struct OptimState<T: Scalar> {
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(lr: f64) -> Self {
        OptimState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, applied in place in name order.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &GradStore<T>,
    state: &mut OptimState<T>,
) -> Result<()> {
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for (name, g) in grads.iter() {
        let p = params.get_mut(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        for i in 0..g.len() {
            let gi = g.data()[i].to_f64s();
            let mi = state.beta1 * m.data()[i].to_f64s() + (1.0 - state.beta1) * gi;
            let vi = state.beta2 * v.data()[i].to_f64s() + (1.0 - state.beta2) * gi * gi;
            m.data_mut()[i] = T::from_f64(mi);
            v.data_mut()[i] = T::from_f64(vi);
            let update = state.lr * (mi / bc1) / ((vi / bc2).sqrt() + state.eps);
            p.data_mut()[i] = T::from_f64(p.data()[i].to_f64s() - update);
        }
    }
    Ok(())
}

/// Scale all gradients by `min(1, max_norm / ||g||_2)` over the global norm.
pub fn clip_grad_norm<T: Scalar>(grads: &mut GradStore<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, g) in grads.iter() {
        for &x in g.data() {
            let v = x.to_f64s();
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for x in g.data_mut() {
                *x = T::from_f64(x.to_f64s() * s);
            }
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Save a checkpoint every this many iterations; 0 = final only.
    pub checkpoint_every: usize,
    /// Run held-out PSNR every this many iterations; 0 = never.
    pub eval_every: usize,
    pub patch_lr: usize,
    /// 0 samples fresh patches each iteration; a positive value pre-draws a
    /// fixed pool of that many patches and every batch comes from the pool.
    pub pool_size: usize,
    /// Global-norm gradient clip; None = off.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            iterations: 1000,
            seed: 0,
            checkpoint_every: 500,
            eval_every: 0,
            patch_lr: 40,
            pool_size: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "lr, batch_size and iterations must be positive".into(),
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    /// Apply one `key=value` setting from a config file.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::Config(format!("bad value {v:?} for {k}"));
        match key {
            "lr" => self.lr = value.parse().map_err(|_| bad(key, value))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "iterations" => self.iterations = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "checkpoint_every" => {
                self.checkpoint_every = value.parse().map_err(|_| bad(key, value))?
            }
            "eval_every" => self.eval_every = value.parse().map_err(|_| bad(key, value))?,
            "patch_lr" => self.patch_lr = value.parse().map_err(|_| bad(key, value))?,
            "pool_size" => self.pool_size = value.parse().map_err(|_| bad(key, value))?,
            "grad_clip" => {
                self.grad_clip = if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key, value))?)
                }
            }
            _ => return Err(Error::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<(u64, f64)>,
    pub evals: Vec<(u64, f64)>,
    pub checkpoints: Vec<PathBuf>,
    pub final_params: ParamStore<f32>,
}

const CKPT_MOMENT1: &str = "optim.m.";
const CKPT_MOMENT2: &str = "optim.v.";
const CKPT_STEP: &str = "meta.step";
// seed split into 16-bit limbs: the container stores f32, which holds
// 16-bit integers exactly
const CKPT_SEED: [&str; 4] = ["meta.seed0", "meta.seed1", "meta.seed2", "meta.seed3"];

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ParamStore<f32>,
    state: &OptimState<f32>,
    seed: u64,
) -> Result<()> {
    let mut t = NamedTensors::new();
    for (name, tensor) in params.iter() {
        t.insert_tensor(name, tensor)?;
    }
    for (name, m) in &state.m {
        t.insert_tensor(&format!("{CKPT_MOMENT1}{name}"), m)?;
    }
    for (name, v) in &state.v {
        t.insert_tensor(&format!("{CKPT_MOMENT2}{name}"), v)?;
    }
    if state.step >= 1 << 24 {
        return Err(Error::arg("save_checkpoint", "step counter exceeds exact f32 range"));
    }
    t.insert_scalar(CKPT_STEP, state.step as f32)?;
    for (i, name) in CKPT_SEED.iter().enumerate() {
        t.insert_scalar(name, ((seed >> (16 * i)) & 0xffff) as f32)?;
    }
    save_named_tensors(&t, path)
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
    cfg: &ModelConfig,
    lr: f64,
) -> Result<(ParamStore<f32>, OptimState<f32>, u64)> {
    let named = load_named_tensors(&path)?;
    let mut state = OptimState::new(lr);
    state.step = named.get_scalar(CKPT_STEP)? as u64;
    let mut seed = 0u64;
    for (i, name) in CKPT_SEED.iter().enumerate() {
        seed |= (named.get_scalar(name)? as u64) << (16 * i);
    }
    let mut plain = NamedTensors::new();
    for name in named.names() {
        if let Some(rest) = name.strip_prefix(CKPT_MOMENT1) {
            state.m.insert(rest.to_string(), named.get_tensor4(name)?);
        } else if let Some(rest) = name.strip_prefix(CKPT_MOMENT2) {
            state.v.insert(rest.to_string(), named.get_tensor4(name)?);
        } else if name != CKPT_STEP && !CKPT_SEED.contains(&name) {
            let (dims, data) = named.get_raw(name)?;
            plain.insert_raw(name, dims.to_vec(), data.to_vec())?;
        }
    }
    let params = crate::io::named_tensors_to_params(
        &plain,
        cfg,
        &path.as_ref().display().to_string(),
    )?;
    Ok((params, state, seed))
}

/// Read one LR/HR pair, upsampling 4:2:0 chroma to 4:4:4.
pub fn load_pair(lr_path: &Path, hr_path: &Path) -> Result<(Frame, Frame)> {
    let to_444 = |f: Frame| -> Result<Frame> {
        if f.chroma == ChromaFormat::Yuv420 {
            chroma_420_to_444(&f)
        } else {
            Ok(f)
        }
    };
    Ok((to_444(read_yuv(lr_path)?)?, to_444(read_yuv(hr_path)?)?))
}

/// Per-iteration RNG: one ChaCha8 stream per iteration off the run seed, so
/// any iteration's randomness is reproducible without replaying the ones
/// before it. Stream 0 is reserved for setup (e.g. the fixed patch pool).
fn iter_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter + 1);
    rng
}

fn setup_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// Train per the manifest. Checkpoints land in `out_dir` as
/// `ckpt_{iter:06}.gpgm` plus `loss.log` (`iter<TAB>loss` lines) and, when
/// evaluation is enabled, `eval.log` (`iter<TAB>psnr`). With `resume`, the
/// checkpoint's params/optimizer/step are restored and the loop continues
/// from the stored iteration, reproducing an unbroken run bit for bit.
pub fn train(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    manifest: &Manifest,
    out_dir: impl AsRef<Path>,
    resume: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    tcfg.validate()?;
    if manifest.entries.is_empty() {
        return Err(Error::Config("manifest has no pairs".into()));
    }
    if manifest.scale != cfg.scale {
        return Err(Error::Config(format!(
            "manifest scale {} does not match model scale {}",
            manifest.scale, cfg.scale
        )));
    }
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;

    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        pairs.push(load_pair(&e.lr_path, &e.hr_path)?);
    }
    // with more than one pair, the last is held out from training batches
    let train_pairs = if pairs.len() > 1 {
        &pairs[..pairs.len() - 1]
    } else {
        &pairs[..]
    };
    let heldout = pairs.last().expect("nonempty");

    let pool: Vec<(Tensor<f32>, Tensor<f32>)> = if tcfg.pool_size > 0 {
        let mut rng = setup_rng(tcfg.seed);
        let mut pool = Vec::with_capacity(tcfg.pool_size);
        for i in 0..tcfg.pool_size {
            let (lr_f, hr_f) = &train_pairs[i % train_pairs.len()];
            pool.extend(sample_patches(
                lr_f,
                hr_f,
                cfg.scale,
                tcfg.patch_lr,
                1,
                &mut rng,
            )?);
        }
        pool
    } else {
        Vec::new()
    };

    let (mut params, mut state, start_iter) = match resume {
        Some(path) => {
            let (params, state, seed) = load_checkpoint(path, cfg, tcfg.lr)?;
            if seed != tcfg.seed {
                return Err(Error::Config(format!(
                    "checkpoint was trained with seed {seed}, config says {}",
                    tcfg.seed
                )));
            }
            let start = state.step;
            (params, state, start)
        }
        None => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
            (
                init_params(cfg, &mut init_rng)?,
                OptimState::new(tcfg.lr),
                0,
            )
        }
    };

    let log_path = out.join("loss.log");
    let eval_path = out.join("eval.log");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let mut eval_log: Option<fs::File> = None;

    let mut report = TrainReport {
        initial_loss: f64::NAN,
        final_loss: f64::NAN,
        losses: Vec::with_capacity(tcfg.iterations),
        evals: Vec::new(),
        checkpoints: Vec::new(),
        final_params: ParamStore::new(),
    };

    for iter in start_iter..tcfg.iterations as u64 {
        let mut rng = iter_rng(tcfg.seed, iter);
        let mut lr_patches = Vec::with_capacity(tcfg.batch_size);
        let mut hr_patches = Vec::with_capacity(tcfg.batch_size);
        if pool.is_empty() {
            for _ in 0..tcfg.batch_size {
                let idx = rng.gen_range(0..train_pairs.len());
                let (lr_f, hr_f) = &train_pairs[idx];
                let mut drawn =
                    sample_patches(lr_f, hr_f, cfg.scale, tcfg.patch_lr, 1, &mut rng)?;
                let (l, h) = drawn.pop().expect("count 1");
                lr_patches.push(l);
                hr_patches.push(h);
            }
        } else if tcfg.batch_size <= pool.len() {
            // without replacement; batch == pool is exact full-batch descent
            let mut order: Vec<usize> = (0..pool.len()).collect();
            for k in 0..tcfg.batch_size {
                let j = rng.gen_range(k..order.len());
                order.swap(k, j);
            }
            for &idx in &order[..tcfg.batch_size] {
                lr_patches.push(pool[idx].0.clone());
                hr_patches.push(pool[idx].1.clone());
            }
        } else {
            for _ in 0..tcfg.batch_size {
                let idx = rng.gen_range(0..pool.len());
                lr_patches.push(pool[idx].0.clone());
                hr_patches.push(pool[idx].1.clone());
            }
        }
        let batch_lr = stack_batch(&lr_patches)?;
        let batch_hr = stack_batch(&hr_patches)?;

        let fwd = gpgmnet_forward(&batch_lr, &params, cfg, Mode::Train, &mut rng)?;
        apply_bn_updates(&mut params, &fwd.bn_updates)?;
        let (loss, dloss) = l2_loss(&fwd.output, &batch_hr)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                op: "l2_loss",
                context: format!("iteration {iter}"),
            });
        }
        let mut grads = gpgmnet_backward(&fwd.cache, &params, cfg, &dloss)?;
        if let Some(max_norm) = tcfg.grad_clip {
            clip_grad_norm(&mut grads, max_norm);
        }
        adam_step(&mut params, &grads, &mut state)?;

        writeln!(log, "{iter}\t{loss}")
            .map_err(|e| Error::io(log_path.display().to_string(), e))?;
        if report.losses.is_empty() {
            report.initial_loss = loss;
        }
        report.losses.push((iter, loss));
        report.final_loss = loss;

        let done = iter + 1 == tcfg.iterations as u64;
        if (tcfg.checkpoint_every > 0 && (iter + 1) % tcfg.checkpoint_every as u64 == 0) || done
        {
            let path = out.join(format!("ckpt_{:06}.gpgm", iter + 1));
            save_checkpoint(&path, &params, &state, tcfg.seed)?;
            report.checkpoints.push(path);
        }
        if tcfg.eval_every > 0 && ((iter + 1) % tcfg.eval_every as u64 == 0 || done) {
            let db = heldout_psnr(&params, cfg, heldout)?;
            if eval_log.is_none() {
                let f = fs::File::create(&eval_path)
                    .map_err(|e| Error::io(eval_path.display().to_string(), e))?;
                eval_log = Some(f);
            }
            let f = eval_log.as_mut().expect("just created");
            writeln!(f, "{}\t{db}", iter + 1)
                .map_err(|e| Error::io(eval_path.display().to_string(), e))?;
            report.evals.push((iter + 1, db));
        }
    }
    report.final_params = params;
    Ok(report)
}

/// PSNR of the model on one full held-out pair, in normalized YUV.
pub fn heldout_psnr(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    pair: &(Frame, Frame),
) -> Result<f64> {
    let pred = gpgmnet_infer(&pair.0.pixels()?, params, cfg)?;
    let target = pair.1.pixels()?;
    Ok(match psnr(&pred, &target, 1.0)? {
        PsnrResult::Db(v) => v,
        PsnrResult::Infinite => f64::INFINITY,
    })
}
