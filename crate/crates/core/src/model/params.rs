//! Named parameter storage. One spec list per config is the single source
//! of truth for initialization, counting, and weight-file validation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Modulation};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Conv or FC weight; He-initialized from its fan-in.
    Weight { fan_in: usize },
    /// Additive parameter, zero-initialized (biases, norm betas).
    Zero,
    /// Multiplicative norm parameter, one-initialized (norm gammas).
    One,
    /// Running mean buffer: not learnable, starts at zero.
    RunningMean,
    /// Running variance buffer: not learnable, starts at one.
    RunningVar,
}

impl ParamKind {
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
}

fn conv_spec(out: &mut Vec<ParamSpec>, prefix: &str, c_out: usize, c_in: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: [c_out, c_in, k, k],
        kind: ParamKind::Weight { fan_in: c_in * k * k },
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: [1, c_out, 1, 1],
        kind: ParamKind::Zero,
    });
}

fn norm_spec(out: &mut Vec<ParamSpec>, prefix: &str, c: usize, running: bool) {
    out.push(ParamSpec {
        name: format!("{prefix}.gamma"),
        shape: [1, c, 1, 1],
        kind: ParamKind::One,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.beta"),
        shape: [1, c, 1, 1],
        kind: ParamKind::Zero,
    });
    if running {
        out.push(ParamSpec {
            name: format!("{prefix}.running_mean"),
            shape: [1, c, 1, 1],
            kind: ParamKind::RunningMean,
        });
        out.push(ParamSpec {
            name: format!("{prefix}.running_var"),
            shape: [1, c, 1, 1],
            kind: ParamKind::RunningVar,
        });
    }
}

/// Every tensor the configured graph uses, in construction order. Disabled
/// branches and unused modulation paths contribute nothing, so variant
/// parameter counts differ exactly by what each variant trains.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let mut s = Vec::new();
    conv_spec(&mut s, "cf", c, 3, 3);

    let uses_priors = cfg.modulation != Modulation::Sft;
    if uses_priors {
        if cfg.branch_mask.ccp_active() {
            let w = cfg.cccb_width;
            for i in 0..cfg.n_cccb {
                let c_in = if i == 0 { 3 } else { w };
                conv_spec(&mut s, &format!("gpem.ccp.cccb{i}.conv"), w, c_in, 1);
                norm_spec(&mut s, &format!("gpem.ccp.cccb{i}.inorm"), w, false);
            }
            conv_spec(&mut s, "gpem.ccp.final", cfg.prior_dim_c, w, 1);
        }
        if cfg.branch_mask.ssp_active() {
            let w = cfg.sscb_width;
            for i in 0..cfg.n_sscb {
                let c_in = if i == 0 { 3 } else { w };
                conv_spec(&mut s, &format!("gpem.ssp.sscb{i}.conv"), w, c_in, 3);
                norm_spec(&mut s, &format!("gpem.ssp.sscb{i}.bn"), w, true);
            }
            conv_spec(&mut s, "gpem.ssp.final", cfg.prior_dim_s, w, 3);
        }
    } else {
        conv_spec(&mut s, "sft_head.conv1", cfg.sscb_width, 3, 3);
        conv_spec(&mut s, "sft_head.conv2", cfg.sscb_width, cfg.sscb_width, 3);
    }

    for j in 0..cfg.n_jmrm {
        conv_spec(&mut s, &format!("jmrm{j}.bb.conv1"), c, c, 3);
        conv_spec(&mut s, &format!("jmrm{j}.bb.conv2"), c, c, 3);
        match cfg.modulation {
            Modulation::Gsmb => {
                conv_spec(&mut s, &format!("jmrm{j}.spcb.reduce"), 8, c, 1);
                for k in [3, 5, 7, 9] {
                    conv_spec(&mut s, &format!("jmrm{j}.spcb.k{k}"), 8, 8, k);
                }
                conv_spec(&mut s, &format!("jmrm{j}.spcb.fuse"), 1, 32, 1);
                conv_spec(&mut s, &format!("jmrm{j}.gsmb.m1"), c, cfg.prior_dim(), 1);
                conv_spec(&mut s, &format!("jmrm{j}.gsmb.m2"), c, cfg.prior_dim(), 1);
            }
            Modulation::Gfm => {
                conv_spec(&mut s, &format!("jmrm{j}.gfm.m1"), c, cfg.prior_dim(), 1);
                conv_spec(&mut s, &format!("jmrm{j}.gfm.m2"), c, cfg.prior_dim(), 1);
            }
            Modulation::Sft => {
                conv_spec(&mut s, &format!("jmrm{j}.sft.gamma"), c, cfg.sscb_width, 3);
                conv_spec(&mut s, &format!("jmrm{j}.sft.beta"), c, cfg.sscb_width, 3);
            }
        }
    }

    conv_spec(&mut s, "cb", c, c, 3);
    let stages = if cfg.scale == 4 { 2 } else { 1 };
    for i in 0..stages {
        conv_spec(&mut s, &format!("up.stage{i}"), 4 * c, c, 3);
    }
    conv_spec(&mut s, "cl", 3, c, 3);
    s
}

/// Parameters and buffers keyed by path. Iteration order is the sorted
/// name order, which every consumer (saving, optimizer) relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::ParamMismatch {
            missing: vec![name.to_string()],
            unexpected: vec![],
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::ParamMismatch {
            missing: vec![name.to_string()],
            unexpected: vec![],
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<U>()))
                .collect(),
        }
    }

    /// Check that the stored names and shapes match `specs` exactly.
    pub fn validate_against(&self, specs: &[ParamSpec]) -> Result<()> {
        let mut missing = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for spec in specs {
            seen.insert(spec.name.as_str());
            match self.tensors.get(&spec.name) {
                None => missing.push(spec.name.clone()),
                Some(t) if t.shape() != spec.shape => {
                    return Err(Error::shape(
                        "ParamStore::validate_against",
                        format!(
                            "{}: stored {:?}, config wants {:?}",
                            spec.name,
                            t.shape(),
                            spec.shape
                        ),
                    ));
                }
                Some(_) => {}
            }
        }
        let unexpected: Vec<String> = self
            .tensors
            .keys()
            .filter(|k| !seen.contains(k.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            return Err(Error::ParamMismatch { missing, unexpected });
        }
        Ok(())
    }
}

pub fn is_buffer_name(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

/// Total learnable scalar count; running statistics are excluded.
pub fn param_count<T: Scalar>(params: &ParamStore<T>) -> usize {
    params
        .iter()
        .filter(|(name, _)| !is_buffer_name(name))
        .map(|(_, t)| t.len())
        .sum()
}

/// Learnable counts grouped by the path's first segment, sorted by name.
pub fn param_breakdown<T: Scalar>(params: &ParamStore<T>) -> Vec<(String, usize)> {
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    for (name, t) in params.iter() {
        if is_buffer_name(name) {
            continue;
        }
        let head = name.split('.').next().unwrap_or(name).to_string();
        *groups.entry(head).or_default() += t.len();
    }
    groups.into_iter().collect()
}

/// Fresh parameters: He fan-in normals for weights, zeros for biases and
/// betas, ones for gammas and running variances. Sampling follows spec
/// order, so a fixed seed gives bit-identical stores.
///
/// The final reconstruction conv starts at zero, so a fresh model outputs
/// exactly the bicubic baseline and training only ever moves away from it
/// on signal; its own gradient is nonzero, so it leaves zero on step one.
pub fn init_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParamStore<f32>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    for spec in param_specs(cfg) {
        let n = spec.shape.iter().product::<usize>();
        let t = match spec.kind {
            ParamKind::Weight { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                let data: Vec<f32> = (0..n)
                    .map(|_| (rng.sample::<f64, _>(rand_distr::StandardNormal) * std) as f32)
                    .collect();
                Tensor::from_vec(spec.shape, data)?
            }
            ParamKind::Zero | ParamKind::RunningMean => Tensor::zeros(spec.shape),
            ParamKind::One | ParamKind::RunningVar => Tensor::filled(spec.shape, 1.0),
        };
        store.insert(spec.name, t);
    }
    // draws above keep the stream layout stable; the overwrite comes after
    for v in store.get_mut("cl.weight")?.data_mut() {
        *v = 0.0;
    }
    Ok(store)
}

/// Same layout as [`init_params`] with every learnable value zero; running
/// variances stay one so eval-mode normalization remains defined.
pub fn zero_params(cfg: &ModelConfig) -> Result<ParamStore<f32>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    for spec in param_specs(cfg) {
        let t = match spec.kind {
            ParamKind::RunningVar => Tensor::filled(spec.shape, 1.0),
            _ => Tensor::zeros(spec.shape),
        };
        store.insert(spec.name, t);
    }
    Ok(store)
}

/// Gradient accumulator mirroring a [`ParamStore`]'s names.
#[derive(Debug, Clone)]
pub struct GradStore<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for GradStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradStore<T> {
    pub fn new() -> Self {
        GradStore {
            tensors: BTreeMap::new(),
        }
    }

    /// Add `grad` into the accumulator for `name`.
    pub fn accumulate(&mut self, name: impl Into<String>, grad: Tensor<T>) -> Result<()> {
        let name = name.into();
        match self.tensors.get_mut(&name) {
            None => {
                self.tensors.insert(name, grad);
            }
            Some(acc) => {
                if acc.shape() != grad.shape() {
                    return Err(Error::shape(
                        "GradStore::accumulate",
                        format!("{name}: {:?} vs {:?}", acc.shape(), grad.shape()),
                    ));
                }
                for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                    *a += *g;
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BranchMask;
    use rand::SeedableRng;

    #[test]
    fn default_x4_count_in_band() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params(&cfg, &mut rng).unwrap();
        let total = param_count(&p);
        assert_eq!(total, 795_068);
        assert!((740_000..=1_100_000).contains(&total));
    }

    #[test]
    fn x2_count_in_band() {
        let cfg = ModelConfig {
            scale: 2,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params(&cfg, &mut rng).unwrap();
        let total = param_count(&p);
        assert_eq!(total, 647_356);
        assert!((620_000..=920_000).contains(&total));
    }

    #[test]
    fn spcb_block_is_11081() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params(&cfg, &mut rng).unwrap();
        let spcb: usize = p
            .iter()
            .filter(|(n, _)| n.starts_with("jmrm0.spcb."))
            .map(|(_, t)| t.len())
            .sum();
        assert_eq!(spcb, 11_081);
    }

    #[test]
    fn init_deterministic_and_he_scaled() {
        let cfg = ModelConfig::default();
        let a = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        for (name, t) in a.iter() {
            if name.ends_with(".bias") || name.ends_with(".beta") || name.ends_with(".running_mean")
            {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name} not zero");
            }
            if name.ends_with(".weight") && t.len() >= 10_000 {
                let spec = param_specs(&cfg)
                    .into_iter()
                    .find(|s| &s.name == name)
                    .unwrap();
                let fan_in = match spec.kind {
                    ParamKind::Weight { fan_in } => fan_in,
                    _ => unreachable!(),
                };
                let target = (2.0 / fan_in as f64).sqrt();
                let mean = t.sum_f64() / t.len() as f64;
                let var = t
                    .data()
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>()
                    / t.len() as f64;
                let std = var.sqrt();
                assert!(
                    (std - target).abs() < 0.1 * target,
                    "{name}: std {std} vs target {target}"
                );
            }
        }
    }

    #[test]
    fn variant_param_sets_differ() {
        let base = ModelConfig::default();
        let gfm = ModelConfig {
            modulation: Modulation::Gfm,
            ..base.clone()
        };
        let sft = ModelConfig {
            modulation: Modulation::Sft,
            ..base.clone()
        };
        let ccp_only = ModelConfig {
            branch_mask: BranchMask::CcpOnly,
            ..base.clone()
        };
        let count = |c: &ModelConfig| {
            param_specs(c)
                .iter()
                .filter(|s| !s.kind.is_buffer())
                .map(|s| s.shape.iter().product::<usize>())
                .sum::<usize>()
        };
        assert!(count(&gfm) < count(&base), "gfm drops the spatial blocks");
        assert!(!param_specs(&sft).iter().any(|s| s.name.starts_with("gpem.")));
        assert!(!param_specs(&ccp_only)
            .iter()
            .any(|s| s.name.starts_with("gpem.ssp.")));
    }

    #[test]
    fn validate_against_catches_drift() {
        let cfg = ModelConfig::default();
        let specs = param_specs(&cfg);
        let mut p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p.validate_against(&specs).unwrap();
        p.insert("stray.weight", Tensor::zeros([1, 1, 1, 1]));
        match p.validate_against(&specs) {
            Err(Error::ParamMismatch { unexpected, .. }) => {
                assert_eq!(unexpected, vec!["stray.weight".to_string()])
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn breakdown_sums_to_total() {
        let cfg = ModelConfig::default();
        let p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let rows = param_breakdown(&p);
        let total: usize = rows.iter().map(|(_, n)| n).sum();
        assert_eq!(total, param_count(&p));
        assert!(rows.iter().any(|(name, _)| name == "jmrm0"));
    }
}
