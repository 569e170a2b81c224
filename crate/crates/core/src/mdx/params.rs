use mdx_autodiff::{RunningStats, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdxConfig {
    pub n_blocks: usize,
    pub filters: usize,
    pub kernel: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Divisors of the pilot-distance encoding channels.
    pub pe_freq_norm: f64,
    pub pe_time_norm: f64,
}

impl Default for MdxConfig {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            filters: 8,
            kernel: 3,
            bn_momentum: 0.1,
            bn_eps: 1e-3,
            pe_freq_norm: 12.0,
            pe_time_norm: 14.0,
        }
    }
}

impl MdxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.filters == 0 {
            return config_err("need at least one block and one filter");
        }
        if self.kernel % 2 == 0 {
            return config_err(format!("kernel size {} must be odd", self.kernel));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return config_err("batch-norm momentum must be in (0, 1] and eps positive");
        }
        Ok(())
    }
}

/// Channels entering each block: A and B (2 each).
pub const AB_CHANNELS: usize = 4;
/// Positional encoding channels.
pub const PE_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct SepConvIdx {
    pub dw: usize,
    pub dw_bias: usize,
    pub pw: usize,
    pub pw_bias: usize,
}

#[derive(Clone, Debug)]
pub struct BlockIdx {
    /// Per-PRB residual weight of the A output.
    pub gamma_res: usize,
    pub bn_gamma: usize,
    pub bn_beta: usize,
    pub trunk: SepConvIdx,
    pub a_head: SepConvIdx,
    pub b_head: Option<SepConvIdx>,
}

#[derive(Clone, Debug)]
pub struct ParamIdx {
    pub psi_dals: usize,
    pub psi_d: usize,
    pub phi: usize,
    pub gamma: usize,
    pub blocks: Vec<BlockIdx>,
}

/// All learnable tensors of the receiver, in a fixed order, plus the
/// batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct MdxParams {
    pub config: MdxConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub idx: ParamIdx,
    pub bn_stats: Vec<RunningStats>,
}

struct Builder<'a> {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.push(name, Tensor::new(shape, data).expect("shape"))
    }

    fn sep_conv(&mut self, prefix: &str, k: usize, c_in: usize, c_out: usize) -> SepConvIdx {
        SepConvIdx {
            dw: self.uniform(format!("{}.depthwise", prefix), &[k, k, c_in], k * k),
            dw_bias: self.push(format!("{}.depthwise_bias", prefix), Tensor::zeros(&[c_in])),
            pw: self.uniform(format!("{}.pointwise", prefix), &[c_in, c_out], c_in),
            pw_bias: self.push(format!("{}.pointwise_bias", prefix), Tensor::zeros(&[c_out])),
        }
    }
}

impl MdxParams {
    /// Noise scales, demapper scales and batch-norm affines start at one,
    /// residual weights at zero (so the block stack starts as the identity),
    /// convolution kernels fan-in uniform and biases at zero.
    pub fn init(config: &MdxConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: &mut rng,
        };
        let prb = [12, 14];
        let psi_dals = b.push("psi_dals".into(), Tensor::full(&prb, 1.0));
        let psi_d = b.push("psi_d".into(), Tensor::full(&prb, 1.0));
        let phi = b.push("phi".into(), Tensor::full(&prb, 1.0));
        let gamma = b.push("gamma".into(), Tensor::full(&[3], 1.0));
        let (k, nf) = (config.kernel, config.filters);
        let trunk_in = AB_CHANNELS + PE_CHANNELS;
        let mut blocks = Vec::new();
        for l in 0..config.n_blocks {
            let p = format!("block{}", l);
            let gamma_res = b.push(format!("{}.gamma_res", p), Tensor::zeros(&prb));
            let bn_gamma = b.push(format!("{}.bn.gamma", p), Tensor::full(&[AB_CHANNELS], 1.0));
            let bn_beta = b.push(format!("{}.bn.beta", p), Tensor::zeros(&[AB_CHANNELS]));
            let trunk = b.sep_conv(&format!("{}.trunk", p), k, trunk_in, nf);
            let a_head = b.sep_conv(&format!("{}.a_head", p), k, nf, 2);
            let b_head = (l + 1 < config.n_blocks).then(|| b.sep_conv(&format!("{}.b_head", p), k, nf, 2));
            blocks.push(BlockIdx {
                gamma_res,
                bn_gamma,
                bn_beta,
                trunk,
                a_head,
                b_head,
            });
        }
        let Builder { names, tensors, .. } = b;
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
            idx: ParamIdx {
                psi_dals,
                psi_d,
                phi,
                gamma,
                blocks,
            },
            bn_stats: (0..config.n_blocks).map(|_| RunningStats::new(AB_CHANNELS)).collect(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    /// Replaces the values of every tensor (shapes must match).
    pub fn set_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.tensors.len()
            || values.iter().zip(&self.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape("parameter set does not match the architecture".into()));
        }
        self.tensors = values;
        Ok(())
    }

    /// Parameter groups used for reporting: the noise/demapper scales, each
    /// residual weight, and each block's convolution and batch-norm tensors.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut g = vec![
            ("psi_dals".to_string(), vec![self.idx.psi_dals]),
            ("psi_d".to_string(), vec![self.idx.psi_d]),
            ("phi".to_string(), vec![self.idx.phi]),
            ("gamma".to_string(), vec![self.idx.gamma]),
        ];
        for (i, n) in self.names.iter().enumerate().skip(4) {
            g.push((n.clone(), vec![i]));
        }
        g
    }
}
