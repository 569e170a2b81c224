//! Experiment configuration files and the runs behind the command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{model_complexity, report_csv, ComplexityReport};
use crate::checkpoint::Checkpoint;
use crate::constellation::Modulation;
use crate::error::{config_err, Error, Result};
use crate::eval::{evaluate, EvalConfig, ReceiverKind};
use crate::fec::coded::{coded_bler, CodedConfig};
use crate::gradcheck_suite::{full_suite, CheckResult};
use crate::mdx::{MdxConfig, MdxParams};
use crate::trainer::{IterationRecord, TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlopsConfig {
    pub prbs: usize,
    /// `[n_rx, n_tx]` pairs.
    pub antennas: Vec<[usize; 2]>,
    pub modulation: Modulation,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        Self {
            prbs: 273,
            antennas: vec![[4, 2], [16, 4]],
            modulation: Modulation::Qpsk,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub instances: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { instances: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: MdxConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// LDPC-coded sweep run by `eval` when present.
    pub coded: Option<CodedConfig>,
    pub flops: FlopsConfig,
    pub gradcheck: GradcheckConfig,
    /// Checkpoint evaluated by `eval`; defaults to `<out>/checkpoint.mdxc`.
    pub checkpoint: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.eval.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form (defaults filled in).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{:02x}", b)).collect()
    }
}

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

/// Record of one command invocation, written next to its outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub build: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
}

fn write_manifest(out: &Path, m: &RunManifest) -> Result<()> {
    let path = out.join(format!("{}_manifest.json", m.command));
    std::fs::write(path, serde_json::to_string_pretty(m)?)?;
    Ok(())
}

fn header(seed: u64, hash: &str) -> String {
    format!("# seed={} config_sha256={}\n", seed, hash)
}

pub struct TrainOutcome {
    pub records: Vec<IterationRecord>,
    pub params: MdxParams,
    pub loss_csv: PathBuf,
    pub checkpoint: PathBuf,
}

pub fn run_train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let params = MdxParams::init(&cfg.model, seed)?;
    let mut trainer = Trainer::new(cfg.train.clone(), params, seed)?;
    let loss_csv = out.join("loss.csv");
    let mut w = BufWriter::new(File::create(&loss_csv)?);
    w.write_all(header(seed, &hash).as_bytes())?;
    let records = trainer.run(Some(&mut w))?;
    w.flush()?;
    let checkpoint = out.join("checkpoint.mdxc");
    Checkpoint {
        params: trainer.params.clone(),
        iteration: trainer.iteration,
        seed,
        config_hash: hash.clone(),
    }
    .save(&checkpoint)?;
    write_manifest(
        out,
        &RunManifest {
            command: "train".into(),
            build: BUILD_ID.into(),
            seed,
            config_hash: hash,
            config: cfg.clone(),
            outputs: vec!["loss.csv".into(), "checkpoint.mdxc".into()],
        },
    )?;
    Ok(TrainOutcome {
        records,
        params: trainer.params,
        loss_csv,
        checkpoint,
    })
}

/// Evaluates the configured receivers and writes `eval_<receiver>.csv`, plus
/// `eval_coded.csv` when a coded sweep is configured.
pub fn run_eval(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let params = if cfg.eval.receivers.contains(&ReceiverKind::Mdx) {
        let path = cfg
            .checkpoint
            .as_ref()
            .map(PathBuf::from)
            .unwrap_or_else(|| out.join("checkpoint.mdxc"));
        let ck = Checkpoint::load(&path)?;
        if ck.params.config != cfg.model {
            return Err(Error::Format("checkpoint architecture differs from the configured model".into()));
        }
        Some(ck.params)
    } else {
        None
    };
    let curves = evaluate(&cfg.eval, params.as_ref(), seed)?;
    let mut files = Vec::new();
    for c in &curves {
        let name = format!("eval_{}.csv", c.receiver.name());
        let path = out.join(&name);
        std::fs::write(&path, header(seed, &hash) + &c.csv())?;
        files.push(path);
    }
    if let Some(coded) = &cfg.coded {
        let path = out.join("eval_coded.csv");
        std::fs::write(&path, header(seed, &hash) + &report_csv(&coded_bler(coded, seed)?))?;
        files.push(path);
    }
    write_manifest(
        out,
        &RunManifest {
            command: "eval".into(),
            build: BUILD_ID.into(),
            seed,
            config_hash: hash,
            config: cfg.clone(),
            outputs: files
                .iter()
                .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
                .collect(),
        },
    )?;
    Ok(files)
}

#[derive(Clone, Debug, Serialize)]
pub struct FlopsReport {
    pub param_count: usize,
    pub param_groups: Vec<(String, usize)>,
    pub configurations: Vec<ComplexityReport>,
}

pub const FLOPS_CSV_HEADER: &str = "prbs,n_rx,n_tx,modulation,param_count,pa_ls,interpolation,lmmse_dals,da_ls,res_blocks,lmmse_final,demap,total_mults,total_mul_add,gflops";

impl FlopsReport {
    pub fn csv(&self) -> String {
        let mut s = String::from(FLOPS_CSV_HEADER);
        s.push('\n');
        for c in &self.configurations {
            s += &format!(
                "{},{},{},{:?},{},{},{},{},{},{},{},{},{},{},{:.6}\n",
                c.prbs,
                c.n_rx,
                c.n_tx,
                c.modulation,
                self.param_count,
                c.pa_ls,
                c.interpolation,
                c.lmmse_dals,
                c.da_ls,
                c.res_blocks,
                c.lmmse_final,
                c.demap,
                c.total_mults,
                c.total_mul_add,
                c.total_mults as f64 * 1e-9
            );
        }
        s
    }
}

pub fn run_flops(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<FlopsReport> {
    if cfg.flops.antennas.is_empty() {
        return config_err("no antenna configuration to count");
    }
    let params = MdxParams::init(&cfg.model, seed)?;
    let report = FlopsReport {
        param_count: params.param_count(),
        param_groups: params
            .groups()
            .into_iter()
            .map(|(n, idx)| (n, idx.iter().map(|&i| params.tensors[i].len()).sum()))
            .collect(),
        configurations: cfg
            .flops
            .antennas
            .iter()
            .map(|&[r, t]| model_complexity(&cfg.model, cfg.flops.prbs, r, t, cfg.flops.modulation))
            .collect::<Result<_>>()?,
    };
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    std::fs::write(out.join("flops.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(out.join("flops.csv"), header(seed, &hash) + &report.csv())?;
    write_manifest(
        out,
        &RunManifest {
            command: "flops".into(),
            build: BUILD_ID.into(),
            seed,
            config_hash: hash,
            config: cfg.clone(),
            outputs: vec!["flops.json".into(), "flops.csv".into()],
        },
    )?;
    Ok(report)
}

pub fn run_gradcheck(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<CheckResult>> {
    full_suite(cfg.gradcheck.instances, seed)
}
