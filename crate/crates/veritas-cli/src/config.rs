//! Run configuration: a JSON config file provides defaults, command-line
//! flags override individual fields.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use veritas_core::core_model::{ladder_from_bitrates, QuantGrid, VideoModel};
use veritas_core::ehmm::EhmmModel;
use veritas_core::player_sim::{
    AbrPolicy, BbaParams, BolaParams, MpcParams, NetworkBackend, PlayerConfig,
};
use veritas_core::tcp_estimator::EstimatorConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EhmmConfig {
    pub sigma_mbps: f64,
    pub p_stay: f64,
    pub samples: usize,
    pub trim_rank: usize,
}

impl Default for EhmmConfig {
    fn default() -> Self {
        Self {
            sigma_mbps: 0.5,
            p_stay: 0.9,
            samples: 5,
            trim_rank: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub session: u64,
    pub sampler: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            session: 1,
            sampler: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub grid: QuantGrid,
    pub video: VideoModel,
    pub player: PlayerConfig,
    pub ehmm: EhmmConfig,
    pub seeds: Seeds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: QuantGrid {
                delta_s: 5.0,
                eps_mbps: 0.5,
                c_max_mbps: 10.0,
            },
            video: VideoModel::default_video(),
            player: PlayerConfig {
                buffer_cap_s: 5.0,
                delay_s: 0.08,
                abr: AbrPolicy::Mpc(MpcParams::default()),
                backend: NetworkBackend::ModelF,
                estimator: EstimatorConfig::default(),
                hold_trace_tail: true,
            },
            ehmm: EhmmConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl RunConfig {
    pub fn model(&self) -> Result<EhmmModel> {
        EhmmModel::uniform_tridiagonal(
            self.grid,
            self.ehmm.p_stay,
            self.ehmm.sigma_mbps,
            self.player.estimator,
        )
        .map_err(Into::into)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.video.validate()?;
        self.player.validate(&self.video)?;
        Ok(())
    }
}

pub fn parse_abr(s: &str) -> Result<AbrPolicy> {
    if let Some(level) = s.strip_prefix("fixed:") {
        let quality: usize = level
            .parse()
            .with_context(|| format!("bad fixed quality {level:?}"))?;
        return Ok(AbrPolicy::Fixed { quality });
    }
    match s {
        "mpc" => Ok(AbrPolicy::Mpc(MpcParams::default())),
        "bba" => Ok(AbrPolicy::Bba(BbaParams::default())),
        "bola" => Ok(AbrPolicy::BolaBasic(BolaParams::default())),
        other => bail!("unknown ABR {other:?} (expected mpc, bba, bola, or fixed:<level>)"),
    }
}

pub fn parse_backend(s: &str) -> Result<NetworkBackend> {
    match s {
        "model_f" | "model-f" => Ok(NetworkBackend::ModelF),
        "round_sim" | "round-sim" => Ok(NetworkBackend::RoundSim),
        other => bail!("unknown backend {other:?} (expected model_f or round_sim)"),
    }
}

pub fn parse_ladder(s: &str) -> Result<Vec<veritas_core::core_model::QualityLevel>> {
    let bitrates = parse_f64_list(s).context("bad ladder bitrate list")?;
    ladder_from_bitrates(&bitrates).map_err(Into::into)
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number {p:?}"))
        })
        .collect()
}

pub fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .with_context(|| format!("bad integer {p:?}"))
        })
        .collect()
}

/// Shared configuration flags; each one overrides the config file.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON config file with grid, video, player, model, and seed defaults
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Capacity window length in seconds
    #[arg(long)]
    pub delta: Option<f64>,
    /// Capacity quantum in Mbps
    #[arg(long)]
    pub eps: Option<f64>,
    /// Top of the capacity grid in Mbps
    #[arg(long = "c-max")]
    pub c_max: Option<f64>,
    /// Emission noise sigma in Mbps
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Tridiagonal stay probability
    #[arg(long = "p-stay")]
    pub p_stay: Option<f64>,
    /// ABR policy: mpc, bba, bola, or `fixed:<level>`
    #[arg(long)]
    pub abr: Option<String>,
    /// Player buffer capacity in seconds
    #[arg(long)]
    pub buffer: Option<f64>,
    /// End-to-end RTT in seconds
    #[arg(long)]
    pub delay: Option<f64>,
    /// Network backend: model_f or round_sim
    #[arg(long)]
    pub backend: Option<String>,
    /// Quality ladder as comma-separated bitrates in Mbps
    #[arg(long)]
    pub ladder: Option<String>,
    /// Number of chunks in the video
    #[arg(long)]
    pub chunks: Option<usize>,
    /// Chunk duration in seconds
    #[arg(long = "chunk-duration")]
    pub chunk_duration: Option<f64>,
    /// Lognormal sigma for chunk-size jitter
    #[arg(long = "vbr-sigma")]
    pub vbr_sigma: Option<f64>,
    /// Session seed (drives the VBR manifest)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Posterior sampling seed
    #[arg(long = "sample-seed")]
    pub sample_seed: Option<u64>,
    /// Number of posterior capacity samples
    #[arg(long)]
    pub samples: Option<usize>,
    /// Rank of the low/high trim across samples
    #[arg(long = "trim-rank")]
    pub trim_rank: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.delta {
            cfg.grid.delta_s = v;
        }
        if let Some(v) = self.eps {
            cfg.grid.eps_mbps = v;
        }
        if let Some(v) = self.c_max {
            cfg.grid.c_max_mbps = v;
        }
        if let Some(v) = self.sigma {
            cfg.ehmm.sigma_mbps = v;
        }
        if let Some(v) = self.p_stay {
            cfg.ehmm.p_stay = v;
        }
        if let Some(s) = &self.abr {
            cfg.player.abr = parse_abr(s)?;
        }
        if let Some(v) = self.buffer {
            cfg.player.buffer_cap_s = v;
        }
        if let Some(v) = self.delay {
            cfg.player.delay_s = v;
        }
        if let Some(s) = &self.backend {
            cfg.player.backend = parse_backend(s)?;
        }
        if let Some(s) = &self.ladder {
            cfg.video.ladder = parse_ladder(s)?;
        }
        if let Some(v) = self.chunks {
            cfg.video.total_chunks = v;
        }
        if let Some(v) = self.chunk_duration {
            cfg.video.chunk_duration_s = v;
        }
        if let Some(v) = self.vbr_sigma {
            cfg.video.vbr_sigma = v;
        }
        if let Some(v) = self.seed {
            cfg.seeds.session = v;
        }
        if let Some(v) = self.sample_seed {
            cfg.seeds.sampler = v;
        }
        if let Some(v) = self.samples {
            cfg.ehmm.samples = v;
        }
        if let Some(v) = self.trim_rank {
            cfg.ehmm.trim_rank = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("bad config {}", path.display()))
}
