use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use optinsight_core::exec::{RunnerConfig, Tolerance};
use optinsight_core::llm::{open_cassette, HttpProvider, LiveConfig, LlmGateway, Provider};
use optinsight_core::sim::{SimOptions, SimProvider};
use optinsight_core::solve::{SolveConfig, SolveContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Runner {
    /// Programs are POSIX shell scripts.
    Sh,
    /// Programs are Python scripts run with python3.
    Python,
}

/// Options shared by every command that solves tasks.
#[derive(Debug, Clone, Args)]
pub struct SolveOpts {
    /// Answer completions from the built-in simulator.
    #[arg(long, global = true, conflicts_with_all = ["live", "cassette"])]
    pub simulate: bool,
    /// Call an OpenAI-compatible endpoint.
    #[arg(long, global = true, conflicts_with = "cassette")]
    pub live: bool,
    /// Replay completions from a recorded cassette; misses abort.
    #[arg(long, global = true, value_name = "FILE")]
    pub cassette: Option<PathBuf>,
    #[arg(
        long,
        global = true,
        env = "OPTINSIGHT_ENDPOINT",
        default_value = "http://localhost:8000/v1/chat/completions"
    )]
    pub endpoint: String,
    #[arg(
        long,
        global = true,
        env = "OPTINSIGHT_MODEL",
        default_value = "gpt-4o"
    )]
    pub model: String,
    /// Environment variable holding the API key.
    #[arg(long, global = true, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    #[arg(long, global = true, value_enum, default_value = "python")]
    pub runner: Runner,
    /// Wall-clock limit per program run, in milliseconds.
    #[arg(long, global = true, default_value_t = 60_000)]
    pub timeout_ms: u64,
    #[arg(long, global = true, default_value_t = 1e-4)]
    pub tol_rel: f64,
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub tol_abs: f64,
    /// Solve without retrieving library insights.
    #[arg(long, global = true)]
    pub no_retrieval: bool,
    /// Skip repair rounds after execution failures.
    #[arg(long, global = true)]
    pub no_self_debug: bool,
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ProviderMode {
    Simulate,
    Live(LiveConfig),
    Cassette(PathBuf),
}

impl SolveOpts {
    pub fn provider_mode(&self) -> Result<ProviderMode> {
        Ok(if self.simulate {
            ProviderMode::Simulate
        } else if self.live {
            ProviderMode::Live(LiveConfig {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                api_key_env: self.api_key_env.clone(),
                timeout_secs: 120,
            })
        } else if let Some(path) = &self.cassette {
            ProviderMode::Cassette(path.clone())
        } else {
            bail!("choose a completion source: --simulate, --live or --cassette FILE")
        })
    }

    pub fn solve_config(&self) -> Result<SolveConfig> {
        if !(self.tol_rel >= 0.0 && self.tol_abs >= 0.0) {
            bail!("tolerances must be non-negative");
        }
        let mut runner = match self.runner {
            Runner::Sh => RunnerConfig::shell(),
            Runner::Python => RunnerConfig::default(),
        };
        runner.timeout_ms = self.timeout_ms;
        let mut cfg = SolveConfig {
            runner,
            tolerance: Tolerance {
                rel: self.tol_rel,
                abs: self.tol_abs,
            },
            self_debug: !self.no_self_debug,
            ..SolveConfig::default()
        };
        cfg.retrieval.enabled = !self.no_retrieval;
        Ok(cfg)
    }

    pub fn context(&self) -> Result<(SolveContext, ProviderMode)> {
        let mode = self.provider_mode()?;
        Ok((build_context(&mode, self.solve_config()?)?, mode))
    }
}

pub fn build_context(mode: &ProviderMode, config: SolveConfig) -> Result<SolveContext> {
    let provider: Arc<dyn Provider> = match mode {
        ProviderMode::Simulate => Arc::new(SimProvider::with_options(SimOptions::default())),
        ProviderMode::Live(live) => Arc::new(HttpProvider::new(live.clone())),
        ProviderMode::Cassette(path) => Arc::new(
            open_cassette(path).with_context(|| format!("opening cassette {}", path.display()))?,
        ),
    };
    Ok(SolveContext::new(
        LlmGateway::with_provider(provider),
        config,
    ))
}

pub fn is_cassette(mode: &ProviderMode) -> bool {
    matches!(mode, ProviderMode::Cassette(_))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
