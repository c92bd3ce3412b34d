//! Run configuration: JSON file values overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Gaussian,
    Disks,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Gaussian => "gaussian",
            Profile::Disks => "disks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProlongationKind {
    Lsp,
    Nn,
}

impl ProlongationKind {
    pub fn name(self) -> &'static str {
        match self {
            ProlongationKind::Lsp => "lsp",
            ProlongationKind::Nn => "nn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Augment {
    None,
    Symmetry,
    Kl,
}

/// Every knob a command may read. Missing entries fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    /// JSON file with any of these options; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Coefficient model.
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Variance of log κ for the Gaussian profile.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Correlation length along x.
    #[arg(long)]
    pub eta1: Option<f64>,
    /// Correlation length along y.
    #[arg(long)]
    pub eta2: Option<f64>,
    /// Number of KL modes kept for the Gaussian profile.
    #[arg(long)]
    pub modes: Option<usize>,
    /// Permeability inside the disks.
    #[arg(long = "kappa-b")]
    pub kappa_b: Option<f64>,
    #[arg(long = "n-disks")]
    pub n_disks: Option<usize>,
    /// Base seed; field i of a batch uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fine cells per side.
    #[arg(long)]
    pub nx: Option<usize>,
    /// Coarse elements per side.
    #[arg(long)]
    pub cx: Option<usize>,
    /// Basis functions per coarse element.
    #[arg(long = "n-c")]
    pub n_c: Option<usize>,
    /// Relative residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub maxit: Option<usize>,
    #[arg(long, value_enum)]
    pub prolongation: Option<ProlongationKind>,
    /// Network weights (MSUW) for the nn prolongation.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub augment: Option<Augment>,
    /// KL modes kept when fitting the tile model.
    #[arg(long = "kl-l")]
    pub kl_l: Option<usize>,
    /// KL tiles drawn per original record.
    #[arg(long = "kl-m")]
    pub kl_m: Option<usize>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of fields to generate, with consecutive seeds.
    #[arg(long = "n-fields")]
    pub n_fields: Option<usize>,
    /// Field file (MSDS with no label columns) to solve on instead of sampling.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Encoder depth for init-weights.
    #[arg(long)]
    pub levels: Option<usize>,
    /// First-level channel count for init-weights.
    #[arg(long)]
    pub base: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    /// File values first, then every flag that was given.
    pub fn resolve(flags: &RunConfig) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &flags.config {
            Some(path) => Self::from_file(path)?,
            None => RunConfig::default(),
        };
        overlay!(cfg, flags; profile, sigma2, eta1, eta2, modes, kappa_b, n_disks, seed, nx, cx, n_c, tol, maxit,
            prolongation, weights, augment, kl_l, kl_m, threads, out, n_fields, field, levels, base);
        cfg.config = flags.config.clone();
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn profile(&self) -> Profile {
        self.profile.unwrap_or(Profile::Gaussian)
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2.unwrap_or(2.0)
    }
    pub fn eta1(&self) -> f64 {
        self.eta1.unwrap_or(0.1)
    }
    pub fn eta2(&self) -> f64 {
        self.eta2.unwrap_or(0.1)
    }
    pub fn modes(&self) -> usize {
        self.modes.unwrap_or(256)
    }
    pub fn kappa_b(&self) -> f64 {
        self.kappa_b.unwrap_or(1e4)
    }
    pub fn n_disks(&self) -> usize {
        self.n_disks.unwrap_or(15)
    }
    pub fn nx(&self) -> usize {
        self.nx.unwrap_or(128)
    }
    pub fn cx(&self) -> usize {
        self.cx.unwrap_or(8)
    }
    pub fn n_c(&self) -> usize {
        self.n_c.unwrap_or(5)
    }
    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(1e-6)
    }
    pub fn maxit(&self) -> usize {
        self.maxit.unwrap_or(500)
    }
    pub fn prolongation(&self) -> ProlongationKind {
        self.prolongation.unwrap_or(ProlongationKind::Lsp)
    }
    pub fn augment(&self) -> Augment {
        self.augment.unwrap_or(Augment::None)
    }
    pub fn n_fields(&self) -> usize {
        self.n_fields.unwrap_or(1)
    }
    pub fn levels(&self) -> usize {
        self.levels.unwrap_or(4)
    }
    pub fn base(&self) -> usize {
        self.base.unwrap_or(16)
    }

    pub fn require_seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or_else(|| ConfigError::Invalid("--seed is required for this command".into()))
    }

    pub fn require_out(&self) -> Result<&Path, ConfigError> {
        self.out.as_deref().ok_or_else(|| ConfigError::Invalid("--out is required for this command".into()))
    }

    /// Checks the options shared by all commands before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.tol() > 0.0 && self.tol() < 1.0) {
            return bad(format!("--tol must lie in (0, 1), got {}", self.tol()));
        }
        if self.maxit() == 0 {
            return bad("--maxit must be positive".into());
        }
        if self.n_c() == 0 {
            return bad("--n-c must be positive".into());
        }
        if self.n_fields() == 0 {
            return bad("--n-fields must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("--threads must be positive".into());
        }
        if self.nx() == 0 || self.cx() == 0 || !self.nx().is_multiple_of(self.cx()) {
            return bad(format!("--cx {} must be positive and divide --nx {}", self.cx(), self.nx()));
        }
        if self.prolongation() == ProlongationKind::Nn && self.weights.is_none() {
            return bad("--prolongation nn needs --weights".into());
        }
        Ok(())
    }
}
