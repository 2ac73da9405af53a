//! Experiment configuration: a single JSON document, every field of which
//! has a CLI-flag override. The fully resolved configuration is echoed into
//! the output directory for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// All tunables, fully resolved (defaults < config file < CLI flags).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub m: usize,
    /// Dimensions swept by memorize; single-element elsewhere.
    pub d: Vec<usize>,
    /// Explicit gate counts (linsep/parity widths).
    pub k: Vec<usize>,
    /// kd/m grid for underparam.
    pub ratios: Vec<f64>,
    pub seed: u64,
    /// Repetition count (seeds per parameter point).
    pub seeds: usize,
    /// Monte Carlo trials per parameter point.
    pub trials: usize,
    /// galu | relu | both
    pub activation: String,
    /// closed-form | iterative
    pub mode: String,
    pub success_mse: f64,
    pub k_max: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub margin: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// mse | hinge (iterative classification runs)
    pub loss: String,
    /// Cluster count for the clustered experiment.
    pub clusters: usize,
    pub delta: f64,
    pub negate_indicator: bool,
    pub memory_budget_mb: u64,
    pub out: PathBuf,
    pub save_model: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            m: 4096,
            d: vec![64],
            k: vec![32],
            ratios: vec![0.0625, 0.25, 0.5, 0.75, 1.0],
            seed: 7,
            seeds: 5,
            trials: 50,
            activation: "galu".into(),
            mode: "closed-form".into(),
            success_mse: 0.01,
            k_max: 0, // 0 = derive from m and d
            train_size: 50_000,
            test_size: 10_000,
            margin: 0.01,
            steps: 20_000,
            batch_size: 128,
            learning_rate: 0.001,
            loss: "mse".into(),
            clusters: 10,
            delta: 0.01,
            negate_indicator: false,
            memory_budget_mb: 4096,
            out: PathBuf::from("galu-out"),
            save_model: None,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), String> {
        if self.success_mse <= 0.0 {
            return Err("success-mse must be positive".into());
        }
        if self.d.is_empty() || self.k.is_empty() || self.ratios.is_empty() {
            return Err("sweep lists must be non-empty".into());
        }
        if !matches!(self.activation.as_str(), "galu" | "relu" | "both") {
            return Err(format!(
                "activation must be galu, relu or both (got {})",
                self.activation
            ));
        }
        if !matches!(self.mode.as_str(), "closed-form" | "iterative") {
            return Err(format!(
                "mode must be closed-form or iterative (got {})",
                self.mode
            ));
        }
        if !matches!(self.loss.as_str(), "mse" | "hinge") {
            return Err(format!("loss must be mse or hinge (got {})", self.loss));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err("delta must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn budget_bytes(&self) -> u64 {
        self.memory_budget_mb.saturating_mul(1 << 20)
    }

    pub fn load_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config JSON: {e}"))
    }

    /// Writes the fully resolved configuration next to the results.
    pub fn echo(&self, out_dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(out_dir.join("resolved_config.json"), text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn file_overrides_defaults_and_survives_roundtrip() {
        let cfg = Config {
            m: 128,
            activation: "both".into(),
            ..Config::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: Config = serde_json::from_str(&text).unwrap();
        assert_eq!(back.m, 128);
        assert_eq!(back.activation, "both");
        // partial documents fill from defaults
        let partial: Config = serde_json::from_str(r#"{"m": 9}"#).unwrap();
        assert_eq!(partial.m, 9);
        assert_eq!(partial.trials, Config::default().trials);
    }

    #[test]
    fn bad_values_are_rejected() {
        let bad_activation = Config {
            activation: "tanh".into(),
            ..Config::default()
        };
        assert!(bad_activation.validate().is_err());
        let bad_threshold = Config {
            success_mse: 0.0,
            ..Config::default()
        };
        assert!(bad_threshold.validate().is_err());
    }
}
