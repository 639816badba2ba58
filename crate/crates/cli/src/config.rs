//! Layered configuration: built-in defaults, then a TOML file, then flags.

use std::path::Path;

use serde::Deserialize;

use meltpinn_core::training::TrainConfig;

use crate::Failure;

/// Config file layout. Every key is optional.
///
/// ```toml
/// seed = 7
/// [train]
/// learning_rate = 1e-3
/// hidden_layers = 10
/// width = 50
/// [data]
/// points_per_time = 850
/// times = 7
/// ```
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub points_per_time: Option<usize>,
    pub times: Option<usize>,
}

/// Training values given on the command line.
#[derive(Debug, Default, Clone)]
pub struct TrainOverrides {
    pub max_iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub width: Option<usize>,
    pub eval_every: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure { code: 4, message: format!("{}: {e}", path.display()) })?;
        Self::parse(&text).map_err(|m| Failure { code: 2, message: format!("{}: {m}", path.display()) })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Resolved training config: flags win over the file, the file over
    /// defaults.
    pub fn train_config(&self, seed_flag: Option<u64>, o: &TrainOverrides) -> Result<TrainConfig, Failure> {
        let mut c = self.train.clone();
        if let Some(s) = seed_flag.or(self.seed) {
            c.seed = s;
        }
        if let Some(v) = o.max_iterations {
            c.max_iterations = v;
        }
        if let Some(v) = o.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = o.hidden_layers {
            c.hidden_layers = v;
        }
        if let Some(v) = o.width {
            c.width = v;
        }
        if let Some(v) = o.eval_every {
            c.eval_every = v;
        }
        c.validate().map_err(Failure::from)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_defaults() {
        let f = FileConfig::parse("seed = 3\n[train]\nwidth = 50\nlearning_rate = 0.01\n").unwrap();
        let c = f.train_config(None, &TrainOverrides::default()).unwrap();
        assert_eq!((c.seed, c.width, c.learning_rate, c.hidden_layers), (3, 50, 0.01, 6));
        let o = TrainOverrides { learning_rate: Some(0.002), ..Default::default() };
        let c = f.train_config(Some(9), &o).unwrap();
        assert_eq!((c.seed, c.width, c.learning_rate), (9, 50, 0.002));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(FileConfig::parse("[train]\nwidht = 5\n").is_err());
        let f = FileConfig::parse("[train]\nlearning_rate = -1.0\n").unwrap();
        assert_eq!(f.train_config(None, &TrainOverrides::default()).unwrap_err().code, 2);
    }
}
