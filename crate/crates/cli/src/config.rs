//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use paanet::model::ModelConfig;
use paanet::training::TrainConfig;

/// Everything a training run depends on besides its output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), train: TrainConfig::default(), data: None }
    }
}

pub const KEYS: [&str; 14] = [
    "in_channels",
    "encoder_channels",
    "dense_layers",
    "growth",
    "num_blocks",
    "input_size",
    "learning_rate",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "batch_size",
    "seed",
    "data",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("`{key}`: cannot parse `{value}`"))
}

/// `64` or `64x48` (height x width).
pub fn parse_size(value: &str) -> Result<(usize, usize), String> {
    let bad = || format!("size `{value}` is not N or HxW");
    match value.split_once(['x', 'X']) {
        Some((h, w)) => Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = value.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

impl RunConfig {
    /// Applies one setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key {
            "in_channels" => self.model.in_channels = parse_num(key, value)?,
            "encoder_channels" => {
                let parts: Vec<usize> =
                    value.split(',').map(|p| parse_num(key, p.trim())).collect::<Result<_, _>>()?;
                self.model.encoder_channels =
                    parts.try_into().map_err(|_| format!("`{key}` needs 4 comma-separated values"))?;
            }
            "dense_layers" => self.model.dense_layers = parse_num(key, value)?,
            "growth" => self.model.growth = parse_num(key, value)?,
            "num_blocks" => self.model.num_blocks = parse_num(key, value)?,
            "input_size" => self.model.input_size = parse_size(value)?,
            "learning_rate" => self.train.adam.learning_rate = parse_num(key, value)?,
            "beta1" => self.train.adam.beta1 = parse_num(key, value)?,
            "beta2" => self.train.adam.beta2 = parse_num(key, value)?,
            "eps" => self.train.adam.eps = parse_num(key, value)?,
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "seed" => self.train.seed = parse_num(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown configuration key `{key}` (known: {})", KEYS.join(", "))),
        }
        Ok(())
    }

    /// Applies a config file on top of `self`. Blank lines and `#` comments
    /// are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            self.set(k.trim(), v).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())
    }

    /// Every key, in a form [`RunConfig::parse`] reads back exactly.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let ch = m.encoder_channels.map(|c| c.to_string()).join(",");
        let mut s = String::new();
        let _ = writeln!(s, "in_channels = {}", m.in_channels);
        let _ = writeln!(s, "encoder_channels = {ch}");
        let _ = writeln!(s, "dense_layers = {}", m.dense_layers);
        let _ = writeln!(s, "growth = {}", m.growth);
        let _ = writeln!(s, "num_blocks = {}", m.num_blocks);
        let _ = writeln!(s, "input_size = {}x{}", m.input_size.0, m.input_size.1);
        let _ = writeln!(s, "learning_rate = {}", t.adam.learning_rate);
        let _ = writeln!(s, "beta1 = {}", t.adam.beta1);
        let _ = writeln!(s, "beta2 = {}", t.adam.beta2);
        let _ = writeln!(s, "eps = {}", t.adam.eps);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "seed = {}", t.seed);
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data = {}", d.display());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.set("learning_rate", "3e-4").unwrap();
        c.set("encoder_channels", "8, 8,16,16").unwrap();
        c.set("input_size", "32x48").unwrap();
        c.set("data", "some/dir").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn every_key_is_written() {
        let mut c = RunConfig::default();
        c.data = Some("d".into());
        let text = c.to_text();
        for k in KEYS {
            assert!(text.lines().any(|l| l.starts_with(&format!("{k} = "))), "{k}");
        }
    }

    #[test]
    fn comments_and_blanks() {
        let c = RunConfig::parse("# header\n\nepochs = 3   # short run\n").unwrap();
        assert_eq!(c.train.epochs, 3);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(RunConfig::parse("epoch = 3").unwrap_err().contains("unknown"));
        assert!(RunConfig::parse("epochs 3").is_err());
        assert!(RunConfig::parse("epochs = three").is_err());
        assert!(RunConfig::parse("encoder_channels = 1,2,3").is_err());
    }
}
