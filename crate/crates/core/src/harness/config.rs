use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::InputDropout;
use crate::recurrent::CellKind;
use crate::scorer::Classifier;
use crate::tensor::Precision;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Which input streams are dropped during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputDropoutMode {
    Default,
    NoWordDropout,
    NoTagDropout,
    NoTags,
}

impl FromStr for InputDropoutMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Self::Default),
            "no-word-dropout" => Ok(Self::NoWordDropout),
            "no-tag-dropout" => Ok(Self::NoTagDropout),
            "no-tags" => Ok(Self::NoTags),
            other => Err(format!(
                "unknown input dropout `{other}` (expected default, no-word-dropout, no-tag-dropout or no-tags)"
            )),
        }
    }
}

impl InputDropoutMode {
    fn name(self) -> &'static str {
        match self {
            Self::Default => "default",
            Self::NoWordDropout => "no-word-dropout",
            Self::NoTagDropout => "no-tag-dropout",
            Self::NoTags => "no-tags",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PunctPolicy {
    Exclude,
    Include,
}

/// Every model, training and evaluation setting. `Default` is the
/// reference configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub embedding_size: usize,
    pub lstm_size: usize,
    pub lstm_depth: usize,
    pub arc_mlp_size: usize,
    pub label_mlp_size: usize,
    pub mlp_depth: usize,
    pub word_dropout: f64,
    pub tag_dropout: f64,
    pub lstm_dropout: f64,
    pub arc_mlp_dropout: f64,
    pub label_mlp_dropout: f64,
    pub input_dropout: InputDropoutMode,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub anneal_base: f64,
    pub anneal_steps: f64,
    pub max_steps: u64,
    pub classifier: Classifier,
    pub mlp_attention_size: usize,
    pub cell: CellKind,
    pub batch_tokens: usize,
    pub min_count: usize,
    pub seed: u64,
    pub punct: PunctPolicy,
    pub single_root: bool,
    pub precision: Precision,
    pub pretrained_embeddings: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            embedding_size: 100,
            lstm_size: 400,
            lstm_depth: 3,
            arc_mlp_size: 500,
            label_mlp_size: 100,
            mlp_depth: 1,
            word_dropout: 0.33,
            tag_dropout: 0.33,
            lstm_dropout: 0.33,
            arc_mlp_dropout: 0.33,
            label_mlp_dropout: 0.33,
            input_dropout: InputDropoutMode::Default,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.9,
            epsilon: 1e-12,
            anneal_base: 0.75,
            anneal_steps: 5000.0,
            max_steps: 50_000,
            classifier: Classifier::DeepBiaffine,
            mlp_attention_size: 200,
            cell: CellKind::Lstm,
            batch_tokens: 2000,
            min_count: 2,
            seed: 1,
            punct: PunctPolicy::Exclude,
            single_root: true,
            precision: Precision::F32,
            pretrained_embeddings: None,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: V::Err| ConfigError::Invalid { key: key.to_string(), message: e.to_string() })
}

impl Config {
    /// Hidden size per direction; the `shallow-300` classifier fixes it at 300.
    pub fn effective_lstm_size(&self) -> usize {
        match self.classifier {
            Classifier::Shallow300 => 300,
            _ => self.lstm_size,
        }
    }

    pub fn input_dropout_spec(&self) -> InputDropout {
        let (w, t) = (self.word_dropout, self.tag_dropout);
        match self.input_dropout {
            InputDropoutMode::Default => InputDropout { word_rate: w, tag_rate: t, use_tags: true },
            InputDropoutMode::NoWordDropout => InputDropout { word_rate: 0.0, tag_rate: t, use_tags: true },
            InputDropoutMode::NoTagDropout => InputDropout { word_rate: w, tag_rate: 0.0, use_tags: true },
            InputDropoutMode::NoTags => InputDropout { word_rate: w, tag_rate: 0.0, use_tags: false },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("embedding_size", self.embedding_size),
            ("lstm_size", self.lstm_size),
            ("lstm_depth", self.lstm_depth),
            ("arc_mlp_size", self.arc_mlp_size),
            ("label_mlp_size", self.label_mlp_size),
            ("mlp_attention_size", self.mlp_attention_size),
            ("batch_tokens", self.batch_tokens),
            ("min_count", self.min_count),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid { key: key.into(), message: "must be positive".into() });
            }
        }
        if self.mlp_depth != 1 {
            return Err(ConfigError::Invalid {
                key: "mlp_depth".into(),
                message: "only single-layer MLPs are supported".into(),
            });
        }
        for (key, rate) in [
            ("word_dropout", self.word_dropout),
            ("tag_dropout", self.tag_dropout),
            ("lstm_dropout", self.lstm_dropout),
            ("arc_mlp_dropout", self.arc_mlp_dropout),
            ("label_mlp_dropout", self.label_mlp_dropout),
        ] {
            crate::recurrent::check_rate(key, rate)?;
        }
        let unit = |key: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key: key.into(), message: format!("{v} outside [0, 1)") })
            }
        };
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) || !(self.anneal_steps > 0.0) {
            return Err(ConfigError::Invalid {
                key: "learning_rate/epsilon/anneal_steps".into(),
                message: "must be positive".into(),
            });
        }
        if !(self.anneal_base > 0.0 && self.anneal_base <= 1.0) {
            return Err(ConfigError::Invalid {
                key: "anneal_base".into(),
                message: "must lie in (0, 1]".into(),
            });
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Config::parse(&text)
    }

    /// Parses flat `key = value` text over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut c = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                message: format!("expected key = value, found `{line}`"),
            })?;
            c.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: line_no, key },
                other => other,
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "embedding_size" => self.embedding_size = parse_value(key, value)?,
            "lstm_size" => self.lstm_size = parse_value(key, value)?,
            "lstm_depth" => self.lstm_depth = parse_value(key, value)?,
            "arc_mlp_size" => self.arc_mlp_size = parse_value(key, value)?,
            "label_mlp_size" => self.label_mlp_size = parse_value(key, value)?,
            "mlp_depth" => self.mlp_depth = parse_value(key, value)?,
            "embedding_dropout" => {
                self.word_dropout = parse_value(key, value)?;
                self.tag_dropout = self.word_dropout;
            }
            "word_dropout" => self.word_dropout = parse_value(key, value)?,
            "tag_dropout" => self.tag_dropout = parse_value(key, value)?,
            "lstm_dropout" => self.lstm_dropout = parse_value(key, value)?,
            "arc_mlp_dropout" => self.arc_mlp_dropout = parse_value(key, value)?,
            "label_mlp_dropout" => self.label_mlp_dropout = parse_value(key, value)?,
            "input_dropout" => self.input_dropout = parse_value(key, value)?,
            "learning_rate" | "alpha" => self.learning_rate = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "anneal_base" => self.anneal_base = parse_value(key, value)?,
            "anneal_steps" => self.anneal_steps = parse_value(key, value)?,
            "max_steps" | "t_max" => self.max_steps = parse_value(key, value)?,
            "classifier" => self.classifier = parse_value(key, value)?,
            "mlp_attention_size" => self.mlp_attention_size = parse_value(key, value)?,
            "cell" => self.cell = parse_value(key, value)?,
            "batch_tokens" => self.batch_tokens = parse_value(key, value)?,
            "min_count" => self.min_count = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "punct" => {
                self.punct = match value {
                    "exclude" => PunctPolicy::Exclude,
                    "include" => PunctPolicy::Include,
                    other => {
                        return Err(ConfigError::Invalid {
                            key: key.into(),
                            message: format!("`{other}` is not exclude/include"),
                        })
                    }
                }
            }
            "single_root" => self.single_root = parse_value(key, value)?,
            "precision" => self.precision = parse_value(key, value)?,
            "pretrained_embeddings" => {
                self.pretrained_embeddings = (!value.is_empty()).then(|| value.to_string())
            }
            other => return Err(ConfigError::UnknownKey { line: 0, key: other.to_string() }),
        }
        Ok(())
    }

    /// Renders the configuration in the same `key = value` format `parse` reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("embedding_size", self.embedding_size.to_string());
        kv("lstm_size", self.lstm_size.to_string());
        kv("lstm_depth", self.lstm_depth.to_string());
        kv("arc_mlp_size", self.arc_mlp_size.to_string());
        kv("label_mlp_size", self.label_mlp_size.to_string());
        kv("mlp_depth", self.mlp_depth.to_string());
        kv("word_dropout", self.word_dropout.to_string());
        kv("tag_dropout", self.tag_dropout.to_string());
        kv("lstm_dropout", self.lstm_dropout.to_string());
        kv("arc_mlp_dropout", self.arc_mlp_dropout.to_string());
        kv("label_mlp_dropout", self.label_mlp_dropout.to_string());
        kv("input_dropout", self.input_dropout.name().to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("anneal_base", self.anneal_base.to_string());
        kv("anneal_steps", self.anneal_steps.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("classifier", self.classifier.name().to_string());
        kv("mlp_attention_size", self.mlp_attention_size.to_string());
        kv("cell", self.cell.name().to_string());
        kv("batch_tokens", self.batch_tokens.to_string());
        kv("min_count", self.min_count.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "punct",
            match self.punct {
                PunctPolicy::Exclude => "exclude",
                PunctPolicy::Include => "include",
            }
            .to_string(),
        );
        kv("single_root", self.single_root.to_string());
        kv("precision", self.precision.to_string());
        if let Some(p) = &self.pretrained_embeddings {
            kv("pretrained_embeddings", p.clone());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_table() {
        let c = Config::default();
        assert_eq!(c.embedding_size, 100);
        assert_eq!((c.lstm_size, c.lstm_depth), (400, 3));
        assert_eq!((c.arc_mlp_size, c.label_mlp_size, c.mlp_depth), (500, 100, 1));
        for rate in [c.word_dropout, c.tag_dropout, c.lstm_dropout, c.arc_mlp_dropout, c.label_mlp_dropout] {
            assert_eq!(rate, 0.33);
        }
        assert_eq!(c.learning_rate, 2e-3);
        assert_eq!((c.beta1, c.beta2), (0.9, 0.9));
        assert_eq!((c.anneal_base, c.anneal_steps, c.max_steps), (0.75, 5000.0, 50_000));
        assert_eq!(c.classifier, Classifier::DeepBiaffine);
        assert_eq!(c.cell, CellKind::Lstm);
    }

    #[test]
    fn text_roundtrip() {
        let mut c = Config::default();
        c.classifier = Classifier::Mlp;
        c.cell = CellKind::CifLstm;
        c.input_dropout = InputDropoutMode::NoTags;
        c.pretrained_embeddings = Some("glove.txt".into());
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(Config::parse("lstm_size 3"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(
            Config::parse("# x\nbogus = 1"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(Config::parse("lstm_dropout = 1.0"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(Config::parse("cell = rnn"), Err(ConfigError::Invalid { .. })));
        let c = Config::parse("classifier = shallow-300\nt_max = 10 # short").unwrap();
        assert_eq!(c.effective_lstm_size(), 300);
        assert_eq!(c.max_steps, 10);
    }

    #[test]
    fn input_dropout_modes() {
        let mut c = Config::default();
        c.input_dropout = InputDropoutMode::NoTagDropout;
        assert_eq!(c.input_dropout_spec().tag_rate, 0.0);
        assert_eq!(c.input_dropout_spec().word_rate, 0.33);
        c.input_dropout = InputDropoutMode::NoTags;
        assert!(!c.input_dropout_spec().use_tags);
    }
}
