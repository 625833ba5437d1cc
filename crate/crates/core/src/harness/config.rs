//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MetricSpec;
use crate::network::{HeadSpec, DEFAULT_REEIG_EPS};
use crate::optim::{AmsGradConfig, OptimizerConfig, SpdRule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub widths: Vec<usize>,
    pub reeig_eps: f64,
    pub head: HeadSpec,
    pub optimizer: OptimizerConfig,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            widths: vec![20, 16, 8],
            reeig_eps: DEFAULT_REEIG_EPS,
            head: HeadSpec::Mlr {
                metric: MetricSpec::STANDARD_LEM,
            },
            optimizer: OptimizerConfig::default(),
            batch: 30,
            epochs: 200,
            seed: 0,
            train_fraction: 0.7,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!("train_fraction must lie in [0, 1], got {}", self.train_fraction)));
        }
        self.optimizer.validate()
    }

    /// Parses `key=value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut kind: Option<String> = None;
        let (mut alpha, mut beta, mut theta) = (1.0, 0.0, 1.0);
        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: line_no, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("{key}: {v:?} is not a number")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| err(format!("{key}: {v:?} is not an integer")));
            match key {
                "metric.kind" => kind = Some(value.to_ascii_lowercase()),
                "metric.alpha" => alpha = num(value)?,
                "metric.beta" => beta = num(value)?,
                "metric.theta" => theta = num(value)?,
                "widths" => {
                    cfg.widths = value
                        .split(',')
                        .map(|w| int(w.trim()).map(|x| x as usize))
                        .collect::<Result<_>>()?;
                }
                "reeig_eps" => cfg.reeig_eps = num(value)?,
                "optimizer.rule" => {
                    cfg.optimizer.spd_rule = match value.to_ascii_lowercase().as_str() {
                        "aim" | "rsgd-aim" => SpdRule::Aim,
                        "pem" | "rsgd-pem" => SpdRule::Pem,
                        other => return Err(err(format!("unknown optimizer.rule {other:?} (aim|pem)"))),
                    }
                }
                "optimizer.amsgrad" | "amsgrad" => {
                    cfg.optimizer.amsgrad = match value {
                        "true" | "1" | "on" => Some(AmsGradConfig::default()),
                        "false" | "0" | "off" => None,
                        other => return Err(err(format!("amsgrad: {other:?} is not a boolean"))),
                    }
                }
                "weight_decay" | "optimizer.weight_decay" => cfg.optimizer.weight_decay = num(value)?,
                "lr" | "optimizer.lr" => cfg.optimizer.learning_rate = num(value)?,
                "batch" => cfg.batch = int(value)? as usize,
                "epochs" => cfg.epochs = int(value)? as usize,
                "seed" => cfg.seed = int(value)?,
                "train_fraction" => cfg.train_fraction = num(value)?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.head = match kind.as_deref() {
            None | Some("lem") => HeadSpec::Mlr {
                metric: MetricSpec::lem(alpha, beta),
            },
            Some("lcm") => HeadSpec::Mlr {
                metric: MetricSpec::lcm(theta),
            },
            Some("logeig") => HeadSpec::LogEig,
            Some(other) => {
                return Err(Error::Config(format!("unknown metric.kind {other:?} (lem|lcm|logeig)")));
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Inverse of [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k}={v}").expect("writing to a String");
        match self.head {
            HeadSpec::Mlr {
                metric: MetricSpec::Lem { alpha, beta },
            } => {
                put("metric.kind", "lem".into());
                put("metric.alpha", alpha.to_string());
                put("metric.beta", beta.to_string());
            }
            HeadSpec::Mlr {
                metric: MetricSpec::Lcm { theta },
            } => {
                put("metric.kind", "lcm".into());
                put("metric.theta", theta.to_string());
            }
            HeadSpec::LogEig => put("metric.kind", "logeig".into()),
        }
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        put("widths", widths.join(","));
        put("reeig_eps", self.reeig_eps.to_string());
        let rule = match self.optimizer.spd_rule {
            SpdRule::Aim => "aim",
            SpdRule::Pem => "pem",
        };
        put("optimizer.rule", rule.into());
        put("optimizer.amsgrad", self.optimizer.amsgrad.is_some().to_string());
        put("weight_decay", self.optimizer.weight_decay.to_string());
        put("lr", self.optimizer.learning_rate.to_string());
        put("batch", self.batch.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("train_fraction", self.train_fraction.to_string());
        out
    }
}
