//! Hyperparameters and flat `key=value` configuration files.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// Reads `key=value` lines. `#` starts a comment; blank lines are ignored;
/// a repeated key is an error.
pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text, path)
}

pub fn parse_kv(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, n + 1, "expected key=value"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::parse(path, n + 1, "empty key"));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::parse(path, n + 1, format!("duplicate key {k:?}")));
        }
    }
    Ok(out)
}

/// How each encoder block wires its residual connections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    /// Pre-norm block: `E' = E + Drop(MRSA(LN₁ E))`, `out = E' + Drop(FFN(LN₂ E'))`.
    Standard,
    /// `F = FFN(LN(MRSA(E)))`, `out = F + Drop(F)`.
    Doubled,
}

/// Form of the negative-label log-likelihood term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BceForm {
    /// Each loss exactly as printed: `log(1 − σ(r))` for next-item
    /// negatives, `log σ(1 − f)` for relation negatives.
    Literal,
    /// `log(1 − σ(·))` for every negative.
    Standard,
}

macro_rules! text_enum {
    ($ty:ident { $($name:literal => $variant:ident),* $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)*
                    _ => Err(Error::Config(format!(
                        "{}: unknown value {:?}", stringify!($ty), s
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $($ty::$variant => $name,)* };
                f.write_str(s)
            }
        }
    };
}

text_enum!(ResidualMode { "standard" => Standard, "doubled" => Doubled });
text_enum!(BceForm { "literal" => Literal, "standard" => Standard });

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HyperParams {
    pub max_len: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub residual_mode: ResidualMode,
    pub bce_form: BceForm,
    /// Inter-sequence samples per batch; `None` uses `batch_size`.
    pub inter_budget: Option<usize>,
    /// Cap on negative intra-sequence pairs per sequence; `None` keeps all.
    pub intra_neg_cap: Option<usize>,
    /// Standard deviation of the normal initialiser.
    pub init_std: f64,
    pub threads: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            max_len: 50,
            dim: 64,
            ffn_dim: 64,
            layers: 2,
            heads: 1,
            dropout: 0.3,
            alpha: 0.1,
            beta: 0.1,
            lambda: 1e-3,
            lr: 1e-3,
            batch_size: 128,
            patience: 50,
            max_epochs: 500,
            seed: 42,
            residual_mode: ResidualMode::Standard,
            bce_form: BceForm::Literal,
            inter_budget: None,
            intra_neg_cap: None,
            init_std: 0.02,
            threads: 1,
        }
    }
}

pub const HYPER_KEYS: &[&str] = &[
    "max_len",
    "dim",
    "ffn_dim",
    "layers",
    "heads",
    "dropout",
    "alpha",
    "beta",
    "lambda",
    "lr",
    "batch_size",
    "patience",
    "max_epochs",
    "seed",
    "residual_mode",
    "bce_form",
    "inter_budget",
    "intra_neg_cap",
    "init_std",
    "threads",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_opt(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "none" | "" => Ok(None),
        v => parse_value(key, v).map(Some),
    }
}

impl HyperParams {
    pub fn inter_budget(&self) -> usize {
        self.inter_budget.unwrap_or(self.batch_size)
    }

    /// Applies one `key=value` setting. Returns `false` for keys that are
    /// not hyperparameters.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "max_len" => self.max_len = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "ffn_dim" => self.ffn_dim = parse_value(key, value)?,
            "layers" => self.layers = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "residual_mode" => self.residual_mode = value.parse()?,
            "bce_form" => self.bce_form = value.parse()?,
            "inter_budget" => self.inter_budget = parse_opt(key, value)?,
            "intra_neg_cap" => self.intra_neg_cap = parse_opt(key, value)?,
            "init_std" => self.init_std = parse_value(key, value)?,
            "threads" => self.threads = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Builds hyperparameters from a map, rejecting unknown keys.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<HyperParams> {
        let mut h = HyperParams::default();
        for (k, v) in kv {
            if !h.set(k, v)? {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        h.validate()?;
        Ok(h)
    }

    /// Every violated constraint, so a CLI can list them together.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.max_len == 0 {
            p.push("max_len must be positive".to_string());
        }
        if self.dim == 0 || self.ffn_dim == 0 {
            p.push("dim and ffn_dim must be positive".to_string());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            p.push(format!(
                "dim {} must be divisible by heads {}",
                self.dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            p.push(format!("dropout {} not in [0, 1)", self.dropout));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ] {
            if !v.is_finite() || v < 0.0 {
                p.push(format!("{name} must be finite and non-negative"));
            }
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            p.push("lr must be finite and non-negative".to_string());
        }
        if self.batch_size == 0 {
            p.push("batch_size must be positive".to_string());
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            p.push("init_std must be positive".to_string());
        }
        if self.threads == 0 {
            p.push("threads must be positive".to_string());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    /// `key=value` lines in [`HYPER_KEYS`] order; parses back with
    /// [`HyperParams::from_kv`].
    pub fn to_kv(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |x| x.to_string());
        let values = [
            self.max_len.to_string(),
            self.dim.to_string(),
            self.ffn_dim.to_string(),
            self.layers.to_string(),
            self.heads.to_string(),
            fmt_f64(self.dropout),
            fmt_f64(self.alpha),
            fmt_f64(self.beta),
            fmt_f64(self.lambda),
            fmt_f64(self.lr),
            self.batch_size.to_string(),
            self.patience.to_string(),
            self.max_epochs.to_string(),
            self.seed.to_string(),
            self.residual_mode.to_string(),
            self.bce_form.to_string(),
            opt(self.inter_budget),
            opt(self.intra_neg_cap),
            fmt_f64(self.init_std),
            self.threads.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in HYPER_KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// Shortest representation that parses back to the same double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;

    #[test]
    fn kv_roundtrip() {
        let mut h = HyperParams::default();
        h.alpha = 0.2;
        h.residual_mode = ResidualMode::Doubled;
        h.inter_budget = Some(7);
        let kv = parse_kv(&h.to_kv(), &PathBuf::from("mem")).unwrap();
        assert_eq!(HyperParams::from_kv(&kv).unwrap(), h);
    }

    #[test]
    fn unknown_and_invalid_rejected() {
        let p = PathBuf::from("mem");
        let kv = parse_kv("dim=8\nbogus=1\n", &p).unwrap();
        assert!(HyperParams::from_kv(&kv).is_err());
        let kv = parse_kv("dim=6\nheads=4\n", &p).unwrap();
        assert!(HyperParams::from_kv(&kv).is_err());
        assert!(parse_kv("a=1\na=2\n", &p).is_err());
        assert!(parse_kv("novalue\n", &p).is_err());
    }

    #[test]
    fn comments_and_blanks() {
        let kv = parse_kv("# header\n\nlr = 0.01 # inline\n", &PathBuf::from("mem")).unwrap();
        assert_eq!(kv["lr"], "0.01");
    }
}
