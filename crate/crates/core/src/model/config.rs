use std::fmt;
use std::str::FromStr;

use crate::error::{CmfError, Result};

/// Architecture hyperparameters. Serializes to `key=value` lines, which is
/// also the header format of checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stage_dims: [usize; 4],
    pub stage_depths: [usize; 4],
    /// CBAM after stages 1, 2 and 3.
    pub use_cbam: [bool; 3],
    pub use_danet: bool,
    pub use_transformer: bool,
    pub use_grn: bool,
    pub num_classes: usize,
    pub input_size: usize,
    pub dropout: f64,
    pub heads: usize,
    pub cbam_reduction: usize,
    /// Learnable position embedding on the stage-5 tokens.
    pub pos_embed: bool,
}

/// The five ablation configurations, each a superset of the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    Baseline,
    Cbam,
    Danet,
    CbamDanet,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::Baseline, Ablation::Cbam, Ablation::Danet, Ablation::CbamDanet, Ablation::Full];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Cbam => "+cbam",
            Ablation::Danet => "+danet",
            Ablation::CbamDanet => "+cbam+danet",
            Ablation::Full => "full",
        }
    }

    /// `base` with its attention switches set for this row.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let (cbam, danet, transformer) = match self {
            Ablation::Baseline => (false, false, false),
            Ablation::Cbam => (true, false, false),
            Ablation::Danet => (false, true, false),
            Ablation::CbamDanet => (true, true, false),
            Ablation::Full => (true, true, true),
        };
        ModelConfig { use_cbam: [cbam; 3], use_danet: danet, use_transformer: transformer, ..base.clone() }
    }
}

impl FromStr for Ablation {
    type Err = CmfError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.label() == s || a.label().trim_start_matches('+') == s)
            .ok_or_else(|| CmfError::Config(format!("unknown ablation {s:?}")))
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-size network at 224 pixels.
    pub fn paper() -> Self {
        Self {
            stage_dims: [96, 192, 384, 768],
            stage_depths: [3, 3, 9, 3],
            use_cbam: [true; 3],
            use_danet: true,
            use_transformer: true,
            use_grn: false,
            num_classes: 4,
            input_size: 224,
            dropout: 0.1,
            heads: 8,
            cbam_reduction: 16,
            pos_embed: false,
        }
    }

    /// Same wiring at a scale that trains on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            stage_dims: [24, 48, 96, 192],
            stage_depths: [1, 1, 1, 1],
            input_size: 64,
            heads: 4,
            cbam_reduction: 8,
            ..Self::paper()
        }
    }

    /// Smallest configuration used for end-to-end gradient checks.
    pub fn tiny() -> Self {
        Self {
            stage_dims: [8, 16, 32, 64],
            stage_depths: [1, 1, 1, 1],
            input_size: 32,
            heads: 4,
            cbam_reduction: 4,
            dropout: 0.0,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" | "toy" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(CmfError::Config(format!("unknown preset {name:?}"))),
        }
    }

    /// Spatial side after the stem and after each downsample.
    pub fn stage_sizes(&self) -> [usize; 4] {
        let s = self.input_size / 4;
        [s, s / 2, s / 4, s / 8]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CmfError::Config(msg));
        if self.stage_dims[0] == 0 || self.stage_dims.windows(2).any(|w| w[1] != 2 * w[0]) {
            return bad(format!("stage_dims must double at each stage, got {:?}", self.stage_dims));
        }
        if self.stage_depths.contains(&0) {
            return bad(format!("every stage needs at least one block, got {:?}", self.stage_depths));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return bad(format!("input_size must be a positive multiple of 32, got {}", self.input_size));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.use_transformer && (self.heads == 0 || self.stage_dims[3] % self.heads != 0) {
            return bad(format!("width {} not divisible by {} heads", self.stage_dims[3], self.heads));
        }
        for (i, _) in self.use_cbam.iter().enumerate().filter(|(_, &on)| on) {
            let c = self.stage_dims[i];
            if self.cbam_reduction == 0 || c % self.cbam_reduction != 0 {
                return bad(format!(
                    "stage {} width {c} not divisible by cbam_reduction {}",
                    i + 1,
                    self.cbam_reduction
                ));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let flags = |v: &[bool]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        [
            format!("stage_dims={}", list(&self.stage_dims)),
            format!("stage_depths={}", list(&self.stage_depths)),
            format!("use_cbam={}", flags(&self.use_cbam)),
            format!("use_danet={}", self.use_danet),
            format!("use_transformer={}", self.use_transformer),
            format!("use_grn={}", self.use_grn),
            format!("num_classes={}", self.num_classes),
            format!("input_size={}", self.input_size),
            format!("dropout={}", self.dropout),
            format!("heads={}", self.heads),
            format!("cbam_reduction={}", self.cbam_reduction),
            format!("pos_embed={}", self.pos_embed),
        ]
        .join("\n")
            + "\n"
    }

    pub const KEYS: [&'static str; 12] = [
        "stage_dims",
        "stage_depths",
        "use_cbam",
        "use_danet",
        "use_transformer",
        "use_grn",
        "num_classes",
        "input_size",
        "dropout",
        "heads",
        "cbam_reduction",
        "pos_embed",
    ];

    /// Sets one field from its textual form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "stage_dims" => self.stage_dims = parse_array(key, v)?,
            "stage_depths" => self.stage_depths = parse_array(key, v)?,
            "use_cbam" => {
                // A single flag applies to all three stages.
                self.use_cbam = match parse_array::<bool, 3>(key, v) {
                    Ok(a) => a,
                    Err(_) => [parse(key, v)?; 3],
                }
            }
            "use_danet" => self.use_danet = parse(key, v)?,
            "use_transformer" => self.use_transformer = parse(key, v)?,
            "use_grn" => self.use_grn = parse(key, v)?,
            "num_classes" => self.num_classes = parse(key, v)?,
            "input_size" => self.input_size = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "cbam_reduction" => self.cbam_reduction = parse(key, v)?,
            "pos_embed" => self.pos_embed = parse(key, v)?,
            _ => return Err(CmfError::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over `base`. Blank lines and `#` comments are
    /// ignored.
    pub fn from_kv(text: &str, base: &ModelConfig) -> Result<Self> {
        let mut cfg = base.clone();
        for (key, value) in kv_lines(text)? {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

/// Splits `key=value` text into pairs, skipping blanks and `#` comments.
pub fn kv_lines(text: &str) -> Result<Vec<(&str, &str)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CmfError::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim(), v.trim()));
    }
    Ok(out)
}

pub(crate) fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse().map_err(|_| CmfError::Config(format!("cannot parse {key}={v:?}")))
}

fn parse_array<V: FromStr + Copy, const N: usize>(key: &str, v: &str) -> Result<[V; N]> {
    let items: Vec<V> = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?;
    items.try_into().map_err(|_| CmfError::Config(format!("{key} needs {N} comma-separated values, got {v:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [ModelConfig::paper(), ModelConfig::desk(), ModelConfig::tiny()] {
            c.validate().unwrap();
        }
        assert_eq!(ModelConfig::paper().stage_sizes(), [56, 28, 14, 7]);
    }

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::desk();
        c.use_cbam = [true, false, true];
        c.dropout = 0.25;
        c.num_classes = 2;
        let back = ModelConfig::from_kv(&c.to_kv(), &ModelConfig::paper()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn kv_rejects_unknown_and_malformed() {
        let base = ModelConfig::desk();
        assert!(ModelConfig::from_kv("colour=red", &base).is_err());
        assert!(ModelConfig::from_kv("heads", &base).is_err());
        assert!(ModelConfig::from_kv("stage_dims=1,2", &base).is_err());
        let c = ModelConfig::from_kv("# comment\n\nuse_cbam = false  # off\n", &base).unwrap();
        assert_eq!(c.use_cbam, [false; 3]);
    }

    #[test]
    fn validation_errors() {
        let mut c = ModelConfig::desk();
        c.stage_dims = [24, 48, 100, 192];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.input_size = 48;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.cbam_reduction = 16;
        assert!(c.validate().is_err());
        c.use_cbam = [false; 3];
        c.validate().unwrap();
        let mut c = ModelConfig::desk();
        c.heads = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_rows() {
        let base = ModelConfig::desk();
        let full = Ablation::Full.apply(&base);
        assert_eq!(full, base);
        let b = Ablation::Baseline.apply(&base);
        assert!(!b.use_danet && !b.use_transformer && b.use_cbam == [false; 3]);
        assert_eq!("cbam+danet".parse::<Ablation>().unwrap(), Ablation::CbamDanet);
    }
}
