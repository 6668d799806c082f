use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{FormatKind, NumberFormat};

/// The four quantization points of one training step:
///
/// * `q0` forward GEMM inputs,
/// * `q1` activations stashed for the backward pass,
/// * `q2` the incoming gradient of the first backward GEMM,
/// * `q3` the activation gradient flushed to DRAM and fed to the weight-gradient GEMM.
///
/// All quantized slots share one family. The reference format may appear
/// next to either family since it stands for "not quantized".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct PrecisionConfig {
    formats: [NumberFormat; 4],
}

impl PrecisionConfig {
    pub fn new(
        q0: NumberFormat,
        q1: NumberFormat,
        q2: NumberFormat,
        q3: NumberFormat,
    ) -> Result<Self> {
        let formats = [q0, q1, q2, q3];
        let mut family = None;
        for f in formats.iter().filter(|f| !f.is_reference()) {
            match family {
                None => family = Some(f.kind()),
                Some(k) if k != f.kind() => {
                    return Err(Error::Config(format!(
                        "precision setup mixes {k} and {} formats",
                        f.kind()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(PrecisionConfig { formats })
    }

    pub fn uniform(fmt: NumberFormat) -> Self {
        PrecisionConfig { formats: [fmt; 4] }
    }

    pub fn reference() -> Self {
        Self::uniform(NumberFormat::reference())
    }

    /// Builds `[q0, q1, q2, q3]` of one family from element widths.
    pub fn from_bits(kind: FormatKind, bits: [u32; 4]) -> Result<Self> {
        let f = |b| NumberFormat::of_kind(kind, b);
        Self::new(f(bits[0])?, f(bits[1])?, f(bits[2])?, f(bits[3])?)
    }

    /// Parses a comma-separated width list such as `16,4,4,16` (brackets optional).
    pub fn parse_bits(kind: FormatKind, setup: &str) -> Result<Self> {
        let inner = setup.trim().trim_start_matches('[').trim_end_matches(']');
        let bits: Vec<u32> = inner
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Parse(format!("bad width `{s}` in setup `{setup}`")))
            })
            .collect::<Result<_>>()?;
        let bits: [u32; 4] = bits
            .try_into()
            .map_err(|_| Error::Parse(format!("setup `{setup}` needs exactly four widths")))?;
        Self::from_bits(kind, bits)
    }

    pub fn q0(&self) -> NumberFormat {
        self.formats[0]
    }

    pub fn q1(&self) -> NumberFormat {
        self.formats[1]
    }

    pub fn q2(&self) -> NumberFormat {
        self.formats[2]
    }

    pub fn q3(&self) -> NumberFormat {
        self.formats[3]
    }

    pub fn formats(&self) -> [NumberFormat; 4] {
        self.formats
    }

    /// Element widths; the reference format counts as 32 bits.
    pub fn bits(&self) -> [u32; 4] {
        self.formats.map(|f| f.element_bits())
    }

    /// The quantized family used, or `Reference` when nothing is quantized.
    pub fn family(&self) -> FormatKind {
        self.formats
            .iter()
            .find(|f| !f.is_reference())
            .map_or(FormatKind::Reference, |f| f.kind())
    }

    /// Width list in the `[16,4,4,16]` style.
    pub fn setup_label(&self) -> String {
        let b = self.bits();
        format!("[{},{},{},{}]", b[0], b[1], b[2], b[3])
    }
}

impl fmt::Display for PrecisionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.formats;
        write!(f, "[{a},{b},{c},{d}]")
    }
}

impl FromStr for PrecisionConfig {
    type Err = Error;

    /// Accepts `bfp:16,bfp:4,bfp:4,bfp:16`, optionally wrapped in brackets.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
        let parts: Vec<NumberFormat> = inner.split(',').map(str::parse).collect::<Result<_>>()?;
        match parts.as_slice() {
            [a, b, c, d] => Self::new(*a, *b, *c, *d),
            _ => Err(Error::Parse(format!(
                "precision config `{s}` needs four formats"
            ))),
        }
    }
}

impl From<PrecisionConfig> for String {
    fn from(c: PrecisionConfig) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for PrecisionConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}
