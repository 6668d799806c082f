//! Simulated number formats and value snapping.
//!
//! Quantization is simulated: values are snapped onto the representable grid
//! of a narrow format while staying in `f64`. Nothing is bit-packed.
//!
//! Grid conventions:
//!
//! * `Fixed(b)` uses one power-of-two scale per tensor, `s = 2^(floor(log2 max|x|) + 1)`,
//!   and codes `k` in `[-(2^(b-1) - 1), 2^(b-1) - 1]`; the value of code `k` is
//!   `k * s / 2^(b-1)`. The most negative code is unused so the grid is symmetric.
//! * `Bfp(b, E, box)` shares one exponent `e = floor(log2 max|x|)` per box of
//!   `box` elements (saturated to the biased range of an `E`-bit exponent). Each
//!   element is a sign plus `b - 1` magnitude bits with step `2^(e - (b - 2))`,
//!   so magnitudes cover `[0, 2)` relative to `2^e`.
//!
//! Rounding is round-half-to-even everywhere and overflow saturates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{check_finite, Error, Result};

pub const DEFAULT_EXPONENT_BITS: u32 = 8;
pub const DEFAULT_BOX_SIZE: usize = 16;

/// Bits charged per element for values held in the reference format.
pub const REFERENCE_STORAGE_BITS: u32 = 32;

const MAX_ELEMENT_BITS: u32 = 53;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatKind {
    Reference,
    Fixed,
    Bfp,
}

impl fmt::Display for FormatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormatKind::Reference => "ref",
            FormatKind::Fixed => "fixed",
            FormatKind::Bfp => "bfp",
        })
    }
}

impl FromStr for FormatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ref" | "reference" => Ok(FormatKind::Reference),
            "fixed" => Ok(FormatKind::Fixed),
            "bfp" => Ok(FormatKind::Bfp),
            other => Err(Error::Parse(format!("unknown format family `{other}`"))),
        }
    }
}

/// A simulated numeric format.
///
/// Serialized as a compact token: `ref`, `fixed:16`, `bfp:4`. A BFP format with
/// non-default exponent width or box size spells them out: `bfp:4:6:32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct NumberFormat {
    kind: FormatKind,
    element_bits: u32,
    exponent_bits: u32,
    box_size: usize,
}

impl NumberFormat {
    pub const REFERENCE: NumberFormat = NumberFormat {
        kind: FormatKind::Reference,
        element_bits: REFERENCE_STORAGE_BITS,
        exponent_bits: 0,
        box_size: 0,
    };

    pub fn reference() -> Self {
        Self::REFERENCE
    }

    pub fn fixed(element_bits: u32) -> Result<Self> {
        check_element_bits(element_bits)?;
        Ok(NumberFormat {
            kind: FormatKind::Fixed,
            element_bits,
            exponent_bits: 0,
            box_size: 0,
        })
    }

    /// Block floating point with an 8-bit shared exponent and 16-element boxes.
    pub fn bfp(element_bits: u32) -> Result<Self> {
        Self::bfp_with(element_bits, DEFAULT_EXPONENT_BITS, DEFAULT_BOX_SIZE)
    }

    pub fn bfp_with(element_bits: u32, exponent_bits: u32, box_size: usize) -> Result<Self> {
        check_element_bits(element_bits)?;
        if !(2..=11).contains(&exponent_bits) {
            return Err(Error::Config(format!(
                "bfp exponent width must be in 2..=11 bits, got {exponent_bits}"
            )));
        }
        if box_size == 0 {
            return Err(Error::Config("bfp box size must be positive".into()));
        }
        Ok(NumberFormat {
            kind: FormatKind::Bfp,
            element_bits,
            exponent_bits,
            box_size,
        })
    }

    /// Builds a format of `kind` with `bits` per element. `bits` is ignored for
    /// the reference format.
    pub fn of_kind(kind: FormatKind, bits: u32) -> Result<Self> {
        match kind {
            FormatKind::Reference => Ok(Self::REFERENCE),
            FormatKind::Fixed => Self::fixed(bits),
            FormatKind::Bfp => Self::bfp(bits),
        }
    }

    pub fn kind(&self) -> FormatKind {
        self.kind
    }

    /// Total bits per element including the sign. The reference format reports 32.
    pub fn element_bits(&self) -> u32 {
        self.element_bits
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits
    }

    pub fn box_size(&self) -> usize {
        self.box_size
    }

    pub fn is_reference(&self) -> bool {
        self.kind == FormatKind::Reference
    }

    /// Inclusive range of the shared exponent (BFP only).
    pub fn exponent_range(&self) -> (i32, i32) {
        let half = 1i32 << (self.exponent_bits.max(1) - 1);
        (-(half - 1), half)
    }

    fn max_code(&self) -> f64 {
        ((1u64 << (self.element_bits - 1)) - 1) as f64
    }
}

fn check_element_bits(bits: u32) -> Result<()> {
    if bits < 2 {
        return Err(Error::Config(format!(
            "element width must be at least 2 bits (sign + magnitude), got {bits}"
        )));
    }
    if bits > MAX_ELEMENT_BITS {
        return Err(Error::Config(format!(
            "element width above {MAX_ELEMENT_BITS} bits cannot be simulated in f64, got {bits}"
        )));
    }
    Ok(())
}

impl fmt::Display for NumberFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FormatKind::Reference => f.write_str("ref"),
            FormatKind::Fixed => write!(f, "fixed:{}", self.element_bits),
            FormatKind::Bfp
                if self.exponent_bits == DEFAULT_EXPONENT_BITS
                    && self.box_size == DEFAULT_BOX_SIZE =>
            {
                write!(f, "bfp:{}", self.element_bits)
            }
            FormatKind::Bfp => write!(
                f,
                "bfp:{}:{}:{}",
                self.element_bits, self.exponent_bits, self.box_size
            ),
        }
    }
}

impl FromStr for NumberFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let token = s.trim();
        let mut parts = token.split(':');
        let kind: FormatKind = parts.next().unwrap_or_default().parse()?;
        let fields: Vec<&str> = parts.collect();
        let number = |field: &str| -> Result<u32> {
            field
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::Parse(format!("bad number `{field}` in format `{token}`")))
        };
        match (kind, fields.as_slice()) {
            (FormatKind::Reference, []) => Ok(Self::REFERENCE),
            (FormatKind::Fixed, [bits]) => Self::fixed(number(bits)?),
            (FormatKind::Bfp, [bits]) => Self::bfp(number(bits)?),
            (FormatKind::Bfp, [bits, exp, boxed]) => {
                Self::bfp_with(number(bits)?, number(exp)?, number(boxed)? as usize)
            }
            _ => Err(Error::Parse(format!(
                "format `{token}` does not match `ref`, `fixed:<bits>` or `bfp:<bits>`"
            ))),
        }
    }
}

impl From<NumberFormat> for String {
    fn from(f: NumberFormat) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for NumberFormat {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Values snapped onto a format's grid together with the scale that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub values: Vec<f64>,
    pub format: NumberFormat,
    /// Shared exponent `e` for BFP, per-tensor scale exponent `log2 s` for fixed
    /// point, zero for the reference format and for all-zero fixed-point input.
    pub exponent: i32,
}

/// `floor(log2 |x|)` for finite non-zero `x`, computed exactly.
pub(crate) fn floor_log2(x: f64) -> i32 {
    let biased = ((x.to_bits() >> 52) & 0x7ff) as i32;
    if biased == 0 {
        let (_, exp) = libm::frexp(x.abs());
        exp - 1
    } else {
        biased - 1023
    }
}

pub(crate) fn pow2(k: i32) -> f64 {
    if (-1022..=1023).contains(&k) {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        libm::ldexp(1.0, k)
    }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Snaps `x` to a `bits`-wide fixed-point grid with one dynamic power-of-two
/// scale for the whole slice.
pub fn snap_fixed(x: &[f64], bits: u32) -> Result<QuantizedBlock> {
    let format = NumberFormat::fixed(bits)?;
    check_finite(x, "snap_fixed input")?;
    let max = max_abs(x);
    if max == 0.0 {
        return Ok(QuantizedBlock {
            values: vec![0.0; x.len()],
            format,
            exponent: 0,
        });
    }
    let scale_exp = floor_log2(max) + 1;
    // Code k represents k * 2^(scale_exp - (bits - 1)).
    let step = pow2(scale_exp - (bits as i32 - 1));
    let values = snap_on_grid(x, step, format.max_code());
    Ok(QuantizedBlock {
        values,
        format,
        exponent: scale_exp,
    })
}

/// Snaps one BFP box. `x` must hold exactly `fmt.box_size()` elements.
pub fn snap_bfp(x: &[f64], fmt: NumberFormat) -> Result<QuantizedBlock> {
    if fmt.kind() != FormatKind::Bfp {
        return Err(Error::Config(format!(
            "snap_bfp needs a bfp format, got {fmt}"
        )));
    }
    if x.len() != fmt.box_size() {
        return Err(Error::Contract(format!(
            "bfp box must hold {} elements, got {}",
            fmt.box_size(),
            x.len()
        )));
    }
    check_finite(x, "snap_bfp input")?;
    Ok(snap_box(x, fmt))
}

/// Snaps a BFP box with the shared exponent pinned to `exponent` (saturated to
/// the format's range) instead of derived from the data.
pub fn snap_bfp_with_exponent(
    x: &[f64],
    fmt: NumberFormat,
    exponent: i32,
) -> Result<QuantizedBlock> {
    if fmt.kind() != FormatKind::Bfp {
        return Err(Error::Config(format!(
            "snap_bfp needs a bfp format, got {fmt}"
        )));
    }
    check_finite(x, "snap_bfp input")?;
    let (lo, hi) = fmt.exponent_range();
    let e = exponent.clamp(lo, hi);
    let step = pow2(e - (fmt.element_bits() as i32 - 2));
    Ok(QuantizedBlock {
        values: snap_on_grid(x, step, fmt.max_code()),
        format: fmt,
        exponent: e,
    })
}

/// Shared exponent a box of values would receive.
pub fn bfp_shared_exponent(x: &[f64], fmt: NumberFormat) -> i32 {
    shared_exponent_of_max(max_abs(x), fmt)
}

fn shared_exponent_of_max(max: f64, fmt: NumberFormat) -> i32 {
    let (lo, hi) = fmt.exponent_range();
    if max == 0.0 {
        lo
    } else {
        floor_log2(max).clamp(lo, hi)
    }
}

// Partial boxes behave as if zero-padded: padding never raises the maximum.
fn snap_box(x: &[f64], fmt: NumberFormat) -> QuantizedBlock {
    let e = bfp_shared_exponent(x, fmt);
    let step = pow2(e - (fmt.element_bits() as i32 - 2));
    QuantizedBlock {
        values: snap_on_grid(x, step, fmt.max_code()),
        format: fmt,
        exponent: e,
    }
}

/// Adding and subtracting 1.5·2^52 rounds to an integer, ties to even, for
/// any magnitude below 2^51.
const ROUNDING_MAGIC: f64 = 6755399441055744.0;

/// `v` snapped to the nearest saturated grid point. `step` is a power of two,
/// so scaling by its reciprocal is exact. Clamping before rounding is equivalent to the
/// reverse order because `max_code` is an integer.
#[inline]
fn snap_value(v: f64, inv_step: f64, step: f64, max_code: f64) -> f64 {
    // The reciprocal overflows only for subnormal steps; divide there instead.
    let scaled = if inv_step.is_finite() {
        v * inv_step
    } else {
        v / step
    };
    let y = scaled.clamp(-max_code, max_code);
    let code = if max_code < 2251799813685248.0 {
        (y + ROUNDING_MAGIC) - ROUNDING_MAGIC
    } else {
        y.round_ties_even()
    };
    code * step
}

fn snap_on_grid(x: &[f64], step: f64, max_code: f64) -> Vec<f64> {
    let inv = 1.0 / step;
    x.iter()
        .map(|&v| snap_value(v, inv, step, max_code))
        .collect()
}

fn snap_into(out: &mut [f64], x: &[f64], fmt: NumberFormat) {
    let e = bfp_shared_exponent(x, fmt);
    let step = pow2(e - (fmt.element_bits() as i32 - 2));
    let (inv, max_code) = (1.0 / step, fmt.max_code());
    for (o, &v) in out.iter_mut().zip(x) {
        *o = snap_value(v, inv, step, max_code);
    }
}

/// Reduction axis along which BFP boxes are laid out for a 2-D tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxAxis {
    /// Boxes run along each row (the contiguous, innermost dimension).
    Rows,
    /// Boxes run down each column.
    Columns,
}

/// Quantizes a dense tensor. BFP boxes run along the innermost dimension; the
/// last box of each row may be partial.
pub fn quantize_tensor(t: &Tensor, fmt: NumberFormat) -> Result<Tensor> {
    match fmt.kind() {
        FormatKind::Reference => Ok(t.clone()),
        FormatKind::Fixed => {
            let block = snap_fixed(t.data(), fmt.element_bits())?;
            Ok(Tensor::from_parts(t.shape().to_vec(), block.values))
        }
        FormatKind::Bfp => {
            check_finite(t.data(), "quantize_tensor input")?;
            let cols = t.cols();
            let mut out = vec![0.0; t.len()];
            for (src_row, dst_row) in t.data().chunks(cols).zip(out.chunks_mut(cols)) {
                for (src, dst) in src_row
                    .chunks(fmt.box_size())
                    .zip(dst_row.chunks_mut(fmt.box_size()))
                {
                    snap_into(dst, src, fmt);
                }
            }
            Ok(Tensor::from_parts(t.shape().to_vec(), out))
        }
    }
}

/// Quantizes a 2-D tensor with boxes along the chosen axis. Fixed point and
/// the reference format ignore the axis.
///
/// Column boxing gives the same result as transposing, quantizing by rows,
/// and transposing back.
pub fn quantize_along(t: &Tensor, fmt: NumberFormat, axis: BoxAxis) -> Result<Tensor> {
    match (fmt.kind(), axis) {
        (FormatKind::Bfp, BoxAxis::Columns) => {
            check_finite(t.data(), "quantize_tensor input")?;
            let (rows, cols) = (t.rows(), t.cols());
            let src = t.data();
            let mut out = vec![0.0; src.len()];
            let mut max = vec![0.0f64; cols];
            let max_code = fmt.max_code();
            for r0 in (0..rows).step_by(fmt.box_size()) {
                let r1 = (r0 + fmt.box_size()).min(rows);
                max.fill(0.0);
                for r in r0..r1 {
                    for (m, v) in max.iter_mut().zip(&src[r * cols..(r + 1) * cols]) {
                        *m = m.max(v.abs());
                    }
                }
                let steps: Vec<(f64, f64)> = max
                    .iter()
                    .map(|&m| {
                        let e = shared_exponent_of_max(m, fmt);
                        let step = pow2(e - (fmt.element_bits() as i32 - 2));
                        (1.0 / step, step)
                    })
                    .collect();
                for r in r0..r1 {
                    let row = r * cols..(r + 1) * cols;
                    for ((o, &v), &(inv, step)) in
                        out[row.clone()].iter_mut().zip(&src[row]).zip(&steps)
                    {
                        *o = snap_value(v, inv, step, max_code);
                    }
                }
            }
            Ok(Tensor::from_parts(t.shape().to_vec(), out))
        }
        _ => quantize_tensor(t, fmt),
    }
}

/// Storage cost in bits of `n` elements held in `fmt`.
pub fn storage_bits(fmt: NumberFormat, n: u64) -> u64 {
    match fmt.kind() {
        FormatKind::Reference => n * REFERENCE_STORAGE_BITS as u64,
        FormatKind::Fixed => n * fmt.element_bits() as u64,
        FormatKind::Bfp => {
            n * fmt.element_bits() as u64
                + n.div_ceil(fmt.box_size() as u64) * fmt.exponent_bits() as u64
        }
    }
}

/// Half the grid step implied by the block's scale: an upper bound on the
/// rounding error of every element that was not clamped.
pub fn max_abs_error_bound(fmt: NumberFormat, block: &[f64]) -> f64 {
    let max = max_abs(block);
    match fmt.kind() {
        FormatKind::Reference => 0.0,
        _ if max == 0.0 => 0.0,
        FormatKind::Fixed => pow2(floor_log2(max) + 1 - fmt.element_bits() as i32),
        FormatKind::Bfp => {
            let e = bfp_shared_exponent(block, fmt);
            pow2(e - (fmt.element_bits() as i32 - 2)) / 2.0
        }
    }
}
