//! AFL-style mutators: deterministic flips, arithmetic and interesting
//! values, plus randomized havoc stacking and splicing.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::target::{Input, InputId};

pub const ARITH_MAX: i8 = 35;

/// Canonical interesting values, written little-endian at widths 1/2/4.
pub const INTERESTING: [i64; 16] = [
    0, 1, -1, 16, 32, 64, 100, 127, -128, 255, 256, 512, 1024, 4096, 32767, -32768,
];

/// Default exponent for havoc stacking: `2^(1 + r)` ops, `r < HAVOC_STACK_POW2`.
pub const HAVOC_STACK_POW2: u32 = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MutationError {
    #[error("position {position} out of bounds for {op} on {len} bytes")]
    OutOfBounds {
        op: &'static str,
        position: usize,
        len: usize,
    },
    #[error("invalid width {0}")]
    BadWidth(u8),
    #[error("arith delta {0} outside [-35, 35]")]
    BadDelta(i8),
    #[error("splice needs two inputs of at least two bytes")]
    SpliceTooShort,
    #[error("splice needs a donor input; call splice() instead")]
    NeedsDonor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationOp {
    /// Flip `width` consecutive bits starting at a bit index.
    BitFlip { width: u8 },
    /// XOR `width` consecutive bytes with 0xFF.
    ByteFlip { width: u8 },
    /// Wrapping add of `delta` to one byte.
    Arith { delta: i8 },
    /// Overwrite `width` bytes with an interesting value.
    InterestingValue { width: u8, value: i32 },
    Havoc { stack_count: u32 },
    Splice,
}

impl MutationOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            MutationOp::BitFlip { .. } => "bitflip",
            MutationOp::ByteFlip { .. } => "byteflip",
            MutationOp::Arith { .. } => "arith",
            MutationOp::InterestingValue { .. } => "interesting",
            MutationOp::Havoc { .. } => "havoc",
            MutationOp::Splice => "splice",
        }
    }
}

fn check_width(width: u8) -> Result<usize, MutationError> {
    match width {
        1 | 2 | 4 => Ok(width as usize),
        _ => Err(MutationError::BadWidth(width)),
    }
}

fn write_le(bytes: &mut [u8], pos: usize, width: usize, value: i64) {
    let le = value.to_le_bytes();
    bytes[pos..pos + width].copy_from_slice(&le[..width]);
}

fn read_le(bytes: &[u8], pos: usize, width: usize) -> i64 {
    let mut le = [0u8; 8];
    le[..width].copy_from_slice(&bytes[pos..pos + width]);
    i64::from_le_bytes(le)
}

/// Interesting values at `width`, skipping ones that do not fit and ones
/// whose truncated byte pattern repeats an earlier entry.
pub fn interesting_values(width: u8) -> Vec<i64> {
    let bits = width as u32 * 8;
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for &v in &INTERESTING {
        let fits = v >= -(1i64 << (bits - 1)) && v < (1i64 << bits);
        if !fits {
            continue;
        }
        let pattern = v & ((1i64 << bits) - 1);
        if !seen.contains(&pattern) {
            seen.push(pattern);
            out.push(v);
        }
    }
    out
}

/// Applies one deterministic mutation (or a havoc stack) to a copy of
/// `seed`. `position` is a bit index for `BitFlip` and a byte index
/// otherwise; `rng` is only consulted by `Havoc`.
pub fn mutate<R: Rng>(
    seed: &[u8],
    op: MutationOp,
    position: usize,
    rng: &mut R,
    max_input_len: usize,
) -> Result<Vec<u8>, MutationError> {
    let mut out = seed.to_vec();
    let oob = |op: MutationOp| MutationError::OutOfBounds {
        op: op.kind_name(),
        position,
        len: seed.len(),
    };
    match op {
        MutationOp::BitFlip { width } => {
            let w = check_width(width)?;
            if position + w > seed.len() * 8 {
                return Err(oob(op));
            }
            for bit in position..position + w {
                out[bit / 8] ^= 0x80 >> (bit % 8);
            }
        }
        MutationOp::ByteFlip { width } => {
            let w = check_width(width)?;
            if position + w > seed.len() {
                return Err(oob(op));
            }
            out[position..position + w].iter_mut().for_each(|b| *b ^= 0xff);
        }
        MutationOp::Arith { delta } => {
            if !(-ARITH_MAX..=ARITH_MAX).contains(&delta) {
                return Err(MutationError::BadDelta(delta));
            }
            if position >= seed.len() {
                return Err(oob(op));
            }
            out[position] = out[position].wrapping_add(delta as u8);
        }
        MutationOp::InterestingValue { width, value } => {
            let w = check_width(width)?;
            if position + w > seed.len() {
                return Err(oob(op));
            }
            write_le(&mut out, position, w, value as i64);
        }
        MutationOp::Havoc { stack_count } => {
            return Ok(havoc(seed, rng, stack_count.max(1), max_input_len));
        }
        MutationOp::Splice => return Err(MutationError::NeedsDonor),
    }
    Ok(out)
}

/// Every `(op, position)` of the once-per-seed deterministic pass over an
/// input of `len` bytes, in AFL stage order.
pub fn deterministic_ops(len: usize) -> Vec<(MutationOp, usize)> {
    let mut ops = Vec::new();
    for width in [1u8, 2, 4] {
        let w = width as usize;
        if len * 8 >= w {
            ops.extend((0..=len * 8 - w).map(|p| (MutationOp::BitFlip { width }, p)));
        }
    }
    for width in [1u8, 2, 4] {
        let w = width as usize;
        if len >= w {
            ops.extend((0..=len - w).map(|p| (MutationOp::ByteFlip { width }, p)));
        }
    }
    for p in 0..len {
        for d in 1..=ARITH_MAX {
            ops.push((MutationOp::Arith { delta: d }, p));
            ops.push((MutationOp::Arith { delta: -d }, p));
        }
    }
    for width in [1u8, 2, 4] {
        let w = width as usize;
        if len < w {
            continue;
        }
        let values = interesting_values(width);
        for p in 0..=len - w {
            for &v in &values {
                ops.push((MutationOp::InterestingValue { width, value: v as i32 }, p));
            }
        }
    }
    ops
}

/// One fully resolved havoc primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HavocOp {
    FlipBit { bit: usize },
    SetInteresting { pos: usize, width: u8, value: i64 },
    AddSub { pos: usize, width: u8, delta: i64 },
    XorByte { pos: usize, xor: u8 },
    DeleteBlock { pos: usize, len: usize },
    CloneBlock { from: usize, len: usize, to: usize },
    InsertConst { to: usize, len: usize, byte: u8 },
    OverwriteBlock { from: usize, to: usize, len: usize },
    OverwriteConst { to: usize, len: usize, byte: u8 },
}

fn block_len<R: Rng>(rng: &mut R, limit: usize) -> usize {
    // Small blocks are preferred, as in AFL's choose_block_len.
    let cap = match rng.random_range(0..3) {
        0 => 4,
        1 => 16,
        _ => 64,
    };
    rng.random_range(1..=limit.min(cap).max(1))
}

/// Draws one havoc primitive valid for an input of `len` bytes that may grow
/// up to `max_len`.
pub fn choose_havoc_op<R: Rng>(len: usize, max_len: usize, rng: &mut R) -> Option<HavocOp> {
    if len == 0 {
        if max_len == 0 {
            return None;
        }
        let n = block_len(rng, max_len);
        return Some(HavocOp::InsertConst {
            to: 0,
            len: n,
            byte: rng.random(),
        });
    }
    for _ in 0..16 {
        let op = match rng.random_range(0..15u8) {
            0 => HavocOp::FlipBit {
                bit: rng.random_range(0..len * 8),
            },
            1..=3 => {
                let width = [1u8, 2, 4][rng.random_range(0..3)];
                if len < width as usize {
                    continue;
                }
                let values = interesting_values(width);
                HavocOp::SetInteresting {
                    pos: rng.random_range(0..=len - width as usize),
                    width,
                    value: values[rng.random_range(0..values.len())],
                }
            }
            4..=7 => {
                let width = [1u8, 2, 4][rng.random_range(0..3)];
                if len < width as usize {
                    continue;
                }
                let mag = rng.random_range(1..=ARITH_MAX as i64);
                HavocOp::AddSub {
                    pos: rng.random_range(0..=len - width as usize),
                    width,
                    delta: if rng.random() { mag } else { -mag },
                }
            }
            8 | 9 => HavocOp::XorByte {
                pos: rng.random_range(0..len),
                xor: rng.random_range(1..=255),
            },
            10 | 11 => {
                if len < 2 {
                    continue;
                }
                let n = block_len(rng, len - 1);
                HavocOp::DeleteBlock {
                    pos: rng.random_range(0..=len - n),
                    len: n,
                }
            }
            12 => {
                if len >= max_len {
                    continue;
                }
                let room = max_len - len;
                if rng.random_range(0..4) == 0 {
                    HavocOp::InsertConst {
                        to: rng.random_range(0..=len),
                        len: block_len(rng, room),
                        byte: rng.random(),
                    }
                } else {
                    let n = block_len(rng, room.min(len));
                    HavocOp::CloneBlock {
                        from: rng.random_range(0..=len - n),
                        len: n,
                        to: rng.random_range(0..=len),
                    }
                }
            }
            _ => {
                if len < 2 {
                    continue;
                }
                let n = block_len(rng, len - 1);
                if rng.random_range(0..4) == 0 {
                    HavocOp::OverwriteConst {
                        to: rng.random_range(0..=len - n),
                        len: n,
                        byte: rng.random(),
                    }
                } else {
                    HavocOp::OverwriteBlock {
                        from: rng.random_range(0..=len - n),
                        to: rng.random_range(0..=len - n),
                        len: n,
                    }
                }
            }
        };
        return Some(op);
    }
    Some(HavocOp::FlipBit {
        bit: rng.random_range(0..len * 8),
    })
}

/// Applies a primitive in place. Ops produced by [`choose_havoc_op`] for the
/// current length are always in bounds.
pub fn apply_havoc_op(bytes: &mut Vec<u8>, op: HavocOp) {
    match op {
        HavocOp::FlipBit { bit } => bytes[bit / 8] ^= 0x80 >> (bit % 8),
        HavocOp::SetInteresting { pos, width, value } => write_le(bytes, pos, width as usize, value),
        HavocOp::AddSub { pos, width, delta } => {
            let w = width as usize;
            let v = read_le(bytes, pos, w).wrapping_add(delta);
            write_le(bytes, pos, w, v);
        }
        HavocOp::XorByte { pos, xor } => bytes[pos] ^= xor,
        HavocOp::DeleteBlock { pos, len } => {
            bytes.drain(pos..pos + len);
        }
        HavocOp::CloneBlock { from, len, to } => {
            let block: Vec<u8> = bytes[from..from + len].to_vec();
            bytes.splice(to..to, block);
        }
        HavocOp::InsertConst { to, len, byte } => {
            bytes.splice(to..to, std::iter::repeat_n(byte, len));
        }
        HavocOp::OverwriteBlock { from, to, len } => bytes.copy_within(from..from + len, to),
        HavocOp::OverwriteConst { to, len, byte } => bytes[to..to + len].fill(byte),
    }
}

/// Applies `stack_count` randomly chosen primitives in sequence. The result
/// never exceeds `max_input_len` bytes.
pub fn havoc<R: Rng>(seed: &[u8], rng: &mut R, stack_count: u32, max_input_len: usize) -> Vec<u8> {
    let mut out = seed.to_vec();
    out.truncate(max_input_len);
    for _ in 0..stack_count {
        match choose_havoc_op(out.len(), max_input_len, rng) {
            Some(op) => apply_havoc_op(&mut out, op),
            None => break,
        }
    }
    out
}

/// Stack depth for one havoc execution, `2^(1 + r)` with `r < pow2`.
pub fn havoc_stack_count<R: Rng>(rng: &mut R, pow2: u32) -> u32 {
    1 << (1 + rng.random_range(0..pow2.max(1)))
}

/// A spliced byte sequence, attributed to the scheduled seed only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spliced {
    pub bytes: Vec<u8>,
    pub parent: InputId,
}

/// `first[..first_split] ++ second[second_split..]`.
pub fn splice_at(first: &Input, second: &Input, first_split: usize, second_split: usize) -> Spliced {
    let mut bytes = first.bytes[..first_split].to_vec();
    bytes.extend_from_slice(&second.bytes[second_split..]);
    Spliced {
        bytes,
        parent: first.id,
    }
}

/// Joins a non-empty prefix of `first` with a non-empty suffix of `second`
/// at random split points.
pub fn splice<R: Rng>(first: &Input, second: &Input, rng: &mut R) -> Result<Spliced, MutationError> {
    if first.bytes.len() < 2 || second.bytes.len() < 2 {
        return Err(MutationError::SpliceTooShort);
    }
    let a = rng.random_range(1..first.bytes.len());
    let b = rng.random_range(1..second.bytes.len());
    Ok(splice_at(first, second, a, b))
}
