//! Baseline byte-level mutation.

use rand::{Rng, RngCore};

pub const MAX_BLOCK: usize = 32;
const MAX_ARITH: u64 = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomOp {
    BitFlip,
    ByteSet,
    ByteInsert,
    ByteDelete,
    Arith,
    BlockDup,
}

impl RandomOp {
    pub const ALL: [RandomOp; 6] = [
        RandomOp::BitFlip,
        RandomOp::ByteSet,
        RandomOp::ByteInsert,
        RandomOp::ByteDelete,
        RandomOp::Arith,
        RandomOp::BlockDup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RandomOp::BitFlip => "bitflip",
            RandomOp::ByteSet => "byteset",
            RandomOp::ByteInsert => "insert",
            RandomOp::ByteDelete => "delete",
            RandomOp::Arith => "arith",
            RandomOp::BlockDup => "dup",
        }
    }
}

const INTERESTING: [u8; 9] = [0, 1, 0x7f, 0x80, 0xff, b'0', b'9', b' ', b'\n'];

/// Applies one randomly chosen baseline operation at a random position.
/// Output length is within `[len - 1, len + MAX_BLOCK]`.
pub fn random_mutate(input: &[u8], rng: &mut dyn RngCore) -> (Vec<u8>, RandomOp) {
    let mut out = input.to_vec();
    let op = if out.is_empty() {
        RandomOp::ByteInsert
    } else {
        RandomOp::ALL[rng.gen_range(0..RandomOp::ALL.len())]
    };
    let len = out.len();
    match op {
        RandomOp::BitFlip => {
            let i = rng.gen_range(0..len);
            out[i] ^= 1 << rng.gen_range(0..8);
        }
        RandomOp::ByteSet => {
            let i = rng.gen_range(0..len);
            out[i] = if rng.gen_bool(0.5) {
                INTERESTING[rng.gen_range(0..INTERESTING.len())]
            } else {
                rng.gen()
            };
        }
        RandomOp::ByteInsert => {
            let i = rng.gen_range(0..=len);
            out.insert(i, rng.gen());
        }
        RandomOp::ByteDelete => {
            out.remove(rng.gen_range(0..len));
        }
        RandomOp::Arith => {
            let widths: &[usize] = match len {
                0 => unreachable!(),
                1 => &[1],
                2 | 3 => &[1, 2],
                _ => &[1, 2, 4],
            };
            let w = widths[rng.gen_range(0..widths.len())];
            let i = rng.gen_range(0..=len - w);
            let delta = rng.gen_range(1..=MAX_ARITH);
            let mut raw = [0u8; 8];
            raw[..w].copy_from_slice(&out[i..i + w]);
            let v = u64::from_le_bytes(raw);
            let v = if rng.gen_bool(0.5) {
                v.wrapping_add(delta)
            } else {
                v.wrapping_sub(delta)
            };
            out[i..i + w].copy_from_slice(&v.to_le_bytes()[..w]);
        }
        RandomOp::BlockDup => {
            let n = rng.gen_range(1..=len.min(MAX_BLOCK));
            let src = rng.gen_range(0..=len - n);
            let dst = rng.gen_range(0..=len);
            let block = out[src..src + n].to_vec();
            out.splice(dst..dst, block);
        }
    }
    (out, op)
}
