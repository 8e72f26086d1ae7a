//! Mutation program DSL.
//!
//! One operation per line (`;` also separates operations), `#` starts a
//! comment:
//!
//! ```text
//! AddToLE(@row_len=11, 4, +0x10000)   # inflate the row length field
//! Overwrite(end-4, FFFFFFFF)
//! SetByte(rand(0,3), 0x50)
//! ```
//!
//! Offsets and lengths are absolute integers, `end-k` (relative to the
//! current length) or `rand(a,b)` (uniform, inclusive, drawn from the
//! supplied RNG). An offset may carry a name: `@field=expr`. Byte literals
//! are hex strings. Out-of-range positions clamp to the valid range and are
//! counted.

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest length a `ResizeTo` may request.
pub const MAX_RESIZE: u64 = 1 << 30;
const MAX_LITERAL: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Abs(u64),
    /// `end-k`
    End(u64),
    /// `rand(a,b)`, inclusive
    Rand(u64, u64),
}

impl Expr {
    fn eval(&self, len: usize, rng: &mut dyn RngCore) -> u64 {
        match *self {
            Expr::Abs(n) => n,
            Expr::End(k) => (len as u64).saturating_sub(k),
            Expr::Rand(a, b) => rng.gen_range(a..=b),
        }
    }

    /// Largest value the expression can take for a buffer of length `len`.
    pub fn max_value(&self, len: usize) -> u64 {
        match *self {
            Expr::Abs(n) => n,
            Expr::End(k) => (len as u64).saturating_sub(k),
            Expr::Rand(_, b) => b,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Abs(n) => write!(f, "{n}"),
            Expr::End(0) => write!(f, "end"),
            Expr::End(k) => write!(f, "end-{k}"),
            Expr::Rand(a, b) => write!(f, "rand({a},{b})"),
        }
    }
}

/// An offset or length expression with an optional field name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pos {
    pub name: Option<String>,
    pub expr: Expr,
}

impl Pos {
    pub fn abs(n: u64) -> Self {
        Self {
            name: None,
            expr: Expr::Abs(n),
        }
    }

    pub fn end(k: u64) -> Self {
        Self {
            name: None,
            expr: Expr::End(k),
        }
    }

    pub fn rand(a: u64, b: u64) -> Self {
        Self {
            name: None,
            expr: Expr::Rand(a, b),
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.name {
            Some(n) => write!(f, "@{n}={}", self.expr),
            None => write!(f, "{}", self.expr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    FlipBit { offset: Pos, bit: u8 },
    SetByte { offset: Pos, value: u8 },
    InsertBytes { offset: Pos, bytes: Vec<u8> },
    DeleteRange { offset: Pos, len: Pos },
    Overwrite { offset: Pos, bytes: Vec<u8> },
    AddToLE { offset: Pos, width: u8, delta: i64 },
    ResizeTo { len: Pos, fill: u8 },
    CopyRegion { src: Pos, dst: Pos, len: Pos },
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::FlipBit { offset, bit } => write!(f, "FlipBit({offset}, {bit})"),
            Op::SetByte { offset, value } => write!(f, "SetByte({offset}, {value})"),
            Op::InsertBytes { offset, bytes } => {
                write!(f, "InsertBytes({offset}, {})", hex::encode_upper(bytes))
            }
            Op::DeleteRange { offset, len } => write!(f, "DeleteRange({offset}, {len})"),
            Op::Overwrite { offset, bytes } => {
                write!(f, "Overwrite({offset}, {})", hex::encode_upper(bytes))
            }
            Op::AddToLE {
                offset,
                width,
                delta,
            } => {
                let sign = if *delta >= 0 { "+" } else { "" };
                write!(f, "AddToLE({offset}, {width}, {sign}{delta})")
            }
            Op::ResizeTo { len, fill } => write!(f, "ResizeTo({len}, {fill})"),
            Op::CopyRegion { src, dst, len } => write!(f, "CopyRegion({src}, {dst}, {len})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationProgram {
    pub ops: Vec<Op>,
    /// Indices into the strategy list the program was synthesized from.
    pub strategy_refs: Vec<usize>,
    /// Unix seconds.
    pub created_at: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct DslError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutated {
    pub bytes: Vec<u8>,
    pub clamps: u64,
}

impl MutationProgram {
    pub fn new(ops: Vec<Op>) -> Self {
        Self {
            ops,
            strategy_refs: Vec::new(),
            created_at: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self, DslError> {
        let mut ops = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("");
            for stmt in content.split(';') {
                let stmt = stmt.trim();
                if stmt.is_empty() {
                    continue;
                }
                ops.push(parse_op(stmt).map_err(|message| DslError { line, message })?);
            }
        }
        if ops.is_empty() {
            return Err(DslError {
                line: 0,
                message: "program has no operations".into(),
            });
        }
        Ok(Self::new(ops))
    }

    /// Canonical text; parses back to the same operations.
    pub fn to_text(&self) -> String {
        self.ops.iter().map(|o| format!("{o}\n")).collect()
    }

    /// Upper bound on output length for an input of `input_len` bytes.
    pub fn max_output_len(&self, input_len: usize) -> u64 {
        let mut base = input_len as u64;
        let mut literal = 0u64;
        for op in &self.ops {
            match op {
                Op::InsertBytes { bytes, .. } | Op::Overwrite { bytes, .. } => {
                    literal += bytes.len() as u64
                }
                Op::ResizeTo { len, .. } => {
                    if let Expr::Abs(_) | Expr::Rand(..) = len.expr {
                        base = base.max(len.expr.max_value(0));
                    }
                }
                _ => {}
            }
        }
        base + literal
    }

    /// Applies the operations in order to a copy of `input`.
    pub fn apply(&self, input: &[u8], rng: &mut dyn RngCore) -> Mutated {
        let mut buf = input.to_vec();
        let mut clamps = 0u64;
        for op in &self.ops {
            apply_op(op, &mut buf, rng, &mut clamps);
        }
        Mutated { bytes: buf, clamps }
    }
}

fn clamp(v: u64, max: usize, clamps: &mut u64) -> usize {
    if v > max as u64 {
        *clamps += 1;
        max
    } else {
        v as usize
    }
}

fn apply_op(op: &Op, buf: &mut Vec<u8>, rng: &mut dyn RngCore, clamps: &mut u64) {
    let len = buf.len();
    match op {
        Op::FlipBit { offset, bit } => {
            let o = offset.expr.eval(len, rng);
            if len == 0 {
                *clamps += 1;
                return;
            }
            let o = clamp(o, len - 1, clamps);
            buf[o] ^= 1 << bit;
        }
        Op::SetByte { offset, value } => {
            let o = offset.expr.eval(len, rng);
            if len == 0 {
                *clamps += 1;
                return;
            }
            let o = clamp(o, len - 1, clamps);
            buf[o] = *value;
        }
        Op::InsertBytes { offset, bytes } => {
            let o = clamp(offset.expr.eval(len, rng), len, clamps);
            buf.splice(o..o, bytes.iter().copied());
        }
        Op::DeleteRange { offset, len: n } => {
            let o = clamp(offset.expr.eval(len, rng), len, clamps);
            let n = clamp(n.expr.eval(len, rng), len - o, clamps);
            buf.drain(o..o + n);
        }
        Op::Overwrite { offset, bytes } => {
            let o = clamp(offset.expr.eval(len, rng), len, clamps);
            let end = o + bytes.len();
            if end > len {
                buf.resize(end, 0);
            }
            buf[o..end].copy_from_slice(bytes);
        }
        Op::AddToLE {
            offset,
            width,
            delta,
        } => {
            let w = *width as usize;
            let o = offset.expr.eval(len, rng);
            if len < w {
                *clamps += 1;
                return;
            }
            let o = clamp(o, len - w, clamps);
            let mut raw = [0u8; 8];
            raw[..w].copy_from_slice(&buf[o..o + w]);
            let v = u64::from_le_bytes(raw).wrapping_add(*delta as u64);
            buf[o..o + w].copy_from_slice(&v.to_le_bytes()[..w]);
        }
        Op::ResizeTo { len: n, fill } => {
            let n = n.expr.eval(len, rng).min(MAX_RESIZE) as usize;
            buf.resize(n, *fill);
        }
        Op::CopyRegion { src, dst, len: n } => {
            let s = clamp(src.expr.eval(len, rng), len, clamps);
            let d = dst.expr.eval(len, rng);
            let n = clamp(n.expr.eval(len, rng), len - s, clamps);
            let d = clamp(d, len - n, clamps);
            buf.copy_within(s..s + n, d);
        }
    }
}

fn split_args(s: &str) -> Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err("unbalanced parentheses".into());
                }
            }
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err("unbalanced parentheses".into());
    }
    let last = s[start..].trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    Ok(out)
}

fn parse_uint(s: &str) -> Result<u64, String> {
    let s = s.trim().strip_prefix('+').unwrap_or(s.trim());
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16),
        None => s.parse::<u64>(),
    };
    r.map_err(|_| format!("bad integer {s:?}"))
}

fn parse_int(s: &str) -> Result<i64, String> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let mag = parse_uint(body)?;
    if neg {
        if mag > i64::MAX as u64 + 1 {
            return Err(format!("integer {s:?} out of range"));
        }
        Ok((mag as i64).wrapping_neg())
    } else {
        i64::try_from(mag).map_err(|_| format!("integer {s:?} out of range"))
    }
}

fn parse_expr(s: &str) -> Result<Expr, String> {
    let s = s.trim();
    if s == "end" {
        return Ok(Expr::End(0));
    }
    if let Some(k) = s.strip_prefix("end") {
        let k = k.trim_start();
        let k = k
            .strip_prefix('-')
            .ok_or_else(|| format!("bad end-relative expression {s:?}"))?;
        return Ok(Expr::End(parse_uint(k)?));
    }
    if let Some(inner) = s.strip_prefix("rand(").and_then(|r| r.strip_suffix(')')) {
        let parts = split_args(inner)?;
        let [a, b] = parts[..] else {
            return Err(format!("rand takes two bounds: {s:?}"));
        };
        let (a, b) = (parse_uint(a)?, parse_uint(b)?);
        if a > b {
            return Err(format!("rand bounds reversed: {s:?}"));
        }
        return Ok(Expr::Rand(a, b));
    }
    Ok(Expr::Abs(parse_uint(s)?))
}

fn parse_pos(s: &str) -> Result<Pos, String> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix('@') {
        let (name, expr) = rest
            .split_once('=')
            .ok_or_else(|| format!("named position needs `@name=expr`: {s:?}"))?;
        let name = name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("bad position name {name:?}"));
        }
        return Ok(Pos {
            name: Some(name.to_string()),
            expr: parse_expr(expr)?,
        });
    }
    Ok(Pos {
        name: None,
        expr: parse_expr(s)?,
    })
}

fn parse_bytes(s: &str) -> Result<Vec<u8>, String> {
    let s = s.trim().trim_matches('"');
    let s = s.strip_prefix("0x").unwrap_or(s);
    let cleaned: String = s
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_')
        .collect();
    if cleaned.is_empty() {
        return Err("empty byte literal".into());
    }
    let bytes = hex::decode(&cleaned).map_err(|_| format!("bad hex byte literal {s:?}"))?;
    if bytes.len() > MAX_LITERAL {
        return Err(format!("byte literal longer than {MAX_LITERAL} bytes"));
    }
    Ok(bytes)
}

fn parse_u8(s: &str, what: &str) -> Result<u8, String> {
    let v = parse_uint(s)?;
    u8::try_from(v).map_err(|_| format!("{what} {v} does not fit in a byte"))
}

fn parse_op(stmt: &str) -> Result<Op, String> {
    let open = stmt
        .find('(')
        .ok_or_else(|| format!("expected `Name(args)`: {stmt:?}"))?;
    if !stmt.ends_with(')') {
        return Err(format!("expected `Name(args)`: {stmt:?}"));
    }
    let name = stmt[..open].trim();
    let args = split_args(&stmt[open + 1..stmt.len() - 1])?;
    let want = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("{name} takes {n} arguments, got {}", args.len()))
        }
    };
    let op = match name {
        "FlipBit" => {
            want(2)?;
            let bit = parse_u8(args[1], "bit")?;
            if bit > 7 {
                return Err(format!("bit index {bit} outside 0..=7"));
            }
            Op::FlipBit {
                offset: parse_pos(args[0])?,
                bit,
            }
        }
        "SetByte" => {
            want(2)?;
            Op::SetByte {
                offset: parse_pos(args[0])?,
                value: parse_u8(args[1], "value")?,
            }
        }
        "InsertBytes" => {
            want(2)?;
            Op::InsertBytes {
                offset: parse_pos(args[0])?,
                bytes: parse_bytes(args[1])?,
            }
        }
        "DeleteRange" => {
            want(2)?;
            Op::DeleteRange {
                offset: parse_pos(args[0])?,
                len: parse_pos(args[1])?,
            }
        }
        "Overwrite" => {
            want(2)?;
            Op::Overwrite {
                offset: parse_pos(args[0])?,
                bytes: parse_bytes(args[1])?,
            }
        }
        "AddToLE" => {
            want(3)?;
            let width = parse_u8(args[1], "width")?;
            if ![1, 2, 4, 8].contains(&width) {
                return Err(format!("width {width} not in {{1,2,4,8}}"));
            }
            Op::AddToLE {
                offset: parse_pos(args[0])?,
                width,
                delta: parse_int(args[2])?,
            }
        }
        "ResizeTo" => {
            want(2)?;
            let len = parse_pos(args[0])?;
            if len.expr.max_value(0) > MAX_RESIZE {
                return Err(format!("ResizeTo length exceeds {MAX_RESIZE}"));
            }
            Op::ResizeTo {
                len,
                fill: parse_u8(args[1], "fill")?,
            }
        }
        "CopyRegion" => {
            want(3)?;
            Op::CopyRegion {
                src: parse_pos(args[0])?,
                dst: parse_pos(args[1])?,
                len: parse_pos(args[2])?,
            }
        }
        other => return Err(format!("unknown operation {other:?}")),
    };
    Ok(op)
}

/// Short reference attached to synthesis prompts.
pub const DSL_REFERENCE: &str = "\
Mutation program: one operation per line, applied in order to a copy of the input.
Positions: an integer (decimal or 0x-hex), end-K (K bytes before the end), or rand(A,B)
(uniform, inclusive). A position may be named: @field=POS. Bytes are hex strings.
  FlipBit(POS, BIT)            flip bit 0..7 of one byte
  SetByte(POS, VALUE)          set one byte
  InsertBytes(POS, HEX)        insert bytes before POS
  DeleteRange(POS, LEN)        delete LEN bytes at POS
  Overwrite(POS, HEX)          overwrite bytes at POS, extending the input if needed
  AddToLE(POS, WIDTH, DELTA)   add a signed DELTA to the little-endian WIDTH-byte (1,2,4,8) integer at POS
  ResizeTo(LEN, FILL)          truncate or pad with FILL to LEN bytes
  CopyRegion(SRC, DST, LEN)    copy LEN bytes from SRC over DST
Out-of-range positions are clamped. # starts a comment.

Example 1 (inflate a 4-byte length field at offset 8 and corrupt the trailer):
  AddToLE(@length=8, 4, +0x10000)
  Overwrite(end-4, FFFFFFFF)
Example 2 (duplicate a header region and randomize one tag byte):
  CopyRegion(0, rand(16,64), 16)
  SetByte(rand(0,3), 0xFF)
";
