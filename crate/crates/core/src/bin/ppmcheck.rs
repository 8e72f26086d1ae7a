//! Toy PPM reader with a planted row-buffer overflow.
//!
//! Input layout: `P6`, ASCII width, height and maxval separated by
//! whitespace, one whitespace byte, a little-endian u32 row length, then
//! the pixel bytes. Only 8-bit raw images (maxval 255) reach `get_rgb_row`.
//! A row length larger than the row buffer (`width * 3`) aborts the process,
//! standing in for a heap overflow.
//!
//! Call chain: main -> read_header -> parse_dims -> get_rgb_row, with
//! read_header -> read_plain for other `P` formats.

use std::io::Write;

fn trace(function: &str) {
    if let Some(path) = std::env::var_os("RF_TRACE_FILE") {
        if let Ok(mut f) = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
        {
            let _ = writeln!(f, "{function}");
        }
    }
}

fn main() {
    trace("main");
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: ppmcheck <file.ppm>");
        std::process::exit(2);
    };
    let data = match std::fs::read(&path) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("ppmcheck: {path}: {e}");
            std::process::exit(2);
        }
    };
    std::process::exit(read_header(&data));
}

fn read_header(data: &[u8]) -> i32 {
    trace("read_header");
    if data.starts_with(b"P6") {
        parse_dims(&data[2..])
    } else if data.first() == Some(&b'P') {
        read_plain(data)
    } else {
        eprintln!("ppmcheck: not a PPM file");
        1
    }
}

fn read_plain(data: &[u8]) -> i32 {
    trace("read_plain");
    match data.get(1) {
        Some(b'1'..=b'5') => {
            eprintln!("ppmcheck: only raw RGB (P6) images are supported");
            1
        }
        _ => {
            eprintln!("ppmcheck: unknown PPM variant");
            1
        }
    }
}

fn skip_ws(data: &[u8], mut pos: usize) -> usize {
    while pos < data.len() && data[pos].is_ascii_whitespace() {
        pos += 1;
    }
    pos
}

fn read_number(data: &[u8], pos: usize) -> Option<(u32, usize)> {
    let start = skip_ws(data, pos);
    let mut end = start;
    let mut value: u32 = 0;
    while end < data.len() && data[end].is_ascii_digit() {
        value = value
            .checked_mul(10)?
            .checked_add((data[end] - b'0') as u32)?;
        end += 1;
    }
    (end > start).then_some((value, end))
}

fn parse_dims(rest: &[u8]) -> i32 {
    trace("parse_dims");
    let Some((width, p)) = read_number(rest, 0) else {
        return 1;
    };
    let Some((height, p)) = read_number(rest, p) else {
        return 1;
    };
    let Some((maxval, p)) = read_number(rest, p) else {
        return 1;
    };
    if !(1..=64).contains(&width) || !(1..=64).contains(&height) {
        eprintln!("ppmcheck: bad dimensions {width}x{height}");
        return 1;
    }
    if maxval != 255 {
        eprintln!("ppmcheck: maxval {maxval} not supported");
        return 1;
    }
    if rest.get(p).is_none_or(|b| !b.is_ascii_whitespace()) {
        return 1;
    }
    get_rgb_row(width as usize, height as usize, &rest[p + 1..])
}

fn get_rgb_row(width: usize, height: usize, body: &[u8]) -> i32 {
    trace("get_rgb_row");
    let Some(len_bytes) = body.get(..4) else {
        return 1;
    };
    let row_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let capacity = width * 3;
    if row_len > capacity {
        eprintln!("ppmcheck: heap-buffer-overflow: row length {row_len} exceeds row buffer of {capacity} bytes");
        std::process::abort();
    }
    let pixels = &body[4..];
    if pixels.len() < row_len * height {
        eprintln!("ppmcheck: truncated pixel data");
        return 1;
    }
    0
}
