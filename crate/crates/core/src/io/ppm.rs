//! Binary netpbm images: P6 (RGB) and P5 (grey), 8 or 16 bits per sample.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{normalize, Tensor3};

/// Quantises unit-interval samples to 8 bits and writes a P6 (3 channels) or
/// P5 (1 channel) image.
pub fn encode_ppm(image: &Tensor3) -> Result<Vec<u8>> {
    let magic = match image.channels() {
        3 => "P6",
        1 => "P5",
        c => return Err(Error::shape(format!("netpbm images have 1 or 3 channels, got {c}"))),
    };
    let (c, h, w) = image.shape();
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for r in 0..h {
        for s in 0..w {
            for ch in 0..c {
                let v = image.get(ch, r, s);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::range(format!("sample {v} at ({ch}, {r}, {s}) outside [0, 1]")));
                }
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], origin: &Path) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::parse(origin, "bad magic bytes, expected P6 or P5")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // Whitespace and '#' comments may separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let name = ["width", "height", "maxval"][k];
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(origin, format!("missing or malformed {name}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::parse(origin, "header must end with a single whitespace byte"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::parse(origin, format!("empty image {width}x{height}")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::parse(origin, format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decodes a P6 or P5 image into `[0, 1]` samples. `origin` names the file
/// in error messages.
pub fn decode_ppm(bytes: &[u8], origin: &Path) -> Result<Tensor3> {
    let hd = parse_header(bytes, origin)?;
    let wide = hd.maxval > 255;
    let samples = hd.channels * hd.width * hd.height;
    let body = &bytes[hd.data_start..];
    let need = samples * if wide { 2 } else { 1 };
    if body.len() < need {
        return Err(Error::parse(
            origin,
            format!("truncated pixel data: {} of {need} bytes", body.len()),
        ));
    }
    let plane = hd.width * hd.height;
    let mut data = vec![0.0; samples];
    for i in 0..samples {
        let v = if wide {
            u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as usize
        } else {
            body[i] as usize
        };
        if v > hd.maxval {
            return Err(Error::parse(origin, format!("sample {v} exceeds maxval {}", hd.maxval)));
        }
        let (pixel, ch) = (i / hd.channels, i % hd.channels);
        data[ch * plane + pixel] = v as f64;
    }
    let raw = Tensor3::from_vec(hd.channels, hd.height, hd.width, data)?;
    normalize(&raw, hd.maxval as f64)
}

pub fn read_ppm(path: &Path) -> Result<Tensor3> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn write_ppm(image: &Tensor3, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}
