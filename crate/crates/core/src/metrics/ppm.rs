use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Map a [-1, 1] value to a byte; -1 goes to 0 and 1 to 255.
pub fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0).round() as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

/// Tile `[C, H, W]` images (C = 1 or 3) row-major into a binary P6 PPM.
pub fn write_grid_ppm<T: Scalar>(images: &[Tensor<T>], cols: usize, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_grid_ppm(images, cols)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_grid_ppm<T: Scalar>(images: &[Tensor<T>], cols: usize) -> Result<Vec<u8>> {
    encode_grid_ppm_with_comment(images, cols, None)
}

/// As [`encode_grid_ppm`], with an optional single-line `# comment` in the header.
pub fn encode_grid_ppm_with_comment<T: Scalar>(images: &[Tensor<T>], cols: usize, comment: Option<&str>) -> Result<Vec<u8>> {
    let first = images.first().ok_or(Error::Empty("image grid"))?;
    if cols == 0 {
        return Err(Error::InvalidArgument("grid needs at least one column".into()));
    }
    let (c, h, w) = match first.shape() {
        [c, h, w] if *c == 1 || *c == 3 => (*c, *h, *w),
        s => return Err(Error::Shape(format!("grid images must be [1|3, H, W], got {s:?}"))),
    };
    if images.iter().any(|im| im.shape() != first.shape()) {
        return Err(Error::Shape("grid images differ in shape".into()));
    }
    let cols = cols.min(images.len());
    let rows = images.len().div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let note = match comment {
        Some(c) if c.contains('\n') => return Err(Error::InvalidArgument("PPM comment must be one line".into())),
        Some(c) => format!("# {c}\n"),
        None => String::new(),
    };
    let mut out = format!("P6\n{note}{gw} {gh}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + gw * gh * 3, 0);
    for (k, im) in images.iter().enumerate() {
        let (r0, c0) = ((k / cols) * h, (k % cols) * w);
        for y in 0..h {
            for x in 0..w {
                let px = header + ((r0 + y) * gw + c0 + x) * 3;
                for ch in 0..3 {
                    let src = if c == 1 { 0 } else { ch };
                    out[px + ch] = to_byte(im.data()[src * h * w + y * w + x].as_f64());
                }
            }
        }
    }
    Ok(out)
}

/// Parse a binary P6 PPM with maxval 255 into `(width, height, rgb bytes)`.
pub fn read_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(Error::Format(format!("unsupported PPM header {fields:?}")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM dimension {s}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..pos + w * h * 3).ok_or_else(|| Error::Format("truncated PPM body".into()))?;
    Ok((w, h, body.to_vec()))
}
