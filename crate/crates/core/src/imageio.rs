//! Grayscale image reading (PGM, PNG) and 8-bit PGM/PNG writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::RealField;

/// Rec. 601 luminance of an RGB triple.
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// An image as one or three planes with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// One plane (gray) or three (R, G, B), row-major.
    pub planes: Vec<Vec<f64>>,
}

impl Image {
    pub fn gray(&self) -> Vec<f64> {
        match self.planes.len() {
            3 => (0..self.width * self.height)
                .map(|i| luminance(self.planes[0][i], self.planes[1][i], self.planes[2][i]))
                .collect(),
            _ => self.planes[0].clone(),
        }
    }

    fn square_side(&self, path: &Path) -> Result<usize> {
        if self.width != self.height {
            return Err(Error::ShapeMismatch(format!(
                "{}: image is {}x{}, expected a square image",
                path.display(),
                self.width,
                self.height
            )));
        }
        Ok(self.width)
    }

    pub fn to_gray_field(&self, path: &Path) -> Result<RealField> {
        RealField::from_vec(self.square_side(path)?, self.gray())
    }

    /// One field per color plane.
    pub fn to_plane_fields(&self, path: &Path) -> Result<Vec<RealField>> {
        let n = self.square_side(path)?;
        self.planes
            .iter()
            .map(|p| RealField::from_vec(n, p.clone()))
            .collect()
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        decode_pgm(&bytes, path)
    } else {
        Err(Error::Data(format!(
            "{}: unsupported image format (PGM or PNG expected)",
            path.display()
        )))
    }
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |e: png::DecodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let samples = info.color_type.samples();
    let px = |i: usize, c: usize| buf[i * samples + c] as f64 / 255.0;
    let planes = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => {
            vec![(0..w * h).map(|i| px(i, 0)).collect()]
        }
        png::ColorType::Rgb | png::ColorType::Rgba => (0..3)
            .map(|c| (0..w * h).map(|i| px(i, c)).collect())
            .collect(),
        other => {
            return Err(Error::Data(format!(
                "{}: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    };
    Ok(Image {
        width: w,
        height: h,
        planes,
    })
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    let binary = bytes.starts_with(b"P5");
    // header tokens, skipping comments
    let mut pos = 2;
    let mut tokens = Vec::with_capacity(3);
    while tokens.len() < 3 {
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
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("malformed PGM header"));
        }
        let t: usize = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| bad("malformed PGM header"))?;
        tokens.push(t);
    }
    let (w, h, maxval) = (tokens[0], tokens[1], tokens[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("PGM maxval out of range"));
    }
    let count = w * h;
    let values: Vec<f64> = if binary {
        pos += 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if bytes.len() < pos + need {
            return Err(bad("truncated PGM data"));
        }
        let data = &bytes[pos..pos + need];
        if wide {
            data.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
                .collect()
        } else {
            data.iter().map(|&v| v as f64 / maxval as f64).collect()
        }
    } else {
        let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| bad("non-ASCII PGM data"))?;
        let vals: Vec<f64> = text
            .split_ascii_whitespace()
            .take(count)
            .map(|t| t.parse::<f64>().map(|v| v / maxval as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("malformed PGM sample"))?;
        if vals.len() != count {
            return Err(bad("truncated PGM data"));
        }
        vals
    };
    Ok(Image {
        width: w,
        height: h,
        planes: vec![values],
    })
}

/// Maps `values` to 8 bits: linearly over `[lo, hi]`, clamped.
pub fn quantize(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span <= 0.0 {
                128
            } else {
                (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect()
}

/// Writes a binary 8-bit PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit grayscale PNG.
pub fn write_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(pixels).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let px: Vec<u8> = (0..12).map(|v| v * 20).collect();
        write_pgm(&path, 4, 3, &px).unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!((img.width, img.height), (4, 3));
        assert_eq!(img.planes[0][5], 100.0 / 255.0);
        assert!(img.to_gray_field(&path).is_err());
    }

    #[test]
    fn ascii_pgm_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pgm");
        fs::write(&path, "P2\n# note\n2 2\n10\n0 5\n10 2\n").unwrap();
        let f = read_image(&path).unwrap().to_gray_field(&path).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 0.5, 1.0, 0.2]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let px: Vec<u8> = (0..16).map(|v| v * 16).collect();
        write_png(&path, 4, 4, &px).unwrap();
        let f = read_image(&path).unwrap().to_gray_field(&path).unwrap();
        assert_eq!(f.get(1, 2), 96.0 / 255.0);
    }

    #[test]
    fn quantize_clamps_and_handles_flat_range() {
        assert_eq!(quantize(&[-1.0, 0.0, 0.5, 1.0, 2.0], 0.0, 1.0), vec![0, 0, 128, 255, 255]);
        assert_eq!(quantize(&[3.0], 1.0, 1.0), vec![128]);
    }

    #[test]
    fn unknown_format_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        fs::write(&path, b"hello").unwrap();
        assert!(matches!(read_image(&path), Err(Error::Data(_))));
    }
}
