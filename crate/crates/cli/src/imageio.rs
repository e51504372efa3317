//! Grayscale image files: PGM (P2/P5, 8 or 16 bit) and PNG.
//!
//! Pixel values map linearly between `[0, maxval]` on disk and `[0, 1]` in
//! memory. Writing clamps to `[0, 1]` and rounds half to even.

use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use dtgv::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Pgm,
    Png,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("pgm") => Ok(Self::Pgm),
            Some("png") => Ok(Self::Png),
            _ => bail!(
                "cannot infer image format of {} (expected .pgm or .png)",
                path.display()
            ),
        }
    }
}

/// Options for [`write_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    /// 8 or 16.
    pub bits: u8,
    /// Plain-text P2 instead of binary P5; ignored for PNG.
    pub ascii: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self { bits: 8, ascii: false }
    }
}

impl WriteOptions {
    fn maxval(&self) -> u32 {
        if self.bits == 16 {
            65535
        } else {
            255
        }
    }
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let img = match Format::from_path(path)? {
        Format::Pgm => decode_pgm(&bytes),
        Format::Png => decode_png(&bytes),
    };
    img.with_context(|| format!("decoding {}", path.display()))
}

pub fn write_image(path: &Path, img: &ImageGrid, opts: WriteOptions) -> Result<()> {
    ensure!(
        opts.bits == 8 || opts.bits == 16,
        "bit depth must be 8 or 16, got {}",
        opts.bits
    );
    let bytes = match Format::from_path(path)? {
        Format::Pgm => encode_pgm(img, opts),
        Format::Png => encode_png(img, opts)?,
    };
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

/// `round_half_even(clamp(x, 0, 1) · maxval)`.
pub fn quantize(x: f64, maxval: u32) -> u32 {
    let y = (x.clamp(0.0, 1.0) * maxval as f64).round_ties_even();
    y as u32
}

fn samples(img: &ImageGrid, maxval: u32) -> impl Iterator<Item = u32> + '_ {
    img.as_slice().iter().map(move |&x| quantize(x, maxval))
}

pub fn encode_pgm(img: &ImageGrid, opts: WriteOptions) -> Vec<u8> {
    let maxval = opts.maxval();
    let (rows, cols) = (img.rows(), img.cols());
    let magic = if opts.ascii { "P2" } else { "P5" };
    let mut out = format!("{magic}\n{cols} {rows}\n{maxval}\n").into_bytes();
    if opts.ascii {
        for (k, v) in samples(img, maxval).enumerate() {
            out.extend_from_slice(v.to_string().as_bytes());
            out.push(if (k + 1) % cols == 0 { b'\n' } else { b' ' });
        }
    } else if maxval > 255 {
        for v in samples(img, maxval) {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    } else {
        out.extend(samples(img, maxval).map(|v| v as u8));
    }
    out
}

/// Splits a PGM header into tokens, skipping `#` comments, and returns the
/// offset just past the single whitespace byte that ends the header.
fn pgm_header(bytes: &[u8]) -> Result<([String; 4], usize)> {
    let mut tokens: Vec<String> = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        let b = *bytes.get(pos).ok_or_else(|| anyhow!("truncated PGM header"))?;
        if b == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            pos += 1;
        } else {
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
    }
    ensure!(
        pos < bytes.len() && bytes[pos].is_ascii_whitespace(),
        "malformed PGM header"
    );
    let tokens: [String; 4] = tokens.try_into().map_err(|_| anyhow!("malformed PGM header"))?;
    Ok((tokens, pos + 1))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let ([magic, w, h, m], offset) = pgm_header(bytes)?;
    let cols: usize = w.parse().context("PGM width")?;
    let rows: usize = h.parse().context("PGM height")?;
    let maxval: u32 = m.parse().context("PGM maxval")?;
    ensure!((1..=65535).contains(&maxval), "PGM maxval {maxval} out of range");
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| anyhow!("PGM dimensions overflow"))?;
    let raw: Vec<u32> = match magic.as_str() {
        "P2" => {
            let text = std::str::from_utf8(&bytes[offset - 1..]).context("P2 body is not text")?;
            let vals = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or(""))
                .flat_map(str::split_ascii_whitespace)
                .take(n)
                .map(|t| t.parse::<u32>().with_context(|| format!("bad P2 sample '{t}'")))
                .collect::<Result<Vec<_>>>()?;
            ensure!(vals.len() == n, "P2 body has {} samples, expected {n}", vals.len());
            vals
        }
        "P5" => {
            let body = &bytes[offset..];
            if maxval > 255 {
                ensure!(body.len() >= 2 * n, "P5 body too short");
                body.chunks_exact(2)
                    .take(n)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
                    .collect()
            } else {
                ensure!(body.len() >= n, "P5 body too short");
                body[..n].iter().map(|&b| b as u32).collect()
            }
        }
        other => bail!("unsupported PGM magic '{other}' (expected P2 or P5)"),
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        bail!("sample {v} exceeds maxval {maxval}");
    }
    let data = raw.into_iter().map(|v| v as f64 / maxval as f64).collect();
    Ok(ImageGrid::from_vec(rows, cols, data)?)
}

pub fn encode_png(img: &ImageGrid, opts: WriteOptions) -> Result<Vec<u8>> {
    let maxval = opts.maxval();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.cols() as u32, img.rows() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(if opts.bits == 16 {
            png::BitDepth::Sixteen
        } else {
            png::BitDepth::Eight
        });
        let mut writer = enc.write_header()?;
        let data: Vec<u8> = if opts.bits == 16 {
            samples(img, maxval).flat_map(|v| (v as u16).to_be_bytes()).collect()
        } else {
            samples(img, maxval).map(|v| v as u8).collect()
        };
        writer.write_image_data(&data)?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageGrid> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| anyhow!("PNG too large"))?];
    let info = reader.next_frame(&mut buf)?;
    ensure!(
        info.color_type == png::ColorType::Grayscale,
        "only grayscale PNG is supported, got {:?}",
        info.color_type
    );
    let (rows, cols) = (info.height as usize, info.width as usize);
    let buf = &buf[..info.buffer_size()];
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf.iter().map(|&b| b as f64 / 255.0).collect(),
        other => bail!("unexpected PNG bit depth {other:?} after expansion"),
    };
    Ok(ImageGrid::from_vec(rows, cols, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> ImageGrid {
        ImageGrid::from_fn(5, 7, |i, j| (i * 7 + j) as f64 / 34.0)
    }

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(quantize(0.5 / 255.0, 255), 0);
        assert_eq!(quantize(1.5 / 255.0, 255), 2);
        assert_eq!(quantize(2.5 / 255.0, 255), 2);
        assert_eq!(quantize(-0.3, 255), 0);
        assert_eq!(quantize(1.7, 65535), 65535);
    }

    #[test]
    fn pgm_round_trips_within_half_step() {
        let img = ramp();
        for (bits, ascii) in [(8, false), (8, true), (16, false), (16, true)] {
            let opts = WriteOptions { bits, ascii };
            let back = decode_pgm(&encode_pgm(&img, opts)).unwrap();
            let step = 1.0 / opts.maxval() as f64;
            for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
                assert!((a - b).abs() <= 0.5 * step + 1e-15, "{bits} {ascii}");
            }
            // a second pass is exact
            let again = decode_pgm(&encode_pgm(&back, opts)).unwrap();
            assert_eq!(again, back);
        }
    }

    #[test]
    fn png_round_trips_within_half_step() {
        let img = ramp();
        for bits in [8, 16] {
            let opts = WriteOptions { bits, ascii: false };
            let back = decode_png(&encode_png(&img, opts).unwrap()).unwrap();
            let step = 1.0 / opts.maxval() as f64;
            for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
                assert!((a - b).abs() <= 0.5 * step + 1e-15);
            }
        }
    }

    #[test]
    fn header_comments_and_odd_maxval() {
        let bytes = b"P2\n# made by hand\n3 2 # width height\n10\n0 5 10\n10 5 0\n";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!((img.rows(), img.cols()), (2, 3));
        assert_eq!(img.get(0, 1), 0.5);
        assert_eq!(img.get(1, 0), 1.0);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(decode_pgm(b"P6\n2 2\n255\n").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00\x01").is_err());
        assert!(decode_pgm(b"P2\n2 1\n3\n1 4\n").is_err());
        assert!(decode_pgm(b"P2\n1 1\n").is_err());
        assert!(Format::from_path(Path::new("x.tif")).is_err());
    }
}
