//! 8-bit grayscale rasters, binary PGM I/O, sensor-noise emulation and
//! bilinear downscaling for the detection pyramid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    EmptyImage { width: u32, height: u32 },
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("not a binary PGM file (magic {0:?})")]
    BadMagic(String),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PGM maxval {0} (only 255 is accepted)")]
    MaxvalUnsupported(u32),
    #[error("truncated PGM raster: expected {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },
    #[error("cannot upscale {from_w}x{from_h} to {to_w}x{to_h}")]
    Upscale {
        from_w: u32,
        from_h: u32,
        to_w: u32,
        to_h: u32,
    },
    #[error("crop {w}x{h}+{x}+{y} does not fit a {width}x{height} image")]
    CropOutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
}

/// Row-major 8-bit intensity raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> u8,
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<GrayImage, ImageError> {
        if w == 0
            || h == 0
            || x.checked_add(w).is_none_or(|r| r > self.width)
            || y.checked_add(h).is_none_or(|b| b > self.height)
        {
            return Err(ImageError::CropOutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let mut pixels = Vec::with_capacity(w as usize * h as usize);
        for row in y..y + h {
            let start = row as usize * self.width as usize + x as usize;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize]);
        }
        GrayImage::new(w, h, pixels)
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ImageError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::MalformedHeader(
            "unexpected end of header".into(),
        ));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, ImageError> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| {
            ImageError::MalformedHeader(format!(
                "{what} is not a number: {:?}",
                String::from_utf8_lossy(tok)
            ))
        })
}

/// Decodes a binary (P5) graymap with maxval 255.
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(ImageError::BadMagic(magic));
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(ImageError::MaxvalUnsupported(maxval));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyImage { width, height });
    }
    // exactly one whitespace byte separates maxval from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::MalformedHeader(
            "missing separator after maxval".into(),
        ));
    }
    pos += 1;
    let expected = width as usize * height as usize;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            got: raster.len(),
        });
    }
    GrayImage::new(width, height, raster[..expected].to_vec())
}

pub fn save_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` to every pixel,
/// rounding and clamping back to 8 bits. Deterministic for a given seed.
pub fn sensor_degrade(img: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = img
        .pixels
        .iter()
        .map(|&p| {
            let v = p as f64 + normal.sample(&mut rng);
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

// Source coordinate of output sample `i` under half-pixel-centred mapping,
// split into the two neighbouring taps and the weight of the second.
fn taps(i: u32, scale: f64, src_len: u32) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len as usize - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear downscale with half-pixel-centred sampling.
pub fn downscale(img: &GrayImage, new_w: u32, new_h: u32) -> Result<GrayImage, ImageError> {
    if new_w == 0 || new_h == 0 {
        return Err(ImageError::EmptyImage {
            width: new_w,
            height: new_h,
        });
    }
    if new_w > img.width || new_h > img.height {
        return Err(ImageError::Upscale {
            from_w: img.width,
            from_h: img.height,
            to_w: new_w,
            to_h: new_h,
        });
    }
    if new_w == img.width && new_h == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / new_w as f64;
    let sy = img.height as f64 / new_h as f64;
    let xs: Vec<_> = (0..new_w).map(|x| taps(x, sx, img.width)).collect();
    let w = img.width as usize;
    let mut pixels = Vec::with_capacity(new_w as usize * new_h as usize);
    for y in 0..new_h {
        let (y0, y1, fy) = taps(y, sy, img.height);
        let r0 = &img.pixels[y0 * w..(y0 + 1) * w];
        let r1 = &img.pixels[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] as f64 * (1.0 - fx) + r0[x1] as f64 * fx;
            let bot = r1[x0] as f64 * (1.0 - fx) + r1[x1] as f64 * fx;
            let v = top * (1.0 - fy) + bot * fy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(new_w, new_h, pixels)
}
