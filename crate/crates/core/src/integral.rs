//! Integral images (inclusive-corner convention) and constant-time
//! rectangle sums.
//!
//! Entry `(x, y)` holds the sum of every pixel in the inclusive rectangle
//! `(0, 0)..=(x, y)`. No zero row or column is stored, so a `W x H` image
//! costs exactly `4 * W * H` bytes of 32-bit accumulators; reads that would
//! fall on the implicit zero border are skipped by branch instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::GrayImage;

/// Largest pixel count whose 8-bit sum is guaranteed to fit a `u32`.
pub const MAX_INTEGRAL_PIXELS: u64 = 1 << 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IntegralError {
    #[error("{width}x{height} image exceeds the 2^24-pixel accumulator guard")]
    TooLarge { width: u32, height: u32 },
    #[error("rect {rect:?} leaves the {width}x{height} raster")]
    OutOfBounds { rect: Rect, width: u32, height: u32 },
    #[error("squared integral plane was not built")]
    NoSquares,
}

/// Axis-aligned rectangle: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    #[inline]
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    #[inline]
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    /// True when the rect is non-empty and lies inside a `width x height` raster.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w >= 1
            && self.h >= 1
            && (self.x as u64 + self.w as u64) <= width as u64
            && (self.y as u64 + self.h as u64) <= height as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: u32,
    height: u32,
    sums: Vec<u32>,
    squares: Option<Vec<u64>>,
}

/// Builds the integral image of `img`, plus the squared-pixel plane when
/// `with_squares` is set.
pub fn build_integral(img: &GrayImage, with_squares: bool) -> Result<IntegralImage, IntegralError> {
    let (w, h) = (img.width(), img.height());
    if w as u64 * h as u64 > MAX_INTEGRAL_PIXELS {
        return Err(IntegralError::TooLarge {
            width: w,
            height: h,
        });
    }
    let (wu, hu) = (w as usize, h as usize);
    let px = img.pixels();
    let mut sums = vec![0u32; wu * hu];
    let mut squares = with_squares.then(|| vec![0u64; wu * hu]);
    for y in 0..hu {
        let mut row = 0u32;
        let mut row_sq = 0u64;
        for x in 0..wu {
            let p = px[y * wu + x] as u32;
            row += p;
            let above = if y > 0 { sums[(y - 1) * wu + x] } else { 0 };
            sums[y * wu + x] = row + above;
            if let Some(sq) = squares.as_mut() {
                row_sq += (p * p) as u64;
                let above = if y > 0 { sq[(y - 1) * wu + x] } else { 0 };
                sq[y * wu + x] = row_sq + above;
            }
        }
    }
    Ok(IntegralImage {
        width: w,
        height: h,
        sums,
        squares,
    })
}

impl IntegralImage {
    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn sums(&self) -> &[u32] {
        &self.sums
    }

    pub fn has_squares(&self) -> bool {
        self.squares.is_some()
    }

    /// Bytes held by the 32-bit sum plane.
    pub fn sum_plane_bytes(&self) -> usize {
        self.sums.len() * std::mem::size_of::<u32>()
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> u32 {
        self.sums[y as usize * self.width as usize + x as usize]
    }

    /// Σ pixels inside `r` from four corner reads.
    pub fn rect_sum(&self, r: Rect) -> Result<u32, IntegralError> {
        self.check(r)?;
        Ok(self.rect_sum_unchecked(r))
    }

    /// Σ pixel² inside `r`; requires the squared plane.
    pub fn rect_sum_sq(&self, r: Rect) -> Result<u64, IntegralError> {
        self.check(r)?;
        let sq = self.squares.as_ref().ok_or(IntegralError::NoSquares)?;
        Ok(corners(
            sq,
            self.width as usize,
            r,
            0u64,
            u64::wrapping_add,
            u64::wrapping_sub,
        ))
    }

    /// Rectangle sum without bounds checking; `r` must satisfy `r.fits(w, h)`.
    #[inline]
    pub fn rect_sum_unchecked(&self, r: Rect) -> u32 {
        debug_assert!(r.fits(self.width, self.height));
        corners(
            &self.sums,
            self.width as usize,
            r,
            0u32,
            u32::wrapping_add,
            u32::wrapping_sub,
        )
    }

    /// Intensity standard deviation over `r` (population form), or `None`
    /// when the squared plane is missing.
    pub fn std_dev(&self, r: Rect) -> Option<f64> {
        let sq = self.squares.as_ref()?;
        debug_assert!(r.fits(self.width, self.height));
        let n = r.area() as f64;
        let s = self.rect_sum_unchecked(r) as f64;
        let s2 = corners(
            sq,
            self.width as usize,
            r,
            0u64,
            u64::wrapping_add,
            u64::wrapping_sub,
        ) as f64;
        let var = (s2 - s * s / n) / n;
        Some(var.max(0.0).sqrt())
    }

    fn check(&self, r: Rect) -> Result<(), IntegralError> {
        if r.fits(self.width, self.height) {
            Ok(())
        } else {
            Err(IntegralError::OutOfBounds {
                rect: r,
                width: self.width,
                height: self.height,
            })
        }
    }
}

// II[D] - II[B] - II[C] + II[A] with the implicit zero border handled by branch.
#[inline(always)]
fn corners<T: Copy>(
    plane: &[T],
    stride: usize,
    r: Rect,
    zero: T,
    add: fn(T, T) -> T,
    sub: fn(T, T) -> T,
) -> T {
    let (x0, y0) = (r.x as usize, r.y as usize);
    let (x1, y1) = (x0 + r.w as usize - 1, y0 + r.h as usize - 1);
    let d = plane[y1 * stride + x1];
    let b = if y0 > 0 {
        plane[(y0 - 1) * stride + x1]
    } else {
        zero
    };
    let c = if x0 > 0 {
        plane[y1 * stride + x0 - 1]
    } else {
        zero
    };
    let a = if x0 > 0 && y0 > 0 {
        plane[(y0 - 1) * stride + x0 - 1]
    } else {
        zero
    };
    add(sub(sub(d, b), c), a)
}
