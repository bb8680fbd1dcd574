//! Binary morphology, annular ring construction, blackout and pre-compositing.
//!
//! Structuring elements are k x k squares with k odd. Pixels outside the
//! canvas count as unset for both dilation and erosion, so erosion eats the
//! canvas border.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{check_dims, Dims, ImageBuffer, ImageError, RasterMask};
use crate::layout::BoundingBox;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("structuring element size must be odd and >= 1, got {0}")]
    EvenKernel(u32),
    #[error(transparent)]
    Dimension(#[from] ImageError),
    #[error("foreground has no pixel at ({0}, {1}) although the mask is set there")]
    InvalidForeground(u32, u32),
}

/// Dilation and erosion element sizes for the annular mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphologyConfig {
    pub k1: u32,
    pub k2: u32,
}

impl Default for MorphologyConfig {
    fn default() -> Self {
        MorphologyConfig { k1: 3, k2: 3 }
    }
}

impl MorphologyConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        check_kernel(self.k1)?;
        check_kernel(self.k2)?;
        Ok(())
    }
}

fn check_kernel(k: u32) -> Result<u32, MaskError> {
    if k == 0 || k.is_multiple_of(2) {
        Err(MaskError::EvenKernel(k))
    } else {
        Ok(k / 2)
    }
}

/// One separable pass along rows (`horizontal`) or columns, using running
/// counts of set pixels inside the window. `need_all` selects erosion.
fn line_pass(src: &[bool], dims: Dims, radius: usize, horizontal: bool, need_all: bool) -> Vec<bool> {
    let (w, h) = (dims.width as usize, dims.height as usize);
    let (lines, len) = if horizontal { (h, w) } else { (w, h) };
    let at = |line: usize, i: usize| {
        if horizontal {
            line * w + i
        } else {
            i * w + line
        }
    };
    let mut out = vec![false; src.len()];
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for i in 0..len {
            prefix[i + 1] = prefix[i] + src[at(line, i)] as usize;
        }
        for i in 0..len {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(len);
            let count = prefix[hi] - prefix[lo];
            out[at(line, i)] = if need_all {
                // Window clipped by the border contains unset off-canvas pixels.
                hi - lo == 2 * radius + 1 && count == hi - lo
            } else {
                count > 0
            };
        }
    }
    out
}

fn morph(m: &RasterMask, k: u32, need_all: bool) -> Result<RasterMask, MaskError> {
    let r = check_kernel(k)? as usize;
    if r == 0 {
        return Ok(m.clone());
    }
    let dims = m.dims();
    let rows = line_pass(m.bits(), dims, r, true, need_all);
    let both = line_pass(&rows, dims, r, false, need_all);
    Ok(RasterMask::from_bits(dims, both).expect("same dims"))
}

/// Binary dilation with a k x k square.
pub fn dilate(m: &RasterMask, k: u32) -> Result<RasterMask, MaskError> {
    morph(m, k, false)
}

/// Binary erosion with a k x k square.
pub fn erode(m: &RasterMask, k: u32) -> Result<RasterMask, MaskError> {
    morph(m, k, true)
}

/// Ring around the region boundary: `dilate(r, k1) \ erode(r, k2)`.
pub fn annular_mask(r_prime: &RasterMask, cfg: MorphologyConfig) -> Result<RasterMask, MaskError> {
    let outer = dilate(r_prime, cfg.k1)?;
    let inner = erode(r_prime, cfg.k2)?;
    Ok(outer.difference(&inner)?)
}

/// Zero every pixel under the mask; all others are copied unchanged.
pub fn blackout(img: &ImageBuffer, m: &RasterMask) -> Result<ImageBuffer, MaskError> {
    check_dims(img.dims(), m.dims())?;
    let mut out = img.clone();
    for (px, &on) in out.pixels_mut().iter_mut().zip(m.bits()) {
        if on {
            *px = [0, 0, 0];
        }
    }
    Ok(out)
}

/// Set exactly the half-open box `[x0, x1) x [y0, y1)`, clipped to the canvas.
pub fn rasterize_box(b: &BoundingBox, canvas: Dims) -> RasterMask {
    RasterMask::from_fn(canvas, |x, y| {
        let (x, y) = (x as i32, y as i32);
        x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1
    })
}

/// Paste foreground onto background wherever `r_prime` is set. No blending.
pub fn pre_composite(
    background: &ImageBuffer,
    foreground: &ImageBuffer,
    r_prime: &RasterMask,
) -> Result<ImageBuffer, MaskError> {
    check_dims(background.dims(), foreground.dims())?;
    check_dims(background.dims(), r_prime.dims())?;
    let mut out = background.clone();
    let w = background.width() as usize;
    for (i, &on) in r_prime.bits().iter().enumerate() {
        if !on {
            continue;
        }
        if !foreground.is_valid_at(i) {
            return Err(MaskError::InvalidForeground((i % w) as u32, (i / w) as u32));
        }
        out.pixels_mut()[i] = foreground.pixels()[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(m: &RasterMask, k: u32, need_all: bool) -> RasterMask {
        let r = (k / 2) as i64;
        RasterMask::from_fn(m.dims(), |x, y| {
            let mut hits = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    hits += m.get_signed(x as i64 + dx, y as i64 + dy) as i64;
                }
            }
            if need_all {
                hits == (2 * r + 1) * (2 * r + 1)
            } else {
                hits > 0
            }
        })
    }

    #[test]
    fn even_kernel_rejected() {
        let m = RasterMask::new(Dims::new(4, 4));
        assert!(matches!(dilate(&m, 2), Err(MaskError::EvenKernel(2))));
        assert!(matches!(erode(&m, 0), Err(MaskError::EvenKernel(0))));
        assert!(MorphologyConfig { k1: 3, k2: 4 }.validate().is_err());
        assert!(MorphologyConfig::default().validate().is_ok());
    }

    #[test]
    fn single_pixel_dilates_to_block() {
        let mut m = RasterMask::new(Dims::new(7, 7));
        m.set(3, 3, true);
        let d = dilate(&m, 3).unwrap();
        let expected = RasterMask::from_fn(m.dims(), |x, y| (2..=4).contains(&x) && (2..=4).contains(&y));
        assert_eq!(d, expected);
        assert!(dilate(&RasterMask::new(Dims::new(7, 7)), 3).unwrap().is_empty());
        assert!(erode(&m, 3).unwrap().is_empty());
    }

    #[test]
    fn full_canvas_erodes_to_frame_minus() {
        let dims = Dims::new(9, 6);
        let e = erode(&RasterMask::full(dims), 3).unwrap();
        assert_eq!(e, brute(&RasterMask::full(dims), 3, true));
        assert_eq!(e.population(), 7 * 4);
        assert!(!e.get(0, 0) && e.get(1, 1) && !e.get(8, 5));
    }

    #[test]
    fn k1_is_identity() {
        let m = RasterMask::from_fn(Dims::new(6, 5), |x, y| (x * y) % 3 == 1);
        assert_eq!(dilate(&m, 1).unwrap(), m);
        assert_eq!(erode(&m, 1).unwrap(), m);
        assert!(annular_mask(&m, MorphologyConfig { k1: 1, k2: 1 }).unwrap().is_empty());
    }

    #[test]
    fn ring_around_square() {
        let m = RasterMask::from_fn(Dims::new(11, 11), |x, y| (3..8).contains(&x) && (3..8).contains(&y));
        let ring = annular_mask(&m, MorphologyConfig::default()).unwrap();
        assert_eq!(ring.population(), 40);
        let oracle = brute(&m, 3, false).difference(&brute(&m, 3, true)).unwrap();
        assert_eq!(ring, oracle);
        assert!(
            annular_mask(&RasterMask::new(Dims::new(5, 5)), MorphologyConfig::default())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn blackout_cases() {
        let dims = Dims::new(4, 4);
        let img = ImageBuffer::from_fn(dims, |x, y| [x as u8 + 1, y as u8 + 1, 100]);
        assert_eq!(blackout(&img, &RasterMask::new(dims)).unwrap(), img);
        assert!(blackout(&img, &RasterMask::full(dims))
            .unwrap()
            .pixels()
            .iter()
            .all(|p| *p == [0, 0, 0]));
        let checker = RasterMask::from_fn(dims, |x, y| (x + y) % 2 == 0);
        let out = blackout(&img, &checker).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = if (x + y) % 2 == 0 {
                    [0, 0, 0]
                } else {
                    [x as u8 + 1, y as u8 + 1, 100]
                };
                assert_eq!(out.get(x, y), want);
            }
        }
        assert!(matches!(
            blackout(&img, &RasterMask::new(Dims::new(3, 4))),
            Err(MaskError::Dimension(_))
        ));
    }

    #[test]
    fn rasterize_cases() {
        let canvas = Dims::default();
        assert_eq!(
            rasterize_box(&BoundingBox::new(0, 0, 512, 512).unwrap(), canvas).population(),
            512 * 512
        );
        assert_eq!(
            rasterize_box(&BoundingBox::new(21, 281, 232, 440).unwrap(), canvas).population(),
            33549
        );
        let one = rasterize_box(&BoundingBox::new(5, 5, 6, 6).unwrap(), canvas);
        assert_eq!(one.population(), 1);
        assert!(one.get(5, 5));
    }

    #[test]
    fn pre_composite_cases() {
        let dims = Dims::new(6, 2);
        let a = ImageBuffer::filled(dims, [10, 20, 30]);
        let b = ImageBuffer::filled(dims, [200, 100, 50]);
        assert_eq!(pre_composite(&a, &b, &RasterMask::new(dims)).unwrap(), a);
        assert_eq!(pre_composite(&a, &b, &RasterMask::full(dims)).unwrap(), b);
        let half = RasterMask::from_fn(dims, |x, _| x < 3);
        let out = pre_composite(&b, &a, &half).unwrap();
        for y in 0..2 {
            for x in 0..6 {
                assert_eq!(out.get(x, y), if x < 3 { [10, 20, 30] } else { [200, 100, 50] });
            }
        }
        let hollow = ImageBuffer::empty(dims);
        assert!(matches!(
            pre_composite(&a, &hollow, &half),
            Err(MaskError::InvalidForeground(0, 0))
        ));
    }
}
