//! Axis-aligned affine maps between boxes and nearest-neighbor warping of
//! masks and images.

use crate::image::{Dims, ImageBuffer, RasterMask};
use crate::layout::BoundingBox;
use crate::scalar::Scalar;

/// `x' = sx * x + tx`, `y' = sy * y + ty`. Scales are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform<S> {
    pub sx: S,
    pub sy: S,
    pub tx: S,
    pub ty: S,
}

impl<S: Scalar> AffineTransform<S> {
    pub fn identity() -> Self {
        AffineTransform {
            sx: S::one(),
            sy: S::one(),
            tx: S::zero(),
            ty: S::zero(),
        }
    }

    pub fn translation(tx: S, ty: S) -> Self {
        AffineTransform {
            sx: S::one(),
            sy: S::one(),
            tx,
            ty,
        }
    }

    pub fn apply(&self, x: S, y: S) -> (S, S) {
        (self.sx * x + self.tx, self.sy * y + self.ty)
    }

    pub fn invert(&self, x: S, y: S) -> (S, S) {
        ((x - self.tx) / self.sx, (y - self.ty) / self.sy)
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Corners of `b` mapped through the transform, as `(x0, y0, x1, y1)`.
    pub fn map_box_corners(&self, b: &BoundingBox) -> (S, S, S, S) {
        let (x0, y0) = self.apply(S::from_i64(b.x0 as i64), S::from_i64(b.y0 as i64));
        let (x1, y1) = self.apply(S::from_i64(b.x1 as i64), S::from_i64(b.y1 as i64));
        (x0, y0, x1, y1)
    }
}

/// Transform sending `src` onto `dst` corner for corner.
pub fn derive_affine<S: Scalar>(src: &BoundingBox, dst: &BoundingBox) -> AffineTransform<S> {
    let i = |v: i32| S::from_i64(v as i64);
    let sx = i(dst.width()) / i(src.width());
    let sy = i(dst.height()) / i(src.height());
    AffineTransform {
        sx,
        sy,
        tx: i(dst.x0) - sx * i(src.x0),
        ty: i(dst.y0) - sy * i(src.y0),
    }
}

/// Source pixel for destination pixel `(x, y)`, sampling at pixel centers.
fn source_pixel<S: Scalar>(t: &AffineTransform<S>, x: u32, y: u32) -> (i64, i64) {
    let half = S::one() / (S::one() + S::one());
    let (u, v) = t.invert(S::from_i64(x as i64) + half, S::from_i64(y as i64) + half);
    (u.floor_i64(), v.floor_i64())
}

/// Inverse-mapped nearest-neighbor warp. A destination pixel is set iff its
/// preimage lands on a set source pixel; preimages off the canvas are unset.
pub fn warp_mask<S: Scalar>(m: &RasterMask, t: &AffineTransform<S>) -> RasterMask {
    if t.is_identity() {
        return m.clone();
    }
    RasterMask::from_fn(m.dims(), |x, y| {
        let (u, v) = source_pixel(t, x, y);
        m.get_signed(u, v)
    })
}

/// Result of relocating a masked region.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedImage {
    /// Valid exactly where the warped mask is set.
    pub image: ImageBuffer,
    /// The region was non-empty but landed entirely off the canvas.
    pub off_canvas: bool,
}

/// Move the pixels of `img` under `m` through `t`; everything else is unset.
pub fn warp_image<S: Scalar>(img: &ImageBuffer, m: &RasterMask, t: &AffineTransform<S>) -> WarpedImage {
    let dims: Dims = img.dims();
    let mut out = ImageBuffer::empty(dims);
    let mut any = false;
    for y in 0..dims.height {
        for x in 0..dims.width {
            let (u, v) = source_pixel(t, x, y);
            if m.get_signed(u, v) && dims.contains(u, v) {
                out.set(x, y, img.get(u as u32, v as u32));
                any = true;
            }
        }
    }
    WarpedImage {
        image: out,
        off_canvas: !any && !m.is_empty(),
    }
}
