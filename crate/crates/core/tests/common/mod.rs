#![allow(dead_code)]

use editprog_core::config::SessionConfig;
use editprog_core::image::{Dims, ImageBuffer, RasterMask};
use editprog_core::layout::BoundingBox;

/// Per-pixel morphology straight from the definition: a pixel survives
/// dilation if any, erosion if all, of its k x k window is set on-canvas.
pub fn brute_morph(m: &RasterMask, k: u32, need_all: bool) -> RasterMask {
    let r = (k / 2) as i64;
    RasterMask::from_fn(m.dims(), |x, y| {
        let mut all = true;
        let mut any = false;
        for dy in -r..=r {
            for dx in -r..=r {
                let (u, v) = (x as i64 + dx, y as i64 + dy);
                let on = m.dims().contains(u, v) && m.get(u as u32, v as u32);
                all &= on;
                any |= on;
            }
        }
        if need_all {
            all
        } else {
            any
        }
    })
}

pub fn brute_annulus(m: &RasterMask, k1: u32, k2: u32) -> RasterMask {
    let outer = brute_morph(m, k1, false);
    let inner = brute_morph(m, k2, true);
    RasterMask::from_fn(m.dims(), |x, y| outer.get(x, y) && !inner.get(x, y))
}

pub fn rect_mask(dims: Dims, b: [i32; 4]) -> RasterMask {
    RasterMask::from_fn(dims, |x, y| {
        let (x, y) = (x as i32, y as i32);
        x >= b[0] && x < b[2] && y >= b[1] && y < b[3]
    })
}

pub fn bb(b: [i32; 4]) -> BoundingBox {
    BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()
}

/// Pixels at which two equally sized images differ.
pub fn diff_mask(a: &ImageBuffer, b: &ImageBuffer) -> RasterMask {
    assert_eq!(a.dims(), b.dims());
    RasterMask::from_fn(a.dims(), |x, y| a.get(x, y) != b.get(x, y))
}

pub fn config_in(dir: &std::path::Path) -> SessionConfig {
    SessionConfig {
        outdir: dir.to_path_buf(),
        ..SessionConfig::default()
    }
}

/// Trace text with the wall-clock fields removed.
pub fn strip_timings(jsonl: &str) -> String {
    jsonl
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if let Some(o) = v.as_object_mut() {
                o.remove("timings_ms");
            }
            v.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}
