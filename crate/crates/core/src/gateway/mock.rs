//! Deterministic stand-ins for the four image models.

use sha2::{Digest, Sha256};

use super::{BackendError, ImageModel};
use crate::image::{ImageBuffer, RasterMask, Rgb};

const BLACK: Rgb = [0, 0, 0];

/// Fill every pure-black pixel from its already-known 8-neighbours, one
/// frontier layer at a time. Each layer reads only pixels known before the
/// layer started, so the result does not depend on visiting order.
pub fn boundary_mean_fill(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = img.clone();
    let mut known: Vec<bool> = img.pixels().iter().map(|p| *p != BLACK).collect();
    let neighbours = |i: usize| {
        let (x, y) = ((i as i64) % w, (i as i64) / w);
        (-1..=1i64)
            .flat_map(move |dy| (-1..=1i64).map(move |dx| (dx, dy)))
            .filter(|&d| d != (0, 0))
            .map(move |(dx, dy)| (x + dx, y + dy))
            .filter(move |&(nx, ny)| nx >= 0 && ny >= 0 && nx < w && ny < h)
            .map(move |(nx, ny)| (ny * w + nx) as usize)
    };

    let mut frontier: Vec<usize> = (0..known.len())
        .filter(|&i| !known[i] && neighbours(i).any(|n| known[n]))
        .collect();
    let mut queued = vec![false; known.len()];
    while !frontier.is_empty() {
        let fills: Vec<(usize, Rgb)> = frontier
            .iter()
            .map(|&i| {
                let (mut sum, mut n) = ([0u32; 3], 0u32);
                for j in neighbours(i).filter(|&j| known[j]) {
                    let p = out.pixels()[j];
                    for c in 0..3 {
                        sum[c] += p[c] as u32;
                    }
                    n += 1;
                }
                let mean = |c: usize| ((sum[c] + n / 2) / n) as u8;
                (i, [mean(0), mean(1), mean(2)])
            })
            .collect();
        for &(i, c) in &fills {
            out.pixels_mut()[i] = c;
            known[i] = true;
        }
        let mut next = Vec::new();
        for &(i, _) in &fills {
            for j in neighbours(i) {
                if !known[j] && !queued[j] {
                    queued[j] = true;
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        frontier = next;
    }
    out
}

fn digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// Non-identity RGB permutations used by the attribute-edit mock.
pub const PERMUTATIONS: [[usize; 3]; 5] = [[1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];

pub fn permutation_for(instruction: &str) -> [usize; 3] {
    PERMUTATIONS[digest(instruction)[0] as usize % PERMUTATIONS.len()]
}

/// Per-channel XOR key of the global-transform mock; every byte is odd so
/// every channel value changes.
pub fn color_key_for(instruction: &str) -> Rgb {
    let d = digest(instruction);
    [d[0] | 1, d[1] | 1, d[2] | 1]
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockInpaint;

impl ImageModel for MockInpaint {
    fn run(&self, image: &ImageBuffer, _: Option<&RasterMask>, _: &str) -> Result<ImageBuffer, BackendError> {
        Ok(boundary_mean_fill(image))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockFusion;

impl ImageModel for MockFusion {
    fn run(&self, image: &ImageBuffer, _: Option<&RasterMask>, _: &str) -> Result<ImageBuffer, BackendError> {
        Ok(boundary_mean_fill(image))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockAttrEdit;

impl ImageModel for MockAttrEdit {
    fn run(&self, image: &ImageBuffer, _: Option<&RasterMask>, instruction: &str) -> Result<ImageBuffer, BackendError> {
        let p = permutation_for(instruction);
        let mut out = image.clone();
        for px in out.pixels_mut() {
            *px = [px[p[0]], px[p[1]], px[p[2]]];
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockGlobal;

impl ImageModel for MockGlobal {
    fn run(&self, image: &ImageBuffer, _: Option<&RasterMask>, instruction: &str) -> Result<ImageBuffer, BackendError> {
        let k = color_key_for(instruction);
        let mut out = image.clone();
        for px in out.pixels_mut() {
            *px = [px[0] ^ k[0], px[1] ^ k[1], px[2] ^ k[2]];
        }
        Ok(out)
    }
}
