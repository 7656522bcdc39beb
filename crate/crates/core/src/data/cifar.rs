//! CIFAR-10 binary batches, converted to MNIST-shaped grayscale.

use super::{DataError, IMAGE_SIDE};
use crate::nncore::Tensor;

pub const CIFAR_SIDE: usize = 32;
/// One label byte followed by 32×32 red, green, then blue planes.
pub const RECORD_LEN: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

pub fn luminance(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
}

/// Bilinear resampling with pixel-center alignment.
pub fn resize_bilinear(src: &[f64], src_side: usize, dst_side: usize) -> Vec<f64> {
    let scale = src_side as f64 / dst_side as f64;
    let max = (src_side - 1) as f64;
    let mut out = Vec::with_capacity(dst_side * dst_side);
    for r in 0..dst_side {
        let sy = ((r as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
        let (y0, fy) = (sy.floor() as usize, sy.fract());
        let y1 = (y0 + 1).min(src_side - 1);
        for c in 0..dst_side {
            let sx = ((c as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let (x0, fx) = (sx.floor() as usize, sx.fract());
            let x1 = (x0 + 1).min(src_side - 1);
            let at = |y: usize, x: usize| src[y * src_side + x];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    out
}

/// Parses a whole batch file into `N × 784` grayscale images.
pub fn parse_cifar_batch(bytes: &[u8]) -> Result<Tensor, DataError> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(DataError::Format {
            offset: bytes.len() - bytes.len() % RECORD_LEN,
            reason: format!("CIFAR batch length {} is not a multiple of {RECORD_LEN}", bytes.len()),
        });
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let n = bytes.len() / RECORD_LEN;
    let mut data = Vec::with_capacity(n * IMAGE_SIDE * IMAGE_SIDE);
    let mut gray = vec![0.0; plane];
    for rec in bytes.chunks_exact(RECORD_LEN) {
        let px = &rec[1..];
        for (i, g) in gray.iter_mut().enumerate() {
            *g = luminance(px[i], px[plane + i], px[2 * plane + i]);
        }
        data.extend(resize_bilinear(&gray, CIFAR_SIDE, IMAGE_SIDE));
    }
    Ok(Tensor::matrix(n, IMAGE_SIDE * IMAGE_SIDE, data)?)
}
