use crate::error::{Error, Result};

/// Source sample position and blend weight for one output coordinate.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|x| {
            let s = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                t: s - lo as f64,
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // clamped so that rounding never leaves [min(a,b), max(a,b)]
    (a + (b - a) * t).clamp(a.min(b), a.max(b))
}

/// Bilinear resampling with half-pixel centers (edge samples clamp).
///
/// `values` is `height × width` row-major; the result is `target_height × target_width`.
pub fn upsample_bilinear(
    values: &[f64],
    height: usize,
    width: usize,
    target_width: usize,
    target_height: usize,
) -> Result<Vec<f64>> {
    if target_width == 0 || target_height == 0 {
        return Err(Error::param(
            "target size",
            format!("must be positive, got {target_width}x{target_height}"),
        ));
    }
    if height == 0 || width == 0 || values.len() != height * width {
        return Err(Error::param(
            "grid",
            format!("{} values for a {height}x{width} grid", values.len()),
        ));
    }
    let xs = taps(width, target_width);
    let ys = taps(height, target_height);
    let mut out = Vec::with_capacity(target_width * target_height);
    for ty in &ys {
        let top = &values[ty.lo * width..(ty.lo + 1) * width];
        let bottom = &values[ty.hi * width..(ty.hi + 1) * width];
        for tx in &xs {
            let a = lerp(top[tx.lo], top[tx.hi], tx.t);
            let b = lerp(bottom[tx.lo], bottom[tx.hi], tx.t);
            out.push(lerp(a, b, ty.t));
        }
    }
    Ok(out)
}
