use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bilinear upsampling of a 2-D map with aligned corners.
///
/// Output pixel `i` samples source coordinate `i * (src - 1) / (dst - 1)`, so
/// the four corner values are reproduced exactly.
pub fn upsample_bilinear(map: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let s = map.shape();
    if s.len() != 2 || s[0] == 0 || s[1] == 0 {
        return Err(Error::Shape {
            layer: "upsample".into(),
            expected: vec![1, 1],
            actual: s.to_vec(),
        });
    }
    let (h, w) = (s[0], s[1]);
    if target_h < h || target_w < w {
        return Err(Error::Config(format!(
            "upsample target {target_h}x{target_w} smaller than source {h}x{w}"
        )));
    }
    if (target_h, target_w) == (h, w) {
        return Ok(map.clone());
    }
    let coords = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..dst)
            .map(|i| {
                if dst == 1 || src == 1 {
                    return (0, 0, 0.0);
                }
                let num = i * (src - 1);
                let den = dst - 1;
                let lo = num / den;
                let frac = (num % den) as f64 / den as f64;
                (lo, (lo + 1).min(src - 1), frac)
            })
            .collect()
    };
    let ys = coords(target_h, h);
    let xs = coords(target_w, w);
    let mut out = Vec::with_capacity(target_h * target_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = lerp(map.at2(y0, x0), map.at2(y0, x1), fx);
            let bottom = lerp(map.at2(y1, x0), map.at2(y1, x1), fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    Tensor::new(vec![target_h, target_w], out)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}
