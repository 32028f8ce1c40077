use crate::error::{Error, Result};

use super::GaitWindow;

/// Linear interpolation of every channel at `target_len` uniformly spaced
/// positions over `[0, time_steps - 1]`. Endpoints are preserved exactly.
pub fn resample_to_length(window: &GaitWindow, target_len: usize) -> Result<GaitWindow> {
    let n = window.time_steps();
    if n < 2 || target_len < 2 {
        return Err(Error::Data(format!(
            "resampling needs at least 2 samples on both sides, got {n} -> {target_len}"
        )));
    }
    if n == target_len {
        return Ok(window.clone());
    }
    let c = window.num_channels();
    let mut out = Vec::with_capacity(target_len * c);
    for j in 0..target_len {
        let pos = (j * (n - 1)) as f64 / (target_len - 1) as f64;
        let lo = (pos.floor() as usize).min(n - 1);
        let frac = pos - lo as f64;
        for ch in 0..c {
            let a = window.get(lo, ch);
            let v = if frac == 0.0 {
                a
            } else {
                a + frac * (window.get(lo + 1, ch) - a)
            };
            out.push(v);
        }
    }
    GaitWindow::new(out, target_len, c)
}
