//! Area-averaging resampling.
//!
//! Output cell `i` along an axis covers `[i·n/m, (i+1)·n/m)` of the `n` source
//! pixels; its value is the overlap-weighted mean of the pixels it covers. The
//! weights of every source pixel sum to `m/n`, so the mean intensity of the
//! covered region is preserved exactly (up to rounding).

/// Per-output-cell `(source index, weight)` lists for one axis. Weights of a
/// cell sum to one.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * ratio;
            let hi = (i + 1) as f64 * ratio;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut cell = Vec::with_capacity(last - first);
            for s in first..last {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    cell.push((s, overlap / ratio));
                }
            }
            cell
        })
        .collect()
}

/// Resamples a row-major `src_h × src_w` grid to `dst_h × dst_w`.
pub fn area_resample(src: &[f64], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), src_h * src_w);
    if src_h == dst_h && src_w == dst_w {
        return src.to_vec();
    }
    let rows = axis_weights(src_h, dst_h);
    let cols = axis_weights(src_w, dst_w);
    // columns first, then rows
    let mut tmp = vec![0.0; src_h * dst_w];
    for r in 0..src_h {
        let row = &src[r * src_w..(r + 1) * src_w];
        for (c, cell) in cols.iter().enumerate() {
            tmp[r * dst_w + c] = cell.iter().map(|(s, w)| row[*s] * w).sum();
        }
    }
    let mut out = vec![0.0; dst_h * dst_w];
    for (r, cell) in rows.iter().enumerate() {
        for c in 0..dst_w {
            out[r * dst_w + c] = cell.iter().map(|(s, w)| tmp[s * dst_w + c] * w).sum();
        }
    }
    out
}
