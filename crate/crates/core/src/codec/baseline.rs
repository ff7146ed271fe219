//! Comparison baselines: symmetric uniform quantization and magnitude pruning.

use super::CodecError;

/// Symmetric uniform quantizer over `[−max|w|, max|w|]` with `2^bits` levels
/// (endpoints included), round-to-nearest. Returns the reconstruction.
pub fn quantize_uniform(weights: &[f64], bits: u32) -> Result<Vec<f64>, CodecError> {
    if !matches!(bits, 2 | 4 | 6 | 8) {
        return Err(CodecError::BadBits(bits));
    }
    let m = weights.iter().fold(0f64, |m, w| m.max(w.abs()));
    if m == 0.0 {
        return Ok(vec![0.0; weights.len()]);
    }
    let top = ((1u32 << bits) - 1) as f64;
    let step = 2.0 * m / top;
    Ok(weights
        .iter()
        .map(|&w| {
            let q = ((w + m) / step).round_ties_even().clamp(0.0, top);
            if q == top { m } else { -m + q * step }
        })
        .collect())
}

/// Zero the `⌊sparsity × n⌋` smallest-magnitude weights; equal magnitudes are
/// pruned in index order.
pub fn prune_magnitude(weights: &[f64], sparsity: f64) -> Result<Vec<f64>, CodecError> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(CodecError::BadSparsity(sparsity));
    }
    let k = (sparsity * weights.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[a].abs().total_cmp(&weights[b].abs()).then(a.cmp(&b)));
    let mut out = weights.to_vec();
    for &i in &order[..k] {
        out[i] = 0.0;
    }
    Ok(out)
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
