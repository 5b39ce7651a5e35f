//! Runtime arithmetic for the quantized divergence path.
//!
//! Everything in this file runs per step on the integer path, so it is
//! restricted to table lookups, comparisons, additions, multiplications
//! and one reciprocal per call. No transcendental function may appear
//! here; a structural test scans this source to enforce that.

use super::LogLut;

/// Piecewise-linear log lookup over `(0, 1]`. Inputs below the first grid
/// point `1/n` are clamped to it; the caller guarantees `x > 0`.
pub(super) fn lut_log_clamped(lut: &LogLut, x: f64) -> f64 {
    let n = lut.entries.len();
    // Grid point i sits at (i + 1) / n, so position = x * n - 1.
    let pos = x * n as f64 - 1.0;
    if pos <= 0.0 {
        return lut.entries[0];
    }
    let max_index = n - 1;
    if pos >= max_index as f64 {
        return lut.entries[max_index];
    }
    let i = pos as usize;
    let frac = pos - i as f64;
    lut.entries[i] + frac * (lut.entries[i + 1] - lut.entries[i])
}

/// Log lookup with power-of-two range reduction: doubles the argument
/// into `(0.5, 1]` (exact float scaling) and subtracts the accumulated
/// `ln 2` constants. Table segments over the top octave have uniformly
/// tiny interpolation error, so this serves the whole `(0, 1]` domain at
/// near-exact accuracy from the same table, still without a single
/// transcendental call.
pub(super) fn lut_log_reduced(lut: &LogLut, x: f64) -> f64 {
    let mut m = x;
    let mut shift = 0.0f64;
    while m <= 0.5 {
        m *= 2.0;
        shift += core::f64::consts::LN_2;
    }
    lut_log_clamped(lut, m) - shift
}

/// Jensen-Shannon divergence between two quantized posteriors using only
/// the lookup table: codes are dequantized, epsilon-smoothed, and summed
/// as `0.5 p log p + 0.5 q log q - m log m` with `m` the midpoint.
/// Identical codes under identical scales short-circuit to exactly zero.
pub(super) fn jsd_codes(
    p_codes: &[u8],
    p_scale: f64,
    q_codes: &[u8],
    q_scale: f64,
    lut: &LogLut,
    epsilon: f64,
) -> f64 {
    if p_scale == q_scale && p_codes == q_codes {
        return 0.0;
    }
    let k = p_codes.len() as f64;
    let inv_norm = 1.0 / (1.0 + k * epsilon);
    let mut acc = 0.0;
    for (&cp, &cq) in p_codes.iter().zip(q_codes) {
        let pi = (f64::from(cp) * p_scale + epsilon) * inv_norm;
        let qi = (f64::from(cq) * q_scale + epsilon) * inv_norm;
        let m = 0.5 * (pi + qi);
        acc += 0.5 * pi * lut_log_reduced(lut, pi) + 0.5 * qi * lut_log_reduced(lut, qi)
            - m * lut_log_reduced(lut, m);
    }
    // Interpolation error can leave a tiny negative residue.
    acc.max(0.0)
}

/// Exact integer second moments of a code pair: `(dot, norm_a, norm_b)`.
/// The i64 accumulator needs `2 * code_bits + log2(dim)` bits; 8-bit codes
/// leave room for any realistic projection width.
pub(super) fn moments_i8(a: &[i8], b: &[i8]) -> (i64, i64, i64) {
    let mut dot = 0i64;
    let mut na = 0i64;
    let mut nb = 0i64;
    for (&x, &y) in a.iter().zip(b) {
        let x = i64::from(x);
        let y = i64::from(y);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na, nb)
}

/// As [`moments_i8`] for 32-bit inputs; the accumulator bound
/// `2 * 31 + log2(dim) <= 63` is the caller's contract.
pub(super) fn moments_i32(a: &[i32], b: &[i32]) -> (i64, i64, i64) {
    let mut dot = 0i64;
    let mut na = 0i64;
    let mut nb = 0i64;
    for (&x, &y) in a.iter().zip(b) {
        let x = i64::from(x);
        let y = i64::from(y);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na, nb)
}
