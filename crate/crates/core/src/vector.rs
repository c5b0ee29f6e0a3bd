//! Small dense-vector helpers shared by every scoring branch.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity clamped to `[-1, 1]`. Any comparison involving a
/// zero-norm vector is defined as 0.
///
/// The normalizer is `sqrt(|a|^2 |b|^2)`, which makes `cosine(a, a)` exactly 1.
/// Vectors whose squared norm underflows or overflows are rescaled by their
/// largest component first.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let aa = dot(a, a);
    let bb = dot(b, b);
    if !(aa.is_normal() && bb.is_normal()) {
        let (ma, mb) = (max_abs(a), max_abs(b));
        if ma == 0.0 || mb == 0.0 || !(ma.is_finite() && mb.is_finite()) {
            return 0.0;
        }
        let unit = |v: &[f64], m: f64| v.iter().map(|x| x / m).collect::<Vec<_>>();
        return cosine(&unit(a, ma), &unit(b, mb));
    }
    let mut denom = (aa * bb).sqrt();
    if !(denom > 0.0 && denom.is_finite()) {
        denom = aa.sqrt() * bb.sqrt();
    }
    (dot(a, b) / denom).clamp(-1.0, 1.0)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `out += s * a`
pub fn axpy(out: &mut [f64], s: f64, a: &[f64]) {
    for (o, x) in out.iter_mut().zip(a) {
        *o += s * x;
    }
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Row-major matrix-vector product.
pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Returns `a` scaled to unit norm, or `a` unchanged when it is zero.
pub fn normalized(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    if n == 0.0 {
        a.to_vec()
    } else {
        scaled(a, 1.0 / n)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
