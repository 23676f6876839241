//! Small numerical kernels shared by the rest of the crate.

/// Logistic function, evaluated without overflow for large |t|.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)`, stable at both tails.
#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Binary cross-entropy of a logit `t` against label `y`:
/// `-y ln σ(t) - (1-y) ln(1-σ(t)) = softplus(t) - y t`.
#[inline]
pub fn bce_from_logit(t: f64, y: f64) -> f64 {
    if y == 1.0 {
        softplus(-t)
    } else if y == 0.0 {
        softplus(t)
    } else {
        softplus(t) - y * t
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Compensated (Kahan-Babuska-Neumaier style) accumulator.
///
/// The result does not depend on whether values arrive one at a time or
/// through [`CompensatedSum::merge`], up to the compensation term.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.sum, x);
        self.sum = s;
        self.comp += e;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.comp += other.comp;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

const LANES: usize = 4;

/// Dot product with compensated summation over a few interleaved accumulators
/// merged in a fixed order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [CompensatedSum::new(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xs, ys) in ca.zip(cb) {
        for k in 0..LANES {
            let p = xs[k] * ys[k];
            acc[k].add(p);
        }
    }
    for (k, (&x, &y)) in ra.iter().zip(rb).enumerate() {
        let p = x * y;
        acc[k].add(p);
    }
    merge_lanes(&acc)
}

fn merge_lanes(acc: &[CompensatedSum; LANES]) -> f64 {
    let mut total = acc[0];
    for a in &acc[1..] {
        total.merge(a);
    }
    total.value()
}

/// The three compensated inner products `(a·a, b·b, a·b)`.
pub fn gram2(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    (dot(a, a), dot(b, b), dot(a, b))
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Plain (uncompensated) dot product for inner loops over short vectors.
#[inline]
pub fn dot_short(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// FNV-1a over the bit patterns of a float slice. Used to tag derived
/// artifacts with the model they were computed from.
pub fn fingerprint(values: impl IntoIterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Fixed-width float formatting (17 significant digits) for CSV payloads.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_tails_do_not_overflow() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn bce_matches_naive_formula_in_the_safe_range() {
        for &t in &[-5.0, -0.3, 0.0, 1.0, 4.2] {
            for &y in &[0.0, 1.0] {
                let p = 1.0 / (1.0 + (-t as f64).exp());
                let naive = -y * p.ln() - (1.0 - y) * (1.0 - p).ln();
                assert!((bce_from_logit(t, y) - naive).abs() < 1e-12);
            }
        }
        // saturated correct prediction
        assert!(bce_from_logit(1000.0, 1.0) < 1e-300);
        assert!((bce_from_logit(-1000.0, 1.0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(xs), 2.0);
        let naive: f64 = xs.iter().sum();
        assert_ne!(naive, 2.0);
    }

    #[test]
    fn gram2_agrees_with_separate_dots() {
        let a = [0.3, -1.2, 5.5, 1e-3];
        let b = [2.0, 0.7, -0.1, 9.0];
        let (aa, bb, ab) = gram2(&a, &b);
        assert_eq!(aa, dot(&a, &a));
        assert_eq!(bb, dot(&b, &b));
        assert_eq!(ab, dot(&a, &b));
    }

    #[test]
    fn fmt_round_trips() {
        for &x in &[0.1, -3.0e-300, 1.0 / 3.0, 12345.678901234567] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
