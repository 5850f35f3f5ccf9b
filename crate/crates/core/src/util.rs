//! Small vector helpers used throughout the crate.

/// Euclidean distance between equal-length slices.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exact bit-pattern key for f64 vectors. Finite scenarios hold integer-valued
/// coordinates, so bit equality is set equality there.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExactPoint(Vec<u64>);

impl ExactPoint {
    pub fn new(v: &[f64]) -> Self {
        ExactPoint(v.iter().map(|x| x.to_bits()).collect())
    }

    pub fn from_pair(x: &[f64], u: &[f64]) -> Self {
        let mut bits: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        bits.extend(u.iter().map(|v| v.to_bits()));
        ExactPoint(bits)
    }

    pub fn bits(&self) -> &[u64] {
        &self.0
    }
}

/// Lexicographic comparison of flattened input sequences, used for
/// deterministic tie-breaking in the exact solver.
pub fn lex_less(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    let fa = a.iter().flatten();
    let fb = b.iter().flatten();
    for (x, y) in fa.zip(fb) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    a.len() < b.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_point_distinguishes_values() {
        assert_eq!(ExactPoint::new(&[2.0, 1.0]), ExactPoint::new(&[2.0, 1.0]));
        assert_ne!(ExactPoint::new(&[2.0, 1.0]), ExactPoint::new(&[2.0, 0.0]));
    }

    #[test]
    fn lex_order_on_sequences() {
        let a = vec![vec![0.0], vec![1.0]];
        let b = vec![vec![0.0], vec![2.0]];
        assert!(lex_less(&a, &b));
        assert!(!lex_less(&b, &a));
        assert!(!lex_less(&a, &a));
    }
}
