//! Correctly rounded summation.
//!
//! The rounded result of an exact sum is unique, so it does not depend on the
//! order in which terms arrive. Reductions over graph vertices use this to keep
//! vertex permutations bit-exact.

/// Correctly rounded sum of finite terms (Shewchuk partials with a
/// half-even correction on the final step).
pub fn exact_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::with_capacity(8);
    let mut naive = 0.0;
    for term in terms {
        naive += term;
        let mut x = term;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if !naive.is_finite() {
        return naive;
    }

    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    // Round half to even when the discarded tail sits exactly on a tie.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

/// Correctly rounded sum of the individually rounded products `a[i] * b[i]`.
pub fn exact_dot(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    exact_sum(a.into_iter().zip(b).map(|(x, y)| x * y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_terms() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
    }

    #[test]
    fn order_does_not_matter() {
        let xs = [0.1, 0.7, -3.3e-5, 12.25, 1e-17, -0.30000000000000004, 5.5];
        let forward = exact_sum(xs);
        let mut rev = xs;
        rev.reverse();
        assert_eq!(forward.to_bits(), exact_sum(rev).to_bits());
    }

    #[test]
    fn half_even_tie() {
        // 1 + 2^-53 is a tie between 1 and 1 + 2^-52; even mantissa wins.
        let tiny = f64::EPSILON / 2.0;
        assert_eq!(exact_sum([1.0, tiny]), 1.0);
        // A further sliver breaks the tie upwards.
        assert_eq!(exact_sum([1.0, tiny, tiny * 1e-10]), 1.0 + f64::EPSILON);
    }
}
