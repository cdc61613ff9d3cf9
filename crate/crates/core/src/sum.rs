//! Order-independent floating point reductions.
//!
//! Every reduction here returns a result that depends only on the multiset of
//! summands, never on the order they are visited in. Solver kernels use them
//! so that relabelling pixels (for instance transposing the image) yields
//! bit-identical iterates.

/// Sum of `values`, exact up to a single final rounding.
///
/// Inputs must be finite.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = ExactAccumulator::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Dot product of the elementwise products `a[i] * b[i]`, summed exactly.
pub fn exact_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = ExactAccumulator::new();
    for (x, y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}

/// Euclidean norm built on [`exact_dot`].
pub fn exact_norm(a: &[f64]) -> f64 {
    exact_dot(a, a).sqrt()
}

const BIN_BITS: u32 = 32;
// 2048 biased exponents / 32 per bin, plus headroom for carries
const BINS: usize = 72;

/// Fixed-point superaccumulator: every finite `f64` is an integer multiple
/// of 2^-1074, so summands are split by exponent into 32-bit-aligned
/// integer bins. Integer addition is associative, hence the state (and the
/// rounded result) does not depend on the order of `add` calls.
#[derive(Debug, Clone)]
pub struct ExactAccumulator {
    bins: [i128; BINS],
}

impl Default for ExactAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactAccumulator {
    pub fn new() -> Self {
        Self { bins: [0; BINS] }
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let bits = value.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as u32;
        let frac = bits & ((1u64 << 52) - 1);
        // value = mantissa * 2^(e - 1075), e >= 1
        let (mantissa, e) = if biased == 0 {
            (frac, 1)
        } else {
            (frac | (1u64 << 52), biased)
        };
        let shifted = (mantissa as i128) << (e % BIN_BITS);
        let bin = (e / BIN_BITS) as usize;
        if bits >> 63 == 0 {
            self.bins[bin] += shifted;
        } else {
            self.bins[bin] -= shifted;
        }
    }

    pub fn value(&self) -> f64 {
        let mut bins = self.bins;
        normalize(&mut bins);
        // the other bins are non-negative, so the top one carries the sign
        let negative = bins[BINS - 1] < 0;
        if negative {
            for (b, &orig) in bins.iter_mut().zip(&self.bins) {
                *b = -orig;
            }
            normalize(&mut bins);
        }
        // every bin now lies in [0, 2^32) and is exact as f64
        let mut tail = Shewchuk::default();
        for (k, &b) in bins.iter().enumerate().rev() {
            if b != 0 {
                tail.add(scale(b as f64, (k as i32) * BIN_BITS as i32 - 1075));
            }
        }
        let v = tail.value();
        if negative {
            -v
        } else {
            v
        }
    }
}

fn normalize(bins: &mut [i128; BINS]) {
    for k in 0..BINS - 1 {
        let carry = bins[k] >> BIN_BITS;
        bins[k] -= carry << BIN_BITS;
        bins[k + 1] += carry;
    }
}

/// `x * 2^e` without intermediate overflow; underflows quietly to zero.
fn scale(x: f64, e: i32) -> f64 {
    let pow2 = |e: i32| f64::from_bits(((e + 1023) as u64) << 52);
    if e > 1023 {
        x * pow2(1023) * pow2(e - 1023)
    } else if e < -1022 {
        x * pow2(-1022) * pow2((e + 1022).max(-1022))
    } else {
        x * pow2(e)
    }
}

/// Shewchuk's non-overlapping partials with the half-way correction used by
/// Python's `math.fsum`; correctly rounded.
#[derive(Debug, Default, Clone)]
struct Shewchuk {
    partials: Vec<f64>,
}

impl Shewchuk {
    fn add(&mut self, value: f64) {
        let mut x = value;
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

/// Sum of a short slice in a canonical order (ascending by value).
///
/// Used for stencil-sized rows where sorting is cheaper than exact
/// accumulation. The slice is reordered in place. Equal values (including
/// `0.0` and `-0.0`) may stay in any relative order; that does not change
/// the result.
#[inline]
pub fn canonical_sum(terms: &mut [f64]) -> f64 {
    match terms.len() {
        0 => 0.0,
        1 => terms[0],
        2 => terms[0] + terms[1],
        _ => {
            // insertion sort, rows are at most a handful of entries
            for i in 1..terms.len() {
                let mut j = i;
                while j > 0 && terms[j] < terms[j - 1] {
                    terms.swap(j - 1, j);
                    j -= 1;
                }
            }
            terms.iter().fold(0.0, |s, &t| s + t)
        }
    }
}

/// Fixed-capacity buffer feeding [`canonical_sum`] without allocating for
/// rows of up to `ROW_STACK` terms.
pub(crate) const ROW_STACK: usize = 8;

#[inline]
pub(crate) fn canonical_sum_iter<I: Iterator<Item = f64>>(len: usize, terms: I) -> f64 {
    if len <= ROW_STACK {
        let mut buf = [0.0; ROW_STACK];
        let mut n = 0;
        for t in terms {
            buf[n] = t;
            n += 1;
        }
        canonical_sum(&mut buf[..n])
    } else {
        let mut buf: Vec<f64> = terms.collect();
        canonical_sum(&mut buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sum_recovers_cancelled_terms() {
        assert_eq!(exact_sum([f64::MAX, f64::MAX, -f64::MAX]), f64::MAX);
        assert_eq!(exact_sum([5e-324, 5e-324]), 1e-323);
        assert_eq!(exact_sum([-3.5, 1.25]), -2.25);
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let v: Vec<f64> = (0..500)
            .map(|i| ((i as f64) * 0.7311).sin() * 10f64.powi(i % 9 - 4))
            .collect();
        let mut r = v.clone();
        r.reverse();
        let mut s = v.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        let a = exact_sum(v.iter().copied());
        assert_eq!(a.to_bits(), exact_sum(r).to_bits());
        assert_eq!(a.to_bits(), exact_sum(s).to_bits());
    }

    #[test]
    fn canonical_sum_ignores_permutation() {
        let base = [1e-3, 3.0, -2.5e7, 0.125, 7.77e7];
        let mut a = base;
        let mut b = [base[4], base[2], base[0], base[3], base[1]];
        assert_eq!(
            canonical_sum(&mut a).to_bits(),
            canonical_sum(&mut b).to_bits()
        );
    }
}
