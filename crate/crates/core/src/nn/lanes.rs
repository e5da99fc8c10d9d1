//! Reductions split over independent accumulators so the compiler can
//! vectorize them; a single running float sum is latency bound.

use crate::scalar::Scalar;

const LANES: usize = 8;

fn fold<T: Scalar>(acc: [T; LANES]) -> T {
    let mut s = T::zero();
    for a in acc {
        s += a;
    }
    s
}

pub(crate) fn sum<T: Scalar>(x: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = x.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..LANES {
            acc[i] += c[i];
        }
    }
    fold(acc) + tail.iter().copied().fold(T::zero(), |a, b| a + b)
}

/// `sum((x - m)^2)`.
pub(crate) fn centered_squares<T: Scalar>(x: &[T], m: T) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = x.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..LANES {
            let d = c[i] - m;
            acc[i] += d * d;
        }
    }
    fold(acc) + tail.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m))
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: T = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    fold(acc) + tail
}

/// Smallest `|x|`, infinite for an empty slice.
pub(crate) fn min_abs<T: Scalar>(x: &[T]) -> T {
    let mut acc = [T::infinity(); LANES];
    let chunks = x.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..LANES {
            let a = c[i].abs();
            acc[i] = if a < acc[i] { a } else { acc[i] };
        }
    }
    let mut m = tail.iter().fold(T::infinity(), |m, v| if v.abs() < m { v.abs() } else { m });
    for a in acc {
        if a < m {
            m = a;
        }
    }
    m
}
