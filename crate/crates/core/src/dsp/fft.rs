//! Radix-2 FFT with a real-input front end.

use crate::scalar::Scalar;
use std::f64::consts::PI;

/// In-place iterative radix-2 complex FFT of a fixed power-of-two size.
#[derive(Clone, Debug)]
pub struct ComplexFft<T> {
    n: usize,
    cos: Vec<T>,
    sin: Vec<T>,
    bitrev: Vec<usize>,
}

impl<T: Scalar> ComplexFft<T> {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "FFT size {n} is not a power of two");
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if n == 1 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        // Twiddles are evaluated directly (no recurrence) to keep them exact to rounding.
        let half = n / 2;
        let cos = (0..half).map(|k| T::of((2.0 * PI * k as f64 / n as f64).cos())).collect();
        let sin = (0..half).map(|k| T::of(-(2.0 * PI * k as f64 / n as f64).sin())).collect();
        Self { n, cos, sin, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn process(&self, re: &mut [T], im: &mut [T]) {
        let n = self.n;
        assert!(re.len() == n && im.len() == n);
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let step = n / len;
            let half = len / 2;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * step], self.sin[k * step]);
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }
}

/// Real-input FFT of size `N` computed with one complex FFT of size `N/2`.
#[derive(Clone, Debug)]
pub struct RealFft<T> {
    n: usize,
    inner: ComplexFft<T>,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> RealFft<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2 && n.is_power_of_two(), "real FFT size {n} must be a power of two >= 2");
        let half = n / 2;
        let cos = (0..=half).map(|k| T::of((2.0 * PI * k as f64 / n as f64).cos())).collect();
        let sin = (0..=half).map(|k| T::of(-(2.0 * PI * k as f64 / n as f64).sin())).collect();
        Self { n, inner: ComplexFft::new(half), cos, sin }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// One-sided spectrum `X[0..=N/2]` written to `out_re`/`out_im`.
    pub fn process(&self, input: &[T], out_re: &mut [T], out_im: &mut [T]) {
        let n = self.n;
        let half = n / 2;
        assert_eq!(input.len(), n);
        assert!(out_re.len() > half && out_im.len() > half);
        let mut zr: Vec<T> = (0..half).map(|i| input[2 * i]).collect();
        let mut zi: Vec<T> = (0..half).map(|i| input[2 * i + 1]).collect();
        self.inner.process(&mut zr, &mut zi);
        let two = T::of(2.0);
        for k in 0..=half {
            let (ar, ai) = (zr[k % half], zi[k % half]);
            let (br, bi) = (zr[(half - k) % half], -zi[(half - k) % half]);
            // even = (Z[k] + conj Z[N/2-k]) / 2 ; odd = (Z[k] - conj Z[N/2-k]) / 2i
            let er = (ar + br) / two;
            let ei = (ai + bi) / two;
            let or = (ai - bi) / two;
            let oi = -(ar - br) / two;
            let (wr, wi) = (self.cos[k], self.sin[k]);
            out_re[k] = er + or * wr - oi * wi;
            out_im[k] = ei + or * wi + oi * wr;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 0..n {
            for (j, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                re[k] += v * ang.cos();
                im[k] += v * ang.sin();
            }
        }
        (re, im)
    }

    #[test]
    fn complex_fft_matches_dft() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 31 % 17) as f64 - 8.0) / 3.0).collect();
        let (wr, wi) = naive_dft(&x);
        let mut re = x.clone();
        let mut im = vec![0.0; 64];
        ComplexFft::new(64).process(&mut re, &mut im);
        for k in 0..64 {
            assert!((re[k] - wr[k]).abs() < 1e-10 && (im[k] - wi[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn real_fft_matches_dft() {
        for n in [2usize, 4, 8, 128] {
            let x: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7).sin() + 0.1 * i as f64).collect();
            let (wr, wi) = naive_dft(&x);
            let mut re = vec![0.0; n / 2 + 1];
            let mut im = vec![0.0; n / 2 + 1];
            RealFft::new(n).process(&x, &mut re, &mut im);
            for k in 0..=n / 2 {
                assert!((re[k] - wr[k]).abs() < 1e-10, "n={n} k={k}");
                assert!((im[k] - wi[k]).abs() < 1e-10, "n={n} k={k}");
            }
        }
    }
}
