use super::stft::{Spectrogram, SpectrogramKind, COMPRESSED_BINS, FULL_BINS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Native bins pooled into one compressed bin.
pub const POOL: usize = (FULL_BINS - 1) / COMPRESSED_BINS;

/// Linear-frequency compression 2049 -> 256 rows: the Nyquist bin is
/// dropped and each output row is the mean of 8 consecutive native rows.
pub fn compress_frequency<T: Scalar>(sp: &Spectrogram<T>) -> Result<Spectrogram<T>> {
    if sp.kind() != SpectrogramKind::Full || sp.bins() != FULL_BINS {
        return Err(Error::Dimension(format!(
            "compression expects a full {FULL_BINS}-bin spectrogram, got {:?} with {} bins",
            sp.kind(),
            sp.bins()
        )));
    }
    let frames = sp.frames();
    let inv = T::one() / T::of(POOL as f64);
    let mut values = vec![T::zero(); COMPRESSED_BINS * frames];
    for b in 0..COMPRESSED_BINS {
        let out = &mut values[b * frames..(b + 1) * frames];
        for k in b * POOL..(b + 1) * POOL {
            for (o, &v) in out.iter_mut().zip(sp.row(k)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
    }
    let bin_hz = sp.bin_hz() * POOL as f64;
    Ok(Spectrogram::new(values, COMPRESSED_BINS, frames, bin_hz, sp.floor(), SpectrogramKind::Compressed)?
        .set_normalized(sp.is_normalized()))
}
