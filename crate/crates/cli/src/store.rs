//! Flat binary store for the compressed dB spectrograms of a curated
//! dataset, one per row and in row order.
//!
//! Layout (little-endian): `TWSS`, u16 version, u64 count, u32 bins,
//! u32 frames, f64 bin width in Hz, f64 dB floor, then `count * bins *
//! frames` f32 values.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use tidewatch::dsp::{Spectrogram, SpectrogramKind};
use tidewatch::{Error, Result};

const MAGIC: &[u8; 4] = b"TWSS";
const VERSION: u16 = 1;

pub fn write(path: &Path, items: &[Spectrogram<f32>]) -> Result<()> {
    let first = items.first().ok_or_else(|| Error::Empty("spectrogram store".into()))?;
    let (bins, frames) = first.dims();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(items.len() as u64).to_le_bytes())?;
    w.write_all(&(bins as u32).to_le_bytes())?;
    w.write_all(&(frames as u32).to_le_bytes())?;
    w.write_all(&first.bin_hz().to_le_bytes())?;
    w.write_all(&first.floor().to_le_bytes())?;
    for s in items {
        if s.dims() != (bins, frames) {
            return Err(Error::Dimension(format!("store holds {bins}x{frames}, got {:?}", s.dims())));
        }
        for v in s.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| Error::Truncated("spectrogram store header".into()))?;
    Ok(b)
}

pub fn read(path: &Path) -> Result<Vec<Spectrogram<f32>>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    if &take::<4>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a spectrogram store", path.display())));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let count = u64::from_le_bytes(take(&mut r)?) as usize;
    let bins = u32::from_le_bytes(take(&mut r)?) as usize;
    let frames = u32::from_le_bytes(take(&mut r)?) as usize;
    let bin_hz = f64::from_le_bytes(take(&mut r)?);
    let floor = f64::from_le_bytes(take(&mut r)?);
    let mut buf = vec![0u8; bins * frames * 4];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(|_| Error::Truncated("spectrogram store body".into()))?;
        let values = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push(Spectrogram::new(values, bins, frames, bin_hz, floor, SpectrogramKind::Compressed)?);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Checkpoint("trailing bytes after spectrogram store".into()));
    }
    Ok(out)
}
