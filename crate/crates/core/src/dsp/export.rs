use std::fmt::Write;

use super::stft::Spectrogram;
use crate::scalar::Scalar;

/// Plain-text (P2) PGM. Low frequencies at the bottom, time left to right.
/// dB grids map `[floor, max]` onto 0..=255; normalized grids use `[min, max]`.
pub fn to_pgm<T: Scalar>(sp: &Spectrogram<T>) -> String {
    let (bins, frames) = sp.dims();
    let hi = sp.max_value().as_f64();
    let lo = if sp.is_normalized() {
        sp.values().iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min)
    } else {
        sp.floor()
    };
    let span = hi - lo;
    let mut out = format!("P2\n{frames} {bins}\n255\n");
    for b in (0..bins).rev() {
        let line: Vec<String> = sp
            .row(b)
            .iter()
            .map(|v| {
                let g = if span > 0.0 { ((v.as_f64() - lo) / span * 255.0).round() } else { 0.0 };
                (g.clamp(0.0, 255.0) as u8).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// One CSV row per frequency bin, one column per frame, shortest
/// round-trip decimal representation.
pub fn to_csv_grid<T: Scalar>(sp: &Spectrogram<T>) -> String {
    let mut out = String::new();
    for b in 0..sp.bins() {
        for (t, v) in sp.row(b).iter().enumerate() {
            if t > 0 {
                out.push(',');
            }
            write!(out, "{}", v.as_f64()).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft::SpectrogramKind;

    #[test]
    fn pgm_maps_floor_and_max() {
        let sp = Spectrogram::new(vec![-120.0f64, 0.0, -60.0, -120.0], 2, 2, 1.0, -120.0, SpectrogramKind::Compressed).unwrap();
        let pgm = to_pgm(&sp);
        assert_eq!(pgm, "P2\n2 2\n255\n128 0\n0 255\n");
    }

    #[test]
    fn csv_round_trips() {
        let vals = vec![0.1f64, -3.25, 1e-9, 7.0];
        let sp = Spectrogram::new(vals.clone(), 2, 2, 1.0, -120.0, SpectrogramKind::Compressed).unwrap();
        let back: Vec<f64> = to_csv_grid(&sp).lines().flat_map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect();
        assert_eq!(back, vals);
    }
}
