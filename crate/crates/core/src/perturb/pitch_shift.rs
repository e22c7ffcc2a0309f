use std::f64::consts::PI;

use super::PerturbError;
use crate::signal::{extract_f0, hann, Waveform, HOP};

const F_FLOOR: f64 = 50.0;
const F_CEILING: f64 = 1100.0;
/// WSOLA synthesis hop; grains are twice as long.
const GRAIN_HOP: usize = 320;
const SEARCH: isize = 160;

/// Scales the median F0 by `shift_ratio` and the deviation from the median by
/// `range_ratio`, keeping the duration.
///
/// A variable-rate band-limited resampler moves the pitch, then WSOLA maps the
/// warped timeline back onto the original one.
pub fn pitch_randomize(x: &Waveform, shift_ratio: f64, range_ratio: f64) -> Result<Waveform, PerturbError> {
    if !(shift_ratio > 0.0 && range_ratio > 0.0 && shift_ratio.is_finite() && range_ratio.is_finite()) {
        return Err(PerturbError::InvalidConfig(format!("pitch ratios {shift_ratio}, {range_ratio}")));
    }
    if (shift_ratio == 1.0 && range_ratio == 1.0) || x.len() < 2 {
        return Ok(x.clone());
    }
    let sr = x.sample_rate();
    if (sr as f64) / 2.0 <= F_CEILING {
        return Ok(x.clone());
    }
    let contour = extract_f0(x, HOP, F_FLOOR, F_CEILING)?;
    let Some(median) = contour.voiced_median() else {
        return Ok(x.clone());
    };
    let median = median as f64;
    let frame_ratio: Vec<f64> = contour
        .f0
        .iter()
        .map(|&f| {
            if f > 0.0 {
                let f = f as f64;
                let target = shift_ratio * (median + range_ratio * (f - median));
                target.max(0.25 * shift_ratio * median) / f
            } else {
                shift_ratio
            }
        })
        .collect();

    let src: Vec<f64> = x.samples().iter().map(|&s| s as f64).collect();
    let (warped, positions) = variable_resample(&src, &frame_ratio);
    let out = wsola(&warped, &positions, src.len());
    Ok(Waveform::new(out.into_iter().map(|v| v as f32).collect(), sr)?)
}

/// Ratio at fractional source sample `p`, interpolated between frame centres.
fn ratio_at(frame_ratio: &[f64], p: f64) -> f64 {
    if frame_ratio.is_empty() {
        return 1.0;
    }
    let t = (p - (HOP / 2) as f64) / HOP as f64;
    if t <= 0.0 {
        return frame_ratio[0];
    }
    let i = t.floor() as usize;
    if i + 1 >= frame_ratio.len() {
        return *frame_ratio.last().unwrap();
    }
    let frac = t - i as f64;
    frame_ratio[i] * (1.0 - frac) + frame_ratio[i + 1] * frac
}

/// Reads `x` at a position advancing by the local ratio each output sample.
/// Returns the output and the source position of every output sample.
fn variable_resample(x: &[f64], frame_ratio: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let last = (x.len() - 1) as f64;
    let mut out = Vec::new();
    let mut pos = Vec::new();
    let mut p = 0.0;
    while p <= last {
        let rho = ratio_at(frame_ratio, p);
        out.push(sinc_at(x, p, (1.0 / rho).min(1.0)));
        pos.push(p);
        p += rho;
    }
    (out, pos)
}

/// Windowed-sinc interpolation with a lowpass at `cutoff` (fraction of Nyquist).
fn sinc_at(x: &[f64], p: f64, cutoff: f64) -> f64 {
    let half = (8.0 / cutoff).ceil() as isize;
    let centre = p.floor() as isize;
    let mut acc = 0.0;
    let mut norm = 0.0;
    for k in centre - half + 1..=centre + half {
        let d = p - k as f64;
        if d.abs() >= half as f64 {
            continue;
        }
        let arg = PI * cutoff * d;
        let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
        let w = 0.5 + 0.5 * (PI * d / half as f64).cos();
        let weight = sinc * w;
        norm += weight;
        if k >= 0 && (k as usize) < x.len() {
            acc += weight * x[k as usize];
        }
    }
    if norm.abs() > 1e-12 {
        acc / norm
    } else {
        0.0
    }
}

/// Fractional index into `y` whose source position equals `t`.
fn inverse_position(positions: &[f64], t: f64) -> f64 {
    let j = positions.partition_point(|&p| p < t);
    if j == 0 {
        return 0.0;
    }
    if j >= positions.len() {
        let n = positions.len();
        let step = if n > 1 { positions[n - 1] - positions[n - 2] } else { 1.0 };
        return (n - 1) as f64 + (t - positions[n - 1]) / step;
    }
    let (a, b) = (positions[j - 1], positions[j]);
    (j - 1) as f64 + (t - a) / (b - a)
}

/// Overlap-adds grains of `y` so that output time `t` shows the part of `y`
/// that came from source time `t`, with waveform-similarity alignment.
fn wsola(y: &[f64], positions: &[f64], out_len: usize) -> Vec<f64> {
    let h = GRAIN_HOP;
    let window = hann(2 * h);
    let get = |i: isize| if i >= 0 && (i as usize) < y.len() { y[i as usize] } else { 0.0 };
    let mut out = vec![0.0; out_len];
    let mut wsum = vec![0.0; out_len];
    let grains = out_len / h + 2;
    let mut prev: Option<isize> = None;
    for k in 0..grains {
        let centre = inverse_position(positions, (k * h) as f64).round() as isize;
        let nominal = centre - h as isize;
        let start = match prev {
            None => nominal,
            Some(p) => {
                let target: Vec<f64> = (0..h as isize).map(|m| get(p + h as isize + m)).collect();
                let score = |d: isize| {
                    let mut dotv = 0.0;
                    let mut e = 0.0;
                    for (m, t) in target.iter().enumerate() {
                        let v = get(nominal + d + m as isize);
                        dotv += v * t;
                        e += v * v;
                    }
                    if e > 1e-12 { dotv / e.sqrt() } else { 0.0 }
                };
                let mut best = (0isize, f64::NEG_INFINITY);
                let mut d = -SEARCH;
                while d <= SEARCH {
                    let s = score(d);
                    if s > best.1 {
                        best = (d, s);
                    }
                    d += 4;
                }
                let coarse = best.0;
                for d in (coarse - 3).max(-SEARCH)..=(coarse + 3).min(SEARCH) {
                    let s = score(d);
                    if s > best.1 {
                        best = (d, s);
                    }
                }
                nominal + best.0
            }
        };
        let out_start = (k * h) as isize - h as isize;
        for m in 0..2 * h {
            let o = out_start + m as isize;
            if o >= 0 && (o as usize) < out_len {
                out[o as usize] += window[m] * get(start + m as isize);
                wsum[o as usize] += window[m];
            }
        }
        prev = Some(start);
    }
    for (v, w) in out.iter_mut().zip(&wsum) {
        if *w > 1e-6 {
            *v /= w;
        }
    }
    out
}
