//! Signal-level label estimators used to check synthetic ground truth and
//! augmentation behaviour: an autocorrelation tempo detector and a chroma
//! fold of mel bands.

use crate::melfront::MelSpectrogram;

/// Tempo search range of [`autocorrelation_tempo`], in BPM.
pub const TEMPO_SEARCH_BPM: (f64, f64) = (40.0, 250.0);

/// Linear-magnitude frame envelope `sum_u 10^X[u, m]`.
pub fn frame_energy(x: &MelSpectrogram) -> Vec<f64> {
    let mut e = vec![0.0; x.num_frames()];
    for u in 0..x.num_bands() {
        for (acc, v) in e.iter_mut().zip(x.row(u)) {
            *acc += 10f64.powf(*v);
        }
    }
    e
}

/// Biased autocorrelation of the mean-removed signal for lags `0..=max_lag`.
pub fn autocorrelation(signal: &[f64], max_lag: usize) -> Vec<f64> {
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n.max(1) as f64;
    let c: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    (0..=max_lag)
        .map(|lag| {
            if lag >= n {
                0.0
            } else {
                c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum()
            }
        })
        .collect()
}

/// Share of the strongest autocorrelation peak that a lag of a half or a
/// third of it must reach to be preferred.
pub const SUBMULTIPLE_RATIO: f64 = 0.7;

fn smooth3(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let a = x[i.saturating_sub(1)];
            let c = x[(i + 1).min(n - 1)];
            0.25 * a + 0.5 * x[i] + 0.25 * c
        })
        .collect()
}

/// Lag (in frames, sub-frame refined) of the strongest frame-energy
/// periodicity between `min_lag` and `max_lag`.
///
/// The envelope is lightly smoothed so that periods falling between frames
/// still correlate, and a peak at a half or a third of the best lag wins if
/// it reaches [`SUBMULTIPLE_RATIO`] of the best value.
pub fn dominant_period(x: &MelSpectrogram, min_lag: usize, max_lag: usize) -> Option<f64> {
    let env = frame_energy(x);
    if env.is_empty() {
        return None;
    }
    let env = smooth3(&smooth3(&env));
    let max_lag = max_lag.min(env.len().saturating_sub(2));
    if min_lag < 1 || min_lag > max_lag {
        return None;
    }
    let r = autocorrelation(&env, max_lag + 1);
    let peak_near = |center: f64| -> Option<usize> {
        let lo = ((center * 0.9).floor() as usize).max(min_lag);
        let hi = ((center * 1.1).ceil() as usize).min(max_lag);
        (lo <= hi).then(|| (lo..=hi).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap())
    };
    let mut best = (min_lag..=max_lag).max_by(|&a, &b| r[a].total_cmp(&r[b]))?;
    if r[best] <= 0.0 {
        return None;
    }
    for div in [3.0, 2.0] {
        if let Some(c) = peak_near(best as f64 / div) {
            if c < best && r[c] >= SUBMULTIPLE_RATIO * r[best] {
                best = c;
                break;
            }
        }
    }
    let (y0, y1, y2) = (r[best - 1], r[best], r[best + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let delta = if denom < 0.0 { (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Some(best as f64 + delta)
}

/// Tempo in BPM from the frame-energy autocorrelation.
pub fn autocorrelation_tempo(x: &MelSpectrogram) -> Option<f64> {
    let fps = x.config.frame_rate();
    let min_lag = (60.0 * fps / TEMPO_SEARCH_BPM.1).ceil() as usize;
    let max_lag = (60.0 * fps / TEMPO_SEARCH_BPM.0).floor() as usize;
    dominant_period(x, min_lag, max_lag).map(|p| 60.0 * fps / p)
}

/// Pitch class (C = 0) nearest to a frequency.
pub fn pitch_class(hz: f64) -> usize {
    let semis = 12.0 * (hz / 440.0).log2() + 9.0;
    (semis.round() as i64).rem_euclid(12) as usize
}

/// 12-bin chroma from time-averaged linear band magnitudes.
///
/// Each local maximum of the band profile is located between its two
/// strongest bands by their magnitude-weighted position (adjacent triangles
/// overlap linearly on the mel axis), and its combined magnitude goes to the
/// pitch class of that frequency. Peaks outside `[min_hz, max_hz]` are
/// ignored.
pub fn chroma(x: &MelSpectrogram, min_hz: f64, max_hz: f64) -> [f64; 12] {
    let frames = x.num_frames().max(1) as f64;
    let profile: Vec<f64> = (0..x.num_bands())
        .map(|u| x.row(u).iter().map(|v| 10f64.powf(*v)).sum::<f64>() / frames)
        .collect();
    let mut out = [0.0; 12];
    let n = profile.len();
    for u in 0..n {
        let left = if u > 0 { profile[u - 1] } else { 0.0 };
        let right = if u + 1 < n { profile[u + 1] } else { 0.0 };
        if profile[u] <= left || profile[u] < right {
            continue;
        }
        let (other, dir) = if right >= left { (right, 1.0) } else { (left, -1.0) };
        let weight = profile[u] + other;
        let position = u as f64 + dir * other / weight;
        let hz = x.config.band_center_hz(position);
        if hz < min_hz || hz > max_hz {
            continue;
        }
        out[pitch_class(hz)] += weight;
    }
    out
}

pub fn chroma_root(x: &MelSpectrogram) -> usize {
    let c = chroma(x, 200.0, 4000.0);
    (0..12).max_by(|&a, &b| c[a].total_cmp(&c[b]).then(b.cmp(&a))).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melfront::MelConfig;

    #[test]
    fn pitch_classes() {
        assert_eq!(pitch_class(440.0), 9);
        assert_eq!(pitch_class(261.63), 0);
        assert_eq!(pitch_class(523.25), 0);
        assert_eq!(pitch_class(466.16), 10);
    }

    #[test]
    fn periodic_envelope_period_is_found() {
        let cfg = MelConfig::default();
        // clicks every 50 frames = 120 BPM at 100 frames/s
        let x = MelSpectrogram::from_fn(cfg, 600, "c", |_, m| if m % 50 < 3 { 0.0 } else { -3.0 });
        let bpm = autocorrelation_tempo(&x).unwrap();
        assert!((bpm - 120.0).abs() < 1.0, "{bpm}");
    }

    #[test]
    fn autocorrelation_of_constant_is_zero() {
        let r = autocorrelation(&[2.0; 10], 3);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }
}
