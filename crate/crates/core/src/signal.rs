//! Spectral peak of a sampled signal.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Index of the strongest non-zero bin.
    pub bin: usize,
    /// Frequency of that bin, in cycles per unit of the sample spacing.
    pub frequency: f64,
    /// Width of one bin.
    pub resolution: f64,
}

/// Strongest non-DC frequency of `signal` (mean removed) sampled every `dt`.
pub fn dominant_frequency(signal: &[f64], dt: f64) -> Option<Peak> {
    let n = signal.len();
    if n < 4 {
        return None;
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (bin, _) = buf[1..=n / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.norm_sqr()))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    let resolution = 1.0 / (n as f64 * dt);
    Some(Peak { bin, frequency: bin as f64 * resolution, resolution })
}

/// Peak frequency refined by a parabola through the log-power of the peak
/// bin and its two neighbours.
pub fn refined_frequency(signal: &[f64], dt: f64) -> Option<f64> {
    let peak = dominant_frequency(signal, dt)?;
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    if peak.bin + 1 > n / 2 {
        return Some(peak.frequency);
    }
    let p = |i: usize| buf[i].norm_sqr().max(f64::MIN_POSITIVE).ln();
    let (l, c, r) = (p(peak.bin - 1), p(peak.bin), p(peak.bin + 1));
    let den = l - 2.0 * c + r;
    let shift = if den < 0.0 { (0.5 * (l - r) / den).clamp(-0.5, 0.5) } else { 0.0 };
    Some((peak.bin as f64 + shift) * peak.resolution)
}
