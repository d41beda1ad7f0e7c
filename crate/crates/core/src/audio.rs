//! Audio to 3D spectral point clouds: Hann-windowed STFT, log-magnitude, and
//! one `(frequency, time, magnitude)` point per frame and bin.

use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::ply::{write_ply, PlyFormat};

pub const DEFAULT_NFFT: usize = 1024;
pub const DEFAULT_HOP: usize = 256;
/// Added to |X| before the logarithm.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

/// Mono samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParams("sample rate must be positive".into()));
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn hound_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Format(other.to_string()),
    }
}

/// Reads 16-bit PCM or 32-bit float WAV; channels are averaged to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| hound_error(path, e))?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (format, bits) => return Err(Error::Format(format!("{bits}-bit {format:?} samples"))),
    }
    .map_err(|e| hound_error(path, e))?;
    let channels = spec.channels.max(1) as usize;
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioSignal::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM; samples are clamped to the representable range.
pub fn write_wav(signal: &AudioSignal, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| hound_error(path, e))?;
    for &s in &signal.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| hound_error(path, e))?;
    }
    writer.finalize().map_err(|e| hound_error(path, e))
}

/// `w(n) = ½(1 − cos(2πn/(N − 1)))`.
pub fn hann_window(n_fft: usize) -> Result<Vec<f64>> {
    if n_fft < 2 {
        return Err(Error::Size(format!("window length {n_fft} < 2")));
    }
    let denom = (n_fft - 1) as f64;
    let mut w: Vec<f64> = (0..n_fft)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / denom).cos()))
        .collect();
    // Mirror the first half so w[n] == w[N-1-n] bit for bit.
    for n in 0..n_fft / 2 {
        w[n_fft - 1 - n] = w[n];
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
}

/// One-sided STFT: `frames[n][k]` for `k` in `0..=n_fft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex<f64>>>,
    pub n_fft: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Spectrogram {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn bin_count(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

fn windowed_frames(signal: &AudioSignal, n_fft: usize, hop: usize) -> Result<(Vec<f64>, usize)> {
    if hop == 0 {
        return Err(Error::InvalidParams("hop must be at least 1".into()));
    }
    let window = hann_window(n_fft)?;
    if signal.len() < n_fft {
        return Err(Error::TooShort {
            len: signal.len(),
            needed: n_fft,
        });
    }
    Ok((window, (signal.len() - n_fft) / hop + 1))
}

/// Windowed, full two-sided spectrum of frame `n`.
fn frame_spectrum(signal: &AudioSignal, window: &[f64], hop: usize, n: usize, fft: &dyn rustfft::Fft<f64>) -> Vec<Complex<f64>> {
    let start = n * hop;
    let mut buf: Vec<Complex<f64>> = signal.samples[start..start + window.len()]
        .iter()
        .zip(window)
        .map(|(x, w)| Complex::new(x * w, 0.0))
        .collect();
    fft.process(&mut buf);
    buf
}

pub fn stft(signal: &AudioSignal, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    let (window, count) = windowed_frames(signal, n_fft, hop)?;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let bins = n_fft / 2 + 1;
    let frames = (0..count)
        .into_par_iter()
        .map(|n| {
            let mut full = frame_spectrum(signal, &window, hop, n, fft.as_ref());
            full.truncate(bins);
            full
        })
        .collect();
    Ok(Spectrogram {
        frames,
        n_fft,
        hop,
        window: WindowKind::Hann,
    })
}

/// Two-sided spectrum of every windowed frame.
pub fn stft_full(signal: &AudioSignal, n_fft: usize, hop: usize) -> Result<Vec<Vec<Complex<f64>>>> {
    let (window, count) = windowed_frames(signal, n_fft, hop)?;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    Ok((0..count)
        .into_par_iter()
        .map(|n| frame_spectrum(signal, &window, hop, n, fft.as_ref()))
        .collect())
}

/// `M(n, k) = ln(1e-8 + |X(n, k)|)`.
pub fn log_magnitude(spec: &Spectrogram) -> Vec<Vec<f64>> {
    spec.frames
        .iter()
        .map(|frame| frame.iter().map(|x| (MAGNITUDE_FLOOR + x.norm()).ln()).collect())
        .collect()
}

/// Frequency in Hz of bin `k`.
pub fn bin_frequency(k: usize, sample_rate: u32, n_fft: usize) -> f64 {
    k as f64 * sample_rate as f64 / n_fft as f64
}

/// Start time in seconds of frame `n`.
pub fn frame_time(n: usize, hop: usize, sample_rate: u32) -> f64 {
    (n * hop) as f64 / sample_rate as f64
}

fn frame_points(spec: &Spectrogram, mags: &[Vec<f64>], sample_rate: u32, frames: std::ops::Range<usize>) -> Vec<f64> {
    let mut coords = Vec::with_capacity(frames.len() * spec.bin_count() * 3);
    for n in frames {
        let t = frame_time(n, spec.hop, sample_rate);
        for (k, &m) in mags[n].iter().enumerate() {
            coords.extend([bin_frequency(k, sample_rate, spec.n_fft), t, m]);
        }
    }
    coords
}

/// One point `(f′, t, M)` per frame and bin, frame-major, in raw units.
pub fn spectrogram_to_cloud(spec: &Spectrogram, sample_rate: u32) -> Result<PointCloud<f64>> {
    let mags = log_magnitude(spec);
    PointCloud::from_flat(3, frame_points(spec, &mags, sample_rate, 0..spec.frame_count()))
}

/// Per-segment clouds, each covering `frames_per_segment` consecutive frames
/// (the last segment may be shorter).
pub fn segment_clouds(spec: &Spectrogram, sample_rate: u32, frames_per_segment: usize) -> Result<Vec<PointCloud<f64>>> {
    if frames_per_segment == 0 {
        return Err(Error::InvalidParams("segments need at least one frame".into()));
    }
    let mags = log_magnitude(spec);
    (0..spec.frame_count())
        .step_by(frames_per_segment)
        .map(|start| {
            let end = (start + frames_per_segment).min(spec.frame_count());
            PointCloud::from_flat(3, frame_points(spec, &mags, sample_rate, start..end))
        })
        .collect()
}

/// Concatenates segments in order and writes them as one PLY.
pub fn aggregate_and_save(clouds: &[PointCloud<f64>], path: impl AsRef<Path>, format: PlyFormat) -> Result<PointCloud<f64>> {
    let merged = PointCloud::concat(clouds)?;
    write_ply(&merged, path, format)?;
    Ok(merged)
}

/// STFT point cloud of a whole signal, raw units.
pub fn audio_to_cloud(signal: &AudioSignal, n_fft: usize, hop: usize) -> Result<PointCloud<f64>> {
    spectrogram_to_cloud(&stft(signal, n_fft, hop)?, signal.sample_rate)
}

pub fn sine(freq: f64, sample_rate: u32, duration: f64, amplitude: f64) -> AudioSignal {
    let n = (duration * sample_rate as f64).round() as usize;
    let fs = sample_rate as f64;
    AudioSignal {
        samples: (0..n)
            .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect(),
        sample_rate,
    }
}

/// Linear chirp sweeping `f0 → f1` over `duration` seconds.
pub fn chirp(f0: f64, f1: f64, sample_rate: u32, duration: f64, amplitude: f64) -> AudioSignal {
    let n = (duration * sample_rate as f64).round() as usize;
    let fs = sample_rate as f64;
    let rate = (f1 - f0) / duration;
    AudioSignal {
        samples: (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                amplitude * (2.0 * std::f64::consts::PI * (f0 * t + 0.5 * rate * t * t)).sin()
            })
            .collect(),
        sample_rate,
    }
}
