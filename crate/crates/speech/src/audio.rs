//! Waveform IO, STFT, log-mel features, pitch and energy tracks, and a
//! Griffin-Lim vocoder for listening to model output.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use comedic_core::Matrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpeechError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Floor applied before the logarithm.
    pub log_floor: f64,
    pub pitch_min_hz: f64,
    pub pitch_max_hz: f64,
    /// Minimum normalized autocorrelation peak for a frame to be voiced.
    pub voicing_threshold: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            hop: 256,
            mel_bins: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
            pitch_min_hz: 60.0,
            pitch_max_hz: 500.0,
            voicing_threshold: 0.5,
        }
    }
}

impl AudioConfig {
    pub fn frame_ms(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64 * 1000.0
    }

    pub fn frequency_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced by a centered STFT of `samples` samples.
    pub fn frame_count(&self, samples: usize) -> usize {
        samples / self.hop + 1
    }
}

/// Mono samples in `[-1, 1]`; multi-channel files are averaged.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let audio_err = |message: String| SpeechError::Audio {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| audio_err(e.to_string()))?
        }
    };
    let mono = raw
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// 16-bit PCM mono.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let audio_err = |e: hound::Error| SpeechError::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(audio_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        w.write_sample(v).map_err(audio_err)?;
    }
    w.finalize().map_err(audio_err)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    (-(pad as isize)..n + pad as isize)
        .map(|i| {
            if n == 1 {
                return x[0];
            }
            let period = 2 * (n - 1);
            let mut j = i.rem_euclid(period);
            if j >= n {
                j = period - j;
            }
            x[j as usize]
        })
        .collect()
}

/// Short-time Fourier transform with centered frames.
pub struct Stft {
    config: AudioConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: AudioConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            window: hann(config.n_fft),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
            config,
        }
    }

    /// `frames × (n_fft/2 + 1)` complex spectrum.
    pub fn analyze(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n = self.config.n_fft;
        let hop = self.config.hop;
        if samples.is_empty() {
            return Vec::new();
        }
        let padded = reflect_pad(samples, n / 2);
        let frames = self.config.frame_count(samples.len());
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        (0..frames)
            .map(|t| {
                let start = t * hop;
                for (k, b) in buf.iter_mut().enumerate() {
                    let s = padded.get(start + k).copied().unwrap_or(0.0);
                    *b = Complex::new(s * self.window[k], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..n / 2 + 1].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`] for `len` samples.
    pub fn synthesize(&self, spectrum: &[Vec<Complex<f64>>], len: usize) -> Vec<f64> {
        let n = self.config.n_fft;
        let hop = self.config.hop;
        let total = len + n;
        let mut out = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (t, frame) in spectrum.iter().enumerate() {
            for k in 0..n {
                buf[k] = if k <= n / 2 { frame[k] } else { frame[n - k].conj() };
            }
            self.inverse.process(&mut buf);
            let start = t * hop;
            for k in 0..n {
                if start + k >= total {
                    break;
                }
                out[start + k] += buf[k].re / n as f64 * self.window[k];
                norm[start + k] += self.window[k] * self.window[k];
            }
        }
        let pad = n / 2;
        (0..len)
            .map(|i| {
                let w = norm[i + pad];
                if w > 1e-8 {
                    out[i + pad] / w
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    // Slaney: linear below 1 kHz, logarithmic above.
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// Area-normalized triangular filters, `(n_fft/2 + 1) × mel_bins`.
pub fn mel_filterbank(config: &AudioConfig) -> Matrix {
    let n_freq = config.frequency_bins();
    let sr = config.sample_rate as f64;
    let freqs: Vec<f64> = (0..n_freq).map(|k| k as f64 * sr / config.n_fft as f64).collect();
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    let points: Vec<f64> = (0..config.mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.mel_bins + 1) as f64))
        .collect();
    let mut fb = Matrix::zeros(n_freq, config.mel_bins);
    for m in 0..config.mel_bins {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        let norm = 2.0 / (right - left);
        for (k, &f) in freqs.iter().enumerate() {
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            let w = rise.min(fall).max(0.0);
            fb[(k, m)] = w * norm;
        }
    }
    fb
}

/// Frame-level acoustic features of one waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    /// `frames × mel_bins`, natural-log compressed.
    pub log_mel: Matrix,
    /// L2 norm of each magnitude frame.
    pub energy: Vec<f64>,
    /// Fundamental frequency in Hz, 0 where unvoiced.
    pub pitch: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl Features {
    pub fn frames(&self) -> usize {
        self.log_mel.rows()
    }

    /// Keeps the first `frames` frames.
    pub fn truncated(mut self, frames: usize) -> Self {
        self.log_mel = self.log_mel.slice_rows(0, frames);
        self.energy.truncate(frames);
        self.pitch.truncate(frames);
        self.voiced.truncate(frames);
        self
    }
}

pub struct FeatureExtractor {
    config: AudioConfig,
    stft: Stft,
    filterbank: Matrix,
}

impl FeatureExtractor {
    pub fn new(config: AudioConfig) -> Self {
        Self {
            stft: Stft::new(config),
            filterbank: mel_filterbank(&config),
            config,
        }
    }

    pub fn config(&self) -> &AudioConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    pub fn extract(&self, samples: &[f64]) -> Features {
        let spec = self.stft.analyze(samples);
        let n_freq = self.config.frequency_bins();
        let mut mag = Matrix::zeros(spec.len(), n_freq);
        for (t, frame) in spec.iter().enumerate() {
            for (k, c) in frame.iter().enumerate() {
                mag[(t, k)] = c.norm();
            }
        }
        let energy = (0..mag.rows())
            .map(|t| mag.row(t).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let floor = self.config.log_floor;
        let log_mel = mag.matmul(&self.filterbank).map(|v| v.max(floor).ln());
        let (pitch, voiced) = self.pitch_track(samples, spec.len());
        Features {
            log_mel,
            energy,
            pitch,
            voiced,
        }
    }

    /// Normalized-autocorrelation pitch per frame, with parabolic peak
    /// refinement.
    pub fn pitch_track(&self, samples: &[f64], frames: usize) -> (Vec<f64>, Vec<bool>) {
        let n = self.config.n_fft;
        let sr = self.config.sample_rate as f64;
        let min_lag = (sr / self.config.pitch_max_hz).floor().max(2.0) as usize;
        let max_lag = ((sr / self.config.pitch_min_hz).ceil() as usize).min(n / 2);
        let padded = reflect_pad(samples, n / 2);
        let mut pitch = vec![0.0; frames];
        let mut voiced = vec![false; frames];
        let mut frame = vec![0.0; n];
        for t in 0..frames {
            let start = t * self.config.hop;
            for (k, f) in frame.iter_mut().enumerate() {
                *f = padded.get(start + k).copied().unwrap_or(0.0);
            }
            let mean = frame.iter().sum::<f64>() / n as f64;
            frame.iter_mut().for_each(|v| *v -= mean);
            let r0: f64 = frame.iter().map(|v| v * v).sum();
            if r0 / (n as f64) < 1e-8 || min_lag >= max_lag {
                continue;
            }
            // r(τ) / sqrt(e_head · e_tail) corrects for the shrinking overlap
            let acf = |lag: usize| -> f64 {
                let mut num = 0.0;
                let mut e1 = 0.0;
                let mut e2 = 0.0;
                for i in 0..n - lag {
                    num += frame[i] * frame[i + lag];
                    e1 += frame[i] * frame[i];
                    e2 += frame[i + lag] * frame[i + lag];
                }
                if e1 > 0.0 && e2 > 0.0 {
                    num / (e1 * e2).sqrt()
                } else {
                    0.0
                }
            };
            let values: Vec<f64> = (min_lag - 1..=max_lag + 1).map(acf).collect();
            let mut best = 1;
            for i in 1..values.len() - 1 {
                if values[i] > values[best] {
                    best = i;
                }
            }
            // prefer the shortest lag whose peak is nearly as strong (avoids
            // picking a multiple of the period)
            for i in 1..values.len() - 1 {
                if values[i] >= values[i - 1] && values[i] >= values[i + 1] && values[i] >= 0.9 * values[best] {
                    best = i;
                    break;
                }
            }
            let peak = values[best];
            if peak < self.config.voicing_threshold {
                continue;
            }
            let (a, b, c) = (values[best - 1], values[best], values[best + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
            let lag = (best + min_lag - 1) as f64 + shift.clamp(-0.5, 0.5);
            pitch[t] = sr / lag;
            voiced[t] = true;
        }
        (pitch, voiced)
    }
}

/// Mel-to-waveform by Griffin-Lim phase reconstruction. The linear
/// magnitude is recovered with the pseudo-inverse of the filterbank.
pub struct GriffinLim {
    stft: Stft,
    pinv: Matrix,
    pub iterations: usize,
    config: AudioConfig,
}

impl GriffinLim {
    pub fn new(config: AudioConfig, iterations: usize) -> Result<Self> {
        let fb = mel_filterbank(&config);
        let m = DMatrix::from_row_slice(fb.rows(), fb.cols(), fb.as_slice());
        let pinv = m
            .pseudo_inverse(1e-10)
            .map_err(|e| SpeechError::Invalid(format!("filterbank pseudo-inverse: {e}")))?;
        // pinv is mel_bins × n_freq
        let mut p = Matrix::zeros(pinv.nrows(), pinv.ncols());
        for r in 0..pinv.nrows() {
            for c in 0..pinv.ncols() {
                p[(r, c)] = pinv[(r, c)];
            }
        }
        Ok(Self {
            stft: Stft::new(config),
            pinv: p,
            iterations,
            config,
        })
    }

    /// Linear magnitudes for a natural-log mel, clamped at zero.
    pub fn magnitudes(&self, log_mel: &Matrix) -> Matrix {
        log_mel.map(f64::exp).matmul(&self.pinv).map(|v| v.max(0.0))
    }

    pub fn reconstruct(&self, log_mel: &Matrix, seed: u64) -> Vec<f64> {
        let mag = self.magnitudes(log_mel);
        let frames = mag.rows();
        if frames == 0 {
            return Vec::new();
        }
        let len = (frames - 1) * self.config.hop;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec: Vec<Vec<Complex<f64>>> = (0..frames)
            .map(|t| {
                mag.row(t)
                    .iter()
                    .map(|&m| Complex::from_polar(m, rng.random::<f64>() * 2.0 * PI))
                    .collect()
            })
            .collect();
        let mut wave = self.stft.synthesize(&spec, len);
        for _ in 0..self.iterations {
            let est = self.stft.analyze(&wave);
            for (t, frame) in spec.iter_mut().enumerate() {
                for (k, c) in frame.iter_mut().enumerate() {
                    let e = est.get(t).map_or(Complex::new(1.0, 0.0), |f| f[k]);
                    let phase = if e.norm() > 1e-12 { e / e.norm() } else { Complex::new(1.0, 0.0) };
                    *c = phase * mag[(t, k)];
                }
            }
            wave = self.stft.synthesize(&spec, len);
        }
        let peak = wave.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 1.0 {
            wave.iter_mut().for_each(|v| *v /= peak);
        }
        wave
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, seconds: f64, sr: u32) -> Vec<f64> {
        let n = (seconds * sr as f64) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                0.3 * (2.0 * PI * freq * t).sin() + 0.15 * (4.0 * PI * freq * t).sin()
            })
            .collect()
    }

    #[test]
    fn frame_count_and_shapes() {
        let cfg = AudioConfig::default();
        let x = tone(200.0, 0.5, cfg.sample_rate);
        let f = FeatureExtractor::new(cfg).extract(&x);
        assert_eq!(f.frames(), x.len() / 256 + 1);
        assert_eq!(f.log_mel.cols(), 80);
        assert!(f.log_mel.is_finite());
        assert!(f.log_mel.as_slice().iter().all(|&v| v >= (1e-5f64).ln() - 1e-12));
    }

    #[test]
    fn pitch_of_a_harmonic_tone() {
        let cfg = AudioConfig::default();
        for f0 in [110.0, 180.0, 260.0] {
            let x = tone(f0, 0.5, cfg.sample_rate);
            let f = FeatureExtractor::new(cfg).extract(&x);
            let inner = &f.pitch[4..f.frames() - 4];
            assert!(f.voiced[4..f.frames() - 4].iter().all(|&v| v));
            for p in inner {
                assert!((p - f0).abs() / f0 < 0.02, "{p} vs {f0}");
            }
        }
        let silence = vec![0.0; 8000];
        let f = FeatureExtractor::new(cfg).extract(&silence);
        assert!(f.voiced.iter().all(|v| !v));
    }

    #[test]
    fn filterbank_is_nonnegative_and_covers_range() {
        let cfg = AudioConfig::default();
        let fb = mel_filterbank(&cfg);
        assert_eq!(fb.shape(), (513, 80));
        for m in 0..80 {
            let col: f64 = (0..513).map(|k| fb[(k, m)]).sum();
            assert!(col > 0.0, "empty filter {m}");
        }
        assert!((hz_to_mel(mel_to_hz(37.5)) - 37.5).abs() < 1e-9);
    }

    #[test]
    fn stft_round_trip() {
        let cfg = AudioConfig::default();
        let x = tone(150.0, 0.3, cfg.sample_rate);
        let stft = Stft::new(cfg);
        let y = stft.synthesize(&stft.analyze(&x), x.len());
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn griffin_lim_is_deterministic_and_bounded() {
        let cfg = AudioConfig::default();
        let x = tone(200.0, 0.25, cfg.sample_rate);
        let mel = FeatureExtractor::new(cfg).extract(&x).log_mel;
        let gl = GriffinLim::new(cfg, 4).unwrap();
        let a = gl.reconstruct(&mel, 1);
        assert_eq!(a, gl.reconstruct(&mel, 1));
        assert_eq!(a.len(), (mel.rows() - 1) * 256);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }
}
