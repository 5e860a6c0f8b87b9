"""Time-frequency analysis and synthesis: STFT/ISTFT, magnitude/phase
splitting, mel filterbank, and Griffin-Lim phase estimation.

All functions are pure and operate in double precision. Spectrograms are
time-major: rows are frames, columns are frequency bins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ZERO_MAG_EPS = 1e-12


class DspError(ValueError):
    """Invalid argument to a DSP operation."""


@dataclass
class StftConfig:
    """Analysis parameters. Defaults: 40 ms window, 10 ms hop at 16 kHz,
    so four spectrogram frames line up with one 25 fps video frame."""

    window_len: int = 640
    hop: int = 160
    fft_size: int = 640
    sample_rate: int = 16000

    def __post_init__(self):
        if self.hop <= 0 or self.window_len <= 0:
            raise DspError("window_len and hop must be positive")
        if self.window_len % self.hop != 0:
            raise DspError("hop must divide window_len")
        if self.window_len != 4 * self.hop:
            raise DspError(
                "window_len must equal 4*hop (overlap-add constancy and "
                "4-frames-per-video-frame alignment)"
            )
        if self.fft_size < self.window_len:
            raise DspError("fft_size must be >= window_len")
        if self.sample_rate <= 0:
            raise DspError("sample_rate must be positive")

    @property
    def freq_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass
class Waveform:
    """Mono time-domain signal; samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DspError("waveform must be one-dimensional")
        if self.sample_rate <= 0:
            raise DspError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DspError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """T x F complex spectrogram stored as separate real/imaginary parts."""

    re: np.ndarray
    im: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape or self.re.ndim != 2:
            raise DspError("re/im must be equal-shape 2-D matrices")
        if self.re.shape[1] != self.config.freq_bins:
            raise DspError(
                f"expected {self.config.freq_bins} frequency bins, "
                f"got {self.re.shape[1]}"
            )

    @classmethod
    def from_complex(cls, z: np.ndarray, config: StftConfig) -> "ComplexSpectrogram":
        return cls(z.real.copy(), z.imag.copy(), config)

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self):
        return self.re.shape


@dataclass
class MagnitudeSpectrogram:
    """T x F non-negative magnitudes."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DspError("magnitude spectrogram must be 2-D")
        if np.any(self.values < 0):
            raise DspError("magnitudes must be non-negative")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class PhaseSpectrogram:
    """T x 2F phase as unit (re, im) pairs; the real block occupies the
    first F columns and the imaginary block the last F."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] % 2 != 0:
            raise DspError("phase spectrogram must be 2-D with even width")

    @property
    def shape(self):
        return self.values.shape

    def pairs(self):
        """Return (re, im) halves, each T x F."""
        half = self.values.shape[1] // 2
        return self.values[:, :half], self.values[:, half:]


@dataclass
class MelFilterbank:
    weights: np.ndarray
    n_mels: int
    f_min: float = 0.0
    f_max: float = 8000.0


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window, w[k] = 0.5*(1 - cos(2*pi*k/n)); w[0] = 0."""
    if n < 2:
        raise DspError("window length must be at least 2")
    k = np.arange(n, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def _frame_count(n_samples: int, cfg: StftConfig) -> int:
    if n_samples <= 0 or n_samples % cfg.hop != 0:
        raise DspError(
            f"signal length {n_samples} is not a positive multiple of "
            f"hop {cfg.hop}; pad or trim first"
        )
    return n_samples // cfg.hop


def stft(x: Waveform, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    """Short-time Fourier transform with reflection padding.

    The input is reflect-padded by window_len/2 on each side so frame t is
    centered at sample t*hop and the frame count is exactly len(x)/hop.
    """
    cfg = cfg or StftConfig()
    n = len(x.samples)
    frames = _frame_count(n, cfg)
    pad = cfg.window_len // 2
    padded = np.pad(x.samples, (pad, pad), mode="reflect")
    window = hann_window(cfg.window_len)

    view = np.lib.stride_tricks.sliding_window_view(padded, cfg.window_len)
    framed = view[:: cfg.hop][:frames] * window
    spec = np.fft.rfft(framed, n=cfg.fft_size, axis=1)
    return ComplexSpectrogram.from_complex(spec, cfg)


def _ola_index_map(n_samples: int, pad: int, span: int) -> np.ndarray:
    # Maps each position of the padded overlap-add timeline back to the
    # interior sample it mirrors (identity in the interior). Matches
    # np.pad(..., mode="reflect").
    right = span - pad - n_samples
    if right < 0:
        return np.pad(np.arange(n_samples), (pad, 0), mode="reflect")[:span]
    return np.pad(np.arange(n_samples), (pad, right), mode="reflect")


def istft(spec: ComplexSpectrogram) -> Waveform:
    """Least-squares inverse STFT.

    Weighted overlap-add with the analysis window, with contributions that
    fall into the reflection-padded margins folded back onto the samples
    they mirror. This is the exact pseudo-inverse of `stft`, so
    istft(stft(x)) == x to rounding error.
    """
    cfg = spec.config
    frames, _ = spec.shape
    n_samples = frames * cfg.hop
    pad = cfg.window_len // 2
    window = hann_window(cfg.window_len)

    frame_time = np.fft.irfft(spec.to_complex(), n=cfg.fft_size, axis=1)
    frame_time = frame_time[:, : cfg.window_len] * window

    span = (frames - 1) * cfg.hop + cfg.window_len
    num = np.zeros(span)
    wss = np.zeros(span)
    wsq = window * window
    for t in range(frames):
        start = t * cfg.hop
        num[start : start + cfg.window_len] += frame_time[t]
        wss[start : start + cfg.window_len] += wsq

    idx = _ola_index_map(n_samples, pad, span)
    num_fold = np.zeros(n_samples)
    wss_fold = np.zeros(n_samples)
    np.add.at(num_fold, idx, num)
    np.add.at(wss_fold, idx, wss)

    out = num_fold / np.maximum(wss_fold, 1e-12)
    return Waveform(out, cfg.sample_rate)


def split_mag_phase(spec: ComplexSpectrogram):
    """Polar split. Zero-magnitude bins get the convention phase (1, 0)."""
    mag = np.hypot(spec.re, spec.im)
    safe = np.maximum(mag, ZERO_MAG_EPS)
    p_re = spec.re / safe
    p_im = spec.im / safe
    degenerate = mag <= ZERO_MAG_EPS
    p_re = np.where(degenerate, 1.0, p_re)
    p_im = np.where(degenerate, 0.0, p_im)
    phase = np.concatenate([p_re, p_im], axis=1)
    return MagnitudeSpectrogram(mag), PhaseSpectrogram(phase)


def _infer_config(freq_bins: int, sample_rate: int = 16000) -> StftConfig:
    fft_size = 2 * (freq_bins - 1)
    return StftConfig(
        window_len=fft_size, hop=fft_size // 4, fft_size=fft_size, sample_rate=sample_rate
    )


def merge_mag_phase(
    mag: MagnitudeSpectrogram,
    phase: PhaseSpectrogram,
    config: StftConfig | None = None,
) -> ComplexSpectrogram:
    """Recombine magnitude with (re, im) phase pairs.

    When `config` is omitted it is inferred from the bin count (fft_size =
    2*(F-1), window = fft_size, hop = window/4).
    """
    t, f = mag.shape
    if phase.shape != (t, 2 * f):
        raise DspError(
            f"shape mismatch: magnitude {mag.shape} needs phase {(t, 2 * f)}, "
            f"got {phase.shape}"
        )
    cfg = config or _infer_config(f)
    p_re, p_im = phase.pairs()
    return ComplexSpectrogram(mag.values * p_re, mag.values * p_im, cfg)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: StftConfig | None = None, n_mels: int = 80) -> MelFilterbank:
    """Triangular filters with centers equally spaced on the mel scale
    between 0 Hz and sample_rate/2."""
    cfg = cfg or StftConfig()
    if n_mels < 1:
        raise DspError("n_mels must be at least 1")
    if n_mels > cfg.freq_bins:
        raise DspError(f"n_mels {n_mels} exceeds frequency bins {cfg.freq_bins}")

    f_min, f_max = 0.0, cfg.sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(cfg.freq_bins) * cfg.sample_rate / cfg.fft_size

    weights = np.zeros((n_mels, cfg.freq_bins))
    for i in range(n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        rising = (bin_freqs - left) / max(center - left, 1e-12)
        falling = (right - bin_freqs) / max(right - center, 1e-12)
        weights[i] = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights, n_mels, f_min, f_max)


def apply_mel(fb: MelFilterbank, mag: MagnitudeSpectrogram) -> np.ndarray:
    """Project magnitudes onto the mel bands: rows of M times filter rows."""
    if mag.shape[1] != fb.weights.shape[1]:
        raise DspError(
            f"magnitude width {mag.shape[1]} does not match filterbank "
            f"width {fb.weights.shape[1]}"
        )
    return mag.values @ fb.weights.T


def convention_phase(shape) -> PhaseSpectrogram:
    """All-(1, 0) phase pairs for a T x F magnitude shape."""
    t, f = shape
    values = np.concatenate([np.ones((t, f)), np.zeros((t, f))], axis=1)
    return PhaseSpectrogram(values)


def spectral_inconsistency(x: Waveform, mag: MagnitudeSpectrogram, cfg: StftConfig) -> float:
    """Frobenius distance between |stft(x)| and a target magnitude."""
    actual, _ = split_mag_phase(stft(x, cfg))
    return float(np.linalg.norm(actual.values - mag.values))


def griffin_lim(
    mag: MagnitudeSpectrogram,
    iters: int = 100,
    config: StftConfig | None = None,
) -> Waveform:
    """Iterative phase estimation under a fixed magnitude.

    Starts from the (1, 0) convention phase; each iteration resynthesizes
    the waveform and re-estimates phase from its spectrogram. iters=0
    returns the plain inverse transform with the convention phase.
    """
    if iters < 0:
        raise DspError("iteration count must be non-negative")
    cfg = config or _infer_config(mag.shape[1])
    phase = convention_phase(mag.shape)
    x = istft(merge_mag_phase(mag, phase, cfg))
    for _ in range(iters):
        _, phase = split_mag_phase(stft(x, cfg))
        x = istft(merge_mag_phase(mag, phase, cfg))
    return x
