"""Source-separation quality metrics: SIR/SDR/SAR energy-ratio
decomposition and STOI intelligibility.

The BSS criteria use zero-delay projections (no allowed distortion filter),
so absolute values are not comparable with filtered-variant tooling; use
them for orderings and trends. All ratios are capped at +/-60 dB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

from .dsp import Waveform

DB_CAP = 60.0
PROJECTION_NOTE = (
    "zero-delay projections, +/-60 dB cap; trend-level comparisons only"
)

# STOI analysis constants (10 kHz domain)
_STOI_RATE = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_FFT = 512
_STOI_BANDS = 15
_STOI_LOW_CF = 150.0
_STOI_SEG = 30  # frames per 384 ms segment
_STOI_BETA_DB = -15.0
_SILENCE_RANGE_DB = 40.0


@dataclass
class BssResult:
    sir_db: float
    sdr_db: float
    sar_db: float


def _ratio_db(num: float, den: float) -> float:
    db = 10.0 * np.log10(max(num, 1e-300) / max(den, 1e-300))
    return float(np.clip(db, -DB_CAP, DB_CAP))


def bss_eval(estimate: Waveform, target: Waveform, interferers=()) -> BssResult:
    """Orthogonal decomposition of the estimate into target, interference,
    and artifact components.

    s_target is the projection of the estimate onto the target; e_interf is
    the projection of the remainder onto the span of the interferers (with
    the target); e_artif is whatever is left.
    """
    e = np.asarray(estimate.samples, dtype=np.float64)
    t = np.asarray(target.samples, dtype=np.float64)
    if e.shape != t.shape:
        raise ValueError(f"length mismatch: estimate {e.shape[0]}, target {t.shape[0]}")
    t_energy = float(t @ t)
    if t_energy <= 0.0:
        raise ValueError("target signal is identically zero")

    s_target = (float(e @ t) / t_energy) * t
    columns = [t]
    for n in interferers:
        n_arr = np.asarray(n.samples, dtype=np.float64)
        if n_arr.shape != e.shape:
            raise ValueError(
                f"length mismatch: interferer {n_arr.shape[0]}, estimate {e.shape[0]}"
            )
        columns.append(n_arr)
    basis = np.stack(columns, axis=1)
    coef, *_ = np.linalg.lstsq(basis, e, rcond=None)
    p_full = basis @ coef
    e_interf = p_full - s_target
    e_artif = e - p_full

    s_energy = float(s_target @ s_target)
    i_energy = float(e_interf @ e_interf)
    a_energy = float(e_artif @ e_artif)
    si = s_target + e_interf
    return BssResult(
        sir_db=_ratio_db(s_energy, i_energy),
        sdr_db=_ratio_db(s_energy, i_energy + a_energy),
        sar_db=_ratio_db(float(si @ si), a_energy),
    )


# -- STOI ----------------------------------------------------------------------


def _frame_signal(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    n_frames = (len(x) - _STOI_FRAME) // _STOI_HOP + 1
    idx = np.arange(_STOI_FRAME) + _STOI_HOP * np.arange(n_frames)[:, None]
    return x[idx] * window


def _remove_silent_frames(clean: np.ndarray, other: np.ndarray):
    """Drop frames where the clean signal is more than 40 dB below its
    loudest frame, then overlap-add the survivors back together."""
    window = np.hanning(_STOI_FRAME + 2)[1:-1]
    cf = _frame_signal(clean, window)
    of = _frame_signal(other, window)
    energy_db = 20.0 * np.log10(np.linalg.norm(cf, axis=1) + 1e-300)
    keep = energy_db > energy_db.max() - _SILENCE_RANGE_DB
    cf, of = cf[keep], of[keep]
    n_kept = cf.shape[0]
    out_len = (n_kept - 1) * _STOI_HOP + _STOI_FRAME if n_kept else 0
    c_out = np.zeros(out_len)
    o_out = np.zeros(out_len)
    for i in range(n_kept):
        sl = slice(i * _STOI_HOP, i * _STOI_HOP + _STOI_FRAME)
        c_out[sl] += cf[i]
        o_out[sl] += of[i]
    return c_out, o_out


def _third_octave_matrix(n_bins: int) -> np.ndarray:
    freqs = np.arange(n_bins) * _STOI_RATE / _STOI_FFT
    centers = _STOI_LOW_CF * 2.0 ** (np.arange(_STOI_BANDS) / 3.0)
    lo = centers / 2.0 ** (1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    return ((freqs[None, :] >= lo[:, None]) & (freqs[None, :] < hi[:, None])).astype(float)


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    window = np.hanning(_STOI_FRAME + 2)[1:-1]
    frames = _frame_signal(x, window)
    spec = np.fft.rfft(frames, n=_STOI_FFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ obm.T)  # frames x bands


def stoi(estimate: Waveform, clean: Waveform) -> float:
    """Short-time objective intelligibility of `estimate` given the clean
    reference. Roughly in [0, 1]; higher is more intelligible."""
    if len(estimate.samples) != len(clean.samples):
        raise ValueError(
            f"length mismatch: estimate {len(estimate.samples)}, clean {len(clean.samples)}"
        )
    if clean.sample_rate != estimate.sample_rate:
        raise ValueError("sample rates differ")
    if clean.duration < 0.384:
        raise ValueError("signals must be at least 384 ms long")

    rate = clean.sample_rate
    if rate != _STOI_RATE:
        x = resample_poly(clean.samples, _STOI_RATE, rate)
        y = resample_poly(estimate.samples, _STOI_RATE, rate)
    else:
        x, y = clean.samples, estimate.samples

    x, y = _remove_silent_frames(x, y)
    obm = _third_octave_matrix(_STOI_FFT // 2 + 1)
    x_bands = _band_envelopes(x, obm) if len(x) >= _STOI_FRAME else np.empty((0, _STOI_BANDS))
    y_bands = _band_envelopes(y, obm) if len(y) >= _STOI_FRAME else np.empty((0, _STOI_BANDS))
    n_frames = x_bands.shape[0]
    if n_frames < _STOI_SEG:
        raise ValueError(
            f"only {n_frames} active analysis frames; need {_STOI_SEG} "
            f"(input too short or too quiet)"
        )

    clip_gain = 10.0 ** (-_STOI_BETA_DB / 20.0)
    scores = []
    for m in range(_STOI_SEG, n_frames + 1):
        x_seg = x_bands[m - _STOI_SEG : m]  # seg x bands
        y_seg = y_bands[m - _STOI_SEG : m]
        alpha = np.linalg.norm(x_seg, axis=0) / (np.linalg.norm(y_seg, axis=0) + 1e-300)
        y_scaled = np.minimum(y_seg * alpha, x_seg * (1.0 + clip_gain))
        xc = x_seg - x_seg.mean(axis=0)
        yc = y_scaled - y_scaled.mean(axis=0)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0)
        corr = np.sum(xc * yc, axis=0) / (denom + 1e-300)
        scores.append(corr)
    return float(np.mean(scores))
