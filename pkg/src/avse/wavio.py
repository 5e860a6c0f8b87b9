"""WAV file I/O: 16-bit signed PCM, mono, 16 kHz only."""

from __future__ import annotations

import wave

import numpy as np

from .dsp import Waveform

REQUIRED_RATE = 16000
_SCALE = 32767.0


class WavFormatError(Exception):
    """Unreadable or unsupported WAV file."""


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE file; rejects anything but mono 16-bit PCM @ 16 kHz."""
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            comp = w.getcomptype()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: not a readable WAV file ({exc})") from exc

    if comp != "NONE":
        raise WavFormatError(f"{path}: compressed WAV ({comp}) not supported, need PCM")
    if channels != 1:
        raise WavFormatError(f"{path}: {channels} channels, need mono")
    if width != 2:
        raise WavFormatError(f"{path}: {8 * width}-bit samples, need 16-bit signed PCM")
    if rate != REQUIRED_RATE:
        raise WavFormatError(f"{path}: sample rate {rate} Hz, need {REQUIRED_RATE} Hz")

    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _SCALE
    return Waveform(samples, rate)


def write_wav(path, wf: Waveform) -> None:
    """Write mono 16-bit PCM; samples are clamped to [-1, 1] before quantizing."""
    clipped = np.clip(wf.samples, -1.0, 1.0)
    quantized = np.round(clipped * _SCALE).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(wf.sample_rate)
        w.writeframes(quantized.tobytes())
