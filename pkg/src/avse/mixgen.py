"""Training and evaluation mixtures: RMS computation, energy-normalized
frequency-domain summation, and sampling of aligned examples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .model import VisualFeatureSequence
from .synthdata import SAMPLES_PER_FRAME, CorpusView

FRAMES_PER_VIDEO_FRAME = 4
MIN_SEGMENT_RMS = 0.02  # redraw segments that are mostly gap; keeps the
                        # interferer scale rms(ref)/rms(noise) bounded


@dataclass
class MixtureExample:
    """A reference source plus energy-normalized interferers, mixed in the
    frequency domain. Time-domain forms and interferer visuals are kept for
    metric ground truth."""

    reference: dsp.ComplexSpectrogram
    mixture: dsp.ComplexSpectrogram
    visual: VisualFeatureSequence
    n_interferers: int
    interferer_sources: list = field(default_factory=list)
    reference_waveform: dsp.Waveform | None = None
    interferer_waveforms: list = field(default_factory=list)
    mixture_waveform: dsp.Waveform | None = None
    interferer_visuals: list = field(default_factory=list)
    reference_speaker: int = -1
    interferer_speakers: list = field(default_factory=list)


def rms(x) -> float:
    """Root mean square of a waveform or sample array."""
    samples = x.samples if isinstance(x, dsp.Waveform) else np.asarray(x, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("rms of an empty signal is undefined")
    return float(np.sqrt(np.mean(samples**2)))


def mix_spectrograms(
    ref: dsp.ComplexSpectrogram,
    noises: list,
    reference_rms: float | None = None,
):
    """Scale each noise source to the reference signal's RMS and sum the
    complex spectra onto the reference.

    `noises` holds (ComplexSpectrogram, Waveform) pairs; the waveform is the
    time-domain form used for the energy normalization. When
    `reference_rms` is omitted it is recovered through the inverse
    transform of `ref`.

    Returns (mixture, scaled noise spectrograms, scales).
    """
    if reference_rms is None:
        reference_rms = rms(dsp.istft(ref))
    mix = ref.to_complex().copy()
    scaled = []
    scales = []
    for noise_spec, noise_wave in noises:
        if noise_spec.shape != ref.shape:
            raise ValueError(
                f"shape mismatch: noise {noise_spec.shape} vs reference {ref.shape}"
            )
        noise_rms = rms(noise_wave)
        if noise_rms <= 0.0:
            raise ValueError("noise source has zero RMS; cannot normalize energy")
        scale = reference_rms / noise_rms
        z = noise_spec.to_complex() * scale
        mix += z
        scaled.append(dsp.ComplexSpectrogram.from_complex(z, ref.config))
        scales.append(scale)
    return dsp.ComplexSpectrogram.from_complex(mix, ref.config), scaled, scales


def _draw_segment(rng, view: CorpusView, speaker: int, segment_frames: int):
    """Pick an utterance and a frame-aligned segment with usable energy."""
    n_utts = view.n_utterances(speaker)
    for _ in range(40):
        utt_idx = int(rng.integers(0, n_utts))
        wave, feats = view.utterance(speaker, utt_idx)
        total = feats.n_frames
        if total < segment_frames:
            continue
        offset = int(rng.integers(0, total - segment_frames + 1))
        lo = offset * SAMPLES_PER_FRAME
        hi = (offset + segment_frames) * SAMPLES_PER_FRAME
        seg_wave = dsp.Waveform(wave.samples[lo:hi], wave.sample_rate)
        if rms(seg_wave) >= MIN_SEGMENT_RMS:
            seg_feats = VisualFeatureSequence(feats.values[offset : offset + segment_frames])
            return seg_wave, seg_feats
    raise ValueError(
        f"speaker {speaker}: could not draw a {segment_frames}-frame segment "
        f"with RMS >= {MIN_SEGMENT_RMS}"
    )


def sample_training_example(
    corpus: CorpusView,
    n_interferers: int,
    segment_frames: int = 60,
    rng_seed: int = 0,
    stft_cfg: dsp.StftConfig | None = None,
) -> MixtureExample:
    """Draw a reference segment and `n_interferers` segments from distinct
    speakers, then mix them in the frequency domain. Deterministic given
    `rng_seed`."""
    if n_interferers < 1 or n_interferers > 4:
        raise ValueError("n_interferers must be in [1, 4]")
    if len(corpus.speaker_seeds) < n_interferers + 1:
        raise ValueError(
            f"corpus has {len(corpus.speaker_seeds)} speakers, need at least "
            f"{n_interferers + 1} distinct speakers"
        )
    cfg = stft_cfg or dsp.StftConfig()
    rng = np.random.default_rng(rng_seed)

    chosen = rng.choice(len(corpus.speaker_seeds), size=n_interferers + 1, replace=False)
    ref_speaker = corpus.speaker_seeds[chosen[0]]
    noise_speakers = [corpus.speaker_seeds[i] for i in chosen[1:]]

    ref_wave, ref_feats = _draw_segment(rng, corpus, ref_speaker, segment_frames)
    ref_spec = dsp.stft(ref_wave, cfg)
    ref_rms = rms(ref_wave)

    noises = []
    noise_feats = []
    for spk in noise_speakers:
        wave, feats = _draw_segment(rng, corpus, spk, segment_frames)
        noises.append((dsp.stft(wave, cfg), wave))
        noise_feats.append(feats)

    mixture, scaled_specs, scales = mix_spectrograms(ref_spec, noises, reference_rms=ref_rms)
    scaled_waves = [
        dsp.Waveform(w.samples * s, w.sample_rate) for (_, w), s in zip(noises, scales)
    ]
    mix_wave = dsp.Waveform(
        ref_wave.samples + sum(w.samples for w in scaled_waves), cfg.sample_rate
    )
    return MixtureExample(
        reference=ref_spec,
        mixture=mixture,
        visual=ref_feats,
        n_interferers=n_interferers,
        interferer_sources=scaled_specs,
        reference_waveform=ref_wave,
        interferer_waveforms=scaled_waves,
        mixture_waveform=mix_wave,
        interferer_visuals=noise_feats,
        reference_speaker=ref_speaker,
        interferer_speakers=list(noise_speakers),
    )
