"""Desk-scale corpus substitute: harmonic speech-like utterances per
synthetic speaker identity, plus correlated visual feature sequences.

Corpus directory layout:
    speakers.tsv            one `seed<TAB>split` line per speaker
    audio/<seed>/<k>.wav    16-bit PCM mono 16 kHz
    visual/<seed>/<k>.avf   "AVF1", u32 T_v, u32 D_v, float32 LE row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import Waveform
from .model import VisualFeatureSequence
from .wavio import read_wav, write_wav

SAMPLE_RATE = 16000
SAMPLES_PER_FRAME = 640  # 25 fps at 16 kHz
AVF_MAGIC = b"AVF1"
GAP_FRACTION = 0.3  # fraction of near-silent frames per utterance
MIN_SPEAKERS = 6


class CorpusError(Exception):
    """Missing or malformed corpus data."""


def derive_seed(*parts: int) -> int:
    """Stable child seed from integer parts (order-sensitive)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class SyntheticSpeaker:
    speaker_seed: int
    f0_base: float
    n_harmonics: int
    modulation_rate: float
    embedding: np.ndarray

    @classmethod
    def from_seed(cls, speaker_seed: int, visual_dim: int = 32) -> "SyntheticSpeaker":
        if visual_dim % 2 != 0:
            raise ValueError("visual_dim must be even")
        rng = np.random.default_rng(speaker_seed)
        return cls(
            speaker_seed=speaker_seed,
            f0_base=float(rng.uniform(100.0, 300.0)),
            n_harmonics=int(rng.integers(3, 9)),
            modulation_rate=float(rng.uniform(2.0, 6.0)),
            embedding=rng.uniform(-1.0, 1.0, visual_dim // 2) * 0.5,
        )


@dataclass
class SyntheticUtterance:
    waveform: Waveform
    envelope: np.ndarray  # per-video-frame amplitude (25 Hz)
    speaker: SyntheticSpeaker
    utterance_seed: int = 0


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    kernel = np.ones(width) / width
    return np.convolve(np.pad(x, width, mode="edge"), kernel, mode="same")[width:-width]


def _gap_mask(rng, n_frames: int) -> np.ndarray:
    """Boolean mask of near-silent frames, at least GAP_FRACTION of them."""
    silent = np.zeros(n_frames, dtype=bool)
    target = int(np.ceil(GAP_FRACTION * n_frames))
    for _ in range(200):
        if silent.sum() >= target:
            break
        start = int(rng.integers(0, n_frames))
        length = int(rng.integers(2, 9))
        silent[start : start + length] = True
    # Never silence everything; keep at least a third active.
    active_floor = max(1, n_frames // 3)
    if n_frames - silent.sum() < active_floor:
        silent[: n_frames - active_floor] = False
    return silent


def synth_utterance(
    speaker: SyntheticSpeaker, duration_frames: int, utterance_seed: int
) -> SyntheticUtterance:
    """Harmonic tone at a drifting fundamental, amplitude-modulated by a
    smooth random envelope with interspersed near-silent gaps. The peak is
    normalized to 0.5 and the returned envelope holds per-frame RMS."""
    if duration_frames < 1:
        raise ValueError("duration_frames must be at least 1")
    rng = np.random.default_rng([speaker.speaker_seed, utterance_seed])
    n = duration_frames * SAMPLES_PER_FRAME
    frame_t = np.arange(duration_frames) / 25.0

    env = 0.55 + 0.35 * np.sin(
        2.0 * np.pi * speaker.modulation_rate * frame_t + rng.uniform(0.0, 2.0 * np.pi)
    )
    env = env + 0.2 * _smooth(rng.standard_normal(duration_frames), 7)
    env = np.clip(env, 0.05, 1.3)
    env = np.where(_gap_mask(rng, duration_frames), 0.002, env)

    # Per-sample envelope: linear interpolation between frame centers.
    sample_frames = (np.arange(n) + 0.5) / SAMPLES_PER_FRAME - 0.5
    env_s = np.interp(sample_frames, np.arange(duration_frames), env)

    drift = 1.0 + 0.02 * np.interp(
        sample_frames, np.arange(duration_frames), _smooth(rng.standard_normal(duration_frames), 11)
    )
    f0 = speaker.f0_base * drift
    base_phase = 2.0 * np.pi * np.cumsum(f0) / SAMPLE_RATE

    x = np.zeros(n)
    for k in range(1, speaker.n_harmonics + 1):
        x += np.sin(k * base_phase + rng.uniform(0.0, 2.0 * np.pi)) / k
    x *= env_s
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.5 / peak

    frame_rms = np.sqrt(np.mean(x.reshape(duration_frames, SAMPLES_PER_FRAME) ** 2, axis=1))
    return SyntheticUtterance(
        waveform=Waveform(x, SAMPLE_RATE),
        envelope=frame_rms,
        speaker=speaker,
        utterance_seed=utterance_seed,
    )


def synth_visual_features(
    utt: SyntheticUtterance, visual_dim: int, noise_scale: float = 0.05
) -> VisualFeatureSequence:
    """Frame features: [envelope code | speaker embedding] plus noise.

    The envelope half tiles (value, first difference) pairs; the embedding
    half is the speaker's fixed identity vector.
    """
    if visual_dim % 2 != 0:
        raise ValueError("visual_dim must be even")
    half = visual_dim // 2
    if utt.speaker.embedding.shape[0] != half:
        raise ValueError(
            f"speaker embedding dim {utt.speaker.embedding.shape[0]} != {half}"
        )
    env = utt.envelope
    diff = np.diff(env, prepend=env[0])
    pair = np.stack([env, diff], axis=1)  # T_v x 2
    reps = (half + 1) // 2
    env_code = np.tile(pair, (1, reps))[:, :half]
    emb = np.broadcast_to(utt.speaker.embedding, (len(env), half))
    feats = np.concatenate([env_code, emb], axis=1)
    if noise_scale > 0:
        rng = np.random.default_rng(
            [utt.speaker.speaker_seed, utt.utterance_seed, 0x51AF]
        )
        feats = feats + rng.normal(0.0, noise_scale, feats.shape)
    return VisualFeatureSequence(feats)


# -- feature file format -------------------------------------------------------


def write_avf(path, feats: VisualFeatureSequence) -> None:
    t_v, d_v = feats.values.shape
    with open(path, "wb") as fh:
        fh.write(AVF_MAGIC)
        fh.write(struct.pack("<II", t_v, d_v))
        fh.write(feats.values.astype("<f4").tobytes())


def read_avf(path) -> VisualFeatureSequence:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != AVF_MAGIC:
            raise CorpusError(f"{path}: bad magic {magic!r}, expected {AVF_MAGIC!r}")
        t_v, d_v = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * t_v * d_v), dtype="<f4")
        if data.size != t_v * d_v:
            raise CorpusError(f"{path}: truncated feature payload")
    return VisualFeatureSequence(data.reshape(t_v, d_v).astype(np.float64))


# -- corpus --------------------------------------------------------------------


class Corpus:
    """Read-only handle over a corpus directory; decoded utterances are
    cached in memory."""

    def __init__(self, root):
        self.root = Path(root)
        tsv = self.root / "speakers.tsv"
        if not tsv.is_file():
            raise CorpusError(f"{self.root}: no speakers.tsv (not a corpus directory)")
        self.splits: dict[int, str] = {}
        for line in tsv.read_text().splitlines():
            if not line.strip():
                continue
            seed_str, split = line.split("\t")
            self.splits[int(seed_str)] = split
        self._cache: dict[tuple[int, int], tuple[Waveform, VisualFeatureSequence]] = {}
        self._utt_counts: dict[int, int] = {}

    def speakers(self, split: str | None = None) -> list[int]:
        return sorted(s for s, sp in self.splits.items() if split is None or sp == split)

    def n_utterances(self, speaker_seed: int) -> int:
        if speaker_seed not in self._utt_counts:
            audio_dir = self.root / "audio" / str(speaker_seed)
            if not audio_dir.is_dir():
                raise CorpusError(f"missing audio directory for speaker {speaker_seed}")
            self._utt_counts[speaker_seed] = len(list(audio_dir.glob("*.wav")))
        return self._utt_counts[speaker_seed]

    def utterance(self, speaker_seed: int, index: int):
        key = (speaker_seed, index)
        if key not in self._cache:
            wav_path = self.root / "audio" / str(speaker_seed) / f"{index:03d}.wav"
            avf_path = self.root / "visual" / str(speaker_seed) / f"{index:03d}.avf"
            if not wav_path.is_file() or not avf_path.is_file():
                raise CorpusError(f"missing utterance {index} for speaker {speaker_seed}")
            self._cache[key] = (read_wav(wav_path), read_avf(avf_path))
        return self._cache[key]

    def view(self, split: str) -> "CorpusView":
        speakers = self.speakers(split)
        if not speakers:
            raise CorpusError(f"corpus has no {split!r} speakers")
        return CorpusView(self, speakers)


class CorpusView:
    """A corpus restricted to one speaker split."""

    def __init__(self, corpus: Corpus, speakers: list[int]):
        self._corpus = corpus
        self.speaker_seeds = list(speakers)

    def n_utterances(self, speaker_seed: int) -> int:
        return self._corpus.n_utterances(speaker_seed)

    def utterance(self, speaker_seed: int, index: int):
        return self._corpus.utterance(speaker_seed, index)


def build_corpus(
    n_speakers: int,
    utterances_per_speaker: int,
    master_seed: int,
    out_dir,
    visual_dim: int = 32,
    frames_per_utterance: int = 100,
    noise_scale: float = 0.05,
) -> Corpus:
    """Generate and persist a speaker-disjoint corpus (80/20 split by
    identity)."""
    if n_speakers < MIN_SPEAKERS:
        raise ValueError(f"n_speakers must be >= {MIN_SPEAKERS}, got {n_speakers}")
    if utterances_per_speaker < 1:
        raise ValueError("utterances_per_speaker must be >= 1")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    seeds = [derive_seed(master_seed, i) for i in range(n_speakers)]
    if len(set(seeds)) != n_speakers:  # astronomically unlikely
        raise RuntimeError("speaker seed collision; choose another master seed")
    order = np.random.default_rng(master_seed).permutation(n_speakers)
    n_test = max(1, int(round(0.2 * n_speakers)))
    test_set = {seeds[i] for i in order[:n_test]}

    lines = []
    for seed in seeds:
        split = "test" if seed in test_set else "train"
        lines.append(f"{seed}\t{split}")
        speaker = SyntheticSpeaker.from_seed(seed, visual_dim)
        (root / "audio" / str(seed)).mkdir(parents=True, exist_ok=True)
        (root / "visual" / str(seed)).mkdir(parents=True, exist_ok=True)
        for k in range(utterances_per_speaker):
            utt = synth_utterance(speaker, frames_per_utterance, derive_seed(master_seed, seed, k))
            feats = synth_visual_features(utt, visual_dim, noise_scale)
            write_wav(root / "audio" / str(seed) / f"{k:03d}.wav", utt.waveform)
            write_avf(root / "visual" / str(seed) / f"{k:03d}.avf", feats)
    (root / "speakers.tsv").write_text("\n".join(lines) + "\n")
    return Corpus(root)
