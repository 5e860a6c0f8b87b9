"""Loss computation, optimizer stepping, and the three-phase curriculum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import dsp, metrics, model
from .mixgen import MixtureExample, sample_training_example
from .synthdata import CorpusView, derive_seed


@dataclass
class LossConfig:
    phase_weight: float = 1.0  # lambda balancing the phase term
    magnitude_reduction: str = "mean"

    def __post_init__(self):
        if self.phase_weight < 0:
            raise ValueError("phase_weight must be non-negative")
        if self.magnitude_reduction not in ("mean", "sum"):
            raise ValueError("magnitude_reduction must be 'mean' or 'sum'")


@dataclass
class CurriculumSchedule:
    """Interferer-count stages over a global step counter, plus the three
    trainability phases (magnitude-only, phase-only, end-to-end).

    The stage list spans the run: phase 1 walks the early stages and the
    later phases continue wherever the counter lands (the last stage's
    interferer count once the stages are exhausted).
    """

    stages: list[tuple[int, int]] = field(default_factory=lambda: [(1, 2000), (2, 2000)])
    phase_steps: tuple[int, int, int] = (2000, 1000, 1000)

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        last = 0
        for n, steps in self.stages:
            if not 1 <= n <= 4:
                raise ValueError(f"n_interferers {n} outside [1, 4]")
            if n < last:
                raise ValueError("n_interferers must be non-decreasing across stages")
            if steps < 0:
                raise ValueError("stage step counts must be non-negative")
            last = n
        if len(self.phase_steps) != 3 or any(s < 0 for s in self.phase_steps):
            raise ValueError("phase_steps must be three non-negative counts")

    @property
    def total_steps(self) -> int:
        return sum(self.phase_steps)

    def stage_at(self, global_step: int) -> tuple[int, int]:
        """(stage index, n_interferers) for a global step."""
        upto = 0
        for i, (n, steps) in enumerate(self.stages):
            upto += steps
            if global_step < upto:
                return i, n
        return len(self.stages) - 1, self.stages[-1][0]

    def phase_at(self, global_step: int) -> int:
        if global_step < self.phase_steps[0]:
            return 1
        if global_step < self.phase_steps[0] + self.phase_steps[1]:
            return 2
        return 3


class AdamOptimizer:
    """Adaptive moment estimation with per-parameter step counts, so
    parameters unfrozen late still get full bias correction."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.moments: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}

    def step(self, params: list[ag.Parameter]) -> None:
        for p in params:
            if p.grad is None:
                continue
            g = p.grad
            m, v, t = self.moments.get(
                p.name, (np.zeros_like(p.values), np.zeros_like(p.values), 0)
            )
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.values = p.values - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.values.dtype
            )
            self.moments[p.name] = (m, v, t)


def magnitude_loss(m_hat: ag.DiffTensor, m_star: np.ndarray, cfg: LossConfig) -> ag.DiffTensor:
    diff = (m_hat - m_star.astype(m_hat.dtype)).abs()
    return diff.mean() if cfg.magnitude_reduction == "mean" else diff.sum()


def total_loss(
    m_hat: ag.DiffTensor,
    m_star: np.ndarray,
    phi_hat: ag.DiffTensor,
    phi_star: np.ndarray,
    cfg: LossConfig | None = None,
) -> ag.DiffTensor:
    """L1 magnitude error minus the magnitude-weighted cosine similarity
    between predicted and ground-truth phase pairs (mean over T x F)."""
    cfg = cfg or LossConfig()
    m_star = np.asarray(m_star)
    phi_star = np.asarray(phi_star)
    if m_hat.values.shape != m_star.shape:
        raise ValueError(f"magnitude shapes differ: {m_hat.values.shape} vs {m_star.shape}")
    if phi_hat.values.shape != phi_star.shape:
        raise ValueError(f"phase shapes differ: {phi_hat.values.shape} vs {phi_star.shape}")
    if phi_star.shape[-1] != 2 * m_star.shape[-1]:
        raise ValueError("phase width must be twice the magnitude width")

    loss = magnitude_loss(m_hat, m_star, cfg)
    if cfg.phase_weight > 0:
        # <phi_hat, phi_star> per (t, f), weighted by M*: with the tiled
        # weight this is a single elementwise product over the 2F layout.
        weight = np.concatenate([m_star, m_star], axis=-1).astype(phi_hat.dtype)
        dots = phi_hat * phi_star.astype(phi_hat.dtype)
        n_bins = m_star.size  # B*T*F for batched inputs
        phase_term = (dots * weight).sum() * (1.0 / n_bins)
        loss = loss - cfg.phase_weight * phase_term
    return loss


def _stack_examples(examples: list[MixtureExample]):
    """Batch arrays (B, T, .) from equal-shape examples."""
    visual = np.stack([ex.visual.values for ex in examples])
    mixture_mag = []
    mixture_phase = []
    clean_mag = []
    clean_phase = []
    for ex in examples:
        m_n, phi_n = dsp.split_mag_phase(ex.mixture)
        m_c, phi_c = dsp.split_mag_phase(ex.reference)
        mixture_mag.append(m_n.values)
        mixture_phase.append(phi_n.values)
        clean_mag.append(m_c.values)
        clean_phase.append(phi_c.values)
    return (
        visual,
        np.stack(mixture_mag),
        np.stack(mixture_phase),
        np.stack(clean_mag),
        np.stack(clean_phase),
    )


def trainable_for_phase(mp: model.ModelParameters, phase: int) -> list[ag.Parameter]:
    if phase == 1:
        return mp.magnitude_parameters()
    if phase == 2:
        return mp.phase_parameters()
    if phase == 3:
        return mp.all_parameters()
    raise ValueError(f"phase must be 1, 2, or 3, got {phase}")


def train_step(
    examples,
    mp: model.ModelParameters,
    opt: AdamOptimizer,
    phase: int,
    loss_cfg: LossConfig | None = None,
) -> float:
    """One optimizer step on a MixtureExample or a list of them.

    Phase 1 trains the magnitude sub-network on the L1 term alone; phase 2
    freezes it (eval-mode statistics, detached mask output) and trains the
    phase sub-network; phase 3 fine-tunes everything on the full loss.
    """
    if isinstance(examples, MixtureExample):
        examples = [examples]
    loss_cfg = loss_cfg or LossConfig()
    active = trainable_for_phase(mp, phase)

    visual, mix_mag, mix_phase, clean_mag, clean_phase = _stack_examples(examples)
    fb = dsp.mel_filterbank(examples[0].mixture.config, mp.cfg.n_mels)
    mel = model.mel_features(mix_mag, fb)

    dt = mp.dtype
    mag_mode = "train" if phase in (1, 3) else "eval"
    fv = model.visual_stream(ag.DiffTensor(visual.astype(dt)), mp, mag_mode)
    fa = model.audio_stream(ag.DiffTensor(mel.astype(dt)), mp, mag_mode)
    _, m_hat = model.fusion_and_mask(fv, fa, mix_mag, mp, mag_mode)

    if phase == 1:
        loss = magnitude_loss(m_hat, clean_mag, loss_cfg)
    else:
        phase_in = m_hat.detach() if phase == 2 else m_hat
        phi_hat = model.phase_subnet(phase_in, mix_phase, mp, "train")
        loss = total_loss(m_hat if phase == 3 else phase_in, clean_mag, phi_hat,
                          clean_phase, loss_cfg)

    ag.zero_grad(active)
    ag.backward(loss)
    opt.step(active)
    return float(loss.values)


@dataclass
class LogPoint:
    step: int
    stage: int
    phase: int
    loss: float
    val_sdr_db: float

    def format(self) -> str:
        return f"{self.step}\t{self.stage}\t{self.phase}\t{self.loss:.6f}\t{self.val_sdr_db:.3f}"


def validation_sdr(
    mp: model.ModelParameters,
    test_view: CorpusView,
    seed: int,
    n_mixtures: int = 6,
    segment_frames: int = 60,
    stft_cfg: dsp.StftConfig | None = None,
) -> float:
    """Mean SDR of enhanced output over seeded 2-speaker test mixtures."""
    cfg = stft_cfg or dsp.StftConfig()
    sdrs = []
    for i in range(n_mixtures):
        ex = sample_training_example(
            test_view, 1, segment_frames, derive_seed(seed, 0x7A1, i), cfg
        )
        result = model.enhance(ex.mixture_waveform, ex.visual, mp, cfg)
        res = metrics.bss_eval(result.waveform, ex.reference_waveform, ex.interferer_waveforms)
        sdrs.append(res.sdr_db)
    return float(np.mean(sdrs))


def run_curriculum(
    corpus,
    schedule: CurriculumSchedule,
    seed: int,
    mp: model.ModelParameters | None = None,
    net_cfg: model.NetConfig | None = None,
    loss_cfg: LossConfig | None = None,
    learning_rate: float = 1e-4,
    batch_size: int = 4,
    segment_frames: int = 60,
    val_interval: int = 500,
    val_mixtures: int = 6,
    stft_cfg: dsp.StftConfig | None = None,
    log_sink=None,
):
    """Train through the schedule; returns (parameters, log points).

    Deterministic given `seed`: every example draw uses a seed derived from
    (seed, global step, slot), independent of timing.
    """
    cfg = stft_cfg or dsp.StftConfig()
    loss_cfg = loss_cfg or LossConfig()
    if mp is None:
        mp = model.ModelParameters(net_cfg or model.NetConfig.toy(), seed=derive_seed(seed, 1))
    train_view = corpus.view("train")
    test_view = corpus.view("test")
    opt = AdamOptimizer(lr=learning_rate)

    log: list[LogPoint] = []
    recent: list[float] = []

    def emit(step, stage, phase):
        loss_avg = float(np.mean(recent[-50:])) if recent else float("nan")
        point = LogPoint(step, stage, phase, loss_avg,
                         validation_sdr(mp, test_view, seed, val_mixtures, segment_frames, cfg))
        log.append(point)
        if log_sink is not None:
            log_sink(point)

    total = schedule.total_steps
    prev_stage = prev_phase = None
    for step in range(total):
        stage_idx, n_interferers = schedule.stage_at(step)
        phase = schedule.phase_at(step)
        if prev_stage is not None and (stage_idx != prev_stage or phase != prev_phase):
            emit(step, prev_stage + 1, prev_phase)
        prev_stage, prev_phase = stage_idx, phase

        examples = [
            sample_training_example(
                train_view, n_interferers, segment_frames, derive_seed(seed, step, i), cfg
            )
            for i in range(batch_size)
        ]
        recent.append(train_step(examples, mp, opt, phase, loss_cfg))
        if (step + 1) % val_interval == 0:
            emit(step + 1, stage_idx + 1, phase)

    if total > 0 and (not log or log[-1].step != total):
        emit(total, prev_stage + 1, prev_phase)
    return mp, log
