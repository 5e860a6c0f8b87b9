"""Table-style evaluation reports over held-out mixtures.

Evaluates the reconstruction variants (Mix/Mix, Pr/GT, Pr/GL, Pr/Mix,
Pr/Pr) on sampled test mixtures, writes a tab-separated report, and renders
summary figures next to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import dsp, metrics, mixgen, model
from .synthdata import CorpusView, derive_seed

VARIANTS = ("Mix/Mix", "Pr/GT", "Pr/GL", "Pr/Mix", "Pr/Pr")
REPORT_HEADER = ["mag", "phase", "sir_db", "sdr_db", "sar_db", "pesq", "stoi"]


@dataclass
class VariantScores:
    sir_db: list
    sdr_db: list
    sar_db: list
    stoi: list

    @classmethod
    def empty(cls):
        return cls([], [], [], [])


def evaluate_example(
    mp: model.ModelParameters,
    ex: mixgen.MixtureExample,
    stft_cfg: dsp.StftConfig,
    gl_iters: int = 50,
    with_stoi: bool = False,
):
    """Per-variant waveforms and metrics for one mixture."""
    result = model.enhance(ex.mixture_waveform, ex.visual, mp, stft_cfg)
    m_hat = result.enhanced_magnitude
    _, phi_noisy = dsp.split_mag_phase(ex.mixture)
    _, phi_gt = dsp.split_mag_phase(dsp.stft(ex.reference_waveform, stft_cfg))

    waveforms = {
        "Mix/Mix": ex.mixture_waveform,
        "Pr/GT": dsp.istft(dsp.merge_mag_phase(m_hat, phi_gt, stft_cfg)),
        "Pr/GL": dsp.griffin_lim(m_hat, gl_iters, stft_cfg),
        "Pr/Mix": dsp.istft(dsp.merge_mag_phase(m_hat, phi_noisy, stft_cfg)),
        "Pr/Pr": result.waveform,
    }
    scores = {}
    for name, wave in waveforms.items():
        bss = metrics.bss_eval(wave, ex.reference_waveform, ex.interferer_waveforms)
        st = metrics.stoi(wave, ex.reference_waveform) if with_stoi else None
        scores[name] = (bss, st)
    return scores, result


def evaluate_testset(
    mp: model.ModelParameters,
    test_view: CorpusView,
    n_mixtures: int = 20,
    n_interferers: int = 1,
    seed: int = 0,
    segment_frames: int = 60,
    stft_cfg: dsp.StftConfig | None = None,
    gl_iters: int = 50,
    with_stoi: bool = False,
):
    """Sample mixtures from a test split and score every variant.

    Returns (per-variant VariantScores, first example, first enhancement).
    """
    cfg = stft_cfg or dsp.StftConfig()
    table = {v: VariantScores.empty() for v in VARIANTS}
    first = None
    for i in range(n_mixtures):
        ex = mixgen.sample_training_example(
            test_view, n_interferers, segment_frames, derive_seed(seed, 0xE7A, i), cfg
        )
        scores, result = evaluate_example(mp, ex, cfg, gl_iters, with_stoi)
        if first is None:
            first = (ex, result)
        for name, (bss, st) in scores.items():
            table[name].sir_db.append(bss.sir_db)
            table[name].sdr_db.append(bss.sdr_db)
            table[name].sar_db.append(bss.sar_db)
            if st is not None:
                table[name].stoi.append(st)
    return table, first


def format_report(table, n_mixtures: int, n_interferers: int) -> str:
    """Tab-separated table of per-variant means; PESQ is licensed and
    deliberately absent, so its column reads n/a."""
    lines = [
        f"# reconstruction quality over {n_mixtures} synthetic mixtures, "
        f"{n_interferers + 1} speakers each",
        f"# bss_eval: {metrics.PROJECTION_NOTE}",
        "\t".join(REPORT_HEADER),
    ]
    for name in VARIANTS:
        s = table[name]
        mag, phase = name.split("/")
        st = f"{np.mean(s.stoi):.3f}" if s.stoi else "n/a"
        lines.append(
            f"{mag}\t{phase}\t{np.mean(s.sir_db):.2f}\t{np.mean(s.sdr_db):.2f}"
            f"\t{np.mean(s.sar_db):.2f}\tn/a\t{st}"
        )
    return "\n".join(lines) + "\n"


# -- figures -------------------------------------------------------------------


def _log_mag(mag: np.ndarray) -> np.ndarray:
    return 20.0 * np.log10(mag.T + 1e-6)


def render_metric_bars(table, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    idx = np.arange(len(VARIANTS))
    width = 0.27
    for off, (attr, label) in enumerate(
        [("sir_db", "SIR"), ("sdr_db", "SDR"), ("sar_db", "SAR")]
    ):
        means = [np.mean(getattr(table[v], attr)) for v in VARIANTS]
        ax.bar(idx + (off - 1) * width, means, width, label=label)
    ax.set_xticks(idx)
    ax.set_xticklabels(VARIANTS)
    ax.set_ylabel("dB")
    ax.set_title("Separation quality by reconstruction variant")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_example_spectrograms(ex, result, path) -> None:
    mix_mag, _ = dsp.split_mag_phase(ex.mixture)
    ref_mag, _ = dsp.split_mag_phase(ex.reference)
    panels = [
        ("mixture", mix_mag.values),
        ("clean reference", ref_mag.values),
        ("enhanced", result.enhanced_magnitude.values),
        ("mask", result.mask),
    ]
    fig, axes = plt.subplots(1, len(panels), figsize=(14, 3.2), sharey=True)
    for ax, (title, values) in zip(axes, panels):
        if title == "mask":
            im = ax.imshow(values.T, origin="lower", aspect="auto", cmap="viridis",
                           vmin=0.0, vmax=1.0)
        else:
            im = ax.imshow(_log_mag(values), origin="lower", aspect="auto",
                           cmap="magma", vmin=-60, vmax=40)
        ax.set_title(title)
        ax.set_xlabel("frame")
        fig.colorbar(im, ax=ax, fraction=0.046)
    axes[0].set_ylabel("frequency bin")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_curve(log_path, out_path) -> None:
    steps, losses, sdrs = [], [], []
    for line in Path(log_path).read_text().splitlines():
        if not line.strip():
            continue
        step, _stage, _phase, loss, sdr = line.split("\t")
        steps.append(int(step))
        losses.append(float(loss))
        sdrs.append(float(sdr))
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(steps, losses, "o-", color="tab:blue", label="loss")
    ax1.set_xlabel("step")
    ax1.set_ylabel("training loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(steps, sdrs, "s-", color="tab:red", label="val SDR")
    ax2.set_ylabel("validation SDR (dB)", color="tab:red")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def write_report(
    out_dir,
    table,
    first,
    n_mixtures: int,
    n_interferers: int,
    training_log=None,
) -> Path:
    """Write report.tsv plus figures into `out_dir`; returns the TSV path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / "report.tsv"
    tsv.write_text(format_report(table, n_mixtures, n_interferers))
    render_metric_bars(table, out / "metrics_by_variant.png")
    if first is not None:
        ex, result = first
        render_example_spectrograms(ex, result, out / "example_spectrograms.png")
    if training_log is not None and Path(training_log).is_file():
        render_training_curve(training_log, out / "training_curve.png")
    return tsv
