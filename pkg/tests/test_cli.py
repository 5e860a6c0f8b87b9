import numpy as np
import pytest

from avse import checkpoint, dsp, synthdata, wavio
from avse.cli import main
from avse.dsp import Waveform


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def corpus_dir(workdir):
    out = workdir / "corpus"
    rc = main(["synth", "--out", str(out), "--speakers", "8", "--utts", "2",
               "--seed", "3", "--frames", "40"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def ckpt_path(workdir, corpus_dir):
    cfg = workdir / "run.cfg"
    cfg.write_text(
        "preset = toy\n"
        "mag_channels = 16\n"
        "phase_channels = 12\n"
        "stages = 1:4\n"
        "phase_steps = 2,1,1\n"
        "batch_size = 2\n"
        "segment_frames = 20\n"
        "learning_rate = 1e-3\n"
        "val_interval = 2\n"
        "val_mixtures = 1\n"
        "seed = 11\n"
    )
    out = workdir / "model.ckpt"
    rc = main(["train", "--corpus", str(corpus_dir), "--config", str(cfg),
               "--out", str(out)])
    assert rc == 0
    return out


def first_utterance_paths(corpus_dir):
    corpus = synthdata.Corpus(corpus_dir)
    speakers = corpus.speakers("train")
    wav = corpus_dir / "audio" / str(speakers[0]) / "000.wav"
    avf = corpus_dir / "visual" / str(speakers[0]) / "000.avf"
    other = corpus_dir / "audio" / str(speakers[1]) / "000.wav"
    return wav, avf, other


# -- synth ------------------------------------------------------------------------


def test_synth_file_counts(corpus_dir):
    wavs = list(corpus_dir.glob("audio/*/*.wav"))
    avfs = list(corpus_dir.glob("visual/*/*.avf"))
    assert len(wavs) == 16 and len(avfs) == 16


def test_synth_deterministic(workdir):
    a = workdir / "ca"
    b = workdir / "cb"
    for out in (a, b):
        rc = main(["synth", "--out", str(out), "--speakers", "6", "--utts", "1",
                   "--seed", "9", "--frames", "20"])
        assert rc == 0
    wa = sorted(a.glob("audio/*/*.wav"))
    wb = sorted(b.glob("audio/*/*.wav"))
    assert [p.name for p in wa] == [p.name for p in wb]
    for pa, pb in zip(wa, wb):
        assert pa.read_bytes() == pb.read_bytes()


def test_synth_too_few_speakers(workdir):
    rc = main(["synth", "--out", str(workdir / "bad"), "--speakers", "3",
               "--utts", "1", "--seed", "0"])
    assert rc == 2


# -- mix --------------------------------------------------------------------------


def test_mix_writes_mixture_and_manifest(workdir, corpus_dir):
    ref, _, noise = first_utterance_paths(corpus_dir)
    out = workdir / "mixture.wav"
    rc = main(["mix", "--ref", str(ref), "--noise", str(noise), "--out", str(out)])
    assert rc == 0
    manifest = workdir / "mixture.wav.manifest"
    lines = manifest.read_text().strip().splitlines()
    assert len(lines) == 2
    for line in lines:
        path, scale = line.split("\t")
        float(scale)
    mixture = wavio.read_wav(out)
    r = wavio.read_wav(ref)
    assert len(mixture.samples) == len(r.samples)


def test_mix_equal_rms_scale_is_one(workdir):
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.4, 0.4, 6400)
    a = workdir / "eq_a.wav"
    b = workdir / "eq_b.wav"
    wavio.write_wav(a, Waveform(x))
    wavio.write_wav(b, Waveform(x[::-1].copy()))
    out = workdir / "eq_mix.wav"
    rc = main(["mix", "--ref", str(a), "--noise", str(b), "--out", str(out)])
    assert rc == 0
    line = (workdir / "eq_mix.wav.manifest").read_text().splitlines()[1]
    assert abs(float(line.split("\t")[1]) - 1.0) < 1e-6


def test_mix_rejects_five_noises(workdir, corpus_dir):
    ref, _, noise = first_utterance_paths(corpus_dir)
    rc = main(["mix", "--ref", str(ref), "--noise"] + [str(noise)] * 5
              + ["--out", str(workdir / "no.wav")])
    assert rc == 2


def test_mix_rejects_length_mismatch(workdir, corpus_dir):
    ref, _, _ = first_utterance_paths(corpus_dir)
    short = workdir / "short.wav"
    wavio.write_wav(short, Waveform(np.zeros(1600)))
    rc = main(["mix", "--ref", str(ref), "--noise", str(short),
               "--out", str(workdir / "no.wav")])
    assert rc == 2


# -- train ------------------------------------------------------------------------


def test_train_writes_checkpoint_and_log(ckpt_path):
    raw = ckpt_path.read_bytes()
    assert raw[:4] == b"AVSE"
    log = ckpt_path.parent / (ckpt_path.name + ".log")
    lines = [l for l in log.read_text().splitlines() if l.strip()]
    assert len(lines) >= 1
    for line in lines:
        parts = line.split("\t")
        assert len(parts) == 5


def test_train_bad_config_exits_2(workdir, corpus_dir):
    cfg = workdir / "bad.cfg"
    cfg.write_text("nonsense = 1\n")
    rc = main(["train", "--corpus", str(corpus_dir), "--config", str(cfg),
               "--out", str(workdir / "x.ckpt")])
    assert rc == 2


def test_train_missing_corpus_exits_1(workdir):
    cfg = workdir / "ok.cfg"
    cfg.write_text("seed = 1\n")
    rc = main(["train", "--corpus", str(workdir / "missing"), "--config", str(cfg),
               "--out", str(workdir / "x.ckpt")])
    assert rc == 1


# -- enhance ----------------------------------------------------------------------


def test_enhance_phase_variants(workdir, corpus_dir, ckpt_path):
    ref, avf, noise = first_utterance_paths(corpus_dir)
    mix = workdir / "enh_mix.wav"
    assert main(["mix", "--ref", str(ref), "--noise", str(noise), "--out", str(mix)]) == 0

    for variant, extra in [
        ("pr", []),
        ("mix", []),
        ("gl", ["--gl-iters", "3"]),
        ("gt", ["--gt-wav", str(ref)]),
    ]:
        out = workdir / f"enh_{variant}.wav"
        rc = main(["enhance", "--ckpt", str(ckpt_path), "--mix", str(mix),
                   "--visual", str(avf), "--out", str(out), "--phase", variant] + extra)
        assert rc == 0, variant
        enhanced = wavio.read_wav(out)
        assert len(enhanced.samples) == len(wavio.read_wav(mix).samples)
        assert np.any(enhanced.samples != 0.0)


def test_enhance_mix_phase_equals_noisy_phase(workdir, corpus_dir, ckpt_path):
    # re-analysis of the --phase mix output must reproduce the noisy phase
    # wherever the masked magnitude is usable
    mix = workdir / "enh_mix.wav"
    out = workdir / "enh_mix.wav.mixphase.wav"
    _, avf, _ = first_utterance_paths(corpus_dir)
    rc = main(["enhance", "--ckpt", str(ckpt_path), "--mix", str(mix),
               "--visual", str(avf), "--out", str(out), "--phase", "mix"])
    assert rc == 0
    mixture = wavio.read_wav(mix)
    enhanced = wavio.read_wav(out)
    spec_mix = dsp.stft(mixture)
    spec_out = dsp.stft(enhanced)
    mag_mix, phase_mix = dsp.split_mag_phase(spec_mix)
    mag_out, phase_out = dsp.split_mag_phase(spec_out)
    f = mag_mix.shape[1]
    strong = mag_out.values > 0.05 * mag_out.values.max()
    sel = np.concatenate([strong, strong], axis=1)
    # the masked-and-resynthesized signal is not bit-equal, so compare the
    # dominant bins only, which carry the phase contract
    diff = np.abs(phase_mix.values - phase_out.values)[sel]
    assert np.median(diff) < 0.2


def test_enhance_gt_without_wav_exits_2(workdir, corpus_dir, ckpt_path):
    _, avf, _ = first_utterance_paths(corpus_dir)
    rc = main(["enhance", "--ckpt", str(ckpt_path), "--mix", str(workdir / "enh_mix.wav"),
               "--visual", str(avf), "--out", str(workdir / "no.wav"), "--phase", "gt"])
    assert rc == 2


def test_enhance_misaligned_exits_2(workdir, corpus_dir, ckpt_path):
    _, avf, _ = first_utterance_paths(corpus_dir)
    bad = workdir / "misaligned.wav"
    wavio.write_wav(bad, Waveform(np.zeros(641 * 16)))
    rc = main(["enhance", "--ckpt", str(ckpt_path), "--mix", str(bad),
               "--visual", str(avf), "--out", str(workdir / "no.wav")])
    assert rc == 2


# -- evaluate ----------------------------------------------------------------------


def test_evaluate_output_format(workdir, corpus_dir, capsys):
    ref, _, noise = first_utterance_paths(corpus_dir)
    rc = main(["evaluate", "--estimate", str(ref), "--target", str(ref),
               "--interferers", str(noise)])
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 2
    header = out[0].split("\t")
    values = out[1].split("\t")
    assert header == ["sir_db", "sdr_db", "sar_db", "pesq"]
    assert values[3] == "n/a"
    assert float(values[0]) == 60.0 and float(values[1]) == 60.0


def test_evaluate_with_stoi(workdir, corpus_dir, capsys):
    ref, _, noise = first_utterance_paths(corpus_dir)
    rc = main(["evaluate", "--estimate", str(ref), "--target", str(ref),
               "--interferers", str(noise), "--stoi"])
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0].split("\t")[-1] == "stoi"
    assert abs(float(out[1].split("\t")[-1]) - 1.0) < 1e-4


def test_evaluate_length_mismatch_exits_2(workdir, corpus_dir):
    ref, _, _ = first_utterance_paths(corpus_dir)
    short = workdir / "short2.wav"
    wavio.write_wav(short, Waveform(np.zeros(3200)))
    rc = main(["evaluate", "--estimate", str(ref), "--target", str(short)])
    assert rc == 2


def test_evaluate_malformed_wav_exits_1(workdir, corpus_dir):
    ref, _, _ = first_utterance_paths(corpus_dir)
    junk = workdir / "junk.wav"
    junk.write_bytes(b"RIFFgarbage")
    rc = main(["evaluate", "--estimate", str(junk), "--target", str(ref)])
    assert rc == 1


# -- report -----------------------------------------------------------------------


def test_report_writes_tsv_and_figures(workdir, corpus_dir, ckpt_path, capsys):
    out_dir = workdir / "report"
    rc = main(["report", "--ckpt", str(ckpt_path), "--corpus", str(corpus_dir),
               "--out", str(out_dir), "--mixtures", "2", "--seed", "5", "--segment-frames", "40",
               "--log", str(ckpt_path) + ".log"])
    assert rc == 0
    tsv = out_dir / "report.tsv"
    assert tsv.is_file()
    lines = [l for l in tsv.read_text().splitlines() if l and not l.startswith("#")]
    assert lines[0].split("\t") == ["mag", "phase", "sir_db", "sdr_db", "sar_db",
                                    "pesq", "stoi"]
    assert len(lines) == 6  # header + five variants
    variants = [tuple(l.split("\t")[:2]) for l in lines[1:]]
    assert variants == [("Mix", "Mix"), ("Pr", "GT"), ("Pr", "GL"), ("Pr", "Mix"),
                        ("Pr", "Pr")]
    for line in lines[1:]:
        assert line.split("\t")[5] == "n/a"  # pesq column
    assert (out_dir / "metrics_by_variant.png").stat().st_size > 0
    assert (out_dir / "example_spectrograms.png").stat().st_size > 0
    assert (out_dir / "training_curve.png").stat().st_size > 0
