import numpy as np
import pytest

from avse import dsp, mixgen, synthdata


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return synthdata.build_corpus(8, 3, master_seed=21, out_dir=root)


def test_rms_values():
    assert mixgen.rms(np.array([1.0, -1.0, 1.0, -1.0])) == 1.0
    assert mixgen.rms(np.zeros(16)) == 0.0
    with pytest.raises(ValueError):
        mixgen.rms(np.array([]))


def test_rms_unit_sine_one_period():
    # direct summation oracle: rms of a unit sine over a full period
    n = 1600
    x = np.sin(2 * np.pi * np.arange(n) / n)
    oracle = np.sqrt(sum(v * v for v in x) / n)
    got = mixgen.rms(dsp.Waveform(x))
    assert abs(got - 1.0 / np.sqrt(2.0)) < 1e-3
    assert abs(got - oracle) < 1e-12


def test_mix_empty_noise_list_is_reference():
    rng = np.random.default_rng(0)
    ref_wave = dsp.Waveform(rng.standard_normal(4800) * 0.1)
    ref = dsp.stft(ref_wave)
    mixture, scaled, scales = mixgen.mix_spectrograms(ref, [])
    assert scaled == [] and scales == []
    assert np.allclose(mixture.to_complex(), ref.to_complex())


def test_mix_scale_is_rms_ratio():
    rng = np.random.default_rng(1)
    ref_wave = dsp.Waveform(rng.standard_normal(4800))
    ref_wave = dsp.Waveform(0.1 * ref_wave.samples / mixgen.rms(ref_wave))
    noise_wave = dsp.Waveform(rng.standard_normal(4800))
    noise_wave = dsp.Waveform(0.2 * noise_wave.samples / mixgen.rms(noise_wave))
    _, _, scales = mixgen.mix_spectrograms(
        dsp.stft(ref_wave), [(dsp.stft(noise_wave), noise_wave)], reference_rms=0.1
    )
    assert abs(scales[0] - 0.5) < 1e-12


def test_mix_rms_recovered_via_istft_when_omitted():
    rng = np.random.default_rng(2)
    ref_wave = dsp.Waveform(rng.standard_normal(4800) * 0.3)
    noise_wave = dsp.Waveform(rng.standard_normal(4800) * 0.1)
    _, _, with_rms = mixgen.mix_spectrograms(
        dsp.stft(ref_wave), [(dsp.stft(noise_wave), noise_wave)],
        reference_rms=mixgen.rms(ref_wave),
    )
    _, _, derived = mixgen.mix_spectrograms(
        dsp.stft(ref_wave), [(dsp.stft(noise_wave), noise_wave)]
    )
    assert abs(with_rms[0] - derived[0]) < 1e-9


def test_mix_matches_time_domain(corpus):
    view = corpus.view("train")
    ex = mixgen.sample_training_example(view, 2, 40, rng_seed=7)
    direct = dsp.stft(ex.mixture_waveform, ex.mixture.config).to_complex()
    assert np.max(np.abs(direct - ex.mixture.to_complex())) < 1e-9


def test_mix_rejects_zero_rms_and_shape_mismatch():
    rng = np.random.default_rng(3)
    ref_wave = dsp.Waveform(rng.standard_normal(4800) * 0.1)
    ref = dsp.stft(ref_wave)
    silent = dsp.Waveform(np.zeros(4800))
    with pytest.raises(ValueError):
        mixgen.mix_spectrograms(ref, [(dsp.stft(silent), silent)], reference_rms=0.1)
    short = dsp.Waveform(rng.standard_normal(3200) * 0.1)
    with pytest.raises(ValueError):
        mixgen.mix_spectrograms(ref, [(dsp.stft(short), short)], reference_rms=0.1)


def test_sample_example_shapes(corpus):
    view = corpus.view("train")
    ex = mixgen.sample_training_example(view, 1, 60, rng_seed=3)
    assert ex.visual.values.shape == (60, 32)
    assert ex.mixture.shape == (240, 321)
    assert ex.reference.shape == (240, 321)
    assert len(ex.interferer_sources) == 1
    assert len(ex.interferer_visuals) == 1


def test_sample_example_deterministic(corpus):
    view = corpus.view("train")
    a = mixgen.sample_training_example(view, 2, 40, rng_seed=11)
    b = mixgen.sample_training_example(view, 2, 40, rng_seed=11)
    assert np.array_equal(a.mixture.re, b.mixture.re)
    assert np.array_equal(a.visual.values, b.visual.values)
    assert a.reference_speaker == b.reference_speaker
    c = mixgen.sample_training_example(view, 2, 40, rng_seed=12)
    assert not np.array_equal(a.mixture.re, c.mixture.re)


def test_sample_example_mixture_reconstruction(corpus):
    view = corpus.view("train")
    ex = mixgen.sample_training_example(view, 4, 40, rng_seed=5)
    resum = ex.reference.to_complex() + sum(s.to_complex() for s in ex.interferer_sources)
    assert np.max(np.abs(resum - ex.mixture.to_complex())) < 1e-9


def test_sampled_interferers_rms_matches_reference(corpus):
    view = corpus.view("train")
    for seed in range(5):
        ex = mixgen.sample_training_example(view, 2, 40, rng_seed=seed)
        ref_rms = mixgen.rms(ex.reference_waveform)
        for wave in ex.interferer_waveforms:
            assert abs(mixgen.rms(wave) - ref_rms) < 1e-9 * ref_rms


def test_sample_speakers_distinct(corpus):
    view = corpus.view("train")
    for seed in range(10):
        ex = mixgen.sample_training_example(view, 3, 40, rng_seed=seed)
        speakers = [ex.reference_speaker] + ex.interferer_speakers
        assert len(set(speakers)) == 4


def test_sample_rejects_insufficient_speakers(corpus):
    test_view = corpus.view("test")  # 8 speakers -> 2 in test split
    with pytest.raises(ValueError):
        mixgen.sample_training_example(test_view, 1 + len(test_view.speaker_seeds), 40, 0)
    with pytest.raises(ValueError):
        mixgen.sample_training_example(corpus.view("train"), 0, 40, 0)
