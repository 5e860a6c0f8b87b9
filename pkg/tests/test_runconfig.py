import pytest

from avse.runconfig import ConfigError, parse_config


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_parse_full_config(tmp_path):
    path = write(
        tmp_path,
        """
        # toy training run
        preset = toy
        seed = 42
        lambda = 0.5
        stages = 1:100,2:50
        phase_steps = 100,25,25
        batch_size = 2
        learning_rate = 3e-4
        val_interval = 50
        """,
    )
    cfg = parse_config(path)
    assert cfg.seed == 42
    assert cfg.phase_weight == 0.5
    assert cfg.stages == [(1, 100), (2, 50)]
    assert cfg.phase_steps == (100, 25, 25)
    assert cfg.learning_rate == 3e-4
    sched = cfg.schedule()
    assert sched.total_steps == 150
    assert cfg.net_config().mag_channels == 128
    assert cfg.stft_config().freq_bins == 321


def test_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, "\n"))
    assert cfg.preset == "toy"
    assert cfg.learning_rate == 1e-4
    assert cfg.loss_config().phase_weight == 1.0


def test_unknown_key_names_line(tmp_path):
    path = write(tmp_path, "preset = toy\nbogus_key = 3\n")
    with pytest.raises(ConfigError, match=":2"):
        parse_config(path)


def test_bad_value_names_line(tmp_path):
    path = write(tmp_path, "\n\nbatch_size = lots\n")
    with pytest.raises(ConfigError, match=":3"):
        parse_config(path)


def test_missing_equals_rejected(tmp_path):
    path = write(tmp_path, "preset toy\n")
    with pytest.raises(ConfigError, match=":1"):
        parse_config(path)


def test_semantic_validation(tmp_path):
    path = write(tmp_path, "stages = 2:10,1:10\n")
    with pytest.raises(ConfigError):
        parse_config(path)
    path = write(tmp_path, "preset = huge\n")
    with pytest.raises(ConfigError):
        parse_config(path)


def test_comments_and_blanks_ignored(tmp_path):
    cfg = parse_config(write(tmp_path, "# comment only\n\nseed = 7  # trailing\n"))
    assert cfg.seed == 7
