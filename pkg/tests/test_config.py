import pytest

from streamgrid.config import PRESETS, Config, ConfigError, load_config, load_preset, parse_config


def test_defaults_match_documented_values():
    c = Config()
    assert c.rms_decay == 0.95
    assert (c.lambda_tv_sigma, c.lambda_tv_sh) == (5e-4, 5e-3)
    assert c.epsilon == pytest.approx(1 / 27)
    assert c.pilot_tv_mult == 10


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load(name):
    cfg = load_preset(name)
    assert isinstance(cfg, Config)
    assert load_config(name) == cfg


def test_reference_presets():
    n3dv = load_preset("n3dv")
    assert (n3dv.pilot_iters, n3dv.full_iters, n3dv.base_iters, n3dv.base_batch) == (750, 500, 128000, 5000)
    meet = load_preset("meetroom")
    assert meet.pilot_iters == 1000
    assert meet.epsilon == pytest.approx(1.5 / 27)


def test_desk_preset_reaches_64():
    assert load_preset("desk").final_dims().shape == (64, 64, 64)


def test_parse_values():
    cfg = parse_config("""
        # comment
        base_shape = 8 8 4
        epsilon = 2/27   # trailing comment
        use_band = false
        holdout_view = none
        world_min = -2, -2, -1
    """)
    assert cfg.base_shape == (8, 8, 4)
    assert cfg.epsilon == pytest.approx(2 / 27)
    assert cfg.use_band is False
    assert cfg.holdout_view is None
    assert cfg.world_min == (-2.0, -2.0, -1.0)


def test_preset_include():
    cfg = parse_config("preset = n3dv\nfull_iters = 7\n")
    assert cfg.full_iters == 7 and cfg.pilot_iters == 750


def test_text_roundtrip():
    cfg = Config(seed=5, holdout_view=2, epsilon=0.125)
    assert parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text, match", [
    ("nonsense_key = 1", "unknown key"),
    ("epsilon 3", "expected key = value"),
    ("base_iters = many", "bad value"),
    ("use_band = maybe", "boolean"),
    ("rho_d = -1", "rho_d"),
    ("rms_decay = 1.0", "rms_decay"),
    ("epsilon = -0.1", "thresholds"),
])
def test_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "x.cfg")


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_preset("nope")
