import pytest

from visdist.config import ConfigError, em_config, fit_params, read_config, synth_config


def test_read_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nomega = 0.8\n\ndiscard=0.5  # inline\n")
    assert read_config(p) == {"omega": "0.8", "discard": "0.5"}
    p.write_text("omega 0.8\n")
    with pytest.raises(ConfigError, match=":1"):
        read_config(p)


def test_em_config_mapping():
    cfg = em_config("distant", {"omega": "0.8", "discard": "0.5", "iterations": "3",
                                "lr": "0.2", "decay_epochs": "4,8", "finetune_epochs": "7"},
                    seed=5, has_signal=True)
    assert (cfg.omega, cfg.discard_fraction, cfg.iterations, cfg.seed) == (0.8, 0.5, 3, 5)
    assert cfg.fit.lr == 0.2 and cfg.fit.decay_epochs == (4, 8)
    assert cfg.finetune.epochs == 7
    assert cfg.use_external_signal


def test_em_config_without_signal_forces_omega():
    cfg = em_config("distant", {"omega": "0.3"}, seed=0, has_signal=False)
    assert cfg.omega == 1.0 and not cfg.use_external_signal
    semi = em_config("semi", {}, seed=0, has_signal=False)
    assert semi.discard_fraction == 0.0


@pytest.mark.parametrize("kv", [{"bogus": "1"}, {"omega": "high"}, {"discard": "1.5"},
                                {"seed": "3"}, {"finetune_bogus": "1"}])
def test_em_config_errors(kv):
    with pytest.raises(ConfigError):
        em_config("distant", kv, seed=0, has_signal=True)


def test_synth_and_fit_configs():
    cfg = synth_config({"num_scenes": "12", "objects_per_scene": "2,3"}, seed=4)
    assert (cfg.num_scenes, cfg.objects_per_scene, cfg.seed) == (12, (2, 3), 4)
    assert fit_params({"momentum": "0.5"}).momentum == 0.5
    with pytest.raises(ConfigError):
        synth_config({"num_scenes": "x"}, seed=0)
