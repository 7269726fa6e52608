import pytest

from ontomatch.config import ConfigError, RunConfig, desk_preset, load_config, parse_config


class TestConfig:
    def test_round_trip(self):
        cfg = desk_preset(seed=3)
        assert parse_config(cfg.dumps()) == cfg

    def test_default_round_trip(self):
        assert parse_config(RunConfig().dumps()) == RunConfig()

    def test_seed_propagates(self):
        cfg = parse_config("[run]\nseed = 11\n")
        assert cfg.seed == cfg.corpus.seed == cfg.train.seed == cfg.transe.seed == 11

    def test_overrides_on_base(self):
        cfg = parse_config("[train]\nsteps = 9\nobjectives = c2c, mpath\n", desk_preset())
        assert cfg.train.steps == 9 and cfg.train.objectives == ("c2c", "mpath")
        assert cfg.encoder == desk_preset().encoder

    @pytest.mark.parametrize(
        "text",
        ["[bogus]\nx = 1\n", "[train]\nwarp = 1\n", "[train]\nsteps = many\n", "[encoder]\ndim = 10\nheads = 3\n", "no header"],
        ids=["section", "key", "type", "invalid", "syntax"],
    )
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_paths(self, tmp_path):
        (tmp_path / "run.ini").write_text("[run]\nsource = a.json\ntarget = b.obo\n")
        cfg = load_config(tmp_path / "run.ini")
        assert (cfg.paths.source, cfg.paths.target, cfg.paths.reference) == ("a.json", "b.obo", None)

    def test_desk_preset(self):
        cfg = desk_preset()
        assert (cfg.encoder.layers, cfg.encoder.dim, cfg.train.steps, cfg.transe.dim) == (1, 64, 500, 16)
