import pytest

from fedsim.config import (ConfigError, DEFAULT_GRIDS, SweepSpec, parse_config,
                           parse_sweep, serialize_config)
from fedsim.engine import ExperimentConfig, preset


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


MINIMAL = "[experiment]\nalgorithm = fedavg\n"

FULL = """\
[experiment]
algorithm = fedprox
seed = 7
n_clients = 40
participation = 0.25

[data]
classes = 10
dim = 32
train_per_class = 50
test_per_class = 20
separation = 2.5
alpha = 0.5
samples_per_client = 120

[algorithm]
local_rounds = 3
mu = 0.1
lr = 0.02
momentum = 0.8
batch_size = 16
hidden = 64

[budgets]
flop_budget = 1e10
byte_budget = 1e8
max_rounds = 50

[output]
dir = results/prox
"""


class TestParseConfig:
    def test_minimal_fills_method_defaults(self, tmp_path):
        exp = parse_config(write(tmp_path, MINIMAL))
        assert exp.algorithm.kind == "fedavg"
        assert exp.algorithm.local_rounds == 25  # preset, not the dataclass default
        assert exp.seed == 1
        assert exp.n_clients == 100
        assert exp.alpha == 0.01
        assert exp.hidden == 256
        assert exp.flop_budget == 5e11
        assert exp.byte_budget == 5e9
        assert exp.max_rounds == 2000

    def test_full_round_values(self, tmp_path):
        exp = parse_config(write(tmp_path, FULL))
        assert exp.algorithm.kind == "fedprox"
        assert exp.algorithm.local_rounds == 3
        assert exp.algorithm.mu == 0.1
        assert exp.algorithm.learning_rate == 0.02
        assert exp.algorithm.batch_size == 16
        assert (exp.seed, exp.n_clients, exp.participation) == (7, 40, 0.25)
        assert (exp.classes, exp.dim, exp.separation) == (10, 32, 2.5)
        assert exp.hidden == 64
        assert exp.max_rounds == 50
        assert exp.out_dir == "results/prox"

    def test_regime_selects_preset(self, tmp_path):
        text = "[experiment]\nalgorithm = moon\nregime = communication\n"
        exp = parse_config(write(tmp_path, text))
        assert exp.algorithm.local_rounds == 5
        assert exp.algorithm.mu == 10.0
        assert exp.algorithm.moon_tau == 0.1

    def test_comments_and_inline_comments(self, tmp_path):
        text = "# top comment\n[experiment]\nalgorithm = ist  # inline\nseed = 3\n"
        exp = parse_config(write(tmp_path, text))
        assert exp.algorithm.kind == "ist"
        assert exp.seed == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(str(tmp_path / "nope.ini"))

    def test_missing_algorithm(self, tmp_path):
        with pytest.raises(ConfigError, match="algorithm"):
            parse_config(write(tmp_path, "[experiment]\nseed = 1\n"))

    def test_unknown_algorithm(self, tmp_path):
        with pytest.raises(ConfigError, match="sgd"):
            parse_config(write(tmp_path, "[experiment]\nalgorithm = sgd\n"))

    def test_unknown_section(self, tmp_path):
        text = MINIMAL + "[network]\nlatency = 5\n"
        with pytest.raises(ConfigError, match=r"\[network\]"):
            parse_config(write(tmp_path, text))

    def test_unknown_key_named_in_error(self, tmp_path):
        text = MINIMAL + "[data]\nclases = 10\n"
        with pytest.raises(ConfigError, match="clases"):
            parse_config(write(tmp_path, text))

    def test_bad_value_named_in_error(self, tmp_path):
        text = MINIMAL + "[budgets]\nmax_rounds = soon\n"
        with pytest.raises(ConfigError, match="max_rounds"):
            parse_config(write(tmp_path, text))

    def test_out_of_range_value(self, tmp_path):
        text = MINIMAL + "[data]\nalpha = -1\n"
        with pytest.raises(ConfigError):
            parse_config(write(tmp_path, text))

    def test_train_path_without_test_path_rejected_at_run(self, tmp_path):
        from fedsim.engine import build_data
        text = MINIMAL + "[data]\ntrain_path = x.fvds\n"
        exp = parse_config(write(tmp_path, text))
        with pytest.raises(ValueError, match="test_path"):
            build_data(exp)


class TestSerializeConfig:
    def test_parse_back_identity(self, tmp_path):
        exp = parse_config(write(tmp_path, FULL))
        text = serialize_config(exp)
        back = parse_config(write(tmp_path, text, "back.ini"))
        assert back == exp

    def test_identity_for_every_algorithm(self, tmp_path):
        for kind in ("fedavg", "fedprox", "moon", "fednova", "fedadam",
                     "ist", "istprox"):
            exp = ExperimentConfig(algorithm=preset(kind), seed=4)
            back = parse_config(write(tmp_path, serialize_config(exp), f"{kind}.ini"))
            assert back == exp, kind


class TestSweeps:
    def test_default_grid_cells(self, tmp_path):
        spec = parse_sweep(write(tmp_path, MINIMAL))
        assert spec.axes == {"local_rounds": [1, 5, 25]}
        cells = spec.cells()
        assert [c.algorithm.local_rounds for c in cells] == [1, 5, 25]

    def test_cross_product_order(self, tmp_path):
        text = ("[experiment]\nalgorithm = fedprox\n"
                "[sweep]\nlocal_rounds = 1, 5\nmu = 0.1, 0.2\n")
        cells = parse_sweep(write(tmp_path, text)).cells()
        got = [(c.algorithm.local_rounds, c.algorithm.mu) for c in cells]
        # sorted axis names: local_rounds outer, mu inner
        assert got == [(1, 0.1), (1, 0.2), (5, 0.1), (5, 0.2)]

    def test_sweep_override_replaces_default_axis(self, tmp_path):
        text = MINIMAL + "[sweep]\nlocal_rounds = 2, 4\n"
        spec = parse_sweep(write(tmp_path, text))
        assert spec.axes["local_rounds"] == [2, 4]

    def test_fedadam_default_grid_size(self, tmp_path):
        text = "[experiment]\nalgorithm = fedadam\n"
        cells = parse_sweep(write(tmp_path, text)).cells()
        assert len(cells) == 3 * 5 * 4  # local_rounds x adaptability x lr

    def test_bad_value_list(self, tmp_path):
        text = MINIMAL + "[sweep]\nlocal_rounds = 1, two\n"
        with pytest.raises(ConfigError, match="local_rounds"):
            parse_sweep(write(tmp_path, text))

    def test_empty_axes_rejected(self):
        exp = ExperimentConfig(algorithm=preset("fedavg"))
        with pytest.raises(ConfigError):
            SweepSpec(exp, {})

    def test_every_algorithm_has_a_grid(self):
        from fedsim.cost import ALL_KINDS
        assert set(DEFAULT_GRIDS) == set(ALL_KINDS)
