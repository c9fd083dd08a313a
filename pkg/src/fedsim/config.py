"""INI experiment configs: strict parsing, per-method defaults, sweep grids."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace

from .cost import ALL_KINDS
from .engine import AlgorithmConfig, ExperimentConfig, preset


class ConfigError(ValueError):
    """Bad config file: names the offending key or carries the parser's line info."""


SECTIONS = {
    "experiment": {"algorithm", "regime", "seed", "n_clients", "participation"},
    "data": {"classes", "dim", "train_per_class", "test_per_class", "separation",
             "alpha", "samples_per_client", "train_path", "test_path"},
    "algorithm": {"local_rounds", "mu", "moon_tau", "lr", "momentum", "batch_size",
                  "hidden", "server_lr", "beta1", "beta2", "adaptability"},
    "budgets": {"flop_budget", "byte_budget", "max_rounds"},
    "output": {"dir"},
    "sweep": {"local_rounds", "mu", "moon_tau", "adaptability", "lr"},
}


def _read_ini(path: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path) as f:
            cp.read_file(f, source=path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except configparser.Error as e:
        raise ConfigError(str(e))
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
    return cp


def _get(cp, section, key, conv, default):
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"invalid value for '{key}' in [{section}]: {raw!r}")
    return default


def parse_config(path: str) -> ExperimentConfig:
    """Strict parse with per-algorithm defaults filled in.

    Missing file, syntax errors, unknown keys, and out-of-range values all
    raise ConfigError naming the problem.
    """
    cp = _read_ini(path)
    if not cp.has_option("experiment", "algorithm"):
        raise ConfigError("missing required key 'algorithm' in [experiment]")
    kind = cp.get("experiment", "algorithm").strip()
    if kind not in ALL_KINDS:
        raise ConfigError(f"unknown algorithm {kind!r}")
    regime = _get(cp, "experiment", "regime", str, "flops").strip()
    algo = preset(kind, regime)
    algo = replace(
        algo,
        local_rounds=_get(cp, "algorithm", "local_rounds", int, algo.local_rounds),
        mu=_get(cp, "algorithm", "mu", float, algo.mu),
        moon_tau=_get(cp, "algorithm", "moon_tau", float, algo.moon_tau),
        learning_rate=_get(cp, "algorithm", "lr", float, algo.learning_rate),
        momentum=_get(cp, "algorithm", "momentum", float, algo.momentum),
        batch_size=_get(cp, "algorithm", "batch_size", int, algo.batch_size),
        server_lr=_get(cp, "algorithm", "server_lr", float, algo.server_lr),
        beta1=_get(cp, "algorithm", "beta1", float, algo.beta1),
        beta2=_get(cp, "algorithm", "beta2", float, algo.beta2),
        adaptability=_get(cp, "algorithm", "adaptability", float, algo.adaptability),
    )
    try:
        exp = ExperimentConfig(
            algorithm=algo,
            seed=_get(cp, "experiment", "seed", int, 1),
            n_clients=_get(cp, "experiment", "n_clients", int, 100),
            participation=_get(cp, "experiment", "participation", float, 0.1),
            alpha=_get(cp, "data", "alpha", float, 0.01),
            samples_per_client=_get(cp, "data", "samples_per_client", int, 500),
            hidden=_get(cp, "algorithm", "hidden", int, 256),
            classes=_get(cp, "data", "classes", int, 20),
            dim=_get(cp, "data", "dim", int, 64),
            train_per_class=_get(cp, "data", "train_per_class", int, 100),
            test_per_class=_get(cp, "data", "test_per_class", int, 50),
            separation=_get(cp, "data", "separation", float, 3.0),
            train_path=_get(cp, "data", "train_path", str, "") or None,
            test_path=_get(cp, "data", "test_path", str, "") or None,
            flop_budget=_get(cp, "budgets", "flop_budget", float, 5e11),
            byte_budget=_get(cp, "budgets", "byte_budget", float, 5e9),
            max_rounds=_get(cp, "budgets", "max_rounds", int, 2000),
            out_dir=_get(cp, "output", "dir", str, "out"),
        )
    except ValueError as e:
        raise ConfigError(str(e))
    return exp


def serialize_config(exp: ExperimentConfig) -> str:
    """Render a config back to INI text; parse_config inverts this exactly."""
    a = exp.algorithm
    lines = [
        "[experiment]",
        f"algorithm = {a.kind}",
        f"seed = {exp.seed}",
        f"n_clients = {exp.n_clients}",
        f"participation = {exp.participation}",
        "",
        "[data]",
        f"classes = {exp.classes}",
        f"dim = {exp.dim}",
        f"train_per_class = {exp.train_per_class}",
        f"test_per_class = {exp.test_per_class}",
        f"separation = {exp.separation}",
        f"alpha = {exp.alpha}",
        f"samples_per_client = {exp.samples_per_client}",
    ]
    if exp.train_path:
        lines.append(f"train_path = {exp.train_path}")
    if exp.test_path:
        lines.append(f"test_path = {exp.test_path}")
    lines += [
        "",
        "[algorithm]",
        f"local_rounds = {a.local_rounds}",
        f"mu = {a.mu}",
        f"moon_tau = {a.moon_tau}",
        f"lr = {a.learning_rate}",
        f"momentum = {a.momentum}",
        f"batch_size = {a.batch_size}",
        f"hidden = {exp.hidden}",
        f"server_lr = {a.server_lr}",
        f"beta1 = {a.beta1}",
        f"beta2 = {a.beta2}",
        f"adaptability = {a.adaptability}",
        "",
        "[budgets]",
        f"flop_budget = {exp.flop_budget}",
        f"byte_budget = {exp.byte_budget}",
        f"max_rounds = {exp.max_rounds}",
        "",
        "[output]",
        f"dir = {exp.out_dir}",
        "",
    ]
    return "\n".join(lines)


DEFAULT_GRIDS = {
    "fedavg": {"local_rounds": [1, 5, 25]},
    "fedprox": {"local_rounds": [1, 5, 25], "mu": [0.05, 0.1, 0.15, 0.2]},
    "istprox": {"local_rounds": [1, 5, 25], "mu": [0.05, 0.1, 0.15, 0.2]},
    "fednova": {"local_rounds": [1, 5, 25], "mu": [0.05, 0.1, 0.15, 0.2]},
    "moon": {"local_rounds": [1, 5, 25], "mu": [1.0, 5.0, 10.0],
             "moon_tau": [0.1, 0.5, 1.0]},
    "fedadam": {"local_rounds": [1, 5, 25],
                "adaptability": [1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
                "lr": [0.1, 0.03, 0.01, 0.003]},
    "ist": {"local_rounds": [1, 5, 25]},
}

_AXIS_FIELD = {"local_rounds": "local_rounds", "mu": "mu", "moon_tau": "moon_tau",
               "adaptability": "adaptability", "lr": "learning_rate"}


@dataclass
class SweepSpec:
    """A base experiment plus the hyperparameter grid axes to scan."""

    base: ExperimentConfig
    axes: dict[str, list[float]]

    def __post_init__(self):
        if not self.axes or any(not v for v in self.axes.values()):
            raise ConfigError("sweep grid axes must be non-empty")

    def cells(self) -> list[ExperimentConfig]:
        """Grid cells in deterministic (sorted-axis, row-major) order."""
        names = sorted(self.axes)
        cells = [self.base]
        for name in names:
            fld = _AXIS_FIELD[name]
            conv = int if name == "local_rounds" else float
            expanded = []
            for exp in cells:
                for value in self.axes[name]:
                    expanded.append(replace(
                        exp, algorithm=replace(exp.algorithm, **{fld: conv(value)})))
            cells = expanded
        return cells


def parse_sweep(path: str) -> SweepSpec:
    """Sweep spec = run config plus an optional [sweep] section overriding the
    method's default grid with comma-separated value lists."""
    base = parse_config(path)
    cp = _read_ini(path)
    axes = {k: list(v) for k, v in DEFAULT_GRIDS[base.algorithm.kind].items()}
    if cp.has_section("sweep"):
        for key in cp["sweep"]:
            conv = int if key == "local_rounds" else float
            try:
                values = [conv(v.strip()) for v in cp.get("sweep", key).split(",")]
            except ValueError:
                raise ConfigError(f"invalid value list for '{key}' in [sweep]")
            axes[key] = values
    return SweepSpec(base, axes)
