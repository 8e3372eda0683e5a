"""Run configuration: a flat ``section.key = value`` text file.

Example::

    run.seed = 7
    sim.design = scaled
    sim.n_users = 300
    chain.iter_max = 200000
    eval.thresholds = 0.10, 0.15, 0.20

Blank lines and ``#`` comments are ignored. Unknown keys are errors.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .cf import CFConfig
from .datagen import SimulationSpec, SplitSpec
from .exceptions import ParameterError
from .sampler import ChainConfig

OUTPUT_ROOT_ENV = "BMCD_OUTPUT_ROOT"


class ConfigError(ParameterError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class SimSettings:
    design: str = "scaled"  # scaled | benchmark | random
    n_users: int = 300
    n_items: int = 20
    n_clusters: int = 3
    alpha: float = 3.0
    click_rate: float = 3.0
    replicates: int = 1

    def spec(self, seed):
        if self.design == "benchmark":
            return SimulationSpec.benchmark(seed)
        if self.design == "scaled":
            return SimulationSpec.scaled(seed)
        import numpy as np

        rng = np.random.default_rng(seed)
        n = self.n_items
        rhos = [range(1, n + 1), range(n, 0, -1)][:self.n_clusters]
        rhos += [rng.permutation(n) + 1 for _ in range(self.n_clusters - len(rhos))]
        return SimulationSpec.mixture(self.n_users, n, rhos, self.alpha, self.click_rate, seed)


@dataclass
class SelectSettings:
    iter_max: int = 200_000
    burn_in: int = 100_000
    thinning: int = 100


@dataclass
class EvalSettings:
    k: int = 5
    thresholds: tuple = (0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40)
    bin_width: float = 0.01
    popular_cutoff: int | None = None  # None: the top 40% of items by clicks


@dataclass
class CVSettings:
    enabled: bool = True
    folds: int = 10
    n_hide: int = 1
    min_retained: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    out: str = ""
    threads: int = 1
    partition: str = "exact"
    mc_samples: int = 10_000_000
    sim: SimSettings = field(default_factory=SimSettings)
    split: SplitSpec = field(default_factory=SplitSpec)
    chain: ChainConfig = field(default_factory=ChainConfig)
    select: SelectSettings = field(default_factory=SelectSettings)
    cf: CFConfig = field(default_factory=CFConfig)
    cv: CVSettings = field(default_factory=CVSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def popular_cutoff(self, n_items):
        c = self.eval.popular_cutoff
        return int(round(0.4 * n_items)) if c is None else c

    def to_dict(self):
        return asdict(self)

    def output_root(self):
        return Path(self.out or os.environ.get(OUTPUT_ROOT_ENV, "bmcd_out"))

    def validate(self):
        checks = [
            ("sim.design", self.sim.design in ("scaled", "benchmark", "random"), "must be scaled, benchmark or random"),
            ("sim.n_users", self.sim.n_users >= 1, "must be >= 1"),
            ("sim.n_items", self.sim.n_items >= 2, "must be >= 2"),
            ("sim.n_clusters", self.sim.n_clusters >= 1, "must be >= 1"),
            ("sim.alpha", self.sim.alpha >= 0, "must be >= 0"),
            ("sim.click_rate", self.sim.click_rate > 0, "must be > 0"),
            ("sim.replicates", self.sim.replicates >= 1, "must be >= 1"),
            ("chain.n_clusters", self.chain.n_clusters >= 1, "must be >= 1"),
            ("chain.lam", self.chain.lam > 0, "must be > 0"),
            ("chain.psi", self.chain.psi > 0, "must be > 0"),
            ("chain.burn_in", 0 <= self.chain.burn_in <= self.chain.iter_max, "must lie in [0, chain.iter_max]"),
            ("chain.thinning", self.chain.thinning >= 1, "must be >= 1"),
            ("chain.alpha_update", self.chain.alpha_update >= 1, "must be >= 1"),
            ("chain.alpha_proposal_sd", self.chain.alpha_proposal_sd >= 0, "must be >= 0"),
            ("select.burn_in", 0 <= self.select.burn_in <= self.select.iter_max, "must lie in [0, select.iter_max]"),
            ("cf.L", self.cf.L >= 1, "must be >= 1"),
            ("cf.sweeps", self.cf.sweeps >= 1, "must be >= 1"),
            ("cf.theta", self.cf.theta >= 0, "must be >= 0"),
            ("cf.beta", self.cf.beta >= 0, "must be >= 0"),
            ("cv.folds", self.cv.folds >= 2, "must be >= 2"),
            ("eval.k", self.eval.k >= 1, "must be >= 1"),
            ("eval.bin_width", 0 < self.eval.bin_width <= 1, "must lie in (0, 1]"),
            ("eval.popular_cutoff", self.eval.popular_cutoff is None or self.eval.popular_cutoff >= 0,
             "must be >= 0"),
            ("threads", self.threads >= 1, "must be >= 1"),
            ("partition", self.partition in ("exact", "monte-carlo"), "must be exact or monte-carlo"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, msg)
        try:
            self.chain.validate()
        except ParameterError as exc:
            raise ConfigError("chain", str(exc)) from exc
        return self


_SECTIONS = ("sim", "split", "chain", "select", "cf", "cv", "eval")


def _coerce(name, raw, default):
    raw = raw.strip()
    try:
        if default is None:  # optional integers such as chain.leap_size
            return None if raw.lower() == "none" else int(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if isinstance(default, int):
            v = float(raw)
            if not v.is_integer():
                raise ValueError(raw)
            return int(v)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(name, f"cannot parse {raw!r}") from None


def parse_config(text):
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string("[root]\n" + text)
    cfg = RunConfig()
    updates = {s: {} for s in _SECTIONS}
    top = {}
    for key, raw in cp.items("root"):
        section, _, name = key.partition(".")
        if not name:
            section, name = None, key
        elif section == "run":
            section = None
        if section is not None and section not in _SECTIONS:
            raise ConfigError(key, "unknown section")
        target = getattr(cfg, section) if section else cfg
        known = {f.name: f for f in fields(target)}
        if name not in known or (section is None and name in _SECTIONS):
            raise ConfigError(key, "unknown key")
        value = _coerce(key, raw, getattr(target, name))
        (updates[section] if section else top)[name] = value
    for s in _SECTIONS:
        if updates[s]:
            top[s] = replace(getattr(cfg, s), **updates[s])
    try:
        cfg = replace(cfg, **top)
    except ParameterError as exc:
        raise ConfigError("config", str(exc)) from exc
    return cfg.validate()


def load_config(path=None):
    if path is None:
        return RunConfig().validate()
    return parse_config(Path(path).read_text(encoding="utf-8"))
