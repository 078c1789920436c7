"""Experiment configuration: a YAML file with a fixed, flat-per-section schema.

Unknown sections or keys are hard errors and every error message names the
offending key and its line in the file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .dual import DualConfig
from .errors import ConfigError
from .primal import PrimalConfig
from .scenario import GroupPartition, RiskFactorModel
from .utility import AcceptanceLevel, UtilityParams

_PRIMAL_KEYS = {f.name for f in dataclasses.fields(PrimalConfig)} - {"partition", "nonneg", "seed"}
_DUAL_KEYS = {f.name for f in dataclasses.fields(DualConfig)} - {"partition", "zx_constraint", "seed"}

SCHEMA = {
    "model": {"n", "mean", "std", "corr", "covariance", "m_train", "m_test",
              "train_file", "test_file"},
    "utilities": {"alphas"},
    "level": {"b"},
    "partition": {"sizes", "groups"},
    "primal": _PRIMAL_KEYS,
    "dual": _DUAL_KEYS,
    "run": {"seed_train", "seed_test", "seed", "nonneg", "solvers", "dump_csv", "out"},
}
SOLVERS = ("primal", "dual")


@dataclass
class ExperimentConfig:
    model: Optional[RiskFactorModel]
    train_file: Optional[str]
    test_file: Optional[str]
    m_train: int
    m_test: int
    utilities: UtilityParams
    level: AcceptanceLevel
    partition: GroupPartition
    primal: PrimalConfig
    dual: DualConfig
    nonneg: bool = False
    seed_train: int = 1
    seed_test: int = 2
    seed: int = 0
    solvers: tuple = SOLVERS
    dump_csv: bool = True
    out: Optional[str] = None
    raw: dict = field(default_factory=dict)     # echo of the parsed file

    @property
    def n(self) -> int:
        return self.utilities.n

    def with_seeds(self, seed_train=None, seed_test=None) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, raw=_deep_copy(self.raw))
        if seed_train is not None:
            cfg.seed_train = int(seed_train)
            cfg.raw.setdefault("run", {})["seed_train"] = int(seed_train)
        if seed_test is not None:
            cfg.seed_test = int(seed_test)
            cfg.raw.setdefault("run", {})["seed_test"] = int(seed_test)
        _check_seeds(cfg)
        return cfg

    def primal_config(self, nonneg: Optional[bool] = None) -> PrimalConfig:
        return dataclasses.replace(self.primal, partition=self.partition, seed=self.seed,
                                   nonneg=self.nonneg if nonneg is None else nonneg)

    def dual_config(self) -> DualConfig:
        return dataclasses.replace(self.dual, partition=self.partition, seed=self.seed,
                                   zx_constraint=self.nonneg)

    PROVENANCE = ("model parameters (means, covariance, risk aversions, acceptance level) and "
                  "all network and training hyperparameters are implementation-chosen defaults")

    def echo(self) -> dict:
        """Fully resolved configuration, suitable for the report."""
        primal = dataclasses.asdict(self.primal)
        dual = dataclasses.asdict(self.dual)
        for d in (primal, dual):
            d.pop("partition", None)
        model: dict[str, Any] = {"m_train": self.m_train, "m_test": self.m_test}
        if self.model is not None:
            model["mean"] = self.model.mean
            model["covariance"] = self.model.covariance
        else:
            model["train_file"] = self.train_file
            model["test_file"] = self.test_file
        return {
            "provenance": self.PROVENANCE,
            "model": model,
            "utilities": {"alphas": self.utilities.alphas},
            "level": {"b": self.level.b},
            "partition": {"groups": [list(g) for g in self.partition.groups]},
            "primal": primal,
            "dual": dual,
            "run": {"seed_train": self.seed_train, "seed_test": self.seed_test, "seed": self.seed,
                    "nonneg": self.nonneg, "solvers": list(self.solvers),
                    "dump_csv": self.dump_csv},
        }


def _deep_copy(d):
    if isinstance(d, dict):
        return {k: _deep_copy(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_deep_copy(v) for v in d]
    return d


def _check_seeds(cfg):
    if cfg.model is not None and cfg.seed_train == cfg.seed_test:
        raise ConfigError("run.seed_train and run.seed_test must differ when simulating")


# -- YAML with line numbers -------------------------------------------------

def _compose(text: str, source: str):
    try:
        return yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: invalid YAML ({getattr(exc, 'problem', exc)})") from None


def _construct(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_document(node)
    finally:
        loader.dispose()


def _sections(root, source):
    """{section: {key: (value, line)}} from the composed document."""
    if root is None:
        raise ConfigError(f"{source}: empty configuration")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{source}:{root.start_mark.line + 1}: top level must be a mapping")
    out: dict = {}
    for knode, vnode in root.value:
        sec = knode.value
        line = knode.start_mark.line + 1
        if sec not in SCHEMA:
            raise ConfigError(f"{source}:{line}: unknown section {sec!r} "
                              f"(allowed: {', '.join(SCHEMA)})")
        if sec in out:
            raise ConfigError(f"{source}:{line}: duplicate section {sec!r}")
        if not isinstance(vnode, yaml.MappingNode):
            raise ConfigError(f"{source}:{line}: section {sec!r} must be a mapping")
        keys: dict = {}
        for k, v in vnode.value:
            kl = k.start_mark.line + 1
            if k.value not in SCHEMA[sec]:
                raise ConfigError(f"{source}:{kl}: unknown key {sec}.{k.value} "
                                  f"(allowed: {', '.join(sorted(SCHEMA[sec]))})")
            if k.value in keys:
                raise ConfigError(f"{source}:{kl}: duplicate key {sec}.{k.value}")
            keys[k.value] = (_construct(v), kl)
        out[sec] = keys
    return out


class _Reader:
    def __init__(self, sections, source):
        self.s = sections
        self.source = source

    def has(self, sec, key):
        return key in self.s.get(sec, {})

    def get(self, sec, key, default=None, required=False):
        if key not in self.s.get(sec, {}):
            if required:
                raise ConfigError(f"{self.source}: missing required key {sec}.{key}")
            return default
        return self.s[sec][key][0]

    def fail(self, sec, key, msg):
        line = self.s.get(sec, {}).get(key, (None, None))[1]
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {sec}.{key}: {msg}")

    def guard(self, sec, key, fn, *args):
        try:
            return fn(*args)
        except ConfigError:
            raise
        except (ValueError, TypeError, ArithmeticError) as exc:
            self.fail(sec, key, str(exc))


def _section_dataclass(rd, sec, cls, extra):
    kwargs = {k: v for k, (v, _) in rd.s.get(sec, {}).items()}
    for key, val in kwargs.items():
        default = getattr(cls, key, None)
        if isinstance(default, tuple) and not isinstance(val, (list, tuple)):
            rd.fail(sec, key, "expected a list")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                rd.fail(sec, key, f"expected a number, got {val!r}")
            if isinstance(default, int) and not isinstance(val, int):
                rd.fail(sec, key, f"expected an integer, got {val!r}")
    try:
        return cls(**kwargs, **extra)
    except (ValueError, TypeError) as exc:
        key = next(iter(kwargs), None)
        where = rd.source
        for k in kwargs:
            if k in str(exc):
                key = k
                break
        if key is not None:
            rd.fail(sec, key, str(exc))
        raise ConfigError(f"{where}: section {sec}: {exc}") from None


def parse_config(text: str, source: str = "<config>", base_dir: Optional[Path] = None) -> ExperimentConfig:
    rd = _Reader(_sections(_compose(text, source), source), source)
    for sec in ("utilities", "level"):
        if sec not in rd.s:
            raise ConfigError(f"{source}: missing required section {sec!r}")

    alphas = rd.get("utilities", "alphas", required=True)
    utilities = rd.guard("utilities", "alphas", UtilityParams, alphas)
    n = utilities.n
    level = rd.guard("level", "b", AcceptanceLevel, rd.get("level", "b", required=True))

    # scenarios: either a Gaussian model or a pair of CSV files
    train_file = rd.get("model", "train_file")
    test_file = rd.get("model", "test_file")
    model = None
    if train_file is not None or test_file is not None:
        if train_file is None or test_file is None:
            rd.fail("model", "train_file" if train_file is None else "test_file",
                    "train_file and test_file must be given together")
        for key in ("mean", "std", "corr", "covariance"):
            if rd.has("model", key):
                rd.fail("model", key, "cannot be combined with scenario files")
        if base_dir is not None:
            train_file = str((base_dir / train_file)) if not Path(train_file).is_absolute() else train_file
            test_file = str((base_dir / test_file)) if not Path(test_file).is_absolute() else test_file
    else:
        if rd.has("model", "n") and rd.get("model", "n") != n:
            rd.fail("model", "n", f"model has {rd.get('model', 'n')} institutions but {n} alphas are given")
        mean = rd.get("model", "mean", 0.0)
        mean = rd.guard("model", "mean", lambda: np.broadcast_to(np.asarray(mean, float), (n,)).copy())
        if rd.has("model", "covariance"):
            for key in ("std", "corr"):
                if rd.has("model", key):
                    rd.fail("model", key, "give either covariance or std/corr, not both")
            model = rd.guard("model", "covariance", RiskFactorModel, mean,
                             np.asarray(rd.get("model", "covariance"), dtype=float))
        else:
            std = rd.get("model", "std", 1.0)
            corr = rd.get("model", "corr", 0.0)
            model = rd.guard("model", "corr", RiskFactorModel.equicorrelated, mean, std, corr)
        if model.n_institutions != n:
            rd.fail("model", "mean", "model width differs from the number of alphas")

    m_train = rd.get("model", "m_train", 50000)
    m_test = rd.get("model", "m_test", 50000)
    for key, val in (("m_train", m_train), ("m_test", m_test)):
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            rd.fail("model", key, "must be a positive integer")

    if rd.has("partition", "sizes") and rd.has("partition", "groups"):
        rd.fail("partition", "groups", "give either sizes or groups, not both")
    if rd.has("partition", "groups"):
        partition = rd.guard("partition", "groups", GroupPartition, rd.get("partition", "groups"))
    elif rd.has("partition", "sizes"):
        partition = rd.guard("partition", "sizes", GroupPartition.from_sizes, rd.get("partition", "sizes"))
    else:
        partition = GroupPartition.single(n)
    if partition.n != n:
        rd.fail("partition", "groups" if rd.has("partition", "groups") else "sizes",
                f"partition covers {partition.n} institutions, expected {n}")

    primal = _section_dataclass(rd, "primal", PrimalConfig, {})
    dual = _section_dataclass(rd, "dual", DualConfig, {})

    run = {k: rd.get("run", k) for k in SCHEMA["run"] if rd.has("run", k)}
    for key in ("seed_train", "seed_test", "seed"):
        if key in run and (not isinstance(run[key], int) or isinstance(run[key], bool) or run[key] < 0):
            rd.fail("run", key, "must be a nonnegative integer")
    for key in ("nonneg", "dump_csv"):
        if key in run and not isinstance(run[key], bool):
            rd.fail("run", key, "must be true or false")
    solvers = tuple(run.get("solvers", SOLVERS))
    if any(s not in SOLVERS for s in solvers):
        rd.fail("run", "solvers", f"solvers must be a subset of {list(SOLVERS)}")

    raw = {sec: {k: v for k, (v, _) in keys.items()} for sec, keys in rd.s.items()}
    cfg = ExperimentConfig(
        model=model, train_file=train_file, test_file=test_file, m_train=m_train, m_test=m_test,
        utilities=utilities, level=level, partition=partition, primal=primal, dual=dual,
        nonneg=run.get("nonneg", False), seed_train=run.get("seed_train", 1),
        seed_test=run.get("seed_test", 2), seed=run.get("seed", 0), solvers=solvers,
        dump_csv=run.get("dump_csv", True), out=run.get("out"), raw=raw)
    try:
        _check_seeds(cfg)
    except ConfigError as exc:
        rd.fail("run", "seed_test", str(exc))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path), path.parent)


def default_config_path(name: str = "default") -> Path:
    """Path of a bundled config: ``default``, ``multigroup`` or ``nonneg``."""
    return Path(__file__).with_name("configs") / f"{name}.yaml"
