"""Run configuration files.

Grammar, one statement per line::

    # comment            (also after a value: key = value  # note)
    [section]            train | weights | adapt | data
    key = value

Key names are unique across sections, so a key may appear before any section
header; inside a section it must belong to that section. Values are integers,
reals, ``true``/``false`` or bare words. Keys left out take their defaults;
``beta1``/``beta2`` default to 1 in semi-supervised mode and for adaptation,
otherwise 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Optional

from .adapt import AdaptConfig
from .datasets import DatasetPair, load_idx_pair_dataset, synth_pair
from .objectives import LossWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    section: str
    parse: Callable[[str], Any]
    check: Callable[[Any], bool]
    rule: str
    default: Any


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError("expected true or false")


def _word(s: str) -> str:
    return s


def _choice(*opts: str) -> tuple[Callable[[Any], bool], str]:
    return (lambda v: v in opts), "one of " + "|".join(opts)


_nonneg = (lambda v: v >= 0, ">= 0")
_pos = (lambda v: v > 0, "> 0")
_unit = (lambda v: 0 <= v <= 1, "in [0, 1]")
_beta = (lambda v: 0 <= v < 1, "in [0, 1)")
_any = (lambda v: True, "any")


def _k(section, parse, check, default) -> Key:
    return Key(section, parse, check[0], check[1], default)


_W = LossWeights()
_T = TrainConfig()
_A = AdaptConfig()

KEYS: dict[str, Key] = {
    "mode": _k("train", _word, _choice("supervised", "semi-supervised"), _T.mode),
    "batch_size": _k("train", _int, (lambda v: v >= 2, ">= 2"), _T.batch_size),
    "steps": _k("train", _int, (lambda v: v >= 1, ">= 1"), _T.steps),
    "lr": _k("train", _float, _pos, _T.lr),
    "lr_disc": _k("train", _float, _pos, _T.lr_disc),
    "adam_beta1": _k("train", _float, _beta, _T.adam_beta1),
    "adam_beta2": _k("train", _float, _beta, _T.adam_beta2),
    "seed": _k("train", _int, _nonneg, _T.seed),
    "checkpoint_every": _k("train", _int, _nonneg, _T.checkpoint_every),
    "width": _k("train", _float, _pos, _T.width),
    "num_classes": _k("train", _int, (lambda v: v >= 2, ">= 2"), _T.num_classes),
    "style_dim_a": _k("train", _int, (lambda v: v >= 1, ">= 1"), _T.style_dim_a),
    "style_dim_b": _k("train", _int, (lambda v: v >= 1, ">= 1"), _T.style_dim_b),
    "labeled_per_class": _k("train", _int, _nonneg, _T.labeled_per_class),
    **{f.name: _k("weights", _float, _nonneg, getattr(_W, f.name)) for f in fields(LossWeights)},
    "t_init": _k("adapt", _float, _unit, _A.t_init),
    "w": _k("adapt", _float, _pos, _A.w),
    "pretrain_steps": _k("adapt", _int, _nonneg, _A.pretrain_steps),
    "epochs": _k("adapt", _int, _nonneg, _A.epochs),
    "boosted": _k("adapt", _bool, _any, _A.boosted),
    "dataset": _k("data", _word, _choice("synth", "idx"), "synth"),
    "kind": _k("data", _word, _choice("digits", "shapes"), "digits"),
    "n_per_class": _k("data", _int, (lambda v: v >= 1, ">= 1"), 100),
    "n_test_per_class": _k("data", _int, (lambda v: v >= 1, ">= 1"), 50),
    "data_seed": _k("data", _int, _nonneg, 0),
    "rule_a": _k("data", _word, _choice("mnist", "usps", "passthrough"), "passthrough"),
    "rule_b": _k("data", _word, _choice("mnist", "usps", "passthrough"), "mnist"),
    **{f"{split}_{part}": _k("data", _word, _any, "") for split in ("train_a", "test_a", "train_b", "test_b") for part in ("images", "labels")},
}
SECTIONS = ("train", "weights", "adapt", "data")
COMMANDS_SEMI = ("adapt",)


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def section(self, name: str) -> dict[str, Any]:
        return {k: v for k, v in self.values.items() if KEYS[k].section == name}

    @property
    def weights(self) -> LossWeights:
        return LossWeights(**self.section("weights"))

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(weights=self.weights, **self.section("train"))

    @property
    def adapt(self) -> AdaptConfig:
        return AdaptConfig(train=self.train, **self.section("adapt"))

    def dataset(self) -> DatasetPair:
        d = self.section("data")
        k = self.values["num_classes"]
        if d["dataset"] == "synth":
            return synth_pair(d["kind"], d["n_per_class"], d["data_seed"], k, d["n_test_per_class"])
        paths = {}
        for split in ("train_a", "test_a", "train_b", "test_b"):
            img, lbl = d[f"{split}_images"], d[f"{split}_labels"]
            if not img or not lbl:
                raise ConfigError(f"dataset = idx needs {split}_images and {split}_labels")
            paths[split] = (img, lbl)
        return load_idx_pair_dataset(paths["train_a"], paths["test_a"], paths["train_b"], paths["test_b"], d["rule_a"], d["rule_b"], k)


def _format(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, command: str = "train", overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Parse and validate; every default is filled in the result."""
    given: dict[str, Any] = {}
    section: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or line[1:-1].strip() not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section {line!r}; expected one of {', '.join(SECTIONS)}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        spec = KEYS.get(key)
        if spec is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if section is not None and spec.section != section:
            raise ConfigError(f"line {lineno}: key {key!r} belongs in [{spec.section}], not [{section}]")
        if key in given:
            raise ConfigError(f"line {lineno}: key {key!r} set twice")
        given[key] = _convert(key, value, f"line {lineno}")
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"override: unknown key {key!r}")
        given[key] = _convert(key, str(value), "override")

    values = {k: spec.default for k, spec in KEYS.items()}
    semi = given.get("mode", values["mode"]) == "semi-supervised" or command in COMMANDS_SEMI
    if semi:
        values["beta1"] = values["beta2"] = 1.0
    values.update(given)
    return RunConfig(values)


def _convert(key: str, value: str, where: str) -> Any:
    spec = KEYS[key]
    try:
        v = spec.parse(value)
    except ValueError:
        raise ConfigError(f"{where}: key {key!r}: cannot read {value!r} as {spec.parse.__name__.strip('_')}") from None
    if not spec.check(v):
        raise ConfigError(f"{where}: key {key!r}: value {value} out of range ({spec.rule})")
    return v


def emit_config(cfg: RunConfig) -> str:
    lines = []
    for sec in SECTIONS:
        lines.append(f"[{sec}]")
        for key, spec in KEYS.items():
            if spec.section == sec:
                lines.append(f"{key} = {_format(cfg.values[key])}")
        lines.append("")
    return "\n".join(lines)
