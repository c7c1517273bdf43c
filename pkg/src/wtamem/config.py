"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import os

from .activation import fixed_c, fixed_l
from .analysis.fewshot import FewShotConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple:
    return tuple(int(v) for v in s.replace(" ", "").split(",") if v)


def _strs(s: str) -> tuple:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _opt_int(s: str):
    return int(s) if s.strip() not in ("", "none") else None


# key -> (parser, default as text)
SCHEMA = {
    # model
    "architecture": (str, "toy"),
    "widths": (_ints, "16,32,64"),
    "blocks": (int, "0"),
    "stem_stride": (int, "2"),
    "base_width": (int, "64"),
    "classes": (int, "10"),
    "mode": (str, "anneal"),
    "ell": (int, "2"),
    "c": (_opt_int, ""),
    "binary": (_bool, "false"),
    "t_init": (float, "1.0"),
    "t_final": (float, "1000.0"),
    "replace_policy": (str, "all"),
    "base_activation": (str, "relu"),
    # training
    "epochs": (int, "20"),
    "batch_size": (int, "128"),
    "lr": (float, "0.05"),
    "lr_drops": (_ints, ""),
    "momentum": (float, "0.9"),
    "weight_decay": (float, "0.0005"),
    "augment": (_bool, "true"),
    "seed": (int, "0"),
    # data
    "dataset": (str, "synthetic"),
    "train_data": (str, ""),
    "test_data": (str, ""),
    "limit": (_opt_int, ""),
    "synthetic_train": (int, "5000"),
    "synthetic_test": (int, "1000"),
    "synthetic_seed": (int, "0"),
    # outputs
    "outdir": (str, "out"),
    "checkpoint": (str, ""),
    "eval_mode": (str, ""),
    # analysis
    "count_ells": (_ints, ""),
    "count_mode": (str, "ell"),
    "noise_kinds": (_strs, "gaussian,shot,impulse"),
    "noise_severities": (_ints, "1,2,3,4,5"),
    "noise_seeds": (_ints, "0"),
    "wins_classes": (_ints, ""),
    "fewshot_data": (str, ""),
    "fewshot_variant": (str, "c100"),
    "fewshot_way": (int, "5"),
    "fewshot_shot": (int, "5"),
    "fewshot_queries": (int, "595"),
    "fewshot_runs": (int, "10000"),
    "fewshot_pool": (int, "20"),
    "fewshot_normalize": (_bool, "false"),
    "fewshot_per_class": (int, "600"),
    # associative memory
    "sam_c": (int, "4"),
    "sam_l": (int, "8"),
    "sam_c_out": (int, "4"),
    "sam_l_out": (int, "8"),
    "sam_counts": (_ints, "1,2,5,10,20,50,100,200"),
    "sam_trials": (int, "20"),
    "sam_pairs": (int, "3"),
}


class RunConfig:
    """Validated configuration; ``raw`` keeps the textual values."""

    def __init__(self, raw: dict | None = None):
        self.raw = {k: d for k, (_, d) in SCHEMA.items()}
        self.values = {}
        self.update(raw or {})

    def update(self, raw: dict):
        for key, text in raw.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            self.raw[key] = str(text)
        self._parse()
        return self

    def _parse(self):
        values = {}
        for key, (parse, _) in SCHEMA.items():
            try:
                values[key] = parse(self.raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {self.raw[key]!r} ({exc})") from None
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    def resolved_text(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in sorted(SCHEMA))

    def write_resolved(self, outdir: str):
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "config.resolved"), "w", encoding="utf-8") as fh:
            fh.write(self.resolved_text())

    # -- typed views ----------------------------------------------------------
    def group(self):
        return fixed_c(self["c"]) if self["c"] is not None else fixed_l(self["ell"])

    def model_config(self, input_shape=(3, 32, 32), n_classes=None) -> ModelConfig:
        return ModelConfig(architecture=self["architecture"], widths=self["widths"],
                           blocks=self["blocks"], stem_stride=self["stem_stride"],
                           base_width=self["base_width"], input_shape=tuple(input_shape),
                           n_classes=n_classes or self["classes"], group=self.group(),
                           mode=self["mode"], binary=self["binary"], t_init=self["t_init"],
                           t_final=self["t_final"], replace_policy=self["replace_policy"],
                           base_activation=self["base_activation"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self["epochs"], batch_size=self["batch_size"], lr=self["lr"],
                           lr_drop_epochs=self["lr_drops"], momentum=self["momentum"],
                           weight_decay=self["weight_decay"], seed=self["seed"],
                           augment=self["augment"], t_init=self["t_init"], t_final=self["t_final"])

    def fewshot_config(self) -> FewShotConfig:
        return FewShotConfig(n_way=self["fewshot_way"], k_shot=self["fewshot_shot"],
                             queries_per_class=self["fewshot_queries"], runs=self["fewshot_runs"],
                             pool_size=self["fewshot_pool"], seed=self["seed"],
                             normalize=self["fewshot_normalize"])

    def checkpoint_path(self) -> str:
        return self["checkpoint"] or os.path.join(self["outdir"], "model.dnwt")


def parse_text(text: str) -> dict:
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {n}: unknown config key {key!r}")
        raw[key] = value
    return raw


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    raw = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            raw = parse_text(fh.read())
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(raw)


def model_config_items(mc: ModelConfig) -> dict:
    """Config-file keys describing ``mc`` (inverse of :meth:`RunConfig.model_config`)."""
    group = {"ell": str(mc.group.size), "c": ""} if mc.group.mode == "ell" else {"c": str(mc.group.size)}
    return {
        "architecture": mc.architecture, "widths": ",".join(map(str, mc.widths)),
        "blocks": str(mc.blocks), "stem_stride": str(mc.stem_stride),
        "base_width": str(mc.base_width), "classes": str(mc.n_classes), "mode": mc.mode,
        **group, "binary": str(mc.binary).lower(), "t_init": repr(float(mc.t_init)),
        "t_final": repr(float(mc.t_final)), "replace_policy": mc.replace_policy,
        "base_activation": mc.base_activation,
    }


def dump_model_config(mc: ModelConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in model_config_items(mc).items())
