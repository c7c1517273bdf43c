"""Grouped winner-takes-all activations and the temperature schedule.

A layer's channel axis is cut into consecutive groups.  During training the
annealed activation multiplies each base activation by a softmax gate that
sharpens as the temperature grows; at inference the gate is replaced by a hard
per-group winner-takes-all.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .autodiff import Tensor, gate, relu

BASE_ACTIVATIONS = {
    "relu": relu,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class GroupSpec:
    """Partition of the channel axis.

    ``mode == "ell"``: groups of fixed length ``size`` (the group count varies
    with the layer width).  ``mode == "c"``: a fixed number ``size`` of groups.
    """

    mode: str = "ell"
    size: int = 1

    def __post_init__(self):
        if self.mode not in ("ell", "c"):
            raise ValueError(f"unknown grouping mode {self.mode!r}")
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"group parameter must be a positive integer, got {self.size}")

    def group_length(self, channels: int) -> int:
        if channels % self.size:
            what = "group length" if self.mode == "ell" else "group count"
            raise ValueError(f"{what} {self.size} does not divide {channels} channels")
        return self.size if self.mode == "ell" else channels // self.size

    def n_groups(self, channels: int) -> int:
        return channels // self.group_length(channels)

    @property
    def is_identity(self) -> bool:
        return self.mode == "ell" and self.size == 1

    def __str__(self):
        return f"FixedL({self.size})" if self.mode == "ell" else f"FixedC({self.size})"


def fixed_l(ell: int) -> GroupSpec:
    return GroupSpec("ell", ell)


def fixed_c(c: int) -> GroupSpec:
    return GroupSpec("c", c)


@dataclass(frozen=True)
class TemperatureSchedule:
    t_init: float
    t_final: float
    total_steps: int

    def __post_init__(self):
        if not (self.t_init > 0 and self.t_final > 0):
            raise ValueError("temperatures must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")

    def at(self, step: int) -> float:
        return temperature_at(self, step)


def temperature_at(sched: TemperatureSchedule, step: int) -> float:
    """Geometric interpolation ``t_init * (t_final / t_init) ** (step / S)``."""
    if not 0 <= step <= sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps}]")
    if step == sched.total_steps:
        return float(sched.t_final)
    return float(sched.t_init * (sched.t_final / sched.t_init) ** (step / sched.total_steps))


def _grouped(arr: np.ndarray, ell: int, axis: int) -> np.ndarray:
    shape = arr.shape
    return arr.reshape(shape[:axis] + (shape[axis] // ell, ell) + shape[axis + 1:])


def softmax_gate(s: np.ndarray, ell: int, t: float, axis: int = 1) -> np.ndarray:
    """``softmax(t*s) / max(softmax(t*s))`` per group, as an array of s's shape.

    The ratio reduces to ``exp(t * (s - max s))``; the winner gets exactly 1.
    """
    g = _grouped(s, ell, axis)
    return np.exp(t * (g - g.max(axis=axis + 1, keepdims=True))).reshape(s.shape)


def winner_mask(s: np.ndarray, ell: int, axis: int = 1) -> np.ndarray:
    """One-hot of the per-group argmax (lowest index on ties), zero for groups
    whose maximum is not strictly positive."""
    g = _grouped(s, ell, axis)
    ax = axis + 1
    idx = np.expand_dims(g.argmax(axis=ax), ax)
    mask = np.zeros(g.shape, dtype=bool)
    np.put_along_axis(mask, idx, True, axis=ax)
    mask &= np.take_along_axis(g, idx, axis=ax) > 0
    return mask.reshape(s.shape)


def sigma_t(x: Tensor, spec: GroupSpec, t: float, base: str = "relu", axis: int = 1,
            frozen_gate: np.ndarray | None = None) -> Tensor:
    """Annealed grouped activation.

    The softmax gate is computed from the forward values and is not
    differentiated through.  ``frozen_gate`` replays a previously computed gate
    (used to build the frozen-gate surrogate for gradient checks).
    """
    if t <= 0:
        raise ValueError("temperature must be positive")
    ell = spec.group_length(x.shape[axis])
    s = BASE_ACTIVATIONS[base](x)
    if ell == 1:
        return s
    g = softmax_gate(s.data, ell, t, axis) if frozen_gate is None else frozen_gate
    return gate(s, g)


def sigma_wta(x: Tensor, spec: GroupSpec, base: str = "relu", binary: bool = False,
              axis: int = 1) -> Tensor:
    """Hard per-group winner-takes-all; keeps the winning value unless ``binary``."""
    ell = spec.group_length(x.shape[axis])
    s = BASE_ACTIVATIONS[base](x)
    if ell == 1 and not binary:
        return s
    mask = winner_mask(s.data, ell, axis)
    if binary:
        return Tensor(mask.astype(x.dtype))
    return gate(s, mask)


def combination_count(spec: GroupSpec, channels: int) -> int:
    """Number of distinct winner patterns per position, ``ell ** c``."""
    ell = spec.group_length(channels)
    return ell ** (channels // ell)


class GroupedWTA(TransformerMixin, BaseEstimator):
    """Stateless transformer applying the grouped activation to feature rows.

    Parameters
    ----------
    ell, c : int, optional
        Group length or group count (exactly one).
    temperature : float or None
        ``None`` applies the hard winner-takes-all, otherwise the annealed
        activation at that temperature.
    binary : bool
        Emit 0/1 winner indicators instead of values (hard mode only).
    """

    def __init__(self, ell=2, c=None, temperature=None, binary=False, base="relu"):
        self.ell = ell
        self.c = c
        self.temperature = temperature
        self.binary = binary
        self.base = base

    def _spec(self) -> GroupSpec:
        if self.c is not None:
            return fixed_c(self.c)
        return fixed_l(self.ell)

    def fit(self, X, y=None):
        X = check_array(X)
        self._spec().group_length(X.shape[1])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, dtype=(np.float64, np.float32))
        n_in = getattr(self, "n_features_in_", X.shape[1])
        if X.shape[1] != n_in:
            raise ValueError(f"X has {X.shape[1]} features, but GroupedWTA was fitted with {n_in}")
        spec = self._spec()
        if self.temperature is None:
            return sigma_wta(Tensor(X), spec, self.base, self.binary).data
        return sigma_t(Tensor(X), spec, float(self.temperature), self.base).data
