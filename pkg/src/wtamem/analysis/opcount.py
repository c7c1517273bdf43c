"""Multiplication counting under grouped winner-takes-all sparsity.

A layer fed directly by a grouped winner-takes-all site sees exactly one live
channel per group of ``ell`` input channels, so its multiplications shrink by
``1/ell``.  Summed over a topology this gives ``total(ell) = A + B / ell``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

from ..activation import GroupSpec

COUNT_HEADER = ["ell", "total", "dense_part", "sparse_part"]
LAYER_HEADER = ["layer", "kind", "dense_macs", "sparsity", "effective"]


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    dense: int
    sparsity: Fraction
    effective: Fraction


@dataclass(frozen=True)
class OpCountReport:
    rows: tuple
    dense_part: int
    sparse_part: int

    @property
    def total(self) -> Fraction:
        return sum((r.effective for r in self.rows), Fraction(0))

    @property
    def dense_total(self) -> int:
        return sum(r.dense for r in self.rows)


def layer_macs(layer) -> int:
    """Multiply-accumulates of a dense evaluation of one layer."""
    if layer.kind == "conv":
        oh, ow = layer.out_hw
        return oh * ow * layer.out_channels * layer.in_channels * layer.kernel ** 2
    if layer.kind == "dense":
        return layer.in_channels * layer.out_channels
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def count_multiplications(layers, group: GroupSpec) -> OpCountReport:
    """Per-layer and total multiplication counts for a static topology.

    ``layers`` is a sequence of :class:`wtamem.model.LayerInfo` (e.g.
    ``model.layers``).  Layers whose ``source`` is a grouped site get sparsity
    ``1 / ell_eff`` with ``ell_eff`` the group length at that site's width.
    """
    rows, dense_part, sparse_part = [], 0, 0
    for layer in layers:
        macs = layer_macs(layer)
        if layer.source is None:
            sparsity = Fraction(1)
            dense_part += macs
        else:
            sparsity = Fraction(1, group.group_length(layer.in_channels))
            sparse_part += macs
        rows.append(LayerCost(layer.name, layer.kind, macs, sparsity, macs * sparsity))
    return OpCountReport(tuple(rows), dense_part, sparse_part)


def fit_cost_law(points) -> tuple:
    """Fit ``total = A + B / ell`` through the two smallest-ell points.

    ``points`` maps ell to total.  Returns exact ``(A, B)`` as Fractions.
    """
    (l1, t1), (l2, t2) = sorted(points.items())[:2]
    B = Fraction(t1 - t2) / (Fraction(1, l1) - Fraction(1, l2))
    A = Fraction(t1) - B / l1
    return A, B


def law_residuals(points, A, B) -> dict:
    """``total - (A + B/ell)`` for every point (all zero when the law holds)."""
    return {ell: Fraction(t) - (A + Fraction(B) / ell) for ell, t in points.items()}


def sweep(layers, ells, mode: str = "ell") -> list:
    """Reports for each group parameter in ``ells``."""
    return [(ell, count_multiplications(layers, GroupSpec(mode, ell))) for ell in ells]


def write_count_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNT_HEADER)
        for ell, rep in results:
            w.writerow([ell, _num(rep.total), rep.dense_part, rep.sparse_part])


def write_layer_csv(path, report: OpCountReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LAYER_HEADER)
        for r in report.rows:
            w.writerow([r.name, r.kind, r.dense, str(r.sparsity), _num(r.effective)])


def _num(f: Fraction) -> str:
    return str(f.numerator) if f.denominator == 1 else str(f)
