"""Per-feature-map win proportions of grouped winner-takes-all layers."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

PLOT_HEADER = ["layer", "group", "map", "proportion"]
SUMMARY_HEADER = ["layer", "groups", "group_length", "positions", "blank_proportion",
                  "max_map_proportion", "min_map_proportion"]


@dataclass
class LayerWins:
    """Win counts of one activation site.

    ``wins[g, j]`` counts positions where map ``j`` of group ``g`` held the
    strictly positive group maximum; ``blank[g]`` counts positions where the
    whole group was zero.  ``positions`` = images x height x width.
    """

    wins: np.ndarray
    blank: np.ndarray
    positions: int

    @property
    def proportions(self) -> np.ndarray:
        return self.wins / self.positions

    @property
    def blank_proportion(self) -> np.ndarray:
        return self.blank / self.positions

    def __iadd__(self, other):
        self.wins += other.wins
        self.blank += other.blank
        self.positions += other.positions
        return self


@dataclass
class WinStats:
    layers: dict = field(default_factory=dict)

    def names(self) -> list:
        return list(self.layers)

    def write_plot_data(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOT_HEADER)
            for name, lw in self.layers.items():
                prop = lw.proportions
                for g in range(prop.shape[0]):
                    for j in range(prop.shape[1]):
                        w.writerow([name, g, g * prop.shape[1] + j, f"{prop[g, j]:.6f}"])

    def write_summary(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            for name, lw in self.layers.items():
                prop = lw.proportions
                w.writerow([name, prop.shape[0], prop.shape[1], lw.positions,
                            f"{lw.blank_proportion.mean():.6f}", f"{prop.max():.6f}",
                            f"{prop.min():.6f}"])


def trace_wins(entry) -> LayerWins:
    """Win counts from one :class:`wtamem.model.TraceEntry`."""
    out = entry.output
    n, ch, h, w = out.shape
    ell = entry.group_length
    live = (out > 0).reshape(n, ch // ell, ell, h, w)
    wins = live.sum(axis=(0, 3, 4)).astype(np.int64)
    positions = n * h * w
    blank = (~live.any(axis=2)).sum(axis=(0, 2, 3)).astype(np.int64)
    return LayerWins(wins, blank, positions)


def win_statistics(model, images, labels=None, classes=None, batch_size: int = 250) -> WinStats:
    """Win proportions over ``images`` in WTA mode.

    With ``labels`` and ``classes`` only images whose label is in ``classes``
    are used.
    """
    images = np.asarray(images)
    if labels is not None and classes is not None:
        keep = np.isin(np.asarray(labels), list(classes))
        images = images[keep]
    stats = WinStats()
    for lo in range(0, len(images), batch_size):
        for entry in model.activation_trace(images[lo:lo + batch_size], mode="wta"):
            lw = trace_wins(entry)
            if entry.name in stats.layers:
                stats.layers[entry.name] += lw
            else:
                stats.layers[entry.name] = lw
    return stats


def per_class_statistics(model, images, labels, batch_size: int = 250) -> dict:
    labels = np.asarray(labels)
    return {int(k): win_statistics(model, images[labels == k], batch_size=batch_size)
            for k in np.unique(labels)}


def profile_divergence(a: WinStats, b: WinStats, layer: str) -> float:
    """L1 distance between two win profiles of ``layer``, averaged per group.

    Each group's profile (map proportions plus the blank proportion) is a
    distribution, so the value lies in [0, 2] whatever the layer width.
    """
    la, lb = a.layers[layer], b.layers[layer]
    pa = np.concatenate([la.proportions, la.blank_proportion[:, None]], axis=1)
    pb = np.concatenate([lb.proportions, lb.blank_proportion[:, None]], axis=1)
    return float(np.abs(pa - pb).sum(axis=1).mean())
