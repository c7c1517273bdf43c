"""Gaussian, shot and impulse noise corruptions and the robustness table."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..data import LabeledDataset
from ..training import evaluate, inference_mode

KINDS = ("gaussian", "shot", "impulse")

# Parameters per severity 1..5, as in the common-corruptions benchmark.
# Severity 0 is the identity and serves as a sanity row.
SEVERITY_PARAMS = {
    "gaussian": (0.0, 0.08, 0.12, 0.18, 0.26, 0.38),
    "shot": (None, 60.0, 25.0, 12.0, 5.0, 3.0),
    "impulse": (0.0, 0.03, 0.06, 0.09, 0.17, 0.27),
}

NOISE_HEADER = ["clean", "gaussian", "shot", "impulse"]
DETAIL_HEADER = ["kind", "severity", "accuracy"]


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if self.severity not in range(0, 6):
            raise ValueError(f"severity must be in 1..5 (0 = identity), got {self.severity}")

    @property
    def parameter(self):
        return SEVERITY_PARAMS[self.kind][self.severity]


def _image_rng(spec: CorruptionSpec, index: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, KINDS.index(spec.kind), spec.severity, index])


def corrupt_one(image: np.ndarray, spec: CorruptionSpec, index: int = 0) -> np.ndarray:
    param = spec.parameter
    if param is None or param == 0:
        return image.copy()
    rng = _image_rng(spec, index)
    x = image.astype(np.float64) / 255.0
    if spec.kind == "gaussian":
        y = np.clip(x + rng.normal(0.0, param, x.shape), 0.0, 1.0)
    elif spec.kind == "shot":
        y = np.clip(rng.poisson(x * param) / param, 0.0, 1.0)
    else:
        flat = image.reshape(-1).copy()
        k = int(round(param * flat.size))
        where = rng.choice(flat.size, size=k, replace=False)
        flat[where] = np.where(rng.random(k) < 0.5, 0, 255)
        return flat.reshape(image.shape)
    return np.rint(y * 255.0).astype(np.uint8)


def corrupt(images: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Corrupt a batch of 8-bit images; image ``i`` uses a seed derived from
    ``(spec.seed, kind, severity, i)``."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        raise ValueError("corrupt expects 8-bit images")
    return np.stack([corrupt_one(img, spec, i) for i, img in enumerate(images)]) if len(images) else images.copy()


@dataclass
class NoiseReport:
    clean: float
    detail: dict = field(default_factory=dict)

    def mean(self, kind: str) -> float:
        vals = [acc for (k, s), acc in self.detail.items() if k == kind and s > 0]
        return float(np.mean(vals)) if vals else float("nan")

    def row(self) -> dict:
        row = {"clean": self.clean}
        row.update({k: self.mean(k) for k in KINDS})
        return row

    def write_csv(self, path):
        row = self.row()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(NOISE_HEADER)
            w.writerow([f"{row[k]:.6f}" for k in NOISE_HEADER])

    def write_detail_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DETAIL_HEADER)
            for (k, s), acc in sorted(self.detail.items(), key=lambda kv: (KINDS.index(kv[0][0]), kv[0][1])):
                w.writerow([k, s, f"{acc:.6f}"])


def noise_eval(model, dataset, kinds=KINDS, severities=(1, 2, 3, 4, 5), seed: int = 0,
               mode=None) -> NoiseReport:
    """Accuracy on corrupted copies of ``dataset`` for every (kind, severity)."""
    mode = mode or inference_mode(model)
    report = NoiseReport(evaluate(model, dataset, mode=mode))
    for kind in kinds:
        for sev in severities:
            noisy = corrupt(dataset.images, CorruptionSpec(kind, sev, seed))
            report.detail[(kind, sev)] = evaluate(
                model, LabeledDataset(noisy, dataset.labels, dataset.n_classes), mode=mode)
    return report
