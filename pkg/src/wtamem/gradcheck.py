"""Finite-difference gradient checking for the autodiff engine."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, default_dtype


def relative_error(a: float, b: float, atol: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), atol)


def grad_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    sampler: Callable[[np.random.Generator], Sequence[np.ndarray]],
    probes: int = 20,
    seed=0,
    eps: float = 1e-3,
    signature: Callable[[Sequence[np.ndarray]], object] | None = None,
    max_resample: int = 50,
    atol: float = 1e-6,
) -> float:
    """Largest relative error between AD and central differences.

    ``sampler(rng)`` draws a point (a list of arrays); ``f`` maps the
    corresponding tensors to a scalar.  Each probe perturbs one random
    coordinate by ``+-eps``.  When ``signature`` is given it must return a
    comparable description of the piecewise regime (e.g. ReLU masks); a probe
    whose perturbation changes the regime is redrawn, and a point with too many
    such probes is resampled.
    """
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        for _ in range(max_resample):
            point = [np.array(p, dtype=np.float64) for p in sampler(rng)]
            tensors = [Tensor(p, requires_grad=True) for p in point]
            loss = f(tensors)
            loss.backward()
            grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
            base_sig = signature(point) if signature is not None else None

            sizes = np.array([p.size for p in point])
            worst, done, misses = 0.0, 0, 0
            while done < probes and misses < 20 * probes:
                k = rng.choice(len(point), p=sizes / sizes.sum())
                idx = int(rng.integers(point[k].size))
                flat = point[k].reshape(-1)
                orig = flat[idx]
                flat[idx] = orig + eps
                if signature is not None and not _same(signature(point), base_sig):
                    flat[idx] = orig
                    misses += 1
                    continue
                up = f([Tensor(p) for p in point]).item()
                flat[idx] = orig - eps
                if signature is not None and not _same(signature(point), base_sig):
                    flat[idx] = orig
                    misses += 1
                    continue
                down = f([Tensor(p) for p in point]).item()
                flat[idx] = orig
                numeric = (up - down) / (2 * eps)
                worst = max(worst, relative_error(grads[k].reshape(-1)[idx], numeric, atol))
                done += 1
            if done == probes:
                return worst
    raise RuntimeError("could not find a point away from non-differentiable kinks")


def _same(a, b) -> bool:
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(a, b))
