"""Sampling-sparsity statistics, near-extreme clamping and FEL selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ProbabilityMap

DEFAULT_TAU = 0.01
DEFAULT_MASS_THRESHOLD = 0.9


def probabilistic_mask(p: np.ndarray) -> np.ndarray:
    return (p > 0.0) & (p < 1.0)


@dataclass(frozen=True)
class SparsityProfile:
    n: tuple[int, ...]
    n_p: tuple[int, ...]

    @property
    def n_layers(self) -> int:
        return len(self.n)

    @property
    def total_probabilistic(self) -> int:
        return int(sum(self.n_p))

    @property
    def total_deterministic(self) -> int:
        return int(sum(n - k for n, k in zip(self.n, self.n_p)))

    @property
    def degenerate(self) -> bool:
        """True when no synapse is probabilistic (``frac_of_total`` is then all 0)."""
        return self.total_probabilistic == 0

    @property
    def frac_of_layer(self) -> tuple[float, ...]:
        return tuple(k / n if n else 0.0 for n, k in zip(self.n, self.n_p))

    @property
    def frac_of_total(self) -> tuple[float, ...]:
        total = self.total_probabilistic
        if total == 0:
            return tuple(0.0 for _ in self.n_p)
        return tuple(k / total for k in self.n_p)

    def rows(self):
        for idx, (n, k, fl, ft) in enumerate(zip(self.n, self.n_p, self.frac_of_layer, self.frac_of_total), start=1):
            yield {"layer": idx, "n": n, "n_p": k, "frac_of_layer": fl, "frac_of_total": ft}


def layer_stats(pmap: ProbabilityMap) -> SparsityProfile:
    return SparsityProfile(
        n=tuple(int(p.size) for p in pmap.layers),
        n_p=tuple(int(np.count_nonzero(probabilistic_mask(p))) for p in pmap.layers),
    )


def clamp(pmap: ProbabilityMap, tau: float = DEFAULT_TAU) -> ProbabilityMap:
    """Snap ``p < tau`` to 0 and ``p > 1 - tau`` to 1."""
    if not 0.0 <= tau < 0.5:
        raise ValueError(f"tau must lie in [0, 0.5), got {tau}")
    out = []
    for p in pmap.layers:
        q = p.copy()
        q[p < tau] = 0.0
        q[p > np.float32(1.0 - tau)] = 1.0
        out.append(q)
    return ProbabilityMap(tuple(out))


@dataclass(frozen=True)
class FelDecision:
    fel: int  # 1-based layer index
    mass: float
    threshold: float


def select_fel(profile: SparsityProfile, mass_threshold: float = DEFAULT_MASS_THRESHOLD) -> FelDecision:
    """Deepest layer from which the tail holds at least ``mass_threshold`` of n_p."""
    total = profile.total_probabilistic
    if total == 0:
        raise ValueError("network has no probabilistic synapses; no ensembling layer exists")
    if not 0.0 <= mass_threshold <= 1.0:
        raise ValueError("mass_threshold must lie in [0, 1]")
    # integer tail sums avoid round-off at the exact-threshold boundary
    tail = 0
    for l in range(profile.n_layers, 0, -1):
        tail += profile.n_p[l - 1]
        if tail >= mass_threshold * total:
            return FelDecision(l, tail / total, mass_threshold)
    return FelDecision(1, 1.0, mass_threshold)


def clamp_before_fel(pmap: ProbabilityMap, fel: int) -> ProbabilityMap:
    """Round every layer shallower than ``fel`` to {0, 1}; 0.5 goes to 1."""
    if not 1 <= fel <= pmap.n_layers:
        raise ValueError(f"fel must lie in [1, {pmap.n_layers}]")
    out = []
    for l, p in enumerate(pmap.layers, start=1):
        out.append(np.where(p >= 0.5, 1.0, 0.0).astype(np.float32) if l < fel else p)
    return ProbabilityMap(tuple(out))
