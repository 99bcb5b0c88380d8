"""Mixed target/auxiliary batch sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import EmptyDataset


@dataclass
class MixedBatch:
    target_samples: list
    auxiliary_samples: list
    ratio: tuple
    target_indices: list = field(default_factory=list)
    auxiliary_indices: list = field(default_factory=list)


def split_counts(batch_size: int, ratio=(4, 1), has_target: bool = True, has_aux: bool = True):
    """(target, auxiliary) counts: aux gets ``floor(batch/(t+a))*a``, target the rest."""
    t, a = ratio
    if t <= 0 or a <= 0:
        raise ValueError(f"ratio parts must be positive, got {ratio}")
    if not has_aux:
        return batch_size, 0
    if not has_target:
        return 0, batch_size
    n_aux = (batch_size // (t + a)) * a
    if n_aux == 0:
        raise ValueError(f"batch size {batch_size} too small for ratio {t}:{a}")
    return batch_size - n_aux, n_aux


def _class_pools(labels: np.ndarray):
    return [np.flatnonzero(labels == c) for c in np.unique(labels[labels >= 0])]


def balanced_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One oversampled epoch: classes interleaved in a fixed cycle.

    Every class contributes ``max_count`` draws; a class pool is reshuffled
    when exhausted, so each available sample appears at least once. Any
    contiguous window holds class counts that differ by at most one.
    """
    pools = _class_pools(labels)
    if not pools:
        raise EmptyDataset("no labelled samples to balance")
    longest = max(len(p) for p in pools)
    cycle = rng.permutation(len(pools))
    columns = []
    for p in pools:
        draws = []
        while len(draws) < longest:
            draws.extend(rng.permutation(p).tolist())
        columns.append(draws[:longest])
    order = [columns[c][r] for r in range(longest) for c in cycle]
    return np.array(order, dtype=np.intp)


class MixedBatchSampler:
    """Deterministic epoch iterator over mixed batches.

    Target and auxiliary draws use independent RNG streams derived from
    ``seed``, so the target sequence does not depend on whether an auxiliary
    dataset is present.
    """

    def __init__(self, target, aux, batch_size: int, ratio=(4, 1), seed: int = 0,
                 oversample_balanced: bool = False):
        if target is None and aux is None:
            raise EmptyDataset("need a target or an auxiliary dataset")
        if target is not None and len(target) == 0:
            raise EmptyDataset(f"target dataset {target.name!r} is empty")
        if aux is not None and len(aux) == 0:
            raise EmptyDataset(f"auxiliary dataset {aux.name!r} is empty")
        self.target, self.aux = target, aux
        self.ratio = tuple(ratio)
        self.n_target, self.n_aux = split_counts(batch_size, ratio, target is not None, aux is not None)
        self.oversample_balanced = oversample_balanced
        self._target_rng = np.random.default_rng([seed, 1])
        self._aux_rng = np.random.default_rng([seed, 2])
        self._aux_stream: list = []
        self._labels = target.labels() if target is not None else None

    def _target_order(self) -> np.ndarray:
        if self.oversample_balanced:
            return balanced_order(self._labels, self._target_rng)
        return self._target_rng.permutation(len(self.target))

    def _next_aux(self, n: int) -> list:
        while len(self._aux_stream) < n:
            self._aux_stream.extend(self._aux_rng.permutation(len(self.aux)).tolist())
        out, self._aux_stream = self._aux_stream[:n], self._aux_stream[n:]
        return out

    def default_steps(self) -> int:
        if self.target is not None:
            n = len(self.target)
            if self.oversample_balanced:
                pools = _class_pools(self._labels)
                n = len(pools) * max(len(p) for p in pools)
            return math.ceil(n / self.n_target)
        return math.ceil(len(self.aux) / self.n_aux)

    def epoch(self, steps: Optional[int] = None) -> list:
        steps = steps or self.default_steps()
        batches = []
        t_idx = np.zeros(0, dtype=np.intp)
        if self.target is not None:
            order = self._target_order()
            need = steps * self.n_target
            reps = math.ceil(need / len(order))
            t_idx = np.tile(order, reps)[:need]
        for s in range(steps):
            ti = t_idx[s * self.n_target:(s + 1) * self.n_target].tolist() if self.n_target else []
            ai = self._next_aux(self.n_aux) if self.n_aux else []
            batches.append(MixedBatch(
                target_samples=[self.target.records[i] for i in ti],
                auxiliary_samples=[self.aux.records[i] for i in ai],
                ratio=self.ratio, target_indices=ti, auxiliary_indices=ai))
        return batches


def sample_mixed_batch(target, aux, batch_size: int, ratio, rng: np.random.Generator,
                       oversample_balanced: bool = False) -> MixedBatch:
    """Draw a single mixed batch from ``rng``."""
    if target is None or aux is None or len(target) == 0 or len(aux) == 0:
        raise EmptyDataset("sample_mixed_batch needs non-empty target and auxiliary datasets")
    n_t, n_a = split_counts(batch_size, ratio)
    if oversample_balanced:
        pools = _class_pools(target.labels())
        cycle = rng.permutation(len(pools))
        ti = [int(rng.choice(pools[cycle[i % len(pools)]])) for i in range(n_t)]
    else:
        ti = rng.choice(len(target), n_t, replace=n_t > len(target)).tolist()
    ai = rng.choice(len(aux), n_a, replace=n_a > len(aux)).tolist()
    return MixedBatch([target.records[i] for i in ti], [aux.records[i] for i in ai],
                      tuple(ratio), ti, ai)
