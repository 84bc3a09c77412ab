"""Retain-rate schedule, difficulty threshold, node mask and node loss weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from stc_dropout.difficulty import DifficultyReport, nearest_rank
from stc_dropout.graph import NeighborIndex
from stc_dropout.numerics import make_rng

STRATEGIES = ("none", "stc", "anti", "sc_only", "tc_only", "mean_fill", "plain_dropout")
SCORED_STRATEGIES = frozenset({"stc", "anti", "sc_only", "tc_only", "mean_fill"})

_DROPOUT_STREAM = 7


def scheduler(t: int, alpha_bar: float, beta: float) -> float:
    """Retain rate ``1 - (1 - alpha_bar) * exp(-beta * t)``."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if not 0.0 < alpha_bar <= 1.0:
        raise ValueError(f"alpha_bar must lie in (0, 1], got {alpha_bar}")
    if t < 0:
        raise ValueError("t must be non-negative")
    # alpha + (1 - alpha)(1 - e^{-bt}); expm1 keeps pi(0) == alpha_bar exactly
    return alpha_bar - (1.0 - alpha_bar) * math.expm1(-beta * t)


def beta_heuristic(total_updates: int, num_nodes: int) -> float:
    """Decay rate ``1000 / (T * |V|)``.

    Then ``pi(T) = 1 - (1 - alpha_bar) * exp(-1000 / |V|)``, which clears
    ``1 - 1 / (100 |V|)`` only for graphs of up to roughly a hundred nodes.
    """
    if total_updates < 1 or num_nodes < 1:
        raise ValueError("total_updates and num_nodes must be >= 1")
    return 1000.0 / (total_updates * num_nodes)


def threshold(scores, retain: float) -> float:
    """Nearest-rank ``retain``-quantile of ``scores``."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty score set")
    if not 0.0 < retain <= 1.0:
        raise ValueError(f"retain rate must lie in (0, 1], got {retain}")
    return float(np.sort(s)[nearest_rank(retain, s.size) - 1])


def build_mask(scores, s_t: float) -> np.ndarray:
    return (np.asarray(scores) <= s_t).astype(np.float64)


def node_weights(scores, s_prev: float, s_curr: float, retain: float) -> np.ndarray:
    """Per-node loss weights: 1 if long retained, ``1 + retain`` if newly admitted, 0 if dropped."""
    if s_prev > s_curr:
        raise ValueError(f"threshold decreased ({s_prev} > {s_curr}) over an unchanged score set")
    s = np.asarray(scores, dtype=np.float64)
    w = np.where(s <= s_prev, 1.0, 1.0 + retain)
    w[s > s_curr] = 0.0
    return w


@dataclass
class CurriculumState:
    """Mutable per-update curriculum bookkeeping.

    Call :meth:`step` once before every gradient update; it returns the mask
    and weights to use for that update and advances ``t``.
    """

    num_nodes: int
    total_updates: int
    alpha_bar: float = 0.3
    beta: float | None = None
    strategy: str = "stc"
    refresh_every: int = 1
    dropout_p: float = 0.1
    node_weighting: bool = True
    neighbors: NeighborIndex | None = None
    seed: int = 0

    t: int = 0
    s_prev: float = -math.inf
    s_curr: float = math.nan
    retain: float = 1.0
    mask: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)
    report: DifficultyReport | None = field(default=None, repr=False)
    _scores: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be a positive integer")
        if not 0.0 < self.alpha_bar <= 1.0:
            raise ValueError("alpha_bar must lie in (0, 1]")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.beta is None:
            self.beta = beta_heuristic(self.total_updates, self.num_nodes)
        if self.strategy == "mean_fill" and self.neighbors is None:
            raise ValueError("mean_fill needs the neighbor index")
        self.mask = np.ones(self.num_nodes)
        self.weights = np.ones(self.num_nodes)
        self._dropout_rng = make_rng(self.seed, _DROPOUT_STREAM)

    @property
    def needs_scores(self) -> bool:
        return self.strategy in SCORED_STRATEGIES

    @property
    def refresh_due(self) -> bool:
        return self.needs_scores and self.t % self.refresh_every == 0

    def _ranking_scores(self, report: DifficultyReport) -> np.ndarray:
        if self.strategy == "sc_only":
            return 1.0 - report.spatial
        if self.strategy == "tc_only":
            return 1.0 - report.temporal
        if self.strategy == "anti":
            # hardest first: rank on negated difficulty
            return -report.diff
        return report.diff

    def step(self, fresh: DifficultyReport | None = None) -> "CurriculumState":
        if fresh is not None:
            if len(fresh.diff) != self.num_nodes:
                raise ValueError("difficulty report size does not match the graph")
            self.report = fresh
            self._scores = self._ranking_scores(fresh)
        elif self.refresh_due:
            raise ValueError(f"fresh difficulty scores are due at t={self.t}")

        if self.strategy == "none":
            self.retain = 1.0
            self.mask = np.ones(self.num_nodes)
            self.weights = np.ones(self.num_nodes)
        elif self.strategy == "plain_dropout":
            self.retain = 1.0 - self.dropout_p
            keep = self._dropout_rng.random(self.num_nodes) >= self.dropout_p
            self.mask = keep.astype(np.float64)
            self.weights = np.ones(self.num_nodes)
        else:
            if self._scores is None:
                raise ValueError("no difficulty scores available")
            self.retain = scheduler(self.t, self.alpha_bar, self.beta)
            s_curr = threshold(self._scores, self.retain)
            # previous update's threshold, re-read on the current scores so a
            # refresh cannot make S_prev exceed S_curr
            if self.t == 0:
                self.s_prev = -math.inf
            else:
                self.s_prev = threshold(self._scores, scheduler(self.t - 1, self.alpha_bar, self.beta))
            self.mask = build_mask(self._scores, s_curr)
            if self.node_weighting:
                self.weights = node_weights(self._scores, self.s_prev, s_curr, self.retain)
            else:
                self.weights = self.mask.copy()
            self.s_curr = s_curr
        self.t += 1
        return self

    @property
    def threshold_in_diff_units(self) -> float:
        return -self.s_curr if self.strategy == "anti" else self.s_curr

    def fill_matrix(self) -> np.ndarray | None:
        """Node-mixing matrix replacing each dropped node by the mean of its retained neighbors.

        Only used by ``mean_fill``; other strategies apply :attr:`mask` directly.
        """
        if self.strategy != "mean_fill":
            return None
        f = np.diag(self.mask)
        kept = self.mask > 0
        for v in np.flatnonzero(~kept):
            donors = [u for u in self.neighbors[v] if kept[u]]
            if donors:
                f[v, donors] = 1.0 / len(donors)
        return f

    def trace_row(self, t: int) -> tuple:
        s = self.threshold_in_diff_units if self.needs_scores else math.nan
        return (t, self.retain, s, int(np.count_nonzero(self.mask)), float(np.mean(self.weights)))


TRACE_HEADER = ("t", "pi", "S_t", "num_retained", "mean_weight")
