"""Flow-class likelihoods from subflow confusion counts, and their log-space accumulation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .flows import KNOWN, UNKNOWN


@dataclass(frozen=True)
class ConfusionCounts:
    """``n_xy`` counts subflows predicted ``x`` whose true class is ``y``."""

    n_kk: int = 0
    n_ku: int = 0
    n_uk: int = 0
    n_uu: int = 0

    def __post_init__(self) -> None:
        if min(self.n_kk, self.n_ku, self.n_uk, self.n_uu) < 0:
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "ConfusionCounts":
        c = {(p, t): 0 for p in (KNOWN, UNKNOWN) for t in (KNOWN, UNKNOWN)}
        for pred, true in pairs:
            if (pred, true) not in c:
                raise ValueError(f"bad (predicted, true) pair {(pred, true)!r}")
            c[pred, true] += 1
        return cls(c[KNOWN, KNOWN], c[KNOWN, UNKNOWN], c[UNKNOWN, KNOWN], c[UNKNOWN, UNKNOWN])


@dataclass(frozen=True)
class LikelihoodTable:
    """``p_xy``: probability the true class is ``y`` given predicted ``x``."""

    p_kk: float
    p_ku: float
    p_uk: float
    p_uu: float
    smoothing_alpha: float = 0.0

    def to_dict(self) -> dict:
        return {"p_kk": self.p_kk, "p_ku": self.p_ku, "p_uk": self.p_uk, "p_uu": self.p_uu,
                "smoothing_alpha": self.smoothing_alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodTable":
        t = cls(float(d["p_kk"]), float(d["p_ku"]), float(d["p_uk"]), float(d["p_uu"]),
                float(d["smoothing_alpha"]))
        for p in (t.p_kk, t.p_ku, t.p_uk, t.p_uu):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"likelihood {p} outside [0, 1]")
        return t


def fit_from_counts(c: ConfusionCounts, alpha: float = 1.0) -> LikelihoodTable:
    if alpha < 0:
        raise ValueError("smoothing alpha must be non-negative")
    den_k = c.n_kk + c.n_ku + 2 * alpha
    den_u = c.n_uk + c.n_uu + 2 * alpha
    if den_k == 0 or den_u == 0:
        raise ValueError("no subflows predicted as one of the classes and alpha = 0")
    return LikelihoodTable((c.n_kk + alpha) / den_k, (c.n_ku + alpha) / den_k,
                           (c.n_uk + alpha) / den_u, (c.n_uu + alpha) / den_u, alpha)


def fit_likelihood_table(pred_true_pairs: Iterable[tuple[str, str]], alpha: float = 1.0) -> LikelihoodTable:
    return fit_from_counts(ConfusionCounts.from_pairs(pred_true_pairs), alpha)


def subflow_likelihoods(table: LikelihoodTable, predicted: str) -> tuple[float, float]:
    """(p_K, p_U) for one subflow given its predicted label."""
    if predicted == KNOWN:
        return table.p_kk, table.p_ku
    if predicted == UNKNOWN:
        return table.p_uk, table.p_uu
    raise ValueError(f"bad predicted label {predicted!r}")


@dataclass(frozen=True)
class LikelihoodState:
    log_lk: float = 0.0
    log_lu: float = 0.0
    m: int = 0

    def merge(self, other: "LikelihoodState") -> "LikelihoodState":
        return LikelihoodState(self.log_lk + other.log_lk, self.log_lu + other.log_lu, self.m + other.m)


def accumulate(state: LikelihoodState, p_k: float, p_u: float) -> LikelihoodState:
    if not (0.0 < p_k < 1.0 and 0.0 < p_u < 1.0):
        raise ValueError(f"subflow likelihoods must lie in (0, 1), got ({p_k}, {p_u})")
    return LikelihoodState(state.log_lk + math.log(p_k), state.log_lu + math.log(p_u), state.m + 1)


def certainty_ratio(state: LikelihoodState) -> tuple[float, float]:
    """(log L_K/L_U, log L_U/L_K)."""
    if state.m < 1:
        raise ValueError("no subflows accumulated")
    r = state.log_lk - state.log_lu
    return r, -r


def odds(c: float) -> float:
    """c / (1 - c), evaluated on the shortest decimal form of ``c`` so that
    0.95 maps to exactly 19.0."""
    f = Fraction(repr(float(c)))
    if not 0 < f < 1:
        raise ValueError(f"probability must be in (0, 1), got {c}")
    return float(f / (1 - f))


def certainty_to_ratio(c: float) -> float:
    if not 0.5 < c < 1.0:
        raise ValueError(f"certainty must be in (0.5, 1), got {c}")
    return odds(c)
