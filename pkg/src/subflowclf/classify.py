"""Flow verdicts from a sequence of per-subflow (p_K, p_U) likelihoods."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .flows import KNOWN, UNKNOWN
from .likelihood import LikelihoodState, accumulate, certainty_ratio, certainty_to_ratio

UNCERTAIN = "uncertain"

STRICT = "strict"
MAJORITY = "majority"
INCREMENTAL_STRICT = "incremental_strict"
INCREMENTAL_MAJORITY = "incremental_majority"
MODES = (STRICT, MAJORITY, INCREMENTAL_STRICT, INCREMENTAL_MAJORITY)

# log-space slack for threshold and tie comparisons; absorbs summation rounding
LOG_TOL = 1e-9


@dataclass(frozen=True)
class DecisionPolicy:
    threshold_known: float = 19.0
    threshold_unknown: float = 19.0
    min_subflows: int = 15
    mode: str = STRICT

    def __post_init__(self) -> None:
        if not (self.threshold_known > 1 and self.threshold_unknown > 1):
            raise ValueError("ratio thresholds must exceed 1")
        if self.min_subflows < 1:
            raise ValueError("min_subflows must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @classmethod
    def from_certainty(cls, certainty: float = 0.95, certainty_known: float | None = None,
                       certainty_unknown: float | None = None, min_subflows: int = 15,
                       mode: str = STRICT) -> "DecisionPolicy":
        ck = certainty if certainty_known is None else certainty_known
        cu = certainty if certainty_unknown is None else certainty_unknown
        return cls(certainty_to_ratio(ck), certainty_to_ratio(cu), min_subflows, mode)

    def with_mode(self, mode: str) -> "DecisionPolicy":
        return DecisionPolicy(self.threshold_known, self.threshold_unknown, self.min_subflows, mode)


@dataclass(frozen=True)
class FlowDecision:
    verdict: str
    log_ratio_known: float
    subflows_used: int
    subflows_available: int
    mode: str


def _crossing(log_ratio_known: float, policy: DecisionPolicy) -> str | None:
    if log_ratio_known >= math.log(policy.threshold_known) - LOG_TOL:
        return KNOWN
    if -log_ratio_known >= math.log(policy.threshold_unknown) - LOG_TOL:
        return UNKNOWN
    return None


def _larger_likelihood(log_ratio_known: float) -> str:
    # exact ties fail safe to unknown
    return KNOWN if log_ratio_known > LOG_TOL else UNKNOWN


def _accumulate_all(seq: Sequence[tuple[float, float]]) -> LikelihoodState:
    if len(seq) == 0:
        raise ValueError("cannot classify a flow with no subflows")
    state = LikelihoodState()
    for pk, pu in seq:
        state = accumulate(state, pk, pu)
    return state


def classify_strict(seq: Sequence[tuple[float, float]], policy: DecisionPolicy) -> FlowDecision:
    state = _accumulate_all(seq)
    lr, _ = certainty_ratio(state)
    verdict = _crossing(lr, policy) or UNCERTAIN
    return FlowDecision(verdict, lr, len(seq), len(seq), STRICT)


def classify_majority(seq: Sequence[tuple[float, float]], policy: DecisionPolicy) -> FlowDecision:
    state = _accumulate_all(seq)
    lr, _ = certainty_ratio(state)
    verdict = _crossing(lr, policy) or _larger_likelihood(lr)
    return FlowDecision(verdict, lr, len(seq), len(seq), MAJORITY)


def classify_incremental(seq: Sequence[tuple[float, float]], policy: DecisionPolicy,
                         majority_fallback: bool | None = None) -> FlowDecision:
    """Consume subflows in order and stop at the first threshold crossing at
    or after ``policy.min_subflows``.

    A flow shorter than the floor is judged once on all of its subflows. If
    the stream runs out without a crossing the verdict is uncertain, or the
    larger likelihood when ``majority_fallback`` (default: policy mode is
    ``incremental_majority``).
    """
    if majority_fallback is None:
        majority_fallback = policy.mode == INCREMENTAL_MAJORITY
    mode = INCREMENTAL_MAJORITY if majority_fallback else INCREMENTAL_STRICT
    if len(seq) == 0:
        raise ValueError("cannot classify a flow with no subflows")
    floor = min(policy.min_subflows, len(seq))
    state = LikelihoodState()
    lr = 0.0
    for i, (pk, pu) in enumerate(seq, 1):
        state = accumulate(state, pk, pu)
        if i < floor:
            continue
        lr, _ = certainty_ratio(state)
        verdict = _crossing(lr, policy)
        if verdict is not None:
            return FlowDecision(verdict, lr, i, len(seq), mode)
    verdict = _larger_likelihood(lr) if majority_fallback else UNCERTAIN
    return FlowDecision(verdict, lr, len(seq), len(seq), mode)


def classify_flow(seq: Sequence[tuple[float, float]], policy: DecisionPolicy) -> FlowDecision:
    if policy.mode == STRICT:
        return classify_strict(seq, policy)
    if policy.mode == MAJORITY:
        return classify_majority(seq, policy)
    return classify_incremental(seq, policy)


def format_decision(flow_key: object, d: FlowDecision) -> str:
    return (f"{flow_key} {d.verdict} {d.log_ratio_known!r} {d.subflows_used} "
            f"{d.subflows_available} {d.mode}")
