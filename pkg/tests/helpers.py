"""Shared builders and independent reference implementations for the tests."""

import math
import time

import numpy as np

from subflowclf.flows import FlowKey, Subflow

KEY = FlowKey(("10.0.0.1", 4000), ("10.0.0.2", 443), 6)


def make_subflow(ts, sizes, flags=None, windows=None, label="unlabeled"):
    n = len(ts)
    flags = [0x10] * n if flags is None else flags
    windows = [65535] * n if windows is None else windows
    return Subflow(KEY, 0, np.array(ts, dtype=np.int64), np.array(sizes, dtype=np.int64),
                   np.array(flags, dtype=np.uint8), np.array(windows, dtype=np.int64), label)


def naive_mean(xs):
    return sum(xs) / len(xs)


def naive_pstd(xs):
    m = naive_mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / len(xs))


def naive_core8(ts, sizes):
    iat = [(b - a) / 1e6 for a, b in zip(ts, ts[1:])]
    sizes = [float(s) for s in sizes]
    return [max(iat), min(iat), naive_mean(iat), naive_pstd(iat),
            max(sizes), min(sizes), naive_mean(sizes), naive_pstd(sizes)]


def naive_ext14(ts, sizes, flags, windows):
    c = naive_core8(ts, sizes)
    span = (ts[-1] - ts[0]) / 1e6
    total = float(sum(sizes))
    return [total, c[4], c[5], float(sum(1 for f in flags if f & 0x10)),
            float(min(windows)), float(max(windows)), c[7], c[6], c[2], c[3], c[0], c[1],
            len(ts) / span if span > 0 else 0.0, total / span if span > 0 else 0.0]


def rel_close(a, b, rel):
    return all(abs(x - y) <= rel * max(abs(x), abs(y)) for x, y in zip(a, b))


# Acceptance bookkeeping: each criterion records one outcome, reported at session end.
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


class criterion:
    """Context manager recording PASS/FAIL for one acceptance criterion."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.detail = ""

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self._t0
        if exc_type is None:
            ACCEPTANCE[self.number] = ("PASS", self.title, f"{self.detail}; {elapsed:.1f}s".lstrip("; "))
        else:
            msg = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
            ACCEPTANCE[self.number] = ("FAIL", self.title, msg[:160])
        return False
