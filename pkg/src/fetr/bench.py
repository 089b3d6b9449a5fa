"""Dense non-local attention baseline and the criss-cross complexity benchmark."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import DCAParams, cca_pass, count_ops, dense_attention
from .errors import ContractError, ResourceError
from .tensor import Tensor, as_tensor, no_grad

MAX_DENSE_POSITIONS = 4096


def nonlocal_forward(r, p: DCAParams, mask=None) -> Tensor:
    """Every position attends to every position (optionally masked), plus residual.

    Shares the projection parameters of :class:`DCAParams` so that restricting
    ``mask`` to rows and columns reproduces :func:`cca_pass`.
    """
    r = as_tensor(r)
    n = r.shape[2] * r.shape[3]
    if n > MAX_DENSE_POSITIONS:
        raise ResourceError(f"dense attention over {n} positions exceeds the {MAX_DENSE_POSITIONS} guard")
    return dense_attention(p.q_proj(r), p.k_proj(r), p.v_proj(r), mask) + r


@dataclass
class BenchReport:
    H: int
    W: int
    C: int
    Cprime: int
    cc_scores: int
    nl_scores: int
    cc_macs: int
    nl_macs: int
    cc_ms: float
    nl_ms: float
    batch: int = 1
    cc_aggregate_macs: int = 0
    nl_aggregate_macs: int = 0

    @property
    def score_ratio(self) -> float:
        return self.cc_scores / self.nl_scores

    @property
    def speedup(self) -> float:
        return self.nl_ms / self.cc_ms


CSV_COLUMNS = ("H", "W", "C", "Cprime", "cc_scores", "nl_scores", "cc_macs", "nl_macs", "cc_ms", "nl_ms")


def _median_ms(fn, repeats):
    fn()  # warm-up, discarded
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def run_bench(sizes, channels: int = 32, repeats: int = 5, batch: int = 1, seed: int = 0) -> list:
    """Count and time one criss-cross pass against dense attention per square size."""
    if repeats < 3:
        raise ContractError(f"repeats must be >= 3, got {repeats}")
    rng = np.random.default_rng(seed)
    params = DCAParams.create(channels, rng, np.float32)
    reports = []
    with threadpool_limits(limits=1), no_grad():
        for size in sizes:
            r = Tensor(rng.standard_normal((batch, channels, size, size)).astype(np.float32))
            with count_ops() as cc:
                cca_pass(r, params)
            with count_ops() as nl:
                nonlocal_forward(r, params)
            reports.append(
                BenchReport(
                    H=size,
                    W=size,
                    C=channels,
                    Cprime=DCAParams.reduced_channels(channels),
                    cc_scores=cc.scores,
                    nl_scores=nl.scores,
                    cc_macs=cc.score_macs,
                    nl_macs=nl.score_macs,
                    cc_ms=_median_ms(lambda: cca_pass(r, params), repeats),
                    nl_ms=_median_ms(lambda: nonlocal_forward(r, params), repeats),
                    batch=batch,
                    cc_aggregate_macs=cc.aggregate_macs,
                    nl_aggregate_macs=nl.aggregate_macs,
                )
            )
    return reports


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        row = [getattr(rep, c) for c in CSV_COLUMNS]
        writer.writerow([f"{v:.3f}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()
