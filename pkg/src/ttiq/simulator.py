"""Slot-accurate Monte Carlo engine for the two-duration transmitter.

Per slot, in order: (1) if the server is in the second slot of a two-slot
transmission, resolve it at slot end with success probability p2 (a failed
packet returns to the head of the queue); (2) otherwise, if the queue is
nonempty at slot start, draw a duration (one slot with probability q1, two
with q2) and resolve one-slot attempts at slot end with p1; (3) a new
packet arrives at slot end with probability lam and cannot be served before
the next slot.  The queue is sampled at slot end, after the departure and
the arrival.

Determinism: runs are reproducible bit-for-bit from ``SimConfig.seed``.
Randomness comes from numpy's PCG64 generator; three uniform streams of
length ``horizon`` are drawn up front, in the order arrival, duration,
success, and stream t is consumed only at slot t (the success stream is
consumed at the slot where an attempt resolves).  Replicate seeds are
derived from the base seed with the splitmix64 mix function applied to
``seed + replicate_index``.  Changing any of these rules invalidates golden
outputs, so they are frozen here and in the README.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as student_t

from .analytic import mu_refined
from .errors import ParameterError
from .model import ModelParams

_HIST_CAP = 10_000
_ABS_QUEUE_CAP = 10_000_000
_Z95 = 1.959963984540054

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, index: int) -> int:
    """Splitmix64 mix of ``seed + index``; a bijection on 64-bit integers,
    so distinct indices always yield distinct derived seeds."""
    x = (seed + index) & _MASK64
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


@dataclass(frozen=True)
class SimConfig:
    """One simulation run: scenario, horizon in slots, explicit RNG seed,
    warmup slots discarded before measurement, and whether to collect the
    empirical queue-size distribution."""

    params: ModelParams
    seed: int
    horizon: int = 1_000_000
    warmup: int = 10_000
    sample_queue_distribution: bool = True
    n_batches: int = 20

    def __post_init__(self) -> None:
        if self.warmup < 0 or self.horizon <= self.warmup:
            raise ParameterError(
                f"need horizon > warmup >= 0, got horizon={self.horizon}, "
                f"warmup={self.warmup}"
            )
        if self.n_batches < 2:
            raise ParameterError(f"n_batches must be >= 2, got {self.n_batches}")


@dataclass(frozen=True)
class SimReport:
    """Estimates from one run, measured over the post-warmup window.

    ``mu_hat`` is completions per busy slot (both slots of a two-slot
    attempt count busy), the reciprocal of the mean per-packet service
    span.  ``dq_hat`` is Little's-law delay qbar_hat / lambda_hat;
    ``dt_hat`` is the mean span from a packet's first transmission attempt
    to its departure; ``sojourn_mean`` (departure slot - arrival slot) is
    reported separately and is not claimed to equal dq_hat + dt_hat.
    ``served``/``arrived``/``final_queue`` count over the full horizon, so
    arrived == served + final_queue exactly.  ``ci95`` holds batch-means
    95% confidence intervals keyed by metric name, when computable.
    """

    mu_hat: float
    qbar_hat: float
    dq_hat: float
    dt_hat: float
    total_delay_hat: float
    sojourn_mean: float
    lambda_hat: float
    served: int
    arrived: int
    final_queue: int
    busy_slots: int
    completions: int
    measured_slots: int
    max_queue: int
    unstable_flag: bool
    queue_hist: np.ndarray | None
    ci95: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Flat key-value form (JSON-compatible)."""
        out = {
            "mu_hat": self.mu_hat,
            "qbar_hat": self.qbar_hat,
            "dq_hat": self.dq_hat,
            "dt_hat": self.dt_hat,
            "total_delay_hat": self.total_delay_hat,
            "sojourn_mean": self.sojourn_mean,
            "lambda_hat": self.lambda_hat,
            "served": self.served,
            "arrived": self.arrived,
            "final_queue": self.final_queue,
            "busy_slots": self.busy_slots,
            "completions": self.completions,
            "measured_slots": self.measured_slots,
            "max_queue": self.max_queue,
            "unstable_flag": self.unstable_flag,
        }
        for name, (lo, hi) in sorted(self.ci95.items()):
            out[f"{name}_ci_low"] = lo
            out[f"{name}_ci_high"] = hi
        if self.queue_hist is not None:
            out["queue_hist"] = self.queue_hist.tolist()
        return out


def _batch_ci(values: list[float]) -> tuple[float, float] | None:
    vals = np.asarray(values)
    n = vals.size
    if n < 2 or not np.all(np.isfinite(vals)):
        return None
    mean = float(vals.mean())
    std = float(vals.std(ddof=1))
    half = float(student_t.ppf(0.975, n - 1)) * std / math.sqrt(n)
    return (mean - half, mean + half)


def run_slots(config: SimConfig) -> SimReport:
    """Run the slot loop and estimate every analytical metric.

    Deterministic given the config (including seed).  The unstable flag is a
    drift heuristic: it fires when the final backlog exceeds half the
    expected unstable drift (lam - mu_refined) * measured slots (when that
    drift is positive) or an absolute cap of 1e7 packets.
    """
    params = config.params
    horizon, warmup = config.horizon, config.warmup
    rng = np.random.default_rng(config.seed)
    arrive = (rng.random(horizon) < params.lam).tolist()
    two_slot = (rng.random(horizon) >= params.q1).tolist()
    u_succ = rng.random(horizon)
    succ1 = (u_succ < params.p1).tolist()
    succ2 = (u_succ < params.p2).tolist()
    del u_succ

    measured = horizon - warmup
    n_batches = config.n_batches if measured >= 10 * config.n_batches else 1
    batch_len = measured // n_batches

    hist = [0] * (_HIST_CAP + 1) if config.sample_queue_distribution else None
    arrival_slots = [0] * (horizon + 1)

    b_qsum = [0] * n_batches
    b_arr = [0] * n_batches
    b_busy = [0] * n_batches
    b_compl = [0] * n_batches
    b_span = [0] * n_batches
    b_span_n = [0] * n_batches
    b_soj = [0] * n_batches
    b_soj_n = [0] * n_batches
    b_len = [0] * n_batches

    queue = 0
    mid_two = False
    head_start = -1
    arrived = served = 0
    max_queue = 0
    last_batch = n_batches - 1

    for t in range(horizon):
        departed = False
        busy = False
        if mid_two:
            busy = True
            mid_two = False
            if succ2[t]:
                departed = True
        elif queue > 0:
            busy = True
            if head_start < 0:
                head_start = t
            if two_slot[t]:
                mid_two = True
            elif succ1[t]:
                departed = True
        in_window = t >= warmup
        if in_window:
            bid = (t - warmup) // batch_len
            if bid > last_batch:
                bid = last_batch
        if departed:
            queue -= 1
            if in_window:
                b_compl[bid] += 1
                b_span[bid] += t - head_start + 1
                b_span_n[bid] += 1
                b_soj[bid] += t - arrival_slots[served]
                b_soj_n[bid] += 1
            served += 1
            head_start = -1
        if arrive[t]:
            arrival_slots[arrived] = t
            arrived += 1
            queue += 1
            if queue > max_queue:
                max_queue = queue
        if in_window:
            b_len[bid] += 1
            b_qsum[bid] += queue
            if busy:
                b_busy[bid] += 1
            b_arr[bid] += 1 if arrive[t] else 0
            if hist is not None:
                hist[queue if queue < _HIST_CAP else _HIST_CAP] += 1

    qsum = sum(b_qsum)
    arr_meas = sum(b_arr)
    busy_slots = sum(b_busy)
    completions = sum(b_compl)
    span_sum, span_n = sum(b_span), sum(b_span_n)
    soj_sum, soj_n = sum(b_soj), sum(b_soj_n)

    qbar_hat = qsum / measured
    lambda_hat = arr_meas / measured
    mu_hat = completions / busy_slots if busy_slots > 0 else 0.0
    dq_hat = qbar_hat / lambda_hat if lambda_hat > 0.0 else 0.0
    dt_hat = span_sum / span_n if span_n > 0 else 0.0
    sojourn_mean = soj_sum / soj_n if soj_n > 0 else 0.0

    queue_hist = None
    if hist is not None:
        arr = np.asarray(hist, dtype=float)
        arr /= measured
        top = int(np.max(np.nonzero(arr)[0])) if arr.any() else 0
        queue_hist = arr[:top + 1]

    ci: dict[str, tuple[float, float]] = {}
    if n_batches >= 2:
        per_batch: dict[str, list[float]] = {
            "mu_hat": [], "dq_hat": [], "dt_hat": [],
            "total_delay_hat": [], "sojourn_mean": [], "qbar_hat": [],
        }
        usable = True
        for i in range(n_batches):
            if b_busy[i] == 0 or b_arr[i] == 0 or b_span_n[i] == 0:
                usable = False
                break
            dq_b = b_qsum[i] / b_arr[i]
            dt_b = b_span[i] / b_span_n[i]
            per_batch["mu_hat"].append(b_compl[i] / b_busy[i])
            per_batch["dq_hat"].append(dq_b)
            per_batch["dt_hat"].append(dt_b)
            per_batch["total_delay_hat"].append(dq_b + dt_b)
            per_batch["sojourn_mean"].append(b_soj[i] / b_soj_n[i])
            per_batch["qbar_hat"].append(b_qsum[i] / b_len[i])
        if usable:
            for name, vals in per_batch.items():
                interval = _batch_ci(vals)
                if interval is not None:
                    ci[name] = interval

    drift = params.lam - mu_refined(params)
    final_queue = queue
    unstable = final_queue >= _ABS_QUEUE_CAP
    if drift > 0.0:
        threshold = max(100.0, 0.5 * drift * measured)
        unstable = unstable or final_queue > threshold

    return SimReport(
        mu_hat=mu_hat,
        qbar_hat=qbar_hat,
        dq_hat=dq_hat,
        dt_hat=dt_hat,
        total_delay_hat=dq_hat + dt_hat,
        sojourn_mean=sojourn_mean,
        lambda_hat=lambda_hat,
        served=served,
        arrived=arrived,
        final_queue=final_queue,
        busy_slots=busy_slots,
        completions=completions,
        measured_slots=measured,
        max_queue=max_queue,
        unstable_flag=unstable,
        queue_hist=queue_hist,
        ci95=ci,
    )


_REPLICATE_METRICS = ("mu_hat", "qbar_hat", "dq_hat", "dt_hat",
                      "total_delay_hat", "sojourn_mean", "lambda_hat")


@dataclass(frozen=True)
class MetricStats:
    """Mean, sample std and normal 95% confidence interval across replicates."""

    mean: float
    std: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class ReplicateSummary:
    """Aggregate of independently seeded replicate runs."""

    n_reps: int
    stats: dict[str, MetricStats]
    reports: tuple[SimReport, ...]


def replicate(config: SimConfig, n_reps: int) -> ReplicateSummary:
    """Run ``n_reps`` replicates with seeds splitmix64(seed + i) and report
    per-metric mean, std and 95% normal confidence intervals.

    Deterministic given the base seed; intervals shrink as 1/sqrt(n_reps).
    """
    if n_reps < 2:
        raise ParameterError(f"n_reps must be >= 2, got {n_reps!r}")
    seeds = [derive_seed(config.seed, i) for i in range(n_reps)]
    if len(set(seeds)) != n_reps:
        raise AssertionError("seed splitting produced duplicate streams")
    reports = []
    for s in seeds:
        sub = SimConfig(params=config.params, seed=s, horizon=config.horizon,
                        warmup=config.warmup,
                        sample_queue_distribution=config.sample_queue_distribution,
                        n_batches=config.n_batches)
        reports.append(run_slots(sub))
    stats = {}
    for name in _REPLICATE_METRICS:
        vals = np.array([getattr(r, name) for r in reports])
        mean = float(vals.mean())
        std = float(vals.std(ddof=1))
        half = _Z95 * std / math.sqrt(n_reps)
        stats[name] = MetricStats(mean=mean, std=std,
                                  ci_low=mean - half, ci_high=mean + half)
    return ReplicateSummary(n_reps=n_reps, stats=stats, reports=tuple(reports))
