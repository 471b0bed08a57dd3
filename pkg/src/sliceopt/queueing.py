"""Multi-server queueing: analytic Erlang-C and a discrete-event simulator.

The simulator is the empirical oracle for the staffing bound and for the
resource-block re-cutting monotonicity claim.  Arrivals are compound
Poisson per stream (exponential inter-batch times, geometric batch sizes);
service times are exponential; all servers are pooled FCFS.

A packet "queues" when it finds every server busy, and "blocks" when its
waiting time exceeds its stream's deadline -- the deadline-miss reading of
blocking, reported alongside the raw queueing probability.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import TrafficSpec
from .urllc import (
    ChannelUseVector,
    per_ue_bandwidth,
    recut_prbs,
    staffing_coefficient,
    urllc_total_bandwidth,
)

__all__ = [
    "erlang_c",
    "QueueClass",
    "QueueConfig",
    "QueueStats",
    "simulate_queue",
    "staffed_queue_config",
    "recut_blocking_comparison",
    "validate_staffing",
    "StaffingReport",
]


def erlang_c(offered_load, servers):
    """Exact M/M/c probability that an arrival must wait.

    Uses the Erlang-B recursion for numerical stability; requires the
    stable regime offered_load < servers.
    """
    a = float(offered_load)
    c = int(servers)
    if c < 1:
        raise ValueError("need at least one server")
    if a < 0:
        raise ValueError("offered load must be nonnegative")
    if a == 0:
        return 0.0
    if a >= c:
        raise ValueError(f"unstable load: a={a} >= servers={c}")
    b = 1.0
    for k in range(1, c + 1):
        b = a * b / (k + a * b)
    rho = a / c
    return b / (1 - rho + rho * b)


@dataclass(frozen=True)
class QueueClass:
    """One arrival stream: aggregate batch process, a deadline, and the
    service means (ms) a packet may draw uniformly from."""

    arrival: TrafficSpec
    deadline_ms: float
    service_means_ms: tuple

    def __post_init__(self):
        object.__setattr__(self, "service_means_ms",
                           tuple(float(m) for m in self.service_means_ms))
        if self.deadline_ms <= 0 or min(self.service_means_ms) <= 0:
            raise ValueError("deadline and service means must be positive")


@dataclass(frozen=True)
class QueueConfig:
    server_count: int
    classes: tuple
    batch_mode: str = "poisson"  # "poisson" forces batch size 1

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.server_count < 1:
            raise ValueError("need at least one server")
        if self.batch_mode not in ("poisson", "batched"):
            raise ValueError("batch_mode must be 'poisson' or 'batched'")

    @property
    def offered_load(self):
        """Mean busy servers: sum of rate * mean service over classes."""
        return sum(k.arrival.arrival_rate * float(np.mean(k.service_means_ms))
                   for k in self.classes)


@dataclass
class QueueStats:
    queueing_prob: float
    blocking_prob: float
    confidence_halfwidth: float
    samples_observed: int
    per_class_blocking: tuple = ()
    per_class_observed: tuple = ()

    def __post_init__(self):
        if not 0 <= self.blocking_prob <= self.queueing_prob <= 1:
            raise ValueError("need 0 <= p_b <= P_Q <= 1")


def _halfwidth(p, n):
    if n == 0:
        return 0.0
    return 1.96 * math.sqrt(max(p * (1 - p), 0.0) / n)


def simulate_queue(config, horizon_ms, seed=0):
    """Event-driven run over ``horizon_ms``; the first 10% is warm-up and
    excluded from statistics.  Deterministic under the seed."""
    rng = np.random.default_rng(seed)
    nclasses = len(config.classes)
    deadlines = [k.deadline_ms for k in config.classes]
    means = [k.service_means_ms for k in config.classes]
    warmup = 0.1 * horizon_ms

    # event = (time, seq, kind, class_idx); kind 0 = batch arrival, 1 = departure
    events = []
    seq = 0
    for idx, k in enumerate(config.classes):
        if k.arrival.arrival_rate > 0:
            heapq.heappush(events, (rng.exponential(k.arrival.mean_batch_interval_ms),
                                    seq, 0, idx))
            seq += 1

    free = config.server_count
    waiting = []  # FIFO of (arrival_time, class_idx, service_mean)
    wait_head = 0
    arrivals = 0
    queued = 0
    blocked = [0] * nclasses
    observed = [0] * nclasses
    censored = 0

    while events:
        t, _, kind, idx = heapq.heappop(events)
        if t > horizon_ms:
            break
        if kind == 0:
            k = config.classes[idx]
            if config.batch_mode == "batched" and k.arrival.mean_batch_size > 1:
                size = int(rng.geometric(1.0 / k.arrival.mean_batch_size))
            else:
                size = 1
            heapq.heappush(events, (t + rng.exponential(k.arrival.mean_batch_interval_ms),
                                    seq, 0, idx))
            seq += 1
            opts = means[idx]
            for _ in range(size):
                mean = opts[rng.integers(len(opts))] if len(opts) > 1 else opts[0]
                counted = t >= warmup
                if counted:
                    arrivals += 1
                    observed[idx] += 1
                if free > 0:
                    free -= 1
                    heapq.heappush(events, (t + rng.exponential(mean), seq, 1, idx))
                    seq += 1
                else:
                    if counted:
                        queued += 1
                    waiting.append((t, idx, mean, counted))
        else:
            if wait_head < len(waiting):
                t_arr, widx, mean, counted = waiting[wait_head]
                wait_head += 1
                if counted and (t - t_arr) > deadlines[widx]:
                    blocked[widx] += 1
                heapq.heappush(events, (t + rng.exponential(mean), seq, 1, widx))
                seq += 1
            else:
                free += 1

    # packets still waiting at the end: blocked if already past deadline,
    # censored (excluded from the blocking denominator) otherwise
    for t_arr, widx, _, counted in waiting[wait_head:]:
        if not counted:
            continue
        if (horizon_ms - t_arr) > deadlines[widx]:
            blocked[widx] += 1
        else:
            censored += 1
            observed[widx] -= 1

    if arrivals == 0:
        return QueueStats(0.0, 0.0, 0.0, 0,
                          (0.0,) * nclasses, (0,) * nclasses)
    denom = arrivals - censored
    p_q = queued / arrivals
    p_b = sum(blocked) / denom if denom else 0.0
    per_class = tuple(blocked[i] / observed[i] if observed[i] else 0.0
                      for i in range(nclasses))
    return QueueStats(
        queueing_prob=p_q,
        blocking_prob=min(p_b, p_q),
        confidence_halfwidth=_halfwidth(p_b, denom),
        samples_observed=arrivals,
        per_class_blocking=per_class,
        per_class_observed=tuple(observed),
    )


# -- mapping a scenario onto the queue ---------------------------------------


def staffed_queue_config(scenario, r, strip_margin=False):
    """Map a scenario plus channel uses onto a pooled homogeneous queue.

    Per-UE blocks omega_{i,s} = r/(kappa*D_s) are staffed via the
    square-root rule; the pooled system gets round(W^u / mean_width) equal
    servers, mean_width the load-weighted block width, and each class's
    service mean is width*D_s/mean_width so the bandwidth-time work of a
    packet is conserved.  ``strip_margin`` drops the c*sqrt(B) term.

    Returns (QueueConfig, StaffingResult, mean_width).
    """
    kappa = scenario.channel_use_density
    deadlines = [sl.deadline_ms for sl in scenario.urllc_slices]
    coeff = 0.0 if strip_margin else staffing_coefficient(
        scenario.queueing_prob_cap, scenario.urllc_slices[0].blocking_prob,
        scenario.urllc_slices, scenario.traffic)
    staffing = urllc_total_bandwidth(r, scenario.traffic, deadlines, kappa, coeff)

    widths = {key: per_ue_bandwidth(ru, deadlines[key[1]], kappa)
              for key, ru in r.values.items()}
    loads = {key: scenario.traffic[key[1]].arrival_rate * w * deadlines[key[1]]
             for key, w in widths.items()}
    mean_width = (sum(loads[k] * widths[k] for k in widths)
                  / sum(loads.values()))
    servers = max(1, round(staffing.total_bandwidth / mean_width))

    classes = []
    for s, (sl, tr) in enumerate(zip(scenario.urllc_slices, scenario.traffic)):
        aggregate = TrafficSpec(tr.mean_batch_interval_ms / sl.ue_count,
                                tr.mean_batch_size)
        svc = tuple(widths[(i, s)] * sl.deadline_ms / mean_width
                    for i in range(sl.ue_count))
        classes.append(QueueClass(aggregate, sl.deadline_ms, svc))
    mode = "batched" if any(t.mean_batch_size > 1 for t in scenario.traffic) else "poisson"
    return QueueConfig(servers, tuple(classes), mode), staffing, mean_width


def recut_blocking_comparison(arrival, deadline_ms, width_hz, duration_ms, q,
                              server_count, horizon_ms, seed=0,
                              batch_mode="poisson", per_ue_rate=None):
    """Blocking before/after re-cutting blocks at equal total bandwidth.

    Original system: ``server_count`` blocks of ``width_hz`` serving in
    exponential(``duration_ms``); re-cut system: q times as many blocks of
    width/q serving in exponential(q*duration).  Blocking is waiting past
    ``deadline_ms`` in both.  ``arrival`` is the aggregate stream; the
    per-UE rate, when given, is checked against the stability premise.
    Returns (stats_original, stats_recut).
    """
    narrow_width, stretched = recut_prbs(width_hz, duration_ms, q,
                                         deadline_ms=deadline_ms,
                                         arrival_rate=per_ue_rate)
    del narrow_width  # total bandwidth is held fixed; only counts change
    base = QueueConfig(server_count,
                       (QueueClass(arrival, deadline_ms, (duration_ms,)),),
                       batch_mode)
    recut = QueueConfig(server_count * q,
                        (QueueClass(arrival, deadline_ms, (stretched,)),),
                        batch_mode)
    return (simulate_queue(base, horizon_ms, seed),
            simulate_queue(recut, horizon_ms, seed + 1))


@dataclass
class StaffingReport:
    staffing: object
    server_count: int
    mean_width_hz: float
    stats: QueueStats
    alpha: float
    queueing_cap: float
    pb_pass: bool
    pq_pass: bool
    erlang_c_queueing: float
    recut_original: QueueStats = None
    recut_stats: QueueStats = None
    recut_ordered: bool = None
    stripped: bool = False

    def to_row(self):
        r = {
            "W_u_hz": self.staffing.total_bandwidth,
            "servers": self.server_count,
            "measured_p_b": self.stats.blocking_prob,
            "measured_P_Q": self.stats.queueing_prob,
            "ci_halfwidth": self.stats.confidence_halfwidth,
            "target_alpha": self.alpha,
            "target_cap": self.queueing_cap,
            "arrivals": self.stats.samples_observed,
            "pb_pass": self.pb_pass,
            "pq_pass": self.pq_pass,
            "stripped_margin": self.stripped,
        }
        if self.recut_ordered is not None:
            r["recut_p_b"] = self.recut_stats.blocking_prob
            r["recut_baseline_p_b"] = self.recut_original.blocking_prob
            r["recut_ordered"] = self.recut_ordered
        return r

    def to_text(self):
        lines = [
            f"staffed bandwidth  : {self.staffing.total_bandwidth / 1e6:.4f} MHz"
            f"  (A={self.staffing.mean_term / 1e6:.4f}, c={self.staffing.safety_coeff:.4f})",
            f"pooled servers     : {self.server_count}"
            f"  (mean block width {self.mean_width_hz / 1e3:.1f} kHz)",
            f"measured p_b       : {self.stats.blocking_prob:.3e}"
            f" +/- {self.stats.confidence_halfwidth:.1e}"
            f"  target alpha {self.alpha:.1e}  -> {'PASS' if self.pb_pass else 'FAIL'}",
            f"measured P_Q       : {self.stats.queueing_prob:.3e}"
            f"  target cap {self.queueing_cap:.1e}  -> {'PASS' if self.pq_pass else 'FAIL'}",
            f"erlang-C reference : {self.erlang_c_queueing:.3e}",
            f"arrivals observed  : {self.stats.samples_observed}",
        ]
        if self.recut_ordered is not None:
            lines.append(
                f"re-cut check       : p_b {self.recut_original.blocking_prob:.3e}"
                f" -> {self.recut_stats.blocking_prob:.3e}"
                f"  -> {'ORDERED' if self.recut_ordered else 'REVERSED'}")
        return "\n".join(lines)


def validate_staffing(scenario, r, seed=0, horizon_ms=None, strip_margin=False,
                      recut_check=True, min_arrivals=20000):
    """Staff the queue per the square-root rule, simulate it, and report
    whether measured blocking and queueing meet the scenario's targets.

    Pass ``strip_margin=True`` to drop the c*sqrt(B) safety term and show
    it is load-bearing.  ``recut_check`` also compares blocking before and
    after a q=2 re-cut on slice 0 at equal bandwidth.
    """
    if isinstance(r, (int, float)):
        r = ChannelUseVector.uniform(r, scenario.urllc_slices)
    config, staffing, mean_width = staffed_queue_config(scenario, r, strip_margin)

    total_rate = sum(sl.ue_count * tr.arrival_rate
                     for sl, tr in zip(scenario.urllc_slices, scenario.traffic))
    if horizon_ms is None:
        horizon_ms = 1.15 * min_arrivals / (0.9 * total_rate)
    stats = simulate_queue(config, horizon_ms, seed)

    alpha = scenario.urllc_slices[0].blocking_prob
    cap = scenario.queueing_prob_cap
    per_class_hw = [_halfwidth(p, max(n, 1)) for p, n in
                    zip(stats.per_class_blocking, stats.per_class_observed)]
    pb_pass = all(p + hw <= alpha for p, hw in
                  zip(stats.per_class_blocking, per_class_hw))
    hw_q = _halfwidth(stats.queueing_prob, stats.samples_observed)
    pq_pass = stats.queueing_prob + hw_q <= cap

    load = config.offered_load
    ec = erlang_c(load, config.server_count) if load < config.server_count else 1.0

    report = StaffingReport(
        staffing=staffing, server_count=config.server_count,
        mean_width_hz=mean_width, stats=stats, alpha=alpha, queueing_cap=cap,
        pb_pass=pb_pass, pq_pass=pq_pass, erlang_c_queueing=ec,
        stripped=strip_margin,
    )

    if recut_check and scenario.urllc_slices:
        sl, tr = scenario.urllc_slices[0], scenario.traffic[0]
        aggregate = TrafficSpec(tr.mean_batch_interval_ms / sl.ue_count,
                                tr.mean_batch_size)
        duration = sl.deadline_ms / 2
        load0 = sl.ue_count * tr.arrival_rate * duration
        servers = max(2, math.ceil(load0 / 0.85))
        width = per_ue_bandwidth(next(iter(r.for_slice(0).values())),
                                 sl.deadline_ms, scenario.channel_use_density)
        orig, recut = recut_blocking_comparison(
            aggregate, sl.deadline_ms, width, duration, 2, servers,
            horizon_ms=max(horizon_ms, 4000.0), seed=seed + 101,
            per_ue_rate=tr.arrival_rate)
        report.recut_original = orig
        report.recut_stats = recut
        report.recut_ordered = recut.blocking_prob <= orig.blocking_prob
    return report
