"""Closed-form URLLC dimensioning.

Short-packet capacity, its inverse (channel uses needed for a packet at a
target decode-error probability), per-UE bandwidth blocks, resource-block
re-cutting, and the square-root staffing bound on the total low-latency
bandwidth.

Channel uses are kept real-valued throughout; rounding to integer symbol
counts is a reporting concern, not a modeling one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import ndtri

__all__ = [
    "qfunc_inv",
    "finite_blocklength_bits",
    "channel_use_bound",
    "per_ue_bandwidth",
    "recut_prbs",
    "staffing_coefficient",
    "urllc_total_bandwidth",
    "ChannelUseVector",
    "StaffingResult",
]

LN2 = math.log(2.0)


def qfunc_inv(p):
    """Inverse Gaussian tail function Q^-1(p); accurate down to p ~ 1e-12."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    return float(-ndtri(p))


def capacity_bits(snr):
    """AWGN capacity log2(1 + snr) in bits per channel use."""
    if snr <= 0:
        raise ValueError("snr must be positive (capacity log undefined at 0)")
    return math.log2(1 + snr)


def dispersion(snr):
    """Channel dispersion ln^2(2) * (1 - (1+snr)^-2); peaks at ln^2(2)."""
    return LN2 ** 2 * (1 - 1 / (1 + snr) ** 2)


def finite_blocklength_bits(r, beta, snr):
    """Information bits deliverable in ``r`` channel uses at decode-error
    probability ``beta``: r*C(snr) - Q^-1(beta) * sqrt(r*V(snr))."""
    if r <= 0:
        raise ValueError("channel uses must be positive")
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    c = capacity_bits(snr)
    v = dispersion(snr)
    return r * c - qfunc_inv(beta) * math.sqrt(r * v)


def channel_use_bound(bits, beta, snr):
    """Channel uses sufficient for a ``bits``-sized packet at error target
    ``beta``: the worst-dispersion inversion of the short-packet capacity,

        L/C + q2/(2 C^2) + q2/(2 C^2) * sqrt(1 + 4 L C / q2),

    with q2 = (Q^-1(beta))^2.  Monotone up in L, down in snr, up as beta
    shrinks; at beta = 0.5 it reduces to L/C exactly.
    """
    if bits < 0:
        raise ValueError("bits must be nonnegative")
    if not 0 < beta <= 0.5:
        raise ValueError("beta must lie in (0, 0.5]")
    c = capacity_bits(snr)
    if beta == 0.5:
        return bits / c
    q2 = qfunc_inv(beta) ** 2
    base = q2 / (2 * c * c)
    return bits / c + base + base * math.sqrt(1 + 4 * bits * c / q2)


def per_ue_bandwidth(r, deadline_ms, kappa):
    """Bandwidth block omega = r / (kappa * D) so that the block carries
    exactly r channel uses over the full deadline (r = kappa * omega * d)."""
    if deadline_ms <= 0 or kappa <= 0:
        raise ValueError("deadline and kappa must be positive")
    if r < 0:
        raise ValueError("channel uses must be nonnegative")
    return r / (kappa * deadline_ms)


def recut_prbs(omega_hz, duration_ms, q, deadline_ms=None, arrival_rate=None):
    """Re-cut a resource block: narrow by q in frequency, stretch by q in
    time.  Preserves kappa*omega*d (the channel-use content) exactly.

    Raises when the stretched block would overrun the deadline or when the
    stability premise lambda*d < 1 fails (checks apply only when the
    corresponding argument is given).
    """
    if int(q) != q or q < 1:
        raise ValueError("q must be a positive integer")
    new_d = q * duration_ms
    if deadline_ms is not None and new_d > deadline_ms * (1 + 1e-12):
        raise ValueError(f"re-cut duration {new_d} overruns deadline {deadline_ms}")
    if arrival_rate is not None and arrival_rate * duration_ms >= 1:
        raise ValueError("stability premise lambda * d < 1 violated")
    return omega_hz / q, new_d


def staffing_coefficient(queueing_cap, blocking_prob, urllc_slices, traffic):
    """Safety coefficient c(varsigma, alpha) of the square-root staffing rule:

        (alpha - varsigma*alpha)/(varsigma - alpha)
            * sqrt( sum_s I_s lambda_s^2 D_s^2 / min_s lambda_s D_s )

    Requires varsigma > alpha; blows up as varsigma approaches alpha.
    """
    if not 0 < blocking_prob < queueing_cap:
        raise ValueError("need queueing_cap > blocking_prob > 0")
    num = sum(sl.ue_count * (tr.arrival_rate * sl.deadline_ms) ** 2
              for sl, tr in zip(urllc_slices, traffic))
    den = min(tr.arrival_rate * sl.deadline_ms
              for sl, tr in zip(urllc_slices, traffic))
    pre = (blocking_prob - queueing_cap * blocking_prob) / (queueing_cap - blocking_prob)
    return pre * math.sqrt(num / den)


@dataclass(frozen=True)
class ChannelUseVector:
    """Real-valued channel-use counts keyed by (ue_index, slice_index)."""

    values: dict

    def __post_init__(self):
        for key, r in self.values.items():
            if r <= 0:
                raise ValueError(f"channel uses must be > 0 for served UE {key}")

    @classmethod
    def uniform(cls, r, urllc_slices):
        return cls({(i, s): float(r)
                    for s, sl in enumerate(urllc_slices)
                    for i in range(sl.ue_count)})

    def for_slice(self, s):
        return {key: r for key, r in self.values.items() if key[1] == s}


@dataclass(frozen=True)
class StaffingResult:
    """W^u = mean_term + safety_coeff * sqrt(variance_term), all in Hz."""

    mean_term: float
    variance_term: float
    safety_coeff: float
    total_bandwidth: float

    def __post_init__(self):
        if self.mean_term < 0 or self.variance_term < 0:
            raise ValueError("mean and variance terms must be nonnegative")
        want = self.mean_term + self.safety_coeff * math.sqrt(self.variance_term)
        if not math.isclose(self.total_bandwidth, want, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError("total_bandwidth != A + c*sqrt(B)")


def urllc_total_bandwidth(r, traffic, deadlines, kappa, safety_coeff):
    """Square-root staffing bound on the bandwidth for all URLLC slices:

        A = sum lambda_s r / kappa          (mean demand, Hz)
        B = sum lambda_s r^2 / (kappa^2 D)  (demand variability, Hz^2)
        W^u = A + c * sqrt(B)

    ``r`` is a :class:`ChannelUseVector`; ``deadlines`` lists D_s per slice.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    a = 0.0
    b = 0.0
    for (i, s), ru in r.values.items():
        lam = traffic[s].arrival_rate
        a += lam * ru / kappa
        b += lam * ru ** 2 / (kappa ** 2 * deadlines[s])
    return StaffingResult(
        mean_term=a,
        variance_term=b,
        safety_coeff=safety_coeff,
        total_bandwidth=a + safety_coeff * math.sqrt(b),
    )
