"""Scenario configuration, topology, and channel sampling.

Unit conventions used throughout the package:

* time        -- milliseconds (1 time unit = 1 ms)
* bandwidth   -- Hz (scaled to MHz only inside assembled cone programs)
* power       -- W, noise power in W
* arrival     -- packets per ms; deadlines in ms
* kappa       -- channel uses per ms per Hz
* data rate   -- Mb/s for eMBB thresholds (so rate = MHz * bits/s/Hz)

These make an arrival rate of 0.1 packets per unit time with deadlines of
1-2 ms satisfy the stability premise lambda * D < 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "EmbbSliceSpec",
    "UrllcSliceSpec",
    "TrafficSpec",
    "ScenarioConfig",
    "Topology",
    "ChannelSample",
    "place_topology",
    "path_loss_db",
    "draw_sample_set",
    "snr",
    "embb_rate",
    "load_scenario",
    "save_scenario",
    "acceptance_scenario",
    "paper_scenario",
]

ANTENNA_GAIN_DB = 5.0
SHADOWING_STD_DB = 10.0


@dataclass(frozen=True)
class EmbbSliceSpec:
    """Multicast broadband slice: UE count and per-UE rate floor (Mb/s)."""

    ue_count: int
    rate_threshold_mbps: float

    def __post_init__(self):
        if self.ue_count < 1:
            raise ValueError("ue_count must be >= 1")
        if self.rate_threshold_mbps <= 0:
            raise ValueError("rate_threshold_mbps must be > 0")


@dataclass(frozen=True)
class UrllcSliceSpec:
    """Unicast low-latency slice: deadline (ms), blocking and decode-error
    probability targets, packet size in bits."""

    ue_count: int
    deadline_ms: float
    blocking_prob: float
    decode_err_prob: float
    packet_bits: float

    def __post_init__(self):
        if self.ue_count < 1:
            raise ValueError("ue_count must be >= 1")
        if self.deadline_ms <= 0:
            raise ValueError("deadline_ms must be > 0")
        if not 0 < self.blocking_prob < 1:
            raise ValueError("blocking_prob must lie in (0, 1)")
        if not 0 < self.decode_err_prob < 0.5:
            raise ValueError("decode_err_prob must lie in (0, 0.5)")
        if self.packet_bits < 0:
            raise ValueError("packet_bits must be >= 0")


@dataclass(frozen=True)
class TrafficSpec:
    """Compound-Poisson traffic: exponential inter-batch times with mean
    ``mean_batch_interval_ms`` and batches averaging ``mean_batch_size``
    packets; per-UE packet rate is their ratio."""

    mean_batch_interval_ms: float
    mean_batch_size: float
    arrival_rate: float = None

    def __post_init__(self):
        if self.mean_batch_interval_ms <= 0 or self.mean_batch_size < 1:
            raise ValueError("batch interval must be > 0 and mean batch size >= 1")
        rate = self.mean_batch_size / self.mean_batch_interval_ms
        if self.arrival_rate is None:
            object.__setattr__(self, "arrival_rate", rate)
        elif not math.isclose(self.arrival_rate, rate, rel_tol=1e-9):
            raise ValueError(
                f"arrival_rate {self.arrival_rate} != batch_size/batch_interval {rate}")


@dataclass(frozen=True)
class ScenarioConfig:
    rrh_count: int
    antennas_per_rrh: int
    circle_radius_km: float
    embb_slices: tuple
    urllc_slices: tuple
    traffic: tuple
    total_bandwidth_hz: float
    power_caps_w: tuple
    noise_power_w: float
    snr_loss: float
    channel_use_density: float
    energy_coeff: float
    slice_priority: float
    sample_count: int
    minislots_per_slot: int
    queueing_prob_cap: float
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "embb_slices", tuple(self.embb_slices))
        object.__setattr__(self, "urllc_slices", tuple(self.urllc_slices))
        object.__setattr__(self, "traffic", tuple(self.traffic))
        object.__setattr__(self, "power_caps_w", tuple(float(p) for p in self.power_caps_w))
        if self.rrh_count < 1 or self.circle_radius_km <= 0:
            raise ValueError("need at least one RRH on a positive-radius circle")
        if len(self.power_caps_w) != self.rrh_count:
            raise ValueError("one power cap per RRH required")
        if self.snr_loss <= 1:
            raise ValueError("snr_loss must exceed 1")
        if min(self.total_bandwidth_hz, self.channel_use_density,
               self.energy_coeff, self.slice_priority) <= 0:
            raise ValueError("W, kappa, eta, rho must all be > 0")
        if min(self.power_caps_w) <= 0 or self.noise_power_w <= 0:
            raise ValueError("power caps and noise power must be > 0")
        if len(self.traffic) != len(self.urllc_slices):
            raise ValueError("one TrafficSpec per URLLC slice required")
        for sl, tr in zip(self.urllc_slices, self.traffic):
            if self.queueing_prob_cap <= sl.blocking_prob:
                raise ValueError("queueing_prob_cap must exceed every blocking_prob")
            if tr.arrival_rate * sl.deadline_ms >= 1:
                raise ValueError("stability premise lambda * D < 1 violated")

    @property
    def embb_count(self):
        return len(self.embb_slices)

    @property
    def urllc_count(self):
        return len(self.urllc_slices)

    @property
    def jk(self):
        return self.rrh_count * self.antennas_per_rrh

    def with_arrival_rate(self, arrival_rate):
        """Scenario with every URLLC slice's per-UE packet rate replaced."""
        traffic = tuple(
            TrafficSpec(t.mean_batch_interval_ms * t.arrival_rate / arrival_rate,
                        t.mean_batch_size)
            for t in self.traffic)
        return replace(self, traffic=traffic)


@dataclass(frozen=True)
class Topology:
    """RRHs equally spaced on the circle and per-slice UE positions (km)."""

    rrh_positions: np.ndarray
    embb_ue_positions: tuple  # one (I_s, 2) array per eMBB slice
    urllc_ue_positions: tuple  # one (I_s, 2) array per URLLC slice


@dataclass(frozen=True)
class ChannelSample:
    """One i.i.d. draw of channel vectors for every (UE, RRH) pair.

    ``h[kind, s]`` is a complex array of shape (I_s, J, K); ``stacked``
    concatenates a UE's per-RRH vectors into a length-J*K coefficient vector.
    """

    h: dict
    sample_index: int

    def stacked(self, kind, s, i):
        return self.h[(kind, s)][i].reshape(-1)


def place_topology(config, seed=None):
    """Place J RRHs equally spaced on the circle and drop UEs uniformly in
    the disk; deterministic under a fixed seed."""
    rng = np.random.default_rng(config.rng_seed if seed is None else seed)
    j = np.arange(config.rrh_count)
    ang = 2 * np.pi * j / config.rrh_count
    rrh = config.circle_radius_km * np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def drop(n):
        r = config.circle_radius_km * np.sqrt(rng.random(n))
        th = 2 * np.pi * rng.random(n)
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)

    embb = tuple(drop(s.ue_count) for s in config.embb_slices)
    urllc = tuple(drop(s.ue_count) for s in config.urllc_slices)
    return Topology(rrh, embb, urllc)


def path_loss_db(distance_km):
    """Downlink path loss 128.1 + 37.6*log10(d), d in km."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return 128.1 + 37.6 * np.log10(d)


def _small_scale(rng, shape):
    """Circularly-symmetric complex Gaussian entries with unit mean power."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _shadowing_db(rng, shape):
    return SHADOWING_STD_DB * rng.standard_normal(shape)


def _draw_one(config, topology, rng, index):
    h = {}
    groups = [("embb", topology.embb_ue_positions),
              ("urllc", topology.urllc_ue_positions)]
    for kind, positions in groups:
        for s, ue_pos in enumerate(positions):
            d = np.linalg.norm(ue_pos[:, None, :] - topology.rrh_positions[None, :, :],
                               axis=2)  # (I, J)
            gain_db = ANTENNA_GAIN_DB - path_loss_db(d) + _shadowing_db(rng, d.shape)
            amp = 10.0 ** (gain_db / 20.0)  # amplitude gain per (UE, RRH)
            fading = _small_scale(rng, (*d.shape, config.antennas_per_rrh))
            h[(kind, s)] = amp[:, :, None] * fading
    return ChannelSample(h=h, sample_index=index)


def draw_sample_set(config, topology, seed=None, count=None):
    """Draw ``count`` (default M) i.i.d. channel samples.

    Each sample combines the deterministic path loss with freshly drawn
    log-normal shadowing (10 dB std) and small-scale fading per (UE, RRH)
    pair, so samples are mutually independent and seed-reproducible.
    """
    rng = np.random.default_rng(config.rng_seed if seed is None else seed)
    m = config.sample_count if count is None else count
    return [_draw_one(config, topology, rng, i) for i in range(m)]


def snr(h, w, noise_power, loss=1.0):
    """|h^H w|^2 / (loss * noise); loss phi > 1 models imperfect CSI for
    low-latency traffic, phi = 1 for broadband."""
    h = np.asarray(h).reshape(-1)
    w = np.asarray(w).reshape(-1)
    if h.shape != w.shape:
        raise ValueError(f"length mismatch: {h.shape} vs {w.shape}")
    if noise_power <= 0 or loss < 1:
        raise ValueError("need noise_power > 0 and loss >= 1")
    return float(abs(np.vdot(h, w)) ** 2 / (loss * noise_power))


def embb_rate(bandwidth_hz, snr_value):
    """Shannon rate omega * log2(1 + snr) in bits/s."""
    if bandwidth_hz < 0 or snr_value < 0:
        raise ValueError("bandwidth and snr must be nonnegative")
    return bandwidth_hz * math.log2(1 + snr_value)


# -- scenario files -----------------------------------------------------------

_HEADER = """\
# sliceopt scenario file
# units: time ms; bandwidth Hz; power W; rates Mb/s; arrival packets/ms;
#        channel_use_density in channel uses per ms per Hz.
# Repeat [embb_slice], and paired [urllc_slice]/[traffic] blocks, per slice.
"""

_SCALAR_FIELDS = [
    ("rrh_count", int),
    ("antennas_per_rrh", int),
    ("circle_radius_km", float),
    ("total_bandwidth_hz", float),
    ("noise_power_w", float),
    ("snr_loss", float),
    ("channel_use_density", float),
    ("energy_coeff", float),
    ("slice_priority", float),
    ("sample_count", int),
    ("minislots_per_slot", int),
    ("queueing_prob_cap", float),
    ("rng_seed", int),
]


def save_scenario(config, path):
    lines = [_HEADER]
    for name, _ in _SCALAR_FIELDS:
        lines.append(f"{name} = {getattr(config, name)!r}")
    lines.append("power_caps_w = " + ", ".join(repr(p) for p in config.power_caps_w))
    for s in config.embb_slices:
        lines += ["", "[embb_slice]",
                  f"ue_count = {s.ue_count}",
                  f"rate_threshold_mbps = {s.rate_threshold_mbps!r}"]
    for s, t in zip(config.urllc_slices, config.traffic):
        lines += ["", "[urllc_slice]",
                  f"ue_count = {s.ue_count}",
                  f"deadline_ms = {s.deadline_ms!r}",
                  f"blocking_prob = {s.blocking_prob!r}",
                  f"decode_err_prob = {s.decode_err_prob!r}",
                  f"packet_bits = {s.packet_bits!r}",
                  "", "[traffic]",
                  f"mean_batch_interval_ms = {t.mean_batch_interval_ms!r}",
                  f"mean_batch_size = {t.mean_batch_size!r}"]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_blocks(path):
    top, blocks, current = {}, [], None
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = {"__kind__": line[1:-1]}
                blocks.append(current)
                continue
            if "=" not in line:
                raise ValueError(f"bad scenario line: {raw.rstrip()}")
            key, val = (part.strip() for part in line.split("=", 1))
            (current if current is not None else top)[key] = val
    return top, blocks


def load_scenario(path):
    """Parse the key/value scenario format written by :func:`save_scenario`."""
    top, blocks = _parse_blocks(path)
    kwargs = {name: typ(top[name]) for name, typ in _SCALAR_FIELDS if name in top}
    kwargs["power_caps_w"] = tuple(float(x) for x in top["power_caps_w"].split(","))
    embb, urllc, traffic = [], [], []
    for block in blocks:
        kind = block.pop("__kind__")
        if kind == "embb_slice":
            embb.append(EmbbSliceSpec(int(block["ue_count"]),
                                      float(block["rate_threshold_mbps"])))
        elif kind == "urllc_slice":
            urllc.append(UrllcSliceSpec(int(block["ue_count"]),
                                        float(block["deadline_ms"]),
                                        float(block["blocking_prob"]),
                                        float(block["decode_err_prob"]),
                                        float(block["packet_bits"])))
        elif kind == "traffic":
            traffic.append(TrafficSpec(float(block["mean_batch_interval_ms"]),
                                       float(block["mean_batch_size"])))
        else:
            raise ValueError(f"unknown scenario block [{kind}]")
    return ScenarioConfig(embb_slices=tuple(embb), urllc_slices=tuple(urllc),
                          traffic=tuple(traffic), **kwargs)


# -- presets ------------------------------------------------------------------

def acceptance_scenario(seed=7):
    """Downsized default: J=2, K=2, two single-UE eMBB slices, one 2-UE
    URLLC slice, M=20 samples, T=10 minislots; runs in minutes end to end.

    eMBB slices are single-UE here so every lifted beamformer block has a
    provably rank-1 optimum (multi-UE multicast can be structurally rank-2,
    which the full-size configuration exercises instead).
    """
    return ScenarioConfig(
        rrh_count=2,
        antennas_per_rrh=2,
        circle_radius_km=0.5,
        embb_slices=(EmbbSliceSpec(1, 6.0), EmbbSliceSpec(1, 4.0)),
        urllc_slices=(UrllcSliceSpec(2, 1.0, 1e-5, 2e-8, 160.0),),
        traffic=(TrafficSpec(10.0, 1.0),),
        total_bandwidth_hz=4e6,
        power_caps_w=(1.0, 1.0),
        noise_power_w=1e-14,
        snr_loss=1.5,
        channel_use_density=5.12e-4,
        energy_coeff=1000.0,
        slice_priority=500.0,
        sample_count=20,
        minislots_per_slot=10,
        queueing_prob_cap=2e-5,
        rng_seed=seed,
    )


def desk_queue_scenario(seed=7):
    """Queueing-only validation scenario: two low-latency slices sized so
    the desk-scaled targets (alpha 1e-2, cap 2e-2) are measurable by the
    simulator in seconds, with the safety margin still load-bearing."""
    return ScenarioConfig(
        rrh_count=1,
        antennas_per_rrh=1,
        circle_radius_km=0.5,
        embb_slices=(),
        urllc_slices=(UrllcSliceSpec(50, 1.0, 1e-2, 2e-8, 160.0),
                      UrllcSliceSpec(80, 2.0, 1e-2, 2e-8, 160.0)),
        traffic=(TrafficSpec(10.0, 1.0), TrafficSpec(10.0, 1.0)),
        total_bandwidth_hz=10e6,
        power_caps_w=(1.0,),
        noise_power_w=1e-14,
        snr_loss=1.5,
        channel_use_density=5.12e-4,
        energy_coeff=1000.0,
        slice_priority=500.0,
        sample_count=1,
        minislots_per_slot=1,
        queueing_prob_cap=2e-2,
        rng_seed=seed,
    )


def paper_scenario(seed=7):
    """Full-size configuration: three RRHs on a 0.5 km circle, three eMBB
    slices ({4,6,8} UEs at {6,4,2} Mb/s), two URLLC slices ({3,5} UEs at
    {1,2} ms deadlines), M=100, T=60."""
    return ScenarioConfig(
        rrh_count=3,
        antennas_per_rrh=2,
        circle_radius_km=0.5,
        embb_slices=(EmbbSliceSpec(4, 6.0), EmbbSliceSpec(6, 4.0), EmbbSliceSpec(8, 2.0)),
        urllc_slices=(UrllcSliceSpec(3, 1.0, 1e-5, 2e-8, 160.0),
                      UrllcSliceSpec(5, 2.0, 1e-5, 2e-8, 160.0)),
        traffic=(TrafficSpec(10.0, 1.0), TrafficSpec(10.0, 1.0)),
        total_bandwidth_hz=4e6,
        power_caps_w=(1.0, 1.0, 1.0),
        noise_power_w=1e-14,
        snr_loss=1.5,
        channel_use_density=5.12e-4,
        energy_coeff=1000.0,
        slice_priority=500.0,
        sample_count=100,
        minislots_per_slot=60,
        queueing_prob_cap=2e-5,
        rng_seed=seed,
    )
