"""Channel-quality math: BER, signal/noise traces, SNR in dB, BMC capacity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def ber(sent, received) -> float:
    """Bit inversions over total transmitted bits."""
    sent = np.asarray(sent, dtype=np.int64)
    received = np.asarray(received, dtype=np.int64)
    if sent.shape != received.shape:
        raise ValueError(f"length mismatch: {sent.shape} vs {received.shape}")
    if sent.size == 0:
        raise ValueError("no bits transmitted")
    return float(np.mean(sent != received))


def reference_signal(bits) -> np.ndarray:
    """Idealized differential signal: s(0)=1 and s(t) = (1 - 2b_t) / s(t-1).

    Output has one more entry than bits; every value is +1 or -1.
    """
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size and not np.all((bits == 0) | (bits == 1)):
        raise ValueError("bits must be 0 or 1")
    s = np.empty(bits.size + 1)
    s[0] = 1.0
    for t, b in enumerate(bits, start=1):
        s[t] = (1.0 - 2.0 * b) / s[t - 1]
    return s


@dataclass
class SignalTrace:
    """Per-frame differential signal against the idealized reference.

    z_h/z_l are the two label scores normalized into [-1, 1] by z_bound;
    z = z_h - z_l; s is the reference (one extra leading entry for t=0);
    noise(t) = z(t) - s(t) for t >= 1.
    """
    z_h: np.ndarray
    z_l: np.ndarray
    z: np.ndarray
    s: np.ndarray
    noise: np.ndarray
    z_bound: float


def signal_trace(scores_h, scores_l, sent_bits, z_bound: float | None = None) -> SignalTrace:
    """Build the differential-signal trace from per-frame raw scores.

    With z_bound=None the bound is the largest absolute score observed over
    both labels (undefined, hence an error, when all scores are zero).
    """
    scores_h = np.asarray(scores_h, dtype=np.float64)
    scores_l = np.asarray(scores_l, dtype=np.float64)
    sent_bits = np.asarray(sent_bits, dtype=np.int64)
    if scores_h.shape != scores_l.shape or scores_h.ndim != 1:
        raise ValueError("score series must be equal-length 1-d arrays")
    if scores_h.size == 0:
        raise ValueError("empty score log")
    if sent_bits.shape != scores_h.shape:
        raise ValueError("need one sent bit per frame")
    if z_bound is None:
        z_bound = float(max(np.abs(scores_h).max(), np.abs(scores_l).max()))
        if z_bound == 0.0:
            raise ValueError("all scores are zero; normalization bound undefined")
    elif z_bound <= 0:
        raise ValueError("z_bound must be positive")
    z_h = scores_h / z_bound
    z_l = scores_l / z_bound
    z = z_h - z_l
    s = reference_signal(sent_bits)
    noise = z - s[1:]
    return SignalTrace(z_h, z_l, z, s, noise, z_bound)


def snr(trace: SignalTrace) -> float:
    """Mean squared differential signal over the variance of normalized noise,
    in dB. Returns math.inf when the received signal matches the reference
    exactly (zero noise variance)."""
    if trace.z.size < 2:
        raise ValueError("need at least two frames")
    peak = float(np.max(np.abs(trace.noise)))
    if peak == 0.0:
        return math.inf
    normalized = trace.noise / peak
    variance = float(np.var(normalized))
    if variance == 0.0:
        return math.inf
    power = float(np.mean(trace.z ** 2))
    return 10.0 * math.log10(power / variance)


def binary_entropy(p: float) -> float:
    """Shannon entropy of a Bernoulli(p) in bits, with H(0) = H(1) = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p))


def bmc_capacity(p1: float, p2: float, clamp: bool = True) -> float:
    """Capacity of the binary memoryless channel with error rates p1, p2:
    1 - H(p1)/2 - H(p2)/2. Clamped at zero unless clamp=False."""
    raw = 1.0 - binary_entropy(p1) / 2.0 - binary_entropy(p2) / 2.0
    return max(0.0, raw) if clamp else raw


@dataclass
class ChannelErrorModel:
    """Empirical bit-flip probabilities conditioned on the sent bit."""
    p1: float  # P(received 1 | sent 0)
    p2: float  # P(received 0 | sent 1)
    n00: int
    n01: int
    n10: int
    n11: int


def estimate_error_model(sent, received) -> ChannelErrorModel:
    sent = np.asarray(sent, dtype=np.int64)
    received = np.asarray(received, dtype=np.int64)
    if sent.shape != received.shape:
        raise ValueError(f"length mismatch: {sent.shape} vs {received.shape}")
    if sent.size == 0:
        raise ValueError("no bits transmitted")
    n00 = int(np.sum((sent == 0) & (received == 0)))
    n01 = int(np.sum((sent == 0) & (received == 1)))
    n10 = int(np.sum((sent == 1) & (received == 0)))
    n11 = int(np.sum((sent == 1) & (received == 1)))
    p1 = n01 / (n00 + n01) if (n00 + n01) else 0.0
    p2 = n10 / (n10 + n11) if (n10 + n11) else 0.0
    return ChannelErrorModel(p1, p2, n00, n01, n10, n11)
