"""Zero-phase smoothing for logged signals.

The workhorse is a windowed-sinc FIR lowpass applied twice, forward and then
backward over the reversed signal, which cancels the phase delay and squares
the magnitude response. Edges are reflect-padded by one filter length so the
passes see plausible data beyond both ends.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import firwin, lfilter


@dataclass(frozen=True)
class FilterSpec:
    """Windowed-sinc lowpass: order must be even, tap count is order + 1.

    An even order gives an odd, symmetric tap vector (type I linear phase)
    whose single-pass group delay of order/2 samples the backward pass undoes.
    """

    sample_rate_hz: float = 100.0
    cutoff_hz: float = 10.0
    order: int = 30

    def __post_init__(self):
        if self.order % 2 != 0 or self.order <= 0:
            raise ValueError("filter order must be even and positive")
        if not 0 < self.cutoff_hz < self.sample_rate_hz / 2:
            raise ValueError("cutoff must sit below the Nyquist rate")

    @property
    def taps(self) -> np.ndarray:
        return firwin(self.order + 1, self.cutoff_hz, fs=self.sample_rate_hz)


def _reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    if len(x) <= pad:
        raise ValueError("signal shorter than the padding length")
    head = x[pad:0:-1]
    tail = x[-2:-pad - 2:-1]
    return np.concatenate([head, x, tail])


def two_way_filter(x, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Forward-backward FIR lowpass; returns an array the length of x.

    Requires more than 3 * order samples so the padded passes never run out
    of real signal.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a 1-d signal")
    if len(x) <= 3 * spec.order:
        raise ValueError(f"signal too short for order {spec.order}: {len(x)} samples")
    taps = spec.taps
    pad = len(taps)
    xp = _reflect_pad(x, pad)
    forward = lfilter(taps, 1.0, xp)
    backward = lfilter(taps, 1.0, forward[::-1])[::-1]
    # Each causal pass delays by order/2; the backward pass advances by the
    # same amount, so the window slice is symmetric.
    return backward[pad:pad + len(x)]


def zero_phase_smooth(x, tau_s: float, sample_rate_hz: float = 100.0) -> np.ndarray:
    """First-order exponential smoother run forward then backward.

    Zero-phase equivalent of an RC lowpass with time constant tau_s; used for
    slow quantities such as the chassis roll estimate.
    """
    x = np.asarray(x, dtype=float)
    if tau_s <= 0:
        raise ValueError("time constant must be positive")
    dt = 1.0 / sample_rate_hz
    alpha = dt / (tau_s + dt)
    pad = min(len(x) - 1, int(5 * tau_s * sample_rate_hz))
    xp = _reflect_pad(x, pad) if pad > 0 else x
    b, a = [alpha], [1.0, -(1.0 - alpha)]
    # start each pass already settled on its first sample
    forward, _ = lfilter(b, a, xp, zi=[(1.0 - alpha) * xp[0]])
    rev = forward[::-1]
    backward, _ = lfilter(b, a, rev, zi=[(1.0 - alpha) * rev[0]])
    backward = backward[::-1]
    return backward[pad:pad + len(x)] if pad > 0 else backward
