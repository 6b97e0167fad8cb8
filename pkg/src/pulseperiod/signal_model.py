"""Pulse shapes, pulse-train synthesis, noise and resampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy import signal as sps

PulseKind = Literal["gaussian", "tabulated"]

SNR_DEFINITIONS = {
    "peak": "snr = (A*max(s_ps))^2 / sigma2",
    "average": "snr = A^2 * E_ps * Ts / T / sigma2 (signal power averaged over one period)",
}


@dataclass(frozen=True)
class PulseShape:
    """Sampled pulse with support [0, Np*Ts) and its time derivative.

    For ``kind="gaussian"`` the continuous form is evaluated analytically;
    tabulated pulses are linearly interpolated between samples.
    """

    samples: np.ndarray
    deriv_samples: np.ndarray
    Tp: float
    Ts: float
    kind: PulseKind = "tabulated"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        d = np.asarray(self.deriv_samples, dtype=float)
        if s.ndim != 1 or s.shape != d.shape:
            raise ValueError("samples and deriv_samples must be 1-D of equal length")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(d))):
            raise ValueError("pulse samples must be finite")
        s.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "deriv_samples", d)

    @property
    def Np(self) -> int:
        return len(self.samples)

    @property
    def support(self) -> float:
        """Length of the time interval outside of which the pulse is zero."""
        return self.Np * self.Ts

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def value(self, t) -> np.ndarray:
        """Continuous-time pulse value at ``t`` (zero outside the support)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return _gaussian(t, self.Tp, self.support)
        return np.interp(t / self.Ts, np.arange(self.Np), self.samples, left=0.0, right=0.0)

    def derivative(self, t) -> np.ndarray:
        """Continuous-time derivative; central differences for tabulated pulses."""
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return _gaussian_deriv(t, self.Tp, self.support)
        h = self.Ts / 100.0
        return (self.value(t + h) - self.value(t - h)) / (2.0 * h)

    def resampled(self, factor: int) -> "PulseShape":
        """The same pulse sampled at ``Ts / factor``."""
        if factor < 1:
            raise ValueError("factor must be >= 1")
        if factor == 1:
            return self
        if self.kind == "gaussian":
            return make_gaussian_pulse(self.Tp, self.Ts / factor)
        Ts_new = self.Ts / factor
        t = np.arange(self.Np * factor) * Ts_new
        return PulseShape(self.value(t), self.derivative(t), self.Tp, Ts_new, "tabulated")


def _gaussian(t, Tp, support):
    sigma = Tp / 6.0
    u = t - Tp / 2.0
    inside = (np.abs(u) <= 3.0 * sigma) & (t >= 0.0) & (t < support)
    return np.where(inside, np.exp(-(u**2) / (2.0 * sigma**2)), 0.0)


def _gaussian_deriv(t, Tp, support):
    sigma = Tp / 6.0
    u = t - Tp / 2.0
    return -(u / sigma**2) * _gaussian(t, Tp, support)


def make_gaussian_pulse(Tp: float, Ts: float) -> PulseShape:
    """Gaussian pulse of duration ``Tp`` (sigma = Tp/6) truncated beyond 3 sigma.

    The pulse is centred at ``Tp/2`` so that its support is ``[0, Tp)``.
    """
    if Tp <= 0 or Ts <= 0:
        raise ValueError("Tp and Ts must be positive")
    if Tp / Ts < 2:
        raise ValueError("pulse must span at least two samples (Tp/Ts >= 2)")
    Np = math.ceil(round(Tp / Ts, 9))
    t = np.arange(Np) * Ts
    support = Np * Ts
    return PulseShape(_gaussian(t, Tp, support), _gaussian_deriv(t, Tp, support), Tp, Ts, "gaussian")


def tabulated_pulse(samples, Ts: float) -> PulseShape:
    """Pulse defined only by its samples; derivatives by central differences."""
    samples = np.asarray(samples, dtype=float)
    shape = PulseShape(samples, np.zeros_like(samples), len(samples) * Ts, Ts, "tabulated")
    return PulseShape(samples, shape.derivative(np.arange(len(samples)) * Ts), shape.Tp, Ts, "tabulated")


@dataclass(frozen=True)
class PulseTrainParams:
    T: float
    tau0: float
    A: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("period T must be positive")
        if not 0 <= self.tau0 < self.T:
            raise ValueError("tau0 must satisfy 0 <= tau0 < T")

    def check_pulse(self, pulse: PulseShape):
        if pulse.Tp > self.T:
            raise ValueError(f"pulse duration {pulse.Tp} exceeds period {self.T}")


@dataclass(frozen=True)
class Measurement:
    x: np.ndarray
    Ts: float = 1.0
    sigma2: float = 0.0
    seed: Optional[int] = None
    truth: Optional[PulseTrainParams] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or len(x) < 2:
            raise ValueError("measurement needs at least two samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("measurement contains non-finite samples")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        object.__setattr__(self, "x", x)

    @property
    def N(self) -> int:
        return len(self.x)


def pulse_indices(T: float, tau0: float, support: float, t_last: float) -> np.ndarray:
    """Indices k of all pulses starting at ``k*T + tau0`` that overlap ``[0, t_last]``."""
    k_lo = math.floor((-support - tau0) / T)
    k_hi = math.floor((t_last - tau0) / T)
    k = np.arange(k_lo, k_hi + 1)
    start = k * T + tau0
    return k[(start + support > 0) & (start <= t_last)]


def synthesize(params: PulseTrainParams, pulse: PulseShape, N: int, Ts: float) -> np.ndarray:
    """Clean pulse train ``sum_k A*s(n*Ts - k*T - tau0)`` including partial edge pulses."""
    if not math.isclose(pulse.Ts, Ts, rel_tol=1e-12):
        raise ValueError(f"pulse sampled at Ts={pulse.Ts}, signal at Ts={Ts}")
    params.check_pulse(pulse)
    out = np.zeros(N)
    if params.A == 0:
        return out
    t = np.arange(N) * Ts
    for k in pulse_indices(params.T, params.tau0, pulse.support, t[-1]):
        start = k * params.T + params.tau0
        lo = max(0, math.floor(start / Ts))
        hi = min(N, math.ceil((start + pulse.support) / Ts) + 1)
        out[lo:hi] += pulse.value(t[lo:hi] - start)
    return params.A * out


def add_noise(clean, sigma2: float, seed: int, Ts: float = 1.0, truth=None) -> Measurement:
    """Add i.i.d. N(0, sigma2) noise drawn from a generator seeded with ``seed``."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    clean = np.asarray(clean, dtype=float)
    if sigma2 == 0:
        x = clean.copy()
    else:
        rng = np.random.default_rng(seed)
        x = clean + rng.normal(0.0, math.sqrt(sigma2), size=clean.shape)
    return Measurement(x, Ts, sigma2, seed, truth)


def sigma2_for_snr(pulse: PulseShape, A: float, snr_db: float, definition: str = "peak",
                   T: Optional[float] = None) -> float:
    """Noise variance giving ``snr_db`` under the chosen SNR definition.

    ``"peak"`` uses the peak pulse amplitude; ``"average"`` uses the signal
    power averaged over one period and therefore needs ``T``.
    """
    if definition == "peak":
        power = (A * pulse.peak) ** 2
    elif definition == "average":
        if T is None:
            raise ValueError("average-power SNR needs the period T")
        power = A**2 * float(np.sum(pulse.samples**2)) * pulse.Ts / T
    else:
        raise ValueError(f"unknown SNR definition {definition!r}")
    if power <= 0:
        raise ValueError("pulse has zero power")
    return power / 10.0 ** (snr_db / 10.0)


def resample(x, P_R: int) -> np.ndarray:
    """Band-limited interpolation by ``P_R`` via zero-padding in frequency.

    The Nyquist bin of even-length input is split symmetrically, so every
    ``P_R``-th output sample reproduces the input.
    """
    if int(P_R) != P_R or P_R < 1:
        raise ValueError("P_R must be an integer >= 1")
    x = np.asarray(x, dtype=float)
    if P_R == 1:
        return x
    return sps.resample(x, len(x) * int(P_R))
