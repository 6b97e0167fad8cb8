"""Fisher information matrices and Cramer-Rao bounds for pulse-train periods.

Two models are covered: a known pulse shape scaled by an unknown amplitude
(parameters ``T, tau0, A``) and an unknown pulse of known length (parameters
``T, tau0`` and the pulse samples). Each has a numeric FIM built by summing
outer products of the signal derivatives over the observation window and a
closed form valid when ``K`` full pulses sit on the sample grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .signal_model import PulseShape, PulseTrainParams, pulse_indices

COND_LIMIT = 1e12


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when an information matrix cannot be inverted without regularization."""


@dataclass(frozen=True)
class FisherInfo:
    matrix: np.ndarray
    labels: tuple
    sigma2: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (len(self.labels), len(self.labels)):
            raise ValueError("matrix dimension does not match labels")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def to_csv(self, path):
        """Write the matrix as a labelled CSV grid."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["", *self.labels])
            for label, row in zip(self.labels, self.matrix):
                w.writerow([label, *(repr(float(v)) for v in row)])


@dataclass(frozen=True)
class PulseStats:
    energy: float
    deriv_energy: float
    cross: float

    @property
    def msb(self) -> float:
        """Mean squared bandwidth, derivative energy over energy."""
        return self.deriv_energy / self.energy


def pulse_count(N: int, Ts: float, T: float) -> int:
    """Number of full pulses ``round(N*Ts/T)``, ties away from zero."""
    return int(math.floor(N * Ts / T + 0.5))


def pulse_stats(pulse: PulseShape) -> PulseStats:
    s = pulse.samples
    d = pulse.deriv_samples
    return PulseStats(float(s @ s), float(d @ d), float(d @ s))


def _check_sigma2(sigma2):
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")


def _shifted(pulse, N, Ts, T, tau0):
    """Yield (k, t) where t holds n*Ts - k*T - tau0 for every overlapping pulse."""
    t = np.arange(N) * Ts
    for k in pulse_indices(T, tau0, pulse.support, t[-1]):
        yield int(k), t - k * T - tau0


def fim_known_shape(params: PulseTrainParams, pulse: PulseShape, N: int, Ts: float,
                    sigma2: float) -> FisherInfo:
    """Numeric FIM over ``[T, tau0, A]`` for the known-shape model."""
    _check_sigma2(sigma2)
    A = params.A
    J = np.zeros((N, 3))
    for k, u in _shifted(pulse, N, Ts, params.T, params.tau0):
        ds = pulse.derivative(u)
        J[:, 0] -= A * k * ds
        J[:, 1] -= A * ds
        J[:, 2] += pulse.value(u)
    return FisherInfo(J.T @ J / sigma2, ("T", "tau0", "A"), sigma2)


def fim_unknown_shape(params: PulseTrainParams, pulse: PulseShape, N: int, Ts: float,
                      sigma2: float) -> FisherInfo:
    """Numeric FIM over ``[T, tau0, sp0..sp{Np-1}]`` for the unknown-shape model.

    Derivatives with respect to the pulse samples treat the pulse as a
    staircase of width-``Ts`` rectangles.
    """
    _check_sigma2(sigma2)
    Np = pulse.Np
    J = np.zeros((N, Np + 2))
    rows = np.arange(N)
    for k, u in _shifted(pulse, N, Ts, params.T, params.tau0):
        ds = pulse.derivative(u)
        J[:, 0] -= k * ds
        J[:, 1] -= ds
        v = u / Ts
        vr = np.round(v)
        v = np.where(np.abs(v - vr) < 1e-9, vr, v)
        a = np.floor(v)
        hit = (a >= 0) & (a < Np)
        np.add.at(J, (rows[hit], 2 + a[hit].astype(int)), 1.0)
    labels = ("T", "tau0", *(f"sp{a}" for a in range(Np)))
    return FisherInfo(J.T @ J / sigma2, labels, sigma2)


def fim_known_shape_closed(stats: PulseStats, K: int, A: float, sigma2: float) -> FisherInfo:
    """Closed-form known-shape FIM for ``K`` full on-grid pulses."""
    if K < 1:
        raise ValueError("K must be >= 1")
    _check_sigma2(sigma2)
    q = (2 * K**3 - 3 * K**2 + K) / 6
    h = (K**2 - K) / 2
    E, Ed, Sd = stats.energy, stats.deriv_energy, stats.cross
    m = np.array([
        [A**2 * q * Ed, A**2 * h * Ed, -A * h * Sd],
        [A**2 * h * Ed, A**2 * K * Ed, -A * K * Sd],
        [-A * h * Sd, -A * K * Sd, K * E],
    ])
    return FisherInfo(m / sigma2, ("T", "tau0", "A"), sigma2)


def fim_unknown_shape_closed(pulse: PulseShape, K: int, sigma2: float) -> FisherInfo:
    """Closed-form unknown-shape FIM; singular by construction (see :func:`null_vector`)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    _check_sigma2(sigma2)
    d = pulse.deriv_samples
    Np = pulse.Np
    Ed = float(d @ d)
    h = (K**2 - K) / 2
    m = np.zeros((Np + 2, Np + 2))
    m[0, 0] = (2 * K**3 - 3 * K**2 + K) / 6 * Ed
    m[0, 1] = m[1, 0] = h * Ed
    m[1, 1] = K * Ed
    m[0, 2:] = m[2:, 0] = -h * d
    m[1, 2:] = m[2:, 1] = -K * d
    m[2:, 2:] = K * np.eye(Np)
    labels = ("T", "tau0", *(f"sp{a}" for a in range(Np)))
    return FisherInfo(m / sigma2, labels, sigma2)


def null_vector(pulse: PulseShape) -> np.ndarray:
    """Direction ``[0, 1, ds/dt(0), ..., ds/dt((Np-1)Ts)]``: a delay shift absorbed by the pulse."""
    return np.concatenate([[0.0, 1.0], pulse.deriv_samples])


def crlb_period_known_shape(stats: PulseStats, K: int, A: float, sigma2: float, N: int,
                            Ts: float, T: float) -> dict:
    """Period CRLB for the known-shape model: exact K-form and large-K approximation."""
    if K < 2:
        raise ValueError("K < 2: period bound undefined (K^3 - K = 0)")
    exact = 12 * sigma2 / ((K**3 - K) * A**2 * stats.deriv_energy)
    approx = 12 * T**3 * sigma2 / (N**3 * Ts**3 * A**2 * stats.energy * stats.msb)
    return {"exact": exact, "approx": approx}


def crlb_multiharmonic(amplitudes: Sequence[float], N: int, sigma2: float, T: float,
                       Ts: float) -> dict:
    """Approximate CRLBs of the normalized pitch and of the period for a harmonic model."""
    amps = np.asarray(amplitudes, dtype=float)
    if amps.size == 0:
        raise ValueError("amplitude list is empty")
    if not np.any(amps > 0):
        raise ValueError("at least one harmonic amplitude must be positive")
    if N < 2:
        raise ValueError("N must be >= 2")
    k = np.arange(1, amps.size + 1)
    weight = float(np.sum(k**2 * amps**2))
    var_psi = 6 * sigma2 / (N * (N**2 - 1) * math.pi**2 * weight)
    var_T = 6 * sigma2 * T**4 / (math.pi**2 * N * (N**2 - 1) * Ts**2 * weight)
    return {"var_psi": var_psi, "var_T": var_T}


def harmonic_amplitudes(pulse: PulseShape, T: float, A: float = 1.0) -> np.ndarray:
    """Fourier-series amplitudes of the pulse train at harmonics below Nyquist.

    ``A_k = 2*A*Ts/T * |sum_n s[n] exp(-2j*pi*k*n*Ts/T)|`` for ``k*Ts/T < 1/2``.
    """
    Ts = pulse.Ts
    n_harm = math.ceil(T / (2 * Ts)) - 1
    k = np.arange(1, n_harm + 1)[:, None]
    n = np.arange(pulse.Np)[None, :]
    spec = np.exp(-2j * np.pi * k * n * Ts / T) @ pulse.samples
    return 2 * abs(A) * Ts / T * np.abs(spec)


def regularized_covariance(info: FisherInfo, lam: Optional[float] = None) -> np.ndarray:
    """Inverse of ``M + lam*I``; ``lam=None`` picks ``1e-8 * trace(M)/dim``.

    With ``lam=0`` the plain inverse is returned, or :class:`SingularMatrixError`
    raised when the condition number exceeds ``COND_LIMIT``.
    """
    M = info.matrix
    if lam is None:
        lam = 1e-8 * np.trace(M) / info.dim
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0:
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularMatrixError(f"information matrix is singular (cond={cond:.3g}); use lambda > 0")
    cov = np.linalg.inv(M + lam * np.eye(info.dim))
    return (cov + cov.T) / 2


def singularity_diagnostic(info: FisherInfo, pulse: PulseShape) -> dict:
    """Smallest eigenvalue and relative residual of the delay/pulse null direction."""
    M = info.matrix
    eig = np.linalg.eigvalsh((M + M.T) / 2)
    out = {"min_eig": float(eig[0]), "max_eig": float(eig[-1])}
    if info.dim == pulse.Np + 2:
        u = null_vector(pulse)
        out["null_residual"] = float(np.linalg.norm(M @ u) / (np.linalg.norm(M, 2) * np.linalg.norm(u)))
    else:
        out["null_residual"] = float("nan")
    return out
