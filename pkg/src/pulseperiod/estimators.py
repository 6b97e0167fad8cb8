"""Grid-search period estimators.

PPKS and PPUS search over integer periods ``P`` and first-pulse offsets
``n0`` and eliminate the linear parameters (amplitude or pulse samples) in
closed form. The multiharmonic estimators search a normalized-frequency grid
that is snapped to the bins of a zero-padded FFT.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np
from scipy import signal as sps

from .signal_model import Measurement, PulseShape, resample

METHODS = ("PPKS", "PPUS", "MHUS_ML", "MHUS_ANLS")


class PreconditionError(ValueError):
    """Estimator inputs violate the model assumptions."""


@dataclass(frozen=True)
class GridSpec:
    """Search domain. ``P_min``/``P_max`` are in samples of the signal searched."""

    P_min: int
    P_max: int
    psi_grid: Optional[tuple] = None
    fft_size: int = 2**21

    def __post_init__(self):
        if not 2 <= self.P_min <= self.P_max:
            raise ValueError("need 2 <= P_min <= P_max")
        if self.psi_grid is not None:
            psi = tuple(float(v) for v in np.atleast_1d(self.psi_grid))
            if not all(0 < v < 0.5 for v in psi):
                raise ValueError("psi grid values must lie in (0, 0.5)")
            object.__setattr__(self, "psi_grid", psi)

    @classmethod
    def from_period_range(cls, T_min: float, T_max: float, Ts: float = 1.0, **kw) -> "GridSpec":
        return cls(math.ceil(round(T_min / Ts, 9)), math.floor(round(T_max / Ts, 9)), **kw)

    def scaled(self, P_R: int) -> "GridSpec":
        """The same period range expressed on a grid ``P_R`` times finer."""
        return replace(self, P_min=self.P_min * P_R, P_max=self.P_max * P_R)

    @property
    def psi_range(self) -> tuple:
        if self.psi_grid is not None:
            return min(self.psi_grid), max(self.psi_grid)
        return 1.0 / self.P_max, 1.0 / self.P_min


@dataclass
class PeriodEstimate:
    method: str
    T_hat: float
    P_hat: Optional[int]
    n0_hat: Optional[int]
    cost: float
    nuisance: object = None
    order: Optional[int] = None
    psi_hat: Optional[float] = None
    P_R: int = 1
    info: dict = field(default_factory=dict)


def _data(x) -> tuple:
    if isinstance(x, Measurement):
        return x.x, x.Ts
    return np.asarray(x, dtype=float), 1.0


def _better(cost, best):
    return best is None or cost > best


# --- pulse-train estimators ---------------------------------------------------

def _block_counts(N: int, P: int, n: int) -> np.ndarray:
    """For j in [0, n): number of k >= 0 with j + k*P < N."""
    j = np.arange(n)
    return np.maximum(0, -(-(N - j) // P))


def _ppks_rows(x, s, P_min, P_max) -> Iterator[tuple]:
    """Yield (P, cost[n0], correlation sums, template energies) for each candidate period.

    Candidate onsets are ``n0 + k*P < N``; a pulse running past the end of
    the window is truncated, so the cost is the exact projection onto the
    truncated template train.
    """
    N, Np = len(x), len(s)
    c = sps.correlate(np.concatenate([x, np.zeros(Np - 1)]), s, mode="valid", method="fft")
    cum_energy = np.cumsum(s * s)
    e = cum_energy[np.minimum(Np, N - np.arange(N)) - 1]  # template energy kept at onset m
    padded_c = np.zeros(N + P_max)
    padded_c[:N] = c
    padded_e = np.zeros(N + P_max)
    padded_e[:N] = e
    for P in range(P_min, P_max + 1):
        kmax = -(-N // P)
        sums = padded_c[: kmax * P].reshape(kmax, P).sum(axis=0)
        energy = padded_e[: kmax * P].reshape(kmax, P).sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            cost = np.where(energy > 0, sums**2 / energy, -np.inf)
        yield P, cost, sums, energy


def _ppus_rows(x, Np, P_min, P_max) -> Iterator[tuple]:
    """Yield (P, cost[n0], folded signal, block counts) for each candidate period.

    ``folded[j]`` sums ``x[j + k*P]`` over all in-window k and ``counts[j]``
    is how many terms it has, so ``folded / counts`` is the least-squares
    pulse and the cost is a sliding sum of ``folded**2 / counts``.
    """
    N = len(x)
    padded = np.zeros(N + 2 * P_max)
    padded[:N] = x
    for P in range(P_min, P_max + 1):
        kmax = -(-N // P)
        R = padded[: (kmax + 1) * P].reshape(kmax + 1, P)
        head = R.sum(axis=0)
        folded = np.concatenate([head, head[: Np - 1] - R[0, : Np - 1]])
        counts = _block_counts(N, P, P + Np - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(counts > 0, folded**2 / counts, 0.0)
        csum = np.cumsum(g)
        cost = csum[Np - 1 : Np - 1 + P].copy()
        cost[1:] -= csum[: P - 1]
        yield P, cost, folded, counts


def _check_pulse_fits(Np, grid):
    if Np > grid.P_min:
        raise PreconditionError(f"pulse length Np={Np} exceeds P_min={grid.P_min}: pulses would overlap")


def _search(rows):
    best = None
    for P, cost, aux, K in rows:
        i = int(np.argmax(cost))
        if _better(cost[i], None if best is None else best[0]):
            best = (float(cost[i]), P, i, aux, K)
    return best


def ppks(x, pulse: PulseShape, grid: GridSpec) -> PeriodEstimate:
    """Known-shape ML period estimate by exhaustive (P, n0) search."""
    data, Ts = _data(x)
    _check_pulse_fits(pulse.Np, grid)
    cost, P, n0, sums, energy = _search(_ppks_rows(data, pulse.samples, grid.P_min, grid.P_max))
    A_hat = sums[n0] / energy[n0]
    return PeriodEstimate("PPKS", P * Ts, P, n0, cost, float(A_hat), pulse.Np,
                          info={"pulses": len(range(n0, len(data), P))})


def ppus(x, Np: int, grid: GridSpec) -> PeriodEstimate:
    """Unknown-shape ML period estimate; the pulse is estimated as the folded mean."""
    data, Ts = _data(x)
    _check_pulse_fits(Np, grid)
    cost, P, n0, folded, counts = _search(_ppus_rows(data, Np, grid.P_min, grid.P_max))
    s_hat = folded[n0 : n0 + Np] / counts[n0 : n0 + Np]
    return PeriodEstimate("PPUS", P * Ts, P, n0, cost, s_hat, Np,
                          info={"pulses": len(range(n0, len(data), P))})


def recover_pulse(x, P_hat: int, n0_hat: int, Np: int) -> np.ndarray:
    """Least-squares pulse estimate: per-sample mean over the period-aligned segments.

    A segment cut off by the end of the window contributes to the samples it
    still covers.
    """
    data, _ = _data(x)
    N = len(data)
    if not 0 <= n0_hat < P_hat:
        raise ValueError("need 0 <= n0_hat < P_hat")
    if Np < 1 or Np > P_hat:
        raise ValueError("need 1 <= Np <= P_hat")
    if n0_hat + Np > N:
        raise ValueError("pulse at n0_hat does not fit inside the window")
    idx = np.arange(n0_hat, N, P_hat)[:, None] + np.arange(Np)
    valid = idx < N
    vals = np.where(valid, data[np.minimum(idx, N - 1)], 0.0)
    return vals.sum(axis=0) / valid.sum(axis=0)


def cost_surface(x, method: str, grid: GridSpec, pulse: Optional[PulseShape] = None,
                 Np: Optional[int] = None) -> tuple:
    """Full (P, n0) cost grid; entries with n0 >= P are NaN."""
    data, _ = _data(x)
    method = method.upper()
    if method == "PPKS":
        _check_pulse_fits(pulse.Np, grid)
        rows = _ppks_rows(data, pulse.samples, grid.P_min, grid.P_max)
    elif method == "PPUS":
        _check_pulse_fits(Np, grid)
        rows = _ppus_rows(data, Np, grid.P_min, grid.P_max)
    else:
        raise ValueError(f"no (P, n0) surface for {method}")
    periods = np.arange(grid.P_min, grid.P_max + 1)
    surface = np.full((len(periods), grid.P_max), np.nan)
    for i, (P, cost, _, _) in enumerate(rows):
        surface[i, :P] = cost
    return periods, surface


# --- multiharmonic estimators -------------------------------------------------

class HarmonicSpectrum:
    """Zero-padded real FFT of a measurement, shared by the multiharmonic estimators."""

    def __init__(self, x, fft_size: int):
        data, self.Ts = _data(x)
        if fft_size < len(data):
            raise ValueError("fft_size must be >= N")
        self.N = len(data)
        self.M = int(fft_size)
        self.energy = float(data @ data)
        self.X = np.fft.rfft(data, self.M)

    def bins(self, grid: GridSpec) -> np.ndarray:
        """FFT bin indices j (psi = j/M) covering the grid."""
        if grid.psi_grid is not None:
            return np.unique(np.rint(np.asarray(grid.psi_grid) * self.M).astype(np.int64))
        lo, hi = grid.psi_range
        return np.arange(math.ceil(lo * self.M), math.floor(hi * self.M) + 1, dtype=np.int64)

    def harmonics(self, j: np.ndarray, Kh: int) -> np.ndarray:
        """Complex transform values X(k*psi), shape (Kh, len(j))."""
        idx = np.arange(1, Kh + 1)[:, None] * j[None, :]
        if idx.max() > self.M // 2:
            raise PreconditionError("harmonics exceed Nyquist")
        return self.X[idx]

    def cumulative_power(self, j: np.ndarray, Kh: int) -> np.ndarray:
        """Row r holds sum_{k<=r+1} |X(k*psi)|^2."""
        return np.cumsum(np.abs(self.harmonics(j, Kh)) ** 2, axis=0)


def _check_anls_grid(psi_lo, psi_hi, Kh, N):
    if psi_lo < 2.0 / N or psi_hi > 0.9 / (2 * Kh):
        raise PreconditionError(
            f"ANLS grid [{psi_lo:.4g}, {psi_hi:.4g}] outside [2/N, 0.9/(2Kh)] = "
            f"[{2.0 / N:.4g}, {0.9 / (2 * Kh):.4g}]")


def anls(x, Kh: int, grid: GridSpec, spectrum: Optional[HarmonicSpectrum] = None) -> PeriodEstimate:
    """Harmonic-summation estimate: maximize sum_k |X(k*psi)|^2 on the FFT bin grid."""
    if Kh < 1:
        raise ValueError("Kh must be >= 1")
    spec = spectrum or HarmonicSpectrum(x, grid.fft_size)
    j = spec.bins(grid)
    if j.size == 0:
        raise PreconditionError("frequency grid contains no FFT bin")
    _check_anls_grid(j[0] / spec.M, j[-1] / spec.M, Kh, spec.N)
    power = spec.cumulative_power(j, Kh)[-1]
    i = int(np.argmax(power))
    psi = j[i] / spec.M
    return PeriodEstimate("MHUS_ANLS", spec.Ts / psi, None, None, float(power[i]), None, Kh, psi)


def _dirichlet(theta, N):
    """Return (sum cos(theta*n), sum sin(theta*n)) over n = 0..N-1."""
    half = np.sin(theta / 2)
    small = np.abs(half) < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(small, N, np.sin(N * theta / 2) / np.where(small, 1.0, half))
    phase = theta * (N - 1) / 2
    return np.where(small, N, np.cos(phase) * r), np.where(small, 0.0, np.sin(phase) * r)


def harmonic_gram(psi, Kh: int, N: int) -> np.ndarray:
    """H^T H for the cosine/sine harmonic basis, one (2Kh, 2Kh) block per psi."""
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    k = np.arange(1, Kh + 1)
    w = 2 * np.pi * psi[:, None, None]
    cd, sd = _dirichlet((k[:, None] - k[None, :]) * w, N)
    cs, ss = _dirichlet((k[:, None] + k[None, :]) * w, N)
    G = np.empty((psi.size, 2 * Kh, 2 * Kh))
    G[:, :Kh, :Kh] = (cd + cs) / 2
    G[:, Kh:, Kh:] = (cd - cs) / 2
    # sum cos(k w n) sin(l w n) = (S((k+l)w) - S((k-l)w)) / 2
    G[:, :Kh, Kh:] = (ss - sd) / 2
    G[:, Kh:, :Kh] = np.swapaxes(G[:, :Kh, Kh:], 1, 2)
    return G


def _direct_harmonics(data, psi, Kh):
    n = np.arange(len(data))
    out = np.empty((Kh, psi.size), dtype=complex)
    for i, p in enumerate(psi):
        out[:, i] = np.exp(-2j * np.pi * np.outer(np.arange(1, Kh + 1) * p, n)) @ data
    return out


def mhus_ml(x, Kh: int, grid: GridSpec, spectrum: Optional[HarmonicSpectrum] = None,
            cond_limit: float = 1e12) -> PeriodEstimate:
    """Multiharmonic ML estimate: maximize the projection of x onto the harmonic basis.

    An explicit ``grid.psi_grid`` is evaluated exactly; otherwise the FFT bins
    inside the period range are used.
    """
    if Kh < 1:
        raise ValueError("Kh must be >= 1")
    lo, hi = grid.psi_range
    if Kh * hi >= 0.5:
        raise PreconditionError(f"Kh*psi_max = {Kh * hi:.4g} >= 0.5")
    data, Ts = _data(x)
    N = len(data)
    if grid.psi_grid is not None:
        psi = np.asarray(grid.psi_grid)
        Xk = _direct_harmonics(data, psi, Kh)
    else:
        spec = spectrum or HarmonicSpectrum(x, grid.fft_size)
        j = spec.bins(grid)
        psi = j / spec.M
        Xk = spec.harmonics(j, Kh)
    b = np.concatenate([Xk.real, -Xk.imag], axis=0).T  # (G, 2Kh)
    G = harmonic_gram(psi, Kh, N)
    lam, V = np.linalg.eigh(G)
    ok = lam[:, 0] > lam[:, -1] / cond_limit
    if not np.all(ok):
        warnings.warn(f"skipped {np.count_nonzero(~ok)} near-singular grid points", RuntimeWarning)
    proj = np.einsum("gij,gi->gj", V, b)  # V^T b per grid point
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(ok[:, None], proj / lam, 0.0)
    cost = np.where(ok, np.einsum("gj,gj->g", proj, scaled), -np.inf)
    coef = np.einsum("gij,gj->gi", V, scaled)
    i = int(np.argmax(cost))
    if not np.isfinite(cost[i]):
        raise PreconditionError("every grid point is near-singular")
    a, bs = coef[i, :Kh], coef[i, Kh:]
    nuisance = {"amplitude": np.hypot(a, bs), "phase": np.arctan2(a, bs)}
    return PeriodEstimate("MHUS_ML", Ts / psi[i], None, None, float(cost[i]), nuisance, Kh, float(psi[i]))


def model_order_scores(x, Kh_max: int, grid: GridSpec, rho: float = 3.0,
                       spectrum: Optional[HarmonicSpectrum] = None) -> np.ndarray:
    """Penalized criterion N*ln(sigma2_hat(Kh)) + rho*Kh*ln(N) for Kh = 1..Kh_max.

    Orders whose harmonics would leave the ANLS validity range get ``inf``.
    """
    if Kh_max < 1:
        raise ValueError("Kh_max must be >= 1")
    spec = spectrum or HarmonicSpectrum(x, grid.fft_size)
    j = spec.bins(grid)
    N = spec.N
    psi_hi = j[-1] / spec.M
    usable = max(1, min(Kh_max, int(0.9 / (2 * psi_hi)), (spec.M // 2) // int(j[-1])))
    R = spec.cumulative_power(j, usable).max(axis=1)
    floor = max(1e-12 * spec.energy / N, np.finfo(float).tiny)
    sigma2 = np.maximum((spec.energy - 2 * R / N) / N, floor)
    Kh = np.arange(1, usable + 1)
    scores = np.full(Kh_max, np.inf)
    scores[:usable] = N * np.log(sigma2) + rho * Kh * np.log(N)
    return scores


def select_model_order(x, Kh_max: int, grid: GridSpec, rho: float = 3.0,
                       spectrum: Optional[HarmonicSpectrum] = None) -> int:
    """Harmonic count minimizing :func:`model_order_scores` (smallest on ties)."""
    return int(np.argmin(model_order_scores(x, Kh_max, grid, rho, spectrum))) + 1


# --- sub-grid refinement ------------------------------------------------------

def estimate_with_subgrid(x: Measurement, method: str, P_R: int, grid: GridSpec,
                          pulse: Optional[PulseShape] = None, Np: Optional[int] = None) -> PeriodEstimate:
    """Run PPKS or PPUS on ``x`` resampled by ``P_R``.

    ``grid`` and ``Np`` are given at the original rate; the returned ``P_hat``
    and ``n0_hat`` are on the fine grid and ``T_hat = P_hat * Ts / P_R``.
    """
    if int(P_R) != P_R or P_R < 1:
        raise ValueError("P_R must be an integer >= 1")
    method = method.upper()
    data, Ts = _data(x)
    fine = Measurement(resample(data, P_R), Ts / P_R) if P_R > 1 else Measurement(data, Ts)
    g = grid.scaled(P_R)
    if method == "PPKS":
        if pulse is None:
            raise ValueError("PPKS needs the pulse shape")
        if pulse.Np > grid.P_min:
            raise PreconditionError(f"pulse length Np={pulse.Np} exceeds P_min={grid.P_min}: pulses would overlap")
        est = ppks(fine, pulse.resampled(P_R), g)
    elif method == "PPUS":
        if Np is None:
            if pulse is None:
                raise ValueError("PPUS needs Np")
            Np = pulse.Np
        est = ppus(fine, Np * P_R, g)
    else:
        raise ValueError(f"sub-grid refinement supports PPKS and PPUS, not {method}")
    est.P_R = P_R
    return est
