"""Monte Carlo MSE-versus-SNR study of the period estimators."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import bounds
from .estimators import (METHODS, GridSpec, HarmonicSpectrum, anls, estimate_with_subgrid,
                         mhus_ml, select_model_order)
from .signal_model import (SNR_DEFINITIONS, PulseTrainParams, add_noise, make_gaussian_pulse,
                           sigma2_for_snr, synthesize)

log = logging.getLogger(__name__)

RESULTS_HEADER = ("snr_db", "method", "mse", "crlb_model1", "crlb_mhus", "trials", "failures")


@dataclass(frozen=True)
class ExperimentConfig:
    N: int = 4096
    T_low: float = 475.0
    T_high: float = 525.0
    Tp: float = 20.0
    Ts: float = 1.0
    A: float = 1.0
    P_R: int = 10
    snr_db_list: tuple = tuple(range(-30, 1, 2))
    trials: int = 200
    master_seed: int = 20240611
    estimator_set: tuple = METHODS
    Kh_max: int = 60
    order_penalty: float = 3.0
    fft_size: int = 2**21
    snr_definition: str = "average"
    snap_to_grid: bool = False
    grid_T_min: Optional[float] = None
    grid_T_max: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "snr_db_list", tuple(float(v) for v in self.snr_db_list))
        object.__setattr__(self, "estimator_set", tuple(m.upper() for m in self.estimator_set))
        if not self.T_low < self.T_high:
            raise ValueError("need T_low < T_high")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.Tp < self.T_low:
            raise ValueError("need Tp < T_low")
        if self.P_R < 1:
            raise ValueError("P_R must be >= 1")
        unknown = set(self.estimator_set) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if self.snr_definition not in SNR_DEFINITIONS:
            raise ValueError(f"snr_definition must be one of {sorted(SNR_DEFINITIONS)}")

    @property
    def grid(self) -> GridSpec:
        lo = self.T_low if self.grid_T_min is None else self.grid_T_min
        hi = self.T_high if self.grid_T_max is None else self.grid_T_max
        return GridSpec.from_period_range(lo, hi, self.Ts, fft_size=self.fft_size)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["snr_db_list"] = list(self.snr_db_list)
        d["estimator_set"] = list(self.estimator_set)
        return d


@dataclass
class MseCurve:
    snr_db: np.ndarray
    methods: tuple
    mse: np.ndarray  # (snr, method)
    trials: np.ndarray  # successful trials per (snr, method)
    failures: np.ndarray
    crlb_model1: np.ndarray  # per snr
    crlb_mhus: np.ndarray
    sq_errors: np.ndarray = field(repr=False, default=None)  # (trial, snr, method)
    complete: bool = True
    snr_definition: str = "average"

    def series(self, method: str) -> np.ndarray:
        return self.mse[:, self.methods.index(method.upper())]

    def rows(self):
        for i, snr in enumerate(self.snr_db):
            for j, m in enumerate(self.methods):
                yield (snr, m, self.mse[i, j], self.crlb_model1[i], self.crlb_mhus[i],
                       int(self.trials[i, j]), int(self.failures[i, j]))

    def to_csv(self, fh=None) -> str:
        """Results table; floats use ``repr`` so reruns are byte-identical."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for snr, m, mse, c1, c2, n, f in self.rows():
            w.writerow([_fmt(snr), m, _fmt(mse), _fmt(c1), _fmt(c2), n, f])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def _fmt(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def trial_seed(master_seed: int, *indices: int) -> int:
    """Stable 64-bit seed derived from the master seed and loop indices."""
    state = np.random.SeedSequence(master_seed, spawn_key=tuple(indices)).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def draw_parameters(config: ExperimentConfig) -> tuple:
    """Per-trial (T, tau0) draws: T ~ U[T_low, T_high], tau0 ~ U[0, T)."""
    T = np.empty(config.trials)
    tau0 = np.empty(config.trials)
    step = config.Ts / config.P_R
    for i in range(config.trials):
        rng = np.random.default_rng(trial_seed(config.master_seed, i))
        T[i] = rng.uniform(config.T_low, config.T_high)
        tau0[i] = rng.uniform(0.0, T[i])
        if config.snap_to_grid:
            T[i] = round(T[i] / step) * step
            tau0[i] = (round(tau0[i] / step) * step) % T[i]
    return T, tau0


def _sigma2(config, pulse, snr_db, T):
    return sigma2_for_snr(pulse, config.A, snr_db, config.snr_definition, T)


def _bounds_for(config, pulse, stats, T, sigma2):
    K = bounds.pulse_count(config.N, config.Ts, T)
    model1 = bounds.crlb_period_known_shape(stats, K, config.A, sigma2, config.N, config.Ts, T)["exact"]
    amps = bounds.harmonic_amplitudes(pulse, T, config.A)
    mhus = bounds.crlb_multiharmonic(amps, config.N, sigma2, T, config.Ts)["var_T"]
    return model1, mhus


def averaged_crlb(config: ExperimentConfig, snr_db: float) -> dict:
    """Model-1 (exact K-form) and multiharmonic period bounds averaged over the trial draws."""
    pulse = make_gaussian_pulse(config.Tp, config.Ts)
    stats = bounds.pulse_stats(pulse)
    T, _ = draw_parameters(config)
    vals = np.array([_bounds_for(config, pulse, stats, t, _sigma2(config, pulse, snr_db, t)) for t in T])
    return {"model1": float(vals[:, 0].mean()), "multiharmonic": float(vals[:, 1].mean())}


def _estimate(method, meas, pulse, config, grid, cache):
    if method in ("PPKS", "PPUS"):
        return estimate_with_subgrid(meas, method, config.P_R, grid, pulse=pulse, Np=pulse.Np).T_hat
    if "spectrum" not in cache:
        spec = HarmonicSpectrum(meas, config.fft_size)
        cache["spectrum"] = spec
        cache["Kh"] = select_model_order(meas, config.Kh_max, grid, config.order_penalty, spec)
    fn = anls if method == "MHUS_ANLS" else mhus_ml
    return fn(meas, cache["Kh"], grid, spectrum=cache["spectrum"]).T_hat


def run(config: ExperimentConfig, progress: Optional[Callable[[int, int], None]] = None,
        interruptible: bool = False) -> MseCurve:
    """Simulate ``config.trials`` pulse trains and score every estimator at every SNR.

    Noise seeds depend only on (master_seed, trial, snr index), so the result
    is a pure function of ``config``. With ``interruptible=True`` a
    KeyboardInterrupt ends the run early and the curve is marked incomplete.
    """
    pulse = make_gaussian_pulse(config.Tp, config.Ts)
    stats = bounds.pulse_stats(pulse)
    grid = config.grid
    methods = config.estimator_set
    snrs = np.asarray(config.snr_db_list)
    T, tau0 = draw_parameters(config)
    sq = np.full((config.trials, len(snrs), len(methods)), np.nan)
    failed = np.zeros((config.trials, len(snrs), len(methods)), dtype=bool)
    crlb = np.full((config.trials, len(snrs), 2), np.nan)
    done = 0
    try:
        for i in range(config.trials):
            params = PulseTrainParams(T[i], tau0[i], config.A)
            clean = synthesize(params, pulse, config.N, config.Ts)
            for s, snr in enumerate(snrs):
                sigma2 = _sigma2(config, pulse, snr, T[i])
                crlb[i, s] = _bounds_for(config, pulse, stats, T[i], sigma2)
                meas = add_noise(clean, sigma2, trial_seed(config.master_seed, i, s), config.Ts, params)
                cache = {}
                for j, m in enumerate(methods):
                    try:
                        sq[i, s, j] = (_estimate(m, meas, pulse, config, grid, cache) - T[i]) ** 2
                    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                        log.warning("trial %d snr %g %s failed: %s", i, snr, m, exc)
                        failed[i, s, j] = True
            done = i + 1
            if progress is not None:
                progress(done, config.trials)
    except KeyboardInterrupt:
        if not interruptible:
            raise
        log.warning("interrupted after %d of %d trials", done, config.trials)
    sq, failed, crlb = sq[:done], failed[:done], crlb[:done]
    ok = ~failed
    n_ok = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mse = np.where(n_ok > 0, np.nansum(np.where(ok, sq, 0.0), axis=0) / n_ok, np.nan)
    return MseCurve(
        snr_db=snrs,
        methods=methods,
        mse=mse,
        trials=n_ok,
        failures=failed.sum(axis=0),
        crlb_model1=crlb[:, :, 0].mean(axis=0) if done else np.full(len(snrs), np.nan),
        crlb_mhus=crlb[:, :, 1].mean(axis=0) if done else np.full(len(snrs), np.nan),
        sq_errors=sq,
        complete=done == config.trials,
        snr_definition=config.snr_definition,
    )


def detect_threshold(curve: MseCurve, method: str, factor: float = 10.0) -> Optional[float]:
    """Lowest SNR from which the MSE stays within ``factor`` times the model-1 bound.

    Returns None when the highest SNR already violates the condition.
    """
    mse = curve.series(method)
    if np.count_nonzero(np.isfinite(mse)) < 3:
        raise ValueError("need at least three SNR points")
    order = np.argsort(curve.snr_db)
    snr = curve.snr_db[order]
    ok = (mse[order] <= factor * curve.crlb_model1[order])
    if not ok[-1]:
        return None
    i = len(ok) - 1
    while i > 0 and ok[i - 1]:
        i -= 1
    return float(snr[i])


def plot_series(curve: MseCurve) -> list:
    """Long-format rows (series, snr_db, value) for MSE curves and both bounds."""
    rows = []
    for m in curve.methods:
        rows += [(m, float(s), float(v)) for s, v in zip(curve.snr_db, curve.series(m))]
    rows += [("CRLB_model1", float(s), float(v)) for s, v in zip(curve.snr_db, curve.crlb_model1)]
    rows += [("CRLB_mhus", float(s), float(v)) for s, v in zip(curve.snr_db, curve.crlb_mhus)]
    return rows


def uniform_prior_variance(config: ExperimentConfig) -> float:
    return (config.T_high - config.T_low) ** 2 / 12.0


def quantization_floor(config: ExperimentConfig) -> float:
    return (config.Ts / config.P_R) ** 2 / 12.0


def threshold_report(curve: MseCurve, factor: float = 10.0, methods: Optional[Sequence[str]] = None) -> dict:
    out = {}
    for m in methods or curve.methods:
        try:
            out[m] = detect_threshold(curve, m, factor)
        except ValueError:
            out[m] = None
    return out
