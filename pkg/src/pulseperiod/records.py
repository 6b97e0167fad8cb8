"""File formats: signal CSV + sidecar, flat YAML configs, CSV records, run manifests."""

from __future__ import annotations

import csv
import datetime as dt
import json
import os
import platform
import sys
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import yaml

from . import __version__
from .signal_model import Measurement, PulseTrainParams

ESTIMATE_HEADER = ("method", "T_hat", "P_hat", "n0_hat", "cost", "Kh_or_Np", "seed")
BOUND_HEADER = ("model", "param", "bound", "K", "sigma2", "notes")

DEFAULTS = {
    "N": 4096,
    "Ts": 1.0,
    "Tp": 20.0,
    "A": 1.0,
    "T": 500.0,
    "tau0": 123.0,
    "snr_db": None,
    "sigma2": None,
    "snr_definition": "average",
    "seed": 1,
    "P_R": 10,
    "T_low": 475.0,
    "T_high": 525.0,
    "grid_T_min": None,
    "grid_T_max": None,
    "trials": 200,
    "snr_db_list": list(range(-30, 1, 2)),
    "master_seed": 20240611,
    "estimators": ["PPKS", "PPUS", "MHUS_ANLS", "MHUS_ML"],
    "Kh_max": 60,
    "order_penalty": 3.0,
    "fft_size": 2**21,
    "snap_to_grid": False,
    "K": None,
    "lambda": None,
    "threshold_factor": 10.0,
}

_INT_KEYS = {"N", "seed", "P_R", "trials", "master_seed", "Kh_max", "fft_size", "K"}
_FLOAT_KEYS = {"Ts", "Tp", "A", "T", "tau0", "snr_db", "sigma2", "T_low", "T_high", "grid_T_min",
               "grid_T_max", "order_penalty", "lambda", "threshold_factor"}


class ConfigError(ValueError):
    pass


def load_config(path: Optional[os.PathLike] = None, **overrides) -> dict:
    """Read a flat ``key: value`` YAML file over :data:`DEFAULTS`.

    Unknown keys and wrongly typed values raise :class:`ConfigError`.
    """
    raw = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a flat mapping of keys to values")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(DEFAULTS)
    for key, value in raw.items():
        cfg[key] = _coerce(key, value)
    return cfg


def _coerce(key, value):
    if value is None:
        return None
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        if key in _FLOAT_KEYS:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if key == "snap_to_grid":
            if not isinstance(value, bool):
                raise ValueError
            return value
        if key == "snr_db_list":
            return [float(v) for v in (value if isinstance(value, list) else [value])]
        if key == "estimators":
            items = value.split(",") if isinstance(value, str) else value
            return [str(v).strip().upper() for v in items]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def sidecar_path(signal_path) -> Path:
    p = Path(signal_path)
    return p.with_name(p.stem + ".meta.json")


def write_signal(path, meas: Measurement, meta: dict):
    """Write ``n,x`` rows and the JSON sidecar next to them."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "x"])
        for n, v in enumerate(meas.x):
            w.writerow([n, repr(float(v))])
    side = {
        "Ts": meas.Ts,
        "sigma2": meas.sigma2,
        "seed": meas.seed,
        "truth": None if meas.truth is None else {"T": meas.truth.T, "tau0": meas.truth.tau0, "A": meas.truth.A},
        **meta,
    }
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_signal(path) -> tuple:
    """Return (Measurement, sidecar dict). Raises OSError/ValueError on bad files."""
    path = Path(path)
    side_file = sidecar_path(path)
    if not side_file.exists():
        raise FileNotFoundError(f"missing sidecar {side_file}")
    meta = json.loads(side_file.read_text())
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["n", "x"]:
        raise ValueError(f"{path}: expected header 'n,x'")
    x = np.array([float(r[1]) for r in rows[1:]])
    truth = meta.get("truth")
    meas = Measurement(
        x,
        float(meta.get("Ts", 1.0)),
        float(meta.get("sigma2", 0.0)),
        meta.get("seed"),
        PulseTrainParams(truth["T"], truth["tau0"], truth["A"]) if truth else None,
    )
    return meas, meta


def write_rows(fh, header: Iterable, rows: Iterable):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                    for v in row])


def estimate_row(est, seed) -> tuple:
    return (est.method, float(est.T_hat), est.P_hat, est.n0_hat, float(est.cost), est.order, seed)


def write_matrix_csv(path, periods, surface):
    """Cost grid: one row per P, one column per n0 (blank where n0 >= P)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["P", *(f"n0_{i}" for i in range(surface.shape[1]))])
        for P, row in zip(periods, surface):
            w.writerow([int(P), *("" if np.isnan(v) else repr(float(v)) for v in row)])


def new_manifest(command: str, config: dict, seed) -> dict:
    return {
        "command": command,
        "argv": list(sys.argv),
        "config": config,
        "seed": seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "finished": None,
        "complete": False,
    }


def finish_manifest(manifest: dict, path, complete: bool = True, **extra):
    manifest.update(extra)
    manifest["finished"] = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    manifest["complete"] = complete
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)
