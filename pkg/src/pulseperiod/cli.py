"""Command line interface: ``pulseperiod {synth,estimate,bound,bench}``.

Exit codes: 0 success, 2 bad flags or config, 3 I/O error, 4 estimator
precondition violated, 130 interrupted (partial results written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bounds, montecarlo
from .estimators import (METHODS, GridSpec, HarmonicSpectrum, PreconditionError, anls, cost_surface,
                         estimate_with_subgrid, mhus_ml, select_model_order)
from .records import (BOUND_HEADER, ESTIMATE_HEADER, ConfigError, estimate_row, finish_manifest,
                      load_config, new_manifest, read_signal, write_matrix_csv, write_rows, write_signal)
from .signal_model import (SNR_DEFINITIONS, PulseTrainParams, add_noise, make_gaussian_pulse,
                           sigma2_for_snr, synthesize)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PRECONDITION = 4
EXIT_INTERRUPTED = 130

log = logging.getLogger("pulseperiod")

METHOD_FLAGS = {"ppks": "PPKS", "ppus": "PPUS", "mhus_ml": "MHUS_ML", "anls": "MHUS_ANLS",
                "mhus_anls": "MHUS_ANLS"}


def _sigma2_from(cfg, pulse):
    if cfg["sigma2"] is not None:
        return cfg["sigma2"]
    if cfg["snr_db"] is None:
        return 0.0
    return sigma2_for_snr(pulse, cfg["A"], cfg["snr_db"], cfg["snr_definition"], cfg["T"])


def cmd_synth(args) -> int:
    cfg = load_config(args.config, seed=args.seed, P_R=args.pr)
    pulse = make_gaussian_pulse(cfg["Tp"], cfg["Ts"])
    params = PulseTrainParams(cfg["T"], cfg["tau0"], cfg["A"])
    clean = synthesize(params, pulse, cfg["N"], cfg["Ts"])
    sigma2 = _sigma2_from(cfg, pulse)
    meas = add_noise(clean, sigma2, cfg["seed"], cfg["Ts"], params)
    out = Path(args.output)
    manifest_file = out.with_name(out.stem + ".manifest.json")
    manifest = new_manifest("synth", cfg, cfg["seed"])
    meta = {
        "N": cfg["N"],
        "Tp": cfg["Tp"],
        "P_R": cfg["P_R"],
        "snr_db": cfg["snr_db"],
        "snr_definition": SNR_DEFINITIONS[cfg["snr_definition"]],
        "manifest": manifest_file.name,
    }
    write_signal(out, meas, meta)
    finish_manifest(manifest, manifest_file, outputs=[out.name, out.stem + ".meta.json"])
    return 0


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    try:
        meas, meta = read_signal(args.signal)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    Ts = meas.Ts
    Tp = float(meta.get("Tp", cfg["Tp"]))
    P_R = args.pr if args.pr is not None else int(meta.get("P_R", cfg["P_R"]))
    grid = GridSpec.from_period_range(cfg["grid_T_min"] or cfg["T_low"], cfg["grid_T_max"] or cfg["T_high"],
                                      Ts, fft_size=cfg["fft_size"])
    method = METHOD_FLAGS[args.method]
    pulse = make_gaussian_pulse(Tp, Ts)
    Np = args.np if args.np is not None else pulse.Np
    try:
        if method in ("PPKS", "PPUS"):
            est = estimate_with_subgrid(meas, method, P_R, grid, pulse=pulse, Np=Np)
        else:
            spec = HarmonicSpectrum(meas, grid.fft_size)
            Kh = args.kh or select_model_order(meas, cfg["Kh_max"], grid, cfg["order_penalty"], spec)
            est = (anls if method == "MHUS_ANLS" else mhus_ml)(meas, Kh, grid, spectrum=spec)
    except PreconditionError as exc:
        print(f"error: estimator precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    write_rows(sys.stdout, ESTIMATE_HEADER, [estimate_row(est, meas.seed)])
    if args.dump_cost_surface:
        if method not in ("PPKS", "PPUS"):
            print("error: --dump-cost-surface needs --method ppks or ppus", file=sys.stderr)
            return EXIT_CONFIG
        from .signal_model import Measurement, resample
        fine = Measurement(resample(meas.x, P_R), Ts / P_R)
        periods, surface = cost_surface(fine, method, grid.scaled(P_R), pulse=pulse.resampled(P_R),
                                        Np=Np * P_R)
        write_matrix_csv(args.dump_cost_surface, periods, surface)
    return 0


def bound_rows(cfg) -> list:
    """Rows of the bound report for the configured pulse and period."""
    pulse = make_gaussian_pulse(cfg["Tp"], cfg["Ts"])
    stats = bounds.pulse_stats(pulse)
    N, Ts, T, A = cfg["N"], cfg["Ts"], cfg["T"], cfg["A"]
    sigma2 = _sigma2_from(cfg, pulse)
    if not sigma2 > 0:
        raise ConfigError("bounds need sigma2 > 0 (set sigma2 or snr_db)")
    K = cfg["K"] if cfg["K"] is not None else bounds.pulse_count(N, Ts, T)
    rows = []
    try:
        c = bounds.crlb_period_known_shape(stats, K, A, sigma2, N, Ts, T)
        rows.append(("model1", "T", c["exact"], K, sigma2, "exact K-form"))
        rows.append(("model1", "T", c["approx"], K, sigma2, "mean-squared-bandwidth approximation"))
    except ValueError as exc:
        rows.append(("model1", "T", None, K, sigma2, f"error: {exc}"))
    amps = bounds.harmonic_amplitudes(pulse, T, A)
    mh = bounds.crlb_multiharmonic(amps, N, sigma2, T, Ts)
    rows.append(("multiharmonic", "T", mh["var_T"], K, sigma2, f"{len(amps)} pulse-spectrum harmonics"))
    rows.append(("multiharmonic", "psi", mh["var_psi"], K, sigma2, "normalized pitch"))
    info2 = bounds.fim_unknown_shape_closed(pulse, K, sigma2)
    lam = cfg["lambda"]
    if lam is None:
        lam = 1e-8 * np.trace(info2.matrix) / info2.dim
    cov = bounds.regularized_covariance(info2, lam)
    rows.append(("model2", "T", cov[0, 0], K, sigma2, f"Tikhonov lambda={float(lam)!r}"))
    diag = bounds.singularity_diagnostic(info2, pulse)
    rows.append(("model2", "min_eig", diag["min_eig"], K, sigma2, "smallest FIM eigenvalue"))
    rows.append(("model2", "null_residual", diag["null_residual"], K, sigma2, "delay/pulse null direction"))
    return rows


def cmd_bound(args) -> int:
    cfg = load_config(args.config)
    rows = bound_rows(cfg)
    write_rows(sys.stdout, BOUND_HEADER, rows)
    if args.matrix_dir:
        pulse = make_gaussian_pulse(cfg["Tp"], cfg["Ts"])
        d = Path(args.matrix_dir)
        d.mkdir(parents=True, exist_ok=True)
        sigma2, K = rows[0][4], rows[0][3]
        bounds.fim_known_shape_closed(bounds.pulse_stats(pulse), K, cfg["A"], sigma2).to_csv(d / "fim_model1.csv")
        bounds.fim_unknown_shape_closed(pulse, K, sigma2).to_csv(d / "fim_model2.csv")
    return 0


def experiment_config(cfg) -> montecarlo.ExperimentConfig:
    return montecarlo.ExperimentConfig(
        N=cfg["N"], T_low=cfg["T_low"], T_high=cfg["T_high"], Tp=cfg["Tp"], Ts=cfg["Ts"], A=cfg["A"],
        P_R=cfg["P_R"], snr_db_list=tuple(cfg["snr_db_list"]), trials=cfg["trials"],
        master_seed=cfg["master_seed"], estimator_set=tuple(cfg["estimators"]), Kh_max=cfg["Kh_max"],
        order_penalty=cfg["order_penalty"], fft_size=cfg["fft_size"], snr_definition=cfg["snr_definition"],
        snap_to_grid=cfg["snap_to_grid"], grid_T_min=cfg["grid_T_min"], grid_T_max=cfg["grid_T_max"],
    )


def write_bench_outputs(curve, out: Path, factor: float, svg: bool = False) -> list:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        curve.to_csv(fh)
    with open(out / "thresholds.csv", "w", newline="") as fh:
        report = montecarlo.threshold_report(curve, factor)
        write_rows(fh, ("method", "threshold_snr_db", "factor"),
                   [(m, v, factor) for m, v in report.items()])
    with open(out / "plot_data.csv", "w", newline="") as fh:
        write_rows(fh, ("series", "snr_db", "value"), montecarlo.plot_series(curve))
    files = ["results.csv", "thresholds.csv", "plot_data.csv"]
    if svg:
        write_svg(curve, out / "mse.svg")
        files.append("mse.svg")
    return files


def write_svg(curve, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for m in curve.methods:
        ax.semilogy(curve.snr_db, curve.series(m), marker="o", ms=3, label=m)
    ax.semilogy(curve.snr_db, curve.crlb_model1, "k-.", label="CRLB known shape")
    ax.semilogy(curve.snr_db, curve.crlb_mhus, "k:", label="CRLB multiharmonic")
    ax.set_xlabel(f"SNR [dB] ({curve.snr_definition})")
    ax.set_ylabel("MSE of T")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_bench(args) -> int:
    estimators = None
    if args.estimators:
        estimators = [METHOD_FLAGS.get(e.strip().lower(), e.strip().upper()) for e in args.estimators.split(",")]
    cfg = load_config(args.config, master_seed=args.seed, estimators=estimators, P_R=args.pr)
    try:
        exp = experiment_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest("bench", exp.as_dict(), exp.master_seed)
    manifest["snr_definition"] = SNR_DEFINITIONS[exp.snr_definition]

    def progress(done, total):
        if done % max(1, total // 20) == 0 or done == total:
            log.info("trial %d/%d", done, total)

    curve = montecarlo.run(exp, progress=progress, interruptible=True)
    files = write_bench_outputs(curve, out, cfg["threshold_factor"], args.svg)
    thresholds = montecarlo.threshold_report(curve, cfg["threshold_factor"])
    finish_manifest(manifest, out / "manifest.json", complete=curve.complete, outputs=files,
                    trials_completed=int(curve.trials.max(initial=0) + curve.failures.max(initial=0)),
                    thresholds=thresholds)
    for m, v in thresholds.items():
        print(f"{m}: threshold {'none' if v is None else f'{v:g} dB'}")
    return 0 if curve.complete else EXIT_INTERRUPTED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulseperiod", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic pulse-train signal")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--pr", type=int)
    p.add_argument("output")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", help="estimate the period of a signal file")
    p.add_argument("signal")
    p.add_argument("--method", choices=sorted(METHOD_FLAGS), default="ppks")
    p.add_argument("--config")
    p.add_argument("--np", type=int, help="pulse length in samples (PPUS)")
    p.add_argument("--pr", type=int, help="resampling factor (PPKS/PPUS)")
    p.add_argument("--kh", type=int, help="harmonic count; default selects it from the data")
    p.add_argument("--dump-cost-surface", metavar="PATH")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bound", help="print Cramer-Rao bounds for the configured pulse train")
    p.add_argument("--config")
    p.add_argument("--matrix-dir", help="also write the closed-form FIMs as CSV grids here")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("bench", help="Monte Carlo MSE-vs-SNR study")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--estimators", help=f"comma list from {','.join(sorted(METHOD_FLAGS))}")
    p.add_argument("--pr", type=int)
    p.add_argument("--svg", action="store_true", help="also write mse.svg")
    p.add_argument("output", help="output directory")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PreconditionError as exc:
        print(f"error: estimator precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
