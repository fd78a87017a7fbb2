"""Command-line entry point: ``otfs-chest <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .channel import assemble_G, pilot_columns
from .estimators import EstimatorConfig, check_frame
from .harness import (
    SweepConfig,
    complexity_table,
    measure_complexity,
    psnr_to_pilot_energy,
    run_estimator,
    run_oracle_validation,
    run_sweep,
    sweep_csv,
)
from .io import frame_from_config, parse_list, read_config, read_frame_csv, write_G
from .oracle import cp_samples, heisenberg_rect, isfft, write_waveform
from .estimators import make_pilot_frame
from .scenarios import DEMOS, AircraftScenarioConfig
from .grid import to_matrix


def _cmd_sweep(args) -> int:
    cfg = SweepConfig.from_file(args.config)
    out = args.out or cfg.output_path
    records = run_sweep(cfg, workers=args.workers, output_path=out)
    sys.stdout.write(sweep_csv(cfg, records) if args.out == "-" else f"wrote {len(records)} records to {out}\n")
    return 1 if any(r.error for r in records) else 0


def _cmd_validate(args) -> int:
    cfg = read_config(args.config)
    params = frame_from_config(cfg)
    scen = None
    if "paths" in cfg or "tau_slope_us" in cfg or "rice_k_db" in cfg:
        scen = AircraftScenarioConfig(
            P=int(cfg.get("paths", 5)), K_dB=float(cfg.get("rice_k_db", 15.0)),
            tau_max=params.tau_max, tau_slope=float(cfg.get("tau_slope_us", 1.0)) * 1e-6, nu_max=params.nu_max,
        )
    report = run_oracle_validation(params, tuple(parse_list(args.q, int)), scen, seed=int(cfg.get("seed", 0)), frame=args.frame)
    sys.stdout.write(report.table())
    return 0 if report.ok else 1


def _cmd_demo(args) -> int:
    params, channel = DEMOS[args.scenario]()
    if args.psnr_db is not None:
        params = params.replace(E_p=psnr_to_pilot_energy(args.psnr_db, params))
    x = channel.h @ pilot_columns(channel.tau, channel.nu, params)
    if args.psnr_db is not None:
        rng = np.random.default_rng(args.seed)
        x = x + np.sqrt(params.MN / 2) * (rng.standard_normal(params.MN) + 1j * rng.standard_normal(params.MN))
    mag = np.abs(to_matrix(x, params.M, params.N))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "k", "magnitude"])
        for k in range(params.N):
            for l in range(params.M):
                w.writerow([l, k, f"{mag[l, k]:.9e}"])
    if args.g_out:
        write_G(args.g_out, assemble_G(channel, params).toarray(), params.M, params.N)
    if args.waveform_out:
        w = heisenberg_rect(isfft(make_pilot_frame(params).matrix), args.q, params, cp_len=cp_samples(params, args.q))
        write_waveform(args.waveform_out, w)
    return 0


def _cmd_complexity(args) -> int:
    cfg = read_config(args.config)
    params = frame_from_config(cfg)
    est = EstimatorConfig(m_tau=int(cfg.get("m_tau", 6)), n_nu=int(cfg.get("n_nu", 6)), T_max=int(cfg.get("T_max", 15)), epsilon=float(cfg.get("epsilon", 1e-4)))
    rows = []
    for name in ("mmle", "tse"):
        rows += measure_complexity(name, params, est, psnr_db=float(cfg.get("psnr_db", 20.0)), seed=int(cfg.get("seed", 0)))
    sys.stdout.write(complexity_table(rows))
    return 0


def _cmd_estimate(args) -> int:
    cfg = read_config(args.config) if args.config else {}
    params = frame_from_config(cfg)
    psnr = args.psnr_db if args.psnr_db is not None else (float(cfg["psnr_db"]) if "psnr_db" in cfg else None)
    if psnr is not None:
        params = params.replace(E_p=psnr_to_pilot_energy(psnr, params))
    x = check_frame(read_frame_csv(args.frame, params), params)
    est_cfg = EstimatorConfig(m_tau=int(cfg.get("m_tau", 6)), n_nu=int(cfg.get("n_nu", 6)), T_max=int(cfg.get("T_max", 15)), epsilon=float(cfg.get("epsilon", 1e-4)))
    est = run_estimator(args.estimator, x, params, est_cfg, N0=float(cfg.get("N0", 1.0)))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["h_re", "h_im", "tau_s", "nu_hz"])
        for h, t, v in zip(est.h_hat, est.tau_hat, est.nu_hat):
            w.writerow([repr(h.real), repr(h.imag), repr(t), repr(v)])
    finally:
        if args.out:
            out.close()
    if args.g_out:
        write_G(args.g_out, assemble_G(est, params).toarray(), params.M, params.N)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="otfs-chest", description="OTFS delay-Doppler channel estimation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="Monte Carlo NMSE sweep to CSV")
    s.add_argument("--config", required=True, help="key = value file, or a previous sweep CSV")
    s.add_argument("--out", help="output CSV (default: output_path from the config; '-' for stdout)")
    s.add_argument("--workers", type=int, help="worker processes (capped by OTFS_THREADS)")
    s.set_defaults(func=_cmd_sweep)

    s = sub.add_parser("validate-oracle", help="compare the waveform chain with the closed form")
    s.add_argument("--config", required=True)
    s.add_argument("--q", default="8,16,32", help="comma-separated oversampling factors")
    s.add_argument("--frame", choices=("pilot", "random"), default="pilot")
    s.set_defaults(func=_cmd_validate)

    s = sub.add_parser("demo", help="write the |x_p| map of a demo channel")
    s.add_argument("--scenario", required=True, choices=sorted(DEMOS))
    s.add_argument("--out", required=True)
    s.add_argument("--psnr-db", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--g-out", help="also dump G in OTFSG1 format")
    s.add_argument("--waveform-out", help="also dump the transmitted pilot waveform (float64 I/Q)")
    s.add_argument("--q", type=int, default=8, help="oversampling for --waveform-out")
    s.set_defaults(func=_cmd_demo)

    s = sub.add_parser("complexity", help="operation-count growth under parameter doubling")
    s.add_argument("--config", required=True)
    s.set_defaults(func=_cmd_complexity)

    s = sub.add_parser("estimate", help="estimate paths from a received DD frame CSV (l,k,re,im)")
    s.add_argument("--frame", required=True)
    s.add_argument("--estimator", required=True, choices=("mmle", "tse", "impulse"))
    s.add_argument("--config", help="frame and estimator settings")
    s.add_argument("--psnr-db", type=float, help="pilot SNR used to set E_p (N0 = 1)")
    s.add_argument("--out", help="output CSV (default stdout)")
    s.add_argument("--g-out", help="also dump the reconstructed G in OTFSG1 format")
    s.set_defaults(func=_cmd_estimate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"otfs-chest: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
