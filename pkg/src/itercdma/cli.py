"""Command-line experiment runner.

Each subcommand reproduces one experiment family at desk scale and drops
CSV/JSON results plus a run manifest (configuration hash, master seed,
package version) into the output directory:

    itercdma fig2        estimation-error variance versus coherence time
    itercdma fig3        detector output statistics and error-rate sweep
    itercdma gcurve      Monte Carlo decoder characteristic
    itercdma capacity    max-load search across receiver modes
    itercdma fixedpoint  scalar-map analysis from a stored decoder curve
    itercdma rmt         spectral-moment comparison of the code models
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, rmt
from .codec import CodecSpec, CodedBpskSource, estimate_gcurve, make_codec
from .codec.gcurve import GCurve
from .config import SystemConfig, derive_stream, noise_var_from_snr_db
from .detector import measure_pic_stats
from .estimator import empirical_estimation_stats
from .pipeline import capacity_search
from .pipeline import MODES as PIPELINE_MODES


def _write_manifest(outdir: Path, experiment: str, config, seed: int, extra=None):
    manifest = {
        "experiment": experiment,
        "version": __version__,
        "master_seed": seed,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if config is not None:
        manifest["config"] = {k: getattr(config, k) for k in
                              ("n_users", "spreading_gain", "n_paths",
                               "coherence_time", "n_training", "noise_var",
                               "code_model", "seed")}
        manifest["config_hash"] = config.digest()
    if extra:
        manifest.update(extra)
    with open(outdir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _base_config(args, **defaults) -> SystemConfig:
    if args.config:
        cfg = SystemConfig.from_file(args.config)
    else:
        cfg = SystemConfig(**defaults)
    if args.seed is not None:
        cfg = SystemConfig(**{**cfg.__dict__, "seed": args.seed})
    return cfg


def cmd_fig2(args) -> int:
    cfg = _base_config(args, n_users=20, spreading_gain=100, n_paths=5,
                       coherence_time=10, noise_var=noise_var_from_snr_db(5.0),
                       code_model="shifted", seed=20)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    m_values = [int(v) for v in args.coherence_times.split(",")]
    rows = []
    for m in m_values:
        cfg_m = SystemConfig(**{**cfg.__dict__, "coherence_time": m})
        stats = empirical_estimation_stats(cfg_m, args.error_rate, args.trials,
                                           realizations=args.realizations)
        pred_f = analysis.feedback_estimate_variance(
            args.error_rate, cfg_m.load, cfg_m.n_paths, m, 0.0)
        pred_n = cfg_m.noise_var / m
        rows.append([m, args.error_rate, stats.delta_f, pred_f,
                     stats.delta_n, pred_n,
                     stats.mean_bias_ratio.real, 2.0 * args.error_rate])
        print(f"M={m:4d}  feedback-part {stats.delta_f:.3e} (pred {pred_f:.3e})  "
              f"noise-part {stats.delta_n:.3e} (pred {pred_n:.3e})")
    with open(outdir / "estimation_variance.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["M", "Pe", "Delta_f_emp", "Delta_f_pred",
                         "Delta_n_emp", "Delta_n_pred", "bias_emp", "bias_pred"])
        writer.writerows(rows)
    _write_manifest(outdir, "fig2", cfg, cfg.seed,
                    {"coherence_times": m_values, "trials": args.trials})
    return 0


def cmd_fig3(args) -> int:
    cfg = _base_config(args, n_users=30, spreading_gain=30, n_paths=5,
                       coherence_time=50, noise_var=noise_var_from_snr_db(10.0),
                       code_model="independent", seed=30)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for snr_db in [float(v) for v in args.snrs_db.split(",")]:
        cfg_s = SystemConfig(**{**cfg.__dict__,
                                "noise_var": noise_var_from_snr_db(snr_db)})
        for pe in [float(v) for v in args.error_rates.split(",")]:
            stats = measure_pic_stats(cfg_s, pe, frames=args.frames,
                                      realizations=args.realizations)
            delta_a = analysis.feedback_estimate_variance(
                pe, cfg_s.load, cfg_s.n_paths, cfg_s.coherence_time,
                cfg_s.noise_var)
            sig_pred = analysis.residual_interference_variance(
                delta_a, cfg_s.load, cfg_s.n_paths, pe, cfg_s.noise_var)
            model = analysis.pic_output_model(pe, delta_a, cfg_s.n_paths, sig_pred)
            rows.append([pe, snr_db, stats.interference_power, sig_pred,
                         stats.gain, model.gain, stats.ser_sim, stats.ser_gauss])
            print(f"SNR={snr_db:4.1f}dB Pe={pe:.3f}  sigmaI2 {stats.interference_power:.4f} "
                  f"(pred {sig_pred:.4f})  SER {stats.ser_sim:.4f} "
                  f"(gauss {stats.ser_gauss:.4f})")
    with open(outdir / "detector_stats.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Pe", "snr_db", "sigmaI_emp", "sigmaI_pred",
                         "gain_emp", "gain_pred", "ser_sim", "ser_gauss"])
        writer.writerows(rows)
    _write_manifest(outdir, "fig3", cfg, cfg.seed, {"frames": args.frames})
    return 0


def _codec_spec(name: str) -> CodecSpec:
    if name == "conv":
        return CodecSpec()
    if name == "turbo":
        return CodecSpec.turbo()
    raise SystemExit(f"unknown codec {name!r} (use conv or turbo)")


def cmd_gcurve(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = _codec_spec(args.codec)
    codec = make_codec(spec)
    lo, hi, count = (float(x) for x in args.grid.split(":"))
    grid = np.linspace(lo, hi, int(count))
    rng = derive_stream(args.seed or 0, f"gcurve/{args.codec}", 0)
    curve = estimate_gcurve(CodedBpskSource(codec), grid, rng,
                            target_errors=args.target_errors,
                            max_codewords=args.max_codewords,
                            label=f"{args.codec} {spec.digest()}")
    path = outdir / f"gcurve_{args.codec}.csv"
    curve.save_csv(path)
    print(f"wrote {path}  (domain up to {curve.sigma_I_max:.3f}, "
          f"max slope {curve.max_slope:.3f})")
    _write_manifest(outdir, "gcurve", None, args.seed or 0,
                    {"codec": args.codec, "codec_hash": spec.digest(),
                     "grid": [lo, hi, int(count)]})
    return 0


def cmd_capacity(args) -> int:
    cfg = _base_config(args, n_users=1, spreading_gain=32, n_paths=5,
                       coherence_time=10, n_training=2,
                       noise_var=noise_var_from_snr_db(5.0),
                       code_model="independent", seed=10)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    codec = make_codec(_codec_spec(args.codec))
    g = GCurve.load_csv(args.gcurve) if args.gcurve else None
    modes = args.modes.split(",")
    rows = []
    for m in [int(v) for v in args.coherence_times.split(",")]:
        frac = cfg.training_fraction if cfg.coherence_time else 0.2
        cfg_m = SystemConfig(**{**cfg.__dict__, "coherence_time": m,
                                "n_training": max(1, round(frac * m))})
        for mode in modes:
            if mode not in PIPELINE_MODES:
                raise SystemExit(f"unknown mode {mode!r}")
            result = capacity_search(cfg_m, codec, mode, target_ber=args.target_ber,
                                     g=g, trials=args.trials,
                                     iterations=args.iterations)
            rows.append([m, mode, result.max_load])
            print(f"M={m:3d}  {mode:13s}  beta_max = {result.max_load:.2f}")
    with open(outdir / "capacity.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["M", "mode", "beta_max"])
        writer.writerows(rows)
    _write_manifest(outdir, "capacity", cfg, cfg.seed,
                    {"codec": args.codec, "modes": modes,
                     "target_ber": args.target_ber})
    return 0


def cmd_fixedpoint(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    g = GCurve.load_csv(args.gcurve)
    noise_var = (noise_var_from_snr_db(args.snr_db) if args.snr_db is not None
                 else args.noise_var)
    coeffs = analysis.map_coefficients(noise_var, args.load, args.paths,
                                       args.coherence_time)
    report = analysis.iterate_map(g, coeffs, start=args.start,
                                  max_iter=args.max_iter)
    uniqueness = analysis.check_uniqueness(g, coeffs.d1, gamma=0.999)
    payload = {
        "D0": coeffs.d0,
        "D1": coeffs.d1,
        "gamma": report.contraction_modulus,
        "certified": report.banach_certified,
        "fixed_point": report.fixed_point,
        "iterations": report.iterations,
        "converged": report.converged,
        "left_domain": report.left_domain,
        "unique_fixed_point_certified": uniqueness.certified,
        "trace": report.trace.tolist(),
    }
    path = outdir / "fixedpoint.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
    print(f"D0={coeffs.d0:.5f} D1={coeffs.d1:.5f} fixed_point={report.fixed_point} "
          f"certified={report.banach_certified}")
    _write_manifest(outdir, "fixedpoint", None, args.seed or 0,
                    {"gcurve": str(args.gcurve)})
    return 0


def cmd_rmt(args) -> int:
    cfg = _base_config(args, n_users=40, spreading_gain=100, n_paths=5,
                       coherence_time=10, seed=40)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    report = rmt.empirical_eigen_moments(cfg, max_order=args.max_order,
                                         trials=args.trials)
    path = outdir / "rmt_moments.csv"
    report.save_csv(path)
    for i, m in enumerate(report.orders):
        print(f"m={int(m)}  analytic {report.analytic[i]:.5f}  "
              f"independent {report.empirical_independent[i]:.5f}  "
              f"shifted {report.empirical_shifted[i]:.5f}")
    _write_manifest(outdir, "rmt", cfg, cfg.seed, {"trials": args.trials})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="itercdma", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--config", default=None, help="flat key=value config file")

    p = sub.add_parser("fig2", help="estimation variance vs coherence time")
    common(p)
    p.add_argument("--coherence-times", default="10,20,30,40,50")
    p.add_argument("--error-rate", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--realizations", type=int, default=40)
    p.set_defaults(func=cmd_fig2)

    p = sub.add_parser("fig3", help="detector statistics and SER sweep")
    common(p)
    p.add_argument("--snrs-db", default="10")
    p.add_argument("--error-rates", default="0.05,0.1")
    p.add_argument("--frames", type=int, default=70)
    p.add_argument("--realizations", type=int, default=5)
    p.set_defaults(func=cmd_fig3)

    p = sub.add_parser("gcurve", help="estimate the decoder characteristic")
    common(p)
    p.add_argument("--codec", default="conv", choices=("conv", "turbo"))
    p.add_argument("--grid", default="0.2:4.0:16", help="lo:hi:count of 1/SINR values")
    p.add_argument("--target-errors", type=int, default=100)
    p.add_argument("--max-codewords", type=int, default=400)
    p.set_defaults(func=cmd_gcurve)

    p = sub.add_parser("capacity", help="max-load search per receiver mode")
    common(p)
    p.add_argument("--codec", default="conv", choices=("conv", "turbo"))
    p.add_argument("--modes", default="iterative,lmmse_only,perfect_init,perfect_csi")
    p.add_argument("--coherence-times", default="10,20")
    p.add_argument("--target-ber", type=float, default=1e-3)
    p.add_argument("--trials", type=int, default=2)
    p.add_argument("--iterations", type=int, default=6)
    p.add_argument("--gcurve", default=None, help="stored curve for map predictions")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("fixedpoint", help="scalar-map analysis from a stored curve")
    common(p)
    p.add_argument("--gcurve", required=True)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--noise-var", type=float, default=0.3162)
    p.add_argument("--load", type=float, default=0.5)
    p.add_argument("--paths", type=int, default=5)
    p.add_argument("--coherence-time", type=int, default=20)
    p.add_argument("--start", type=float, default=0.3)
    p.add_argument("--max-iter", type=int, default=100)
    p.set_defaults(func=cmd_fixedpoint)

    p = sub.add_parser("rmt", help="spectral-moment comparison of code models")
    common(p)
    p.add_argument("--max-order", type=int, default=4)
    p.add_argument("--trials", type=int, default=50)
    p.set_defaults(func=cmd_rmt)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
