"""Command line interface: ``memstab <verb> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .control import GainOperator, admissible_shift, spectral_split
from .dynamics import simulate
from .errors import MemstabError
from .experiment import (
    DEFAULT_REGION,
    ExperimentSpec,
    RunConfig,
    bundled_spec,
    initial_from_table,
    load_records,
    report,
    run_experiment,
)
from .io import atomic_write_text, csv_text
from .spectral import CoupledSpectrum, FourierBasis, PhysicalParams, complex_window
from .verify import format_table, run_suite

log = logging.getLogger("memstab")


def _params_from_args(args) -> PhysicalParams:
    if args.config:
        return RunConfig.load(args.config).params
    return PhysicalParams(args.eta, args.kappa, args.lambda_, args.nu)


def cmd_spectrum(args) -> int:
    params = _params_from_args(args)
    cutoff = RunConfig.load(args.config).cutoff if args.config and args.cutoff is None else (args.cutoff or 6)
    basis = FourierBasis(cutoff)
    spec = CoupledSpectrum.from_basis(params, basis)
    sig, first = np.unique(basis.sigma, return_index=True)
    ev = spec.eigenvalues[first]
    unstable = set()
    if params.nu > 0:
        nu = admissible_shift(spec, params.nu)
        unstable = {i for i, _ in spectral_split(spec, nu)[0]}
    rows = []
    for s, idx, (mp, mm) in zip(sig, first, ev):
        rows.append((s, int(np.sum(basis.sigma == s)), mp.real, mp.imag, mm.real, mm.imag, idx in unstable))
    header = ("sigma", "multiplicity", "re_mu_plus", "im_mu_plus", "re_mu_minus", "im_mu_minus", "unstable")
    text = csv_text(header, rows)
    lo, hi = complex_window(params)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    print(f"# nu0 = {params.nu0():.12g}; complex window sigma in ({lo:.12g}, {hi:.12g})", file=sys.stderr)
    return 0


def cmd_gain(args) -> int:
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig.from_dict(
            {
                "params": {"eta": args.eta, "kappa": args.kappa, "lambda": args.lambda_, "nu": args.nu},
                "discretization": {"cutoff": args.cutoff or 6},
                "control": {"region": args.region or DEFAULT_REGION},
            }
        )
    gain = cfg.synthesize_gain(cross_check=not args.no_cross_check)
    gain.save(args.out)
    print(
        f"nu={gain.params.nu:.12g} residual={gain.residual:.3e} "
        f"abscissa={gain.closed_loop_abscissa:.6f} crosscheck={gain.crosscheck}"
    )
    return 0


def cmd_steady(args) -> int:
    cfg = RunConfig.load(args.config)
    st = cfg.steady_state()
    if st is None:
        raise SystemExit("config has no [steady] forcing")
    atomic_write_text(args.out, json.dumps(st.to_dict(cfg.basis)))
    print(f"residual={st.residual:.3e} iterations={st.iterations}")
    return 0


def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    gain = None
    if cfg.control_enabled:
        path = args.gain or (cfg.resolve(cfg.gain_path) if cfg.gain_path else None)
        gain = GainOperator.load(path) if path else cfg.synthesize_gain(cross_check=False)
    sim = cfg.simulation(gain, cfg.steady_state())
    x0 = initial_from_table(cfg.initial, cfg.basis, cfg.base)
    res = simulate(sim, x0)
    atomic_write_text(args.out, res.series.to_csv())
    print(f"wrote {len(res.series)} samples to {args.out}")
    return 0


def cmd_verify(args) -> int:
    checks = run_suite(args.suite, seed=args.seed)
    sys.stdout.write(format_table(checks))
    return 0 if all(c.passed for c in checks) else 1


def cmd_experiment(args) -> int:
    path = Path(args.spec)
    if not path.exists():
        path = bundled_spec(args.spec)
    spec = ExperimentSpec.load(path, output_dir=args.out)
    records = run_experiment(spec, workers=args.workers)
    text, _, code = report(records)
    sys.stdout.write(text)
    return code


def cmd_report(args) -> int:
    records = load_records(args.records)
    text, data, code = report(records)
    sys.stdout.write(text)
    if args.json:
        atomic_write_text(args.json, json.dumps(data, indent=2, sort_keys=True))
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memstab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("spectrum", help="eigenvalue table per sigma")
    p.add_argument("--config")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--lambda", dest="lambda_", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--cutoff", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("gain", help="synthesize the Riccati feedback gain")
    p.add_argument("--config")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--lambda", dest="lambda_", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--cutoff", type=int)
    p.add_argument("--region", help="a1,b1,a2,b2 (values may use pi)")
    p.add_argument("--out", required=True)
    p.add_argument("--no-cross-check", action="store_true")
    p.set_defaults(func=cmd_gain)

    p = sub.add_parser("steady", help="solve for the stationary vorticity")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("simulate", help="integrate one run and write series.csv")
    p.add_argument("--config", required=True)
    p.add_argument("--gain")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="oracle cross-checks")
    p.add_argument("--suite", default="all", choices=["all", "spectral", "control", "dynamics"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", help="run a sweep (TOML path or bundled name)")
    p.add_argument("spec", nargs="?", default="decay_vs_nu")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="verdict table for stored records")
    p.add_argument("records")
    p.add_argument("--json")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except (MemstabError, ValueError, FileNotFoundError) as exc:
        print(f"memstab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
