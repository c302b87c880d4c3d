"""Command-line interface.

    unipc run --config study.json --out results.csv [--format csv|json]
              [--seed N] [--jobs N]
    unipc fit --in results.csv
    unipc selftest

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from . import coeffs
from .errors import (
    DomainError,
    FitError,
    NumericError,
    ReferenceAccuracyError,
    SingularSystemError,
    ValidationError,
)
from .schedule import NoiseSchedule
from .study import ConvergenceStudy, emit, fit_order, run_study


def _cmd_run(args) -> int:
    with open(args.config) as fh:
        cfg = json.load(fh)
    if args.seed is not None:
        cfg["seed"] = args.seed
    study = ConvergenceStudy.from_json(cfg)
    run_study(study, jobs=args.jobs)
    emit(study, args.out, fmt=args.format)
    print(f"wrote {len(study.results)} rows to {args.out}")
    for config, fit, reason in study.fits():
        if fit is not None:
            print(
                f"{config.name()} ({config.variant}, {config.bh}, {config.prediction}, "
                f"corrector={config.corrector}): order={fit.slope:.3f} "
                f"r2={fit.r_squared:.5f} n={fit.n_used}"
            )
        else:
            print(f"{config.name()}: unfittable ({reason})")
    return 0


def _cmd_fit(args) -> int:
    with open(args.infile) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"no data rows in {args.infile}")
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row[k] for k in ("solver", "order", "variant", "bh", "prediction", "corrector"))
        groups.setdefault(key, []).append(row)
    failures = 0
    for key, members in groups.items():
        members.sort(key=lambda r: int(r["M"]))
        Ms = [int(r["M"]) for r in members]
        errs = [float(r["error"]) for r in members]
        label = f"{key[0]} ({key[2]}, {key[3]}, {key[4]}, corrector={key[5]})"
        try:
            fit = fit_order(Ms, errs)
            print(f"{label}: order={fit.slope:.3f} intercept={fit.intercept:.3f} "
                  f"r2={fit.r_squared:.5f} n={fit.n_used}")
        except FitError as exc:
            print(f"{label}: unfittable ({exc})")
            failures += 1
    return 3 if failures else 0


# -- selftest ----------------------------------------------------------------


def _simpson(f, a: float, b: float, panels: int) -> float:
    xs = np.linspace(a, b, 2 * panels + 1)
    ys = np.array([f(x) for x in xs])
    h = (b - a) / (2 * panels)
    return float(h / 3.0 * (ys[0] + ys[-1] + 4.0 * ys[1::2].sum() + 2.0 * ys[2:-1:2].sum()))


def _selftest_quadrature() -> tuple[bool, str]:
    worst = 0.0
    for h in (0.1, 0.5, 1.0, 2.0):
        for k in range(1, 6):
            ref_v = _simpson(
                lambda r: math.exp((1.0 - r) * h) * r ** (k - 1) / math.factorial(k - 1),
                0.0, 1.0, 10_000,
            )
            ref_p = _simpson(
                lambda r: math.exp((r - 1.0) * h) * r ** (k - 1) / math.factorial(k - 1),
                0.0, 1.0, 10_000,
            )
            worst = max(worst, abs(coeffs.varphi(k, h) - ref_v), abs(coeffs.psi(k, h) - ref_p))
    return worst < 1e-9, f"max |basis - quadrature| = {worst:.3e}"


def _selftest_residuals() -> tuple[bool, str]:
    worst = 0.0
    drift = 0.0
    for h in (0.2, 0.5, 1.0):
        for p in (1, 2, 3):
            r = [-float(p - m) for m in range(1, p)] + [1.0]  # e.g. p=3: [-2, -1, 1]
            for bh in ("b1", "b2"):
                for prediction in ("noise", "data"):
                    system = coeffs.solve_weights(p, h, r, bh=bh, prediction=prediction)
                    worst = max(worst, system.residual())
        for bh in ("b1", "b2"):
            w1 = coeffs.solve_weights(1, h, [1.0], bh=bh).weights[0]
            drift = max(drift, abs(w1 - 0.5) / h)
    ok = worst < 1e-12 and drift <= 1.0
    return ok, f"max residual = {worst:.3e}, |w1 - 1/2|/h <= {drift:.3f}"


def _selftest_varying() -> tuple[bool, str]:
    worst = 0.0
    for p in range(1, 6):
        r = np.array(sorted(-float(m) for m in range(1, p)) + [1.0])
        vcm = coeffs.varying_coefficient_matrix(p, r)
        worst = max(worst, float(np.max(np.abs(vcm.c_matrix() @ vcm.A - np.eye(p)))))
    return worst < 1e-12, f"max |C A - I| = {worst:.3e}"


def _selftest_roundtrip() -> tuple[bool, str]:
    worst = 0.0
    rng = np.random.default_rng(0)
    for spec in ({"kind": "vp-linear"}, {"kind": "vp-cosine"}):
        sched = NoiseSchedule.from_json(spec)
        for t in rng.uniform(sched.t_end, sched.t_start, size=200):
            worst = max(worst, abs(sched.t_of_lambda(sched.lam(float(t))) - float(t)))
    return worst < 1e-10, f"max |t_of_lambda(lambda(t)) - t| = {worst:.3e}"


def _cmd_selftest(args) -> int:
    checks = [
        ("basis-vs-quadrature", _selftest_quadrature),
        ("weight-residuals", _selftest_residuals),
        ("varying-coefficient-inverse", _selftest_varying),
        ("schedule-roundtrip", _selftest_roundtrip),
    ]
    failed = 0
    for name, fn in checks:
        ok, detail = fn()
        print(f"selftest {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        failed += 0 if ok else 1
    return 3 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unipc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a convergence study from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--jobs", type=int, default=1)
    run.set_defaults(func=_cmd_run)

    fit = sub.add_parser("fit", help="fit convergence orders from a results CSV")
    fit.add_argument("--in", dest="infile", required=True)
    fit.set_defaults(func=_cmd_fit)

    selftest = sub.add_parser("selftest", help="run coefficient and quadrature cross-checks")
    selftest.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ReferenceAccuracyError, FitError, SingularSystemError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
