#!/usr/bin/env python3
"""Empirical convergence orders of the predictor-corrector family.

Runs two sweeps on x-free polynomial models against the closed-form
trajectory and prints the fitted global orders:

  warmup          degree-2 model, M = 10..320, plain runs: higher-order
                  methods reproduce a quadratic model exactly once warmed
                  up, so measured slopes are capped by the first-step
                  ramp-up error (about 2 for predictors, 3 with corrector).
  accurate-starts degree-4 model, M = 40..640, first p-1 states seeded
                  from the exact trajectory: every method shows its full
                  order (p for UniP-p, p+1 for UniPC-p).

Usage:
    python3 scripts/order_study.py [--mode warmup|accurate-starts|both]
                                   [--seed N] [--out results.csv]
"""

import argparse
import sys

from unipc import ConvergenceStudy, NoiseSchedule, SolverConfig, SyntheticModel, emit, run_study

CONFIGS = [
    SolverConfig(order=1, corrector="off"),
    SolverConfig(order=2, corrector="off"),
    SolverConfig(order=3, corrector="off"),
    SolverConfig(order=1, corrector="standard"),
    SolverConfig(order=2, corrector="standard"),
    SolverConfig(order=3, corrector="standard"),
    SolverConfig(order=2, corrector="standard", varying_coefficients=True),
]


def build_study(mode: str, seed: int) -> ConvergenceStudy:
    if mode == "warmup":
        model = SyntheticModel.x_free_poly([1.5e-4, -6.0e-4, 2.5e-4], 4)
        steps = [10, 20, 40, 80, 160, 320]
        oracle_starts = False
    else:
        model = SyntheticModel.x_free_poly([4.0e-4, -3.0e-4, 1.6e-4, -8.0e-5, 4.0e-5], 4)
        steps = [40, 80, 160, 320, 640]
        oracle_starts = True
    return ConvergenceStudy(
        model=model,
        schedule=NoiseSchedule(),
        solver_configs=list(CONFIGS),
        step_counts=steps,
        seed=seed,
        oracle_starts=oracle_starts,
    )


def report(study: ConvergenceStudy, title: str) -> None:
    print(f"\n== {title} ==")
    print(f"{'solver':<12} {'corrector':<10} {'order fit':>9} {'r^2':>8} {'n':>3}")
    for config, fit, reason in study.fits():
        if fit is None:
            print(f"{config.name():<12} {config.corrector:<10} unfittable: {reason}")
        else:
            print(f"{config.name():<12} {config.corrector:<10} {fit.slope:9.3f} "
                  f"{fit.r_squared:8.5f} {fit.n_used:3d}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mode", choices=("warmup", "accurate-starts", "both"), default="both")
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--out", default=None, help="optional CSV path (last sweep run)")
    args = parser.parse_args(argv)

    modes = ("warmup", "accurate-starts") if args.mode == "both" else (args.mode,)
    study = None
    for mode in modes:
        study = run_study(build_study(mode, args.seed))
        report(study, f"{mode} sweep (seed {args.seed})")
    if args.out and study is not None:
        emit(study, args.out)
        print(f"\nwrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
