"""Variance-preserving noise schedules and time discretizations.

A schedule defines the forward-process marginal q(x_t | x_0) =
N(alpha_t x_0, sigma_t^2 I) on continuous time t in [t_end, t_start],
with alpha_t^2 + sigma_t^2 = 1.  The half log-SNR

    lambda_t = log(alpha_t / sigma_t)

is strictly decreasing in t and is the integration variable used by the
solvers; every schedule therefore exposes both lambda(t) and its inverse
t_of_lambda.  t_end is clipped away from 0 because lambda diverges there.

Two families are provided:

  vp-linear: log alpha_t = -t^2 (beta_max - beta_min)/4 - t beta_min/2,
             with a closed-form inverse for t_of_lambda.
  vp-cosine: log alpha_t = log cos(pi/2 (t+s)/(1+s)) - log cos(pi/2 s/(1+s)),
             inverted by safeguarded bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, ValidationError

SCHEDULE_KINDS = ("vp-linear", "vp-cosine")
SKIP_KINDS = ("uniform-lambda", "uniform-time", "quadratic-time")

# Slack for range checks: round-tripped times may land a few ulp outside.
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable VP noise schedule over [t_end, t_start]."""

    kind: str = "vp-linear"
    beta_min: float = 0.1
    beta_max: float = 20.0
    cosine_s: float = 0.008
    t_start: float = 1.0
    t_end: float = 1e-3

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 < self.t_end < self.t_start:
            raise ValidationError("need 0 < t_end < t_start")
        if self.kind == "vp-linear" and not 0.0 < self.beta_min < self.beta_max:
            raise ValidationError("need 0 < beta_min < beta_max")
        if self.kind == "vp-cosine" and self.t_start >= 1.0:
            raise ValidationError("vp-cosine needs t_start < 1 (alpha vanishes at t=1)")

    @classmethod
    def from_json(cls, spec: dict) -> "NoiseSchedule":
        """Build from a JSON-style dict, e.g. {"kind": "vp-linear", "beta_min": 0.1, ...}."""
        spec = dict(spec)
        kind = spec.pop("kind", "vp-linear")
        if kind == "vp-cosine":
            spec.setdefault("t_start", 0.9946)
        known = {"beta_min", "beta_max", "cosine_s", "t_start", "t_end"}
        extra = set(spec) - known
        if extra:
            raise ValidationError(f"unknown schedule fields {sorted(extra)}")
        spec["cosine_s"] = spec.pop("cosine_s", 0.008)
        return cls(kind=kind, **spec)

    def to_json(self) -> dict:
        if self.kind == "vp-linear":
            return {
                "kind": self.kind,
                "beta_min": self.beta_min,
                "beta_max": self.beta_max,
                "t_start": self.t_start,
                "t_end": self.t_end,
            }
        return {
            "kind": self.kind,
            "cosine_s": self.cosine_s,
            "t_start": self.t_start,
            "t_end": self.t_end,
        }

    # -- forward-process coefficients ------------------------------------

    def _check_t(self, t: float) -> float:
        t = float(t)
        if not self.t_end - _EDGE_TOL <= t <= self.t_start + _EDGE_TOL:
            raise DomainError(
                f"t={t} outside usable range [{self.t_end}, {self.t_start}]"
            )
        return min(max(t, self.t_end), self.t_start)

    def log_alpha(self, t: float) -> float:
        t = self._check_t(t)
        if self.kind == "vp-linear":
            return -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min
        s = self.cosine_s
        return math.log(math.cos(0.5 * math.pi * (t + s) / (1.0 + s))) - math.log(
            math.cos(0.5 * math.pi * s / (1.0 + s))
        )

    def alpha(self, t: float) -> float:
        return math.exp(self.log_alpha(t))

    def sigma(self, t: float) -> float:
        # sigma^2 = 1 - alpha^2, via expm1 to keep precision near alpha ~ 1
        return math.sqrt(-math.expm1(2.0 * self.log_alpha(t)))

    def lam(self, t: float) -> float:
        """Half log-SNR lambda_t = log(alpha_t / sigma_t)."""
        la = self.log_alpha(t)
        return la - 0.5 * math.log(-math.expm1(2.0 * la))

    def alpha_sigma_lambda(self, t: float) -> tuple[float, float, float]:
        la = self.log_alpha(t)
        sig2 = -math.expm1(2.0 * la)
        return math.exp(la), math.sqrt(sig2), la - 0.5 * math.log(sig2)

    @cached_property
    def lambda_start(self) -> float:
        return self.lam(self.t_start)

    @cached_property
    def lambda_end(self) -> float:
        return self.lam(self.t_end)

    # -- inverse map -----------------------------------------------------

    def t_of_lambda(self, lam: float) -> float:
        """Invert lambda(t); closed form for vp-linear, bisection otherwise."""
        lam = float(lam)
        lo, hi = self.lambda_start, self.lambda_end
        if not lo - _EDGE_TOL <= lam <= hi + _EDGE_TOL:
            raise DomainError(f"lambda={lam} outside achievable range [{lo}, {hi}]")
        # Exact endpoints: lambda(t_end) must map back to t_end itself.
        if lam >= hi:
            return self.t_end
        if lam <= lo:
            return self.t_start
        if self.kind == "vp-linear":
            # Solve (db/4) t^2 + (beta_min/2) t + log_alpha = 0 for the positive root,
            # rationalized for stability; log(1+e^{-2 lam}) = -2 log_alpha.
            db = self.beta_max - self.beta_min
            tmp = 2.0 * db * np.logaddexp(-2.0 * lam, 0.0)
            return float(tmp / ((math.sqrt(self.beta_min**2 + tmp) + self.beta_min) * db))
        return self._t_of_lambda_bisect(lam)

    def _t_of_lambda_bisect(self, lam: float, tol: float = 1e-15) -> float:
        """Safeguarded bisection on the monotone map t -> lambda(t).

        Iterates to float resolution so that grid lambdas re-derived from
        the returned t stay within 1e-10 even where dlambda/dt is steep.
        """
        lo, hi = self.t_end, self.t_start  # lambda decreasing: lam(lo) >= lam >= lam(hi)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if self.lam(mid) > lam:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    # -- ODE coefficients --------------------------------------------------

    def drift_diffusion(self, t: float) -> tuple[float, float]:
        """Drift f(t) = d log alpha/dt and squared diffusion g^2(t).

        g^2 = d sigma^2/dt - 2 f sigma^2, which collapses to -2 f for VP
        schedules since alpha^2 + sigma^2 = 1.
        """
        t = self._check_t(t)
        if self.kind == "vp-linear":
            f = -0.5 * (self.beta_min + (self.beta_max - self.beta_min) * t)
        else:
            s = self.cosine_s
            f = -0.5 * math.pi / (1.0 + s) * math.tan(0.5 * math.pi * (t + s) / (1.0 + s))
        return f, -2.0 * f


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing times t_0 > ... > t_M with their lambdas."""

    times: np.ndarray
    lambdas: np.ndarray
    skip_kind: str

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        lambdas = np.asarray(self.lambdas, dtype=float)
        if times.ndim != 1 or times.shape != lambdas.shape or len(times) < 2:
            raise ValidationError("times and lambdas must be equal-length 1-d arrays")
        if not np.all(np.diff(times) < 0):
            raise ValidationError("grid times must be strictly decreasing")
        if not np.all(np.diff(lambdas) > 0):
            raise ValidationError("grid lambdas must be strictly increasing")
        times.setflags(write=False)
        lambdas.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "lambdas", lambdas)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def num_steps(self) -> int:
        return len(self.times) - 1

    def step_sizes(self) -> np.ndarray:
        """h_i = lambda_{t_i} - lambda_{t_{i-1}}, all positive."""
        return np.diff(self.lambdas)


def make_time_grid(sched: NoiseSchedule, M: int, skip_kind: str = "uniform-lambda") -> TimeGrid:
    """Discretize [t_end, t_start] into M steps (M+1 nodes), descending in t."""
    if M < 1:
        raise DomainError(f"need M >= 1 steps, got {M}")
    if skip_kind not in SKIP_KINDS:
        raise ValidationError(f"unknown skip kind {skip_kind!r}")
    if skip_kind == "uniform-lambda":
        lambdas = np.linspace(sched.lambda_start, sched.lambda_end, M + 1)
        times = np.array([sched.t_of_lambda(l) for l in lambdas])
        times[0], times[-1] = sched.t_start, sched.t_end
    elif skip_kind == "uniform-time":
        times = np.linspace(sched.t_start, sched.t_end, M + 1)
    else:  # quadratic-time: uniform in sqrt(t)
        roots = np.linspace(math.sqrt(sched.t_start), math.sqrt(sched.t_end), M + 1)
        times = roots**2
        times[0], times[-1] = sched.t_start, sched.t_end
    if skip_kind != "uniform-lambda":
        lambdas = np.array([sched.lam(t) for t in times])
    return TimeGrid(times=times, lambdas=lambdas, skip_kind=skip_kind)
