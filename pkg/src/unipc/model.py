"""Model-evaluation contract, synthetic analytic models, and thresholding.

States are flat 1-d float64 arrays; the solver math is dimension-wise so no
richer shape is needed.  A ModelEvaluator wraps any callable (x, t) -> array
together with its parameterization kind ("noise" predicts the noise
component eps, "data" predicts the clean signal x0) and an invocation
counter used for NFE accounting.  The two parameterizations are linked by

    x = alpha_t * x0_pred + sigma_t * eps_pred.

Synthetic families:

  x-free-poly:  eps(x, t) = sum_k c_k lambda_t^k per dimension, independent
                of x.  The sampling ODE then has a closed-form trajectory
                (exact_solution_xfree), giving a machine-precision oracle.
  linear-in-x:  eps(x, t) = kappa * x, Lipschitz in x, integrated by a fine
                reference solver instead.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, ValidationError
from .schedule import NoiseSchedule

PREDICTION_KINDS = ("noise", "data")
MODEL_FAMILIES = ("x-free-poly", "linear-in-x")


class ModelEvaluator:
    """Deterministic, reentrant model callable with NFE accounting."""

    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray], prediction: str, dim: int):
        if prediction not in PREDICTION_KINDS:
            raise ValidationError(f"unknown prediction kind {prediction!r}")
        self._fn = fn
        self.prediction = prediction
        self.dim = int(dim)
        self._count = 0
        self._lock = threading.Lock()

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        with self._lock:
            self._count += 1
        return np.asarray(self._fn(np.asarray(x, dtype=float), float(t)), dtype=float)

    @property
    def eval_count(self) -> int:
        return self._count


@dataclass(frozen=True)
class SyntheticModel:
    """Analytic model spec; instantiate a callable via .evaluator()."""

    family: str
    dim: int
    coeffs: tuple[tuple[float, ...], ...]  # per-dimension polynomial or gain

    def __post_init__(self):
        if self.family not in MODEL_FAMILIES:
            raise ValidationError(f"unknown model family {self.family!r}")
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")
        if len(self.coeffs) != self.dim:
            raise ValidationError("need one coefficient row per dimension")

    @property
    def closed_form(self) -> bool:
        """Whether an exact trajectory is available (x-independent model)."""
        return self.family == "x-free-poly"

    @property
    def degree(self) -> int:
        return max(len(row) for row in self.coeffs) - 1

    @staticmethod
    def _rows(values, dim: int) -> tuple[tuple[float, ...], ...]:
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 0:
            arr = np.full((dim, 1), float(arr))
        elif arr.ndim == 1:
            arr = np.tile(arr, (dim, 1))
        if arr.ndim != 2 or arr.shape[0] != dim:
            raise ValidationError("coefficients must broadcast to one row per dimension")
        return tuple(tuple(row) for row in arr)

    @classmethod
    def x_free_poly(cls, coeffs, dim: int) -> "SyntheticModel":
        return cls(family="x-free-poly", dim=dim, coeffs=cls._rows(coeffs, dim))

    @classmethod
    def linear_in_x(cls, kappa, dim: int) -> "SyntheticModel":
        arr = np.asarray(kappa, dtype=float)
        if arr.ndim == 0:
            arr = np.full(dim, float(arr))
        if arr.ndim != 1 or arr.shape[0] != dim:
            raise ValidationError("linear-in-x takes a single gain per dimension")
        return cls(family="linear-in-x", dim=dim, coeffs=tuple((float(g),) for g in arr))

    @classmethod
    def from_json(cls, spec: dict) -> "SyntheticModel":
        """Build from e.g. {"family": "x-free-poly", "coeffs": [0.3, -1.2, 0.5], "dim": 4}."""
        family = spec.get("family")
        dim = int(spec.get("dim", 1))
        if family == "x-free-poly":
            return cls.x_free_poly(spec["coeffs"], dim)
        if family == "linear-in-x":
            return cls.linear_in_x(spec.get("kappa", spec.get("coeffs")), dim)
        raise ValidationError(f"unknown model family {family!r}")

    def to_json(self) -> dict:
        if self.family == "x-free-poly":
            return {"family": self.family, "coeffs": [list(r) for r in self.coeffs], "dim": self.dim}
        return {"family": self.family, "kappa": [r[0] for r in self.coeffs], "dim": self.dim}

    def evaluator(self, sched: NoiseSchedule | None = None) -> ModelEvaluator:
        """Noise-prediction evaluator; x-free-poly needs the schedule for lambda(t)."""
        if self.family == "x-free-poly":
            if sched is None:
                raise ValidationError("x-free-poly evaluator needs a schedule")
            C = np.asarray(self.coeffs)
            K = C.shape[1]

            def fn(x, t, _C=C, _K=K, _sched=sched):
                lb = _sched.lam(t)
                return _C @ (lb ** np.arange(_K))

            return ModelEvaluator(fn, "noise", self.dim)
        gains = np.asarray([row[0] for row in self.coeffs])

        def fn(x, t, _g=gains):
            return _g * x

        return ModelEvaluator(fn, "noise", self.dim)


def exact_solution_xfree(
    model: SyntheticModel,
    sched: NoiseSchedule,
    x_s: np.ndarray,
    s: float,
    t: float,
) -> np.ndarray:
    """Exact trajectory value x_t given x_s for an x-free polynomial model.

    x_t = (alpha_t/alpha_s) x_s - alpha_t * integral_{lambda_s}^{lambda_t}
    e^{-lambda} eps(lambda) dlambda, with the integral evaluated through the
    closed-form antiderivative of lambda^k e^{-lambda}:

        integral lambda^k e^{-lambda} dlambda = -e^{-lambda} sum_{j<=k} (k!/j!) lambda^j.
    """
    if model.family != "x-free-poly":
        raise DomainError("exact solution requires an x-free polynomial model")
    x_s = np.asarray(x_s, dtype=float)
    la_s, la_t = sched.log_alpha(s), sched.log_alpha(t)
    lam_s, lam_t = sched.lam(s), sched.lam(t)
    if not lam_t > lam_s:
        raise DomainError(f"need t < s in time (lambda increasing), got s={s}, t={t}")

    def antideriv(k: int, lam: float) -> float:
        acc = sum(math.factorial(k) / math.factorial(j) * lam**j for j in range(k + 1))
        return -math.exp(-lam) * acc

    C = np.asarray(model.coeffs)
    deltas = np.array([antideriv(k, lam_t) - antideriv(k, lam_s) for k in range(C.shape[1])])
    integral = C @ deltas
    alpha_t = math.exp(la_t)
    return math.exp(la_t - la_s) * x_s - alpha_t * integral


def convert_parameterization(m: ModelEvaluator, sched: NoiseSchedule) -> ModelEvaluator:
    """Wrap a noise model as a data model (or the inverse), one call per call.

    Outputs satisfy x = alpha_t * x0 + sigma_t * eps identically.
    """
    if m.prediction == "noise":

        def fn(x, t):
            alpha, sig, _ = sched.alpha_sigma_lambda(t)
            return (x - sig * m(x, t)) / alpha

        return ModelEvaluator(fn, "data", m.dim)

    def fn(x, t):
        alpha, sig, _ = sched.alpha_sigma_lambda(t)
        return (x - alpha * m(x, t)) / sig

    return ModelEvaluator(fn, "noise", m.dim)


def dynamic_threshold(x0: np.ndarray, ratio: float = 0.995, floor: float = 1.0) -> np.ndarray:
    """Quantile-clip a data prediction: s = max(floor, ratio-quantile of |x0|),
    then clip to [-s, s] and divide by s."""
    x0 = np.asarray(x0, dtype=float)
    if x0.size == 0:
        raise DomainError("cannot threshold an empty vector")
    if not 0.5 < ratio <= 1.0:
        raise DomainError(f"ratio must lie in (0.5, 1], got {ratio}")
    if floor < 1.0:
        raise DomainError(f"floor must be >= 1, got {floor}")
    s = max(floor, float(np.quantile(np.abs(x0), ratio)))
    return np.clip(x0, -s, s) / s
