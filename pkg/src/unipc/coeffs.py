"""Exponential-integrator basis functions and predictor-corrector weights.

Basis functions (scalar, h > 0):

    varphi_k(h) = integral_0^1 e^{(1-r) h} r^{k-1}/(k-1)! dr     (k >= 1)
    psi_k(h)    = integral_0^1 e^{(r-1) h} r^{k-1}/(k-1)! dr

with varphi_0 = e^h, psi_0 = e^{-h}.  Both satisfy one-term recursions
(varphi_{n+1} = (varphi_n - 1/n!)/h and psi_{n+1} = (1/n! - psi_n)/h) and
the everywhere-convergent series

    varphi_k(h) = sum_{j>=0} h^j / (j+k)!,    psi_k(h) = sum_{j>=0} (-h)^j / (j+k)!.

The recursion amplifies rounding error by 1/h per level, so below
SERIES_CROSSOVER the series (cancellation-free for varphi, benign for psi
at small h) is used instead; above it the recursion is cheap and stable.

Stacked vectors:

    phi_n(h) = h^n n! varphi_{n+1}(h),     g_n(h) = h^n n! psi_{n+1}(h).

Weights: for auxiliary offsets r_1 < ... < r_p (in units of the step h)
the update weights w solve R_p(h) w B(h) = phi_p(h) (noise prediction)
or = g_p(h) (data prediction), where R_p(h)[n, m] = (r_m h)^{n-1} and
B is a free normalizer with B(h) = O(h).  Powers of h factor out of R_p,
so the system actually solved is the plain Vandermonde

    V(r) w = ( n! varphi_{n+1}(h) * h / B(h) )_n,

whose conditioning depends only on the spacing of r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularSystemError

MAX_BASIS_K = 12
MAX_ORDER = 9
MAX_VARYING_ORDER = 5

#: Below this h the upward recursion has lost too many digits; use the series.
SERIES_CROSSOVER = 0.5

BH_KINDS = ("b1", "b2")


def bh_value(bh: str, h: float) -> float:
    """Normalizer B(h): b1 -> h, b2 -> e^h - 1."""
    if bh == "b1":
        return h
    if bh == "b2":
        return math.expm1(h)
    raise DomainError(f"unknown B(h) variant {bh!r}")


def _check_kh(k: int, h: float) -> None:
    if not isinstance(k, (int, np.integer)) or k < 0 or k > MAX_BASIS_K:
        raise DomainError(f"basis index k={k} outside supported range 0..{MAX_BASIS_K}")
    if not h > 0.0:
        raise DomainError(f"need h > 0, got {h}")


def _series(k: int, h: float, sign: float) -> float:
    # sum_{j>=0} (sign*h)^j / (j+k)!; terms decay superfactorially.
    term = 1.0 / math.factorial(k)
    total = term
    x = sign * h
    for j in range(1, 64):
        term *= x / (j + k)
        total += term
        if abs(term) < 1e-18 * abs(total):
            break
    return total


def varphi(k: int, h: float) -> float:
    """varphi_k(h); varphi_0 = e^h."""
    _check_kh(k, h)
    if k == 0:
        return math.exp(h)
    if h < SERIES_CROSSOVER:
        return _series(k, h, 1.0)
    v = math.exp(h)
    for n in range(k):
        v = (v - 1.0 / math.factorial(n)) / h
    return v


def psi(k: int, h: float) -> float:
    """psi_k(h); psi_0 = e^{-h}."""
    _check_kh(k, h)
    if k == 0:
        return math.exp(-h)
    if h < SERIES_CROSSOVER:
        return _series(k, h, -1.0)
    v = math.exp(-h)
    for n in range(k):
        v = (1.0 / math.factorial(n) - v) / h
    return v


def _check_p(p: int, h: float, limit: int) -> None:
    if not isinstance(p, (int, np.integer)) or not 1 <= p <= limit:
        raise DomainError(f"order p={p} outside supported range 1..{limit}")
    if not h > 0.0:
        raise DomainError(f"need h > 0, got {h}")


def phi_vector(p: int, h: float) -> np.ndarray:
    """(phi_1(h), ..., phi_p(h)) with phi_n = h^n n! varphi_{n+1}(h)."""
    _check_p(p, h, MAX_ORDER)
    return np.array([h**n * math.factorial(n) * varphi(n + 1, h) for n in range(1, p + 1)])


def g_vector(p: int, h: float) -> np.ndarray:
    """(g_1(h), ..., g_p(h)) with g_n = h^n n! psi_{n+1}(h)."""
    _check_p(p, h, MAX_ORDER)
    return np.array([h**n * math.factorial(n) * psi(n + 1, h) for n in range(1, p + 1)])


def _check_r(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim != 1:
        raise DomainError("r must be a 1-d sequence")
    if np.any(r == 0.0) or len(np.unique(r)) != len(r):
        raise SingularSystemError(f"r entries must be distinct and nonzero, got {r.tolist()}")
    if not np.all(np.diff(r) > 0):
        raise DomainError(f"r must be strictly increasing, got {r.tolist()}")
    return r


@dataclass(frozen=True)
class CoefficientSystem:
    """A solved per-step weight system."""

    p: int
    h: float
    r: tuple[float, ...]
    bh: str
    prediction: str
    weights: np.ndarray

    def residual(self) -> float:
        """l1 norm of R_p(h) w B(h) - phi_p(h) (or g_p for data prediction)."""
        R = np.vander(np.asarray(self.r) * self.h, N=self.p, increasing=True).T
        target = phi_vector(self.p, self.h) if self.prediction == "noise" else g_vector(self.p, self.h)
        return float(np.sum(np.abs(R @ self.weights * bh_value(self.bh, self.h) - target)))


def solve_weights(
    p: int,
    h: float,
    r,
    bh: str = "b2",
    prediction: str = "noise",
    half_a1: bool = False,
) -> CoefficientSystem:
    """Solve for the update weights of a p-term system at step size h.

    With half_a1=True the degenerate single-unknown system (second-order
    predictor or first-order corrector) short-circuits to the h-independent
    weight 1/2, which satisfies the accuracy condition for both B variants.
    """
    _check_p(p, h, MAX_ORDER)
    if prediction not in ("noise", "data"):
        raise DomainError(f"unknown prediction kind {prediction!r}")
    r = _check_r(r)
    if len(r) != p:
        raise DomainError(f"len(r)={len(r)} must equal p={p}")
    if p == 1 and half_a1:
        weights = np.array([0.5])
    else:
        scale = h / bh_value(bh, h)
        basis = varphi if prediction == "noise" else psi
        rhs = np.array([math.factorial(n) * basis(n + 1, h) * scale for n in range(1, p + 1)])
        V = np.vander(r, N=p, increasing=True).T
        try:
            weights = np.linalg.solve(V, rhs)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by _check_r
            raise SingularSystemError(str(exc)) from exc
    return CoefficientSystem(
        p=p, h=float(h), r=tuple(r.tolist()), bh=bh, prediction=prediction, weights=weights
    )


@dataclass(frozen=True)
class VaryingCoefficientMatrix:
    """h-independent coefficient matrix A = C^{-1}, C[n, m] = r_m^{n-1}/n!."""

    p: int
    r: tuple[float, ...]
    A: np.ndarray

    def c_matrix(self) -> np.ndarray:
        r = np.asarray(self.r)
        scale = np.array([1.0 / math.factorial(n) for n in range(1, self.p + 1)])
        return np.vander(r, N=self.p, increasing=True).T * scale[:, None]


def varying_coefficient_matrix(p: int, r) -> VaryingCoefficientMatrix:
    """Invert the moment-matching matrix for step-size-independent weights."""
    if not isinstance(p, (int, np.integer)) or not 1 <= p <= MAX_VARYING_ORDER:
        raise DomainError(f"order p={p} outside supported range 1..{MAX_VARYING_ORDER}")
    r = _check_r(r)
    if len(r) != p:
        raise DomainError(f"len(r)={len(r)} must equal p={p}")
    scale = np.array([1.0 / math.factorial(n) for n in range(1, p + 1)])
    C = np.vander(r, N=p, increasing=True).T * scale[:, None]
    try:
        A = np.linalg.inv(C)
    except np.linalg.LinAlgError as exc:  # distinct r makes C invertible; guard anyway
        raise SingularSystemError(str(exc)) from exc
    return VaryingCoefficientMatrix(p=int(p), r=tuple(r.tolist()), A=A)
