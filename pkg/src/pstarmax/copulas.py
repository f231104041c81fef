"""Archimedean copula sampling via frailty mixtures.

Each family is sampled by the Marshall-Olkin construction: draw a frailty
V, independent unit exponentials E_1..E_p, and set U_i = psi(E_i / V) with
psi the Laplace transform of V.  This is exact in every dimension:

    clayton (theta > 0):  V ~ Gamma(1/theta),        psi(t) = (1 + t)^(-1/theta)
    frank   (theta > 0):  V ~ Log-series(1 - e^-theta),
                          psi(t) = -log(1 - (1 - e^-theta) e^-t) / theta
    joe     (theta >= 1): V ~ Sibuya(1/theta),       psi(t) = 1 - (1 - e^-t)^(1/theta)

The independent "family" simply draws i.i.d. uniforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

FAMILIES = ("independent", "clayton", "frank", "joe")


class CopulaError(ValueError):
    """Raised for invalid copula families or parameter ranges."""


@dataclass(frozen=True)
class CopulaSpec:
    family: str
    parameter: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise CopulaError(f"unknown copula family {self.family!r}; "
                              f"choose from {FAMILIES}")
        th = self.parameter
        if self.family == "clayton" and not th > 0:
            raise CopulaError(f"clayton parameter must be > 0, got {th}")
        if self.family == "frank" and th == 0:
            raise CopulaError("frank parameter must be nonzero")
        if self.family == "joe" and not th >= 1:
            raise CopulaError(f"joe parameter must be >= 1, got {th}")

    def to_dict(self) -> dict:
        return {"family": self.family, "parameter": self.parameter}

    @classmethod
    def from_dict(cls, d: dict) -> "CopulaSpec":
        return cls(family=d["family"], parameter=float(d.get("parameter", 0.0)))


def sample_sibuya(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Sibuya(alpha) variates, 0 < alpha <= 1, by exact inversion.

    The survival function is S(n) = Gamma(n+1-alpha) / (Gamma(1-alpha) n!);
    the quantile is bracketed around the asymptotic S(n) ~ n^-alpha /
    Gamma(1-alpha) and pinned by bisection.  Returned as float64: the
    distribution has infinite mean and deep-tail draws exceed int64.
    """
    if not 0 < alpha <= 1:
        raise CopulaError(f"sibuya exponent must be in (0, 1], got {alpha}")
    u = rng.uniform(size=size)
    out = np.ones(np.shape(u), dtype=float)
    if alpha == 1.0:
        return out
    tail = u > alpha  # P(V = 1) = alpha
    if not np.any(tail):
        return out
    log_target = np.log1p(-u[tail])  # want smallest n with log S(n) <= this
    lg1ma = float(gammaln(1.0 - alpha))

    def log_surv(n):
        # exact below 1e8; beyond that the gammaln difference cancels
        # catastrophically, so switch to the asymptotic expansion
        n = np.asarray(n, dtype=float)
        small = n <= 1e8
        res = np.empty_like(n)
        ns = n[small]
        res[small] = gammaln(ns + 1.0 - alpha) - gammaln(ns + 1.0) - lg1ma
        nl = n[~small]
        if nl.size:
            z = nl + 1.0
            res[~small] = -alpha * np.log(z) + alpha * (alpha + 1.0) / (2.0 * z) - lg1ma
        return res

    guess = np.maximum(2.0, np.floor(np.exp(-(lg1ma + log_target) / alpha)))
    lo = np.ones_like(guess)  # S(1) = 1 - alpha > target holds on the tail set
    hi = guess
    for _ in range(128):
        too_high = log_surv(hi) > log_target  # hi not yet past the quantile
        if not np.any(too_high):
            break
        lo[too_high] = hi[too_high]
        hi[too_high] *= 2.0
    else:
        raise RuntimeError("sibuya bracketing failed")
    for _ in range(256):
        active = (hi - lo) > 1.0
        if not np.any(active):
            break
        mid = np.floor((lo + hi) / 2.0)
        # beyond float64 integer resolution mid cannot move; accept hi there
        progress = active & (mid > lo) & (mid < hi)
        if not np.any(progress):
            break
        below = log_surv(mid) <= log_target
        hi = np.where(progress & below, mid, hi)
        lo = np.where(progress & ~below, mid, lo)
    else:
        raise RuntimeError("sibuya bisection failed")
    out[tail] = hi
    return out


def sample_copula(spec: CopulaSpec, p: int, rng: np.random.Generator,
                  size: int | tuple | None = None) -> np.ndarray:
    """Draw from the copula: shape (p,) or (*size, p), uniform marginals."""
    if p < 1:
        raise CopulaError(f"dimension must be >= 1, got {p}")
    if size is None:
        shape = (p,)
        vshape = (1,)
    else:
        shape = (tuple(np.atleast_1d(size)) if not np.isscalar(size) else (size,)) + (p,)
        vshape = shape[:-1] + (1,)

    if spec.family == "independent":
        return rng.uniform(size=shape)

    th = spec.parameter
    E = rng.exponential(size=shape)
    if spec.family == "clayton":
        V = rng.gamma(1.0 / th, size=vshape)
        U = (1.0 + E / V) ** (-1.0 / th)
    elif spec.family == "frank":
        if th < 0:
            raise CopulaError("frank sampling supports positive parameters only "
                              "(logarithmic-series frailty)")
        pr = -np.expm1(-th)  # 1 - e^-theta
        V = rng.logseries(pr, size=vshape).astype(float)
        U = -np.log1p(-pr * np.exp(-E / V)) / th
    else:  # joe
        V = sample_sibuya(1.0 / th, vshape, rng).astype(float)
        U = 1.0 - (-np.expm1(-E / V)) ** (1.0 / th)

    tiny = np.finfo(float).tiny
    U = np.clip(U, tiny, 1.0 - np.finfo(float).epsneg)
    return U[0] if size is None else U


def theoretical_kendall_tau(spec: CopulaSpec) -> float:
    """Closed-form / series pairwise Kendall's tau for each family."""
    th = spec.parameter
    if spec.family == "independent":
        return 0.0
    if spec.family == "clayton":
        return th / (th + 2.0)
    if spec.family == "frank":
        debye, _ = quad(lambda t: t / np.expm1(t), 0.0, th)
        return 1.0 + 4.0 * (debye / th - 1.0) / th
    # joe: tau = 1 - 4 sum_k 1 / (k (th k + 2) (th (k-1) + 2))
    total = 0.0
    for k in range(1, 200_000):
        term = 1.0 / (k * (th * k + 2.0) * (th * (k - 1.0) + 2.0))
        total += term
        if term < 1e-14 * max(total, 1e-300):
            break
    return 1.0 - 4.0 * total
