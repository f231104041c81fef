"""Wald tests, the single-parameter boundary-adjusted test, and QIC.

The general Wald statistic for H0: C theta = c0 is

    T (C theta_hat - c0)' (C Sigma_hat C')^-1 (C theta_hat - c0)

with Sigma_hat the sandwich H^-1 G H^-1, referred to chi-square with
rank(C) degrees of freedom.  For a single nonnegativity-constrained
parameter of the linear link (H0: theta_k = 0 vs theta_k > 0) the null
distribution is the mixture 0.5 chi2_0 + 0.5 chi2_1, so the p-value is
half the chi2_1 tail; the log link needs no adjustment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .estimate import FitResult


class InferenceError(RuntimeError):
    """Raised for unusable test inputs (singular contrast covariance,
    mismatched datasets, unsupported hypotheses)."""


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float
    boundary_adjusted: bool

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df,
                "p_value": self.p_value, "boundary_adjusted": self.boundary_adjusted}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def chi2_sf(stat: float, df: int) -> float:
    """Upper chi-square tail via the regularized incomplete gamma."""
    if stat <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, stat / 2.0))


def wald_test(fit: FitResult, C: np.ndarray, c0: np.ndarray) -> WaldResult:
    """General linear hypothesis C theta = c0; no boundary adjustment."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    c0 = np.atleast_1d(np.asarray(c0, dtype=float))
    K = fit.theta_flat.size
    if C.shape[1] != K:
        raise InferenceError(f"C has {C.shape[1]} columns, model has K = {K} parameters")
    if c0.size != C.shape[0]:
        raise InferenceError(f"c0 length {c0.size} != {C.shape[0]} rows of C")
    U, svals, Vt = np.linalg.svd(C)
    f = int(np.sum(svals > 1e-12 * svals[0]))
    if f == 0:
        raise InferenceError("C has rank 0")
    if f < C.shape[0]:
        # redundant rows: reduce to an equivalent full-row-rank hypothesis
        residual = c0 - U[:, :f] @ (U[:, :f].T @ c0)
        if np.linalg.norm(residual) > 1e-10 * max(1.0, np.linalg.norm(c0)):
            raise InferenceError("c0 is inconsistent with the rank-deficient C "
                                 "(the hypothesis is infeasible)")
        C = svals[:f, None] * Vt[:f]
        c0 = U[:, :f].T @ c0
    diff = C @ fit.theta_flat - c0
    M = C @ fit.covariance @ C.T  # covariance already carries the 1/T factor
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise InferenceError(f"C Sigma C' is numerically singular "
                             f"(condition number {cond:.3e})")
    stat = float(diff @ np.linalg.solve(M, diff))
    stat = max(stat, 0.0)
    return WaldResult(statistic=stat, df=f, p_value=chi2_sf(stat, f),
                      boundary_adjusted=False)


def single_param_test(fit: FitResult, index: int) -> WaldResult:
    """H0: theta_k = 0 for one parameter.

    Linear link: one-sided boundary hypothesis, p-value halved (the
    doubled-significance-level rule).  Log link: plain chi2_1.
    """
    K = fit.theta_flat.size
    if not 0 <= index < K:
        raise InferenceError(f"parameter index {index} out of range 0..{K - 1}")
    var = float(fit.covariance[index, index])
    if var <= 0 or not np.isfinite(var):
        raise InferenceError(f"zero or invalid variance for parameter {index}")
    stat = float(fit.theta_flat[index] ** 2 / var)
    tail = chi2_sf(stat, 1)
    if fit.spec.link == "linear":
        return WaldResult(statistic=stat, df=1, p_value=0.5 * tail,
                          boundary_adjusted=True)
    return WaldResult(statistic=stat, df=1, p_value=tail, boundary_adjusted=False)


def multi_param_boundary_test(*args, **kwargs):
    """Multi-parameter boundary hypotheses have chi-bar-squared null
    distributions whose weights depend on the hypothesis geometry; only
    the single-parameter mixture is implemented."""
    raise InferenceError("unsupported: chi-bar-squared null distributions for "
                         "multi-parameter boundary hypotheses are not implemented; "
                         "only the single-parameter 0.5*chi2_0 + 0.5*chi2_1 case is")


def qic_from_parts(loglik: float, H: np.ndarray, G: np.ndarray) -> float:
    """QIC = -2 loglik + 2 trace(G H^-1)."""
    H = np.asarray(H, dtype=float)
    G = np.asarray(G, dtype=float)
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > 1e14:
        raise InferenceError(f"singular H in QIC (condition number {cond:.3e})")
    return float(-2.0 * loglik + 2.0 * np.trace(G @ np.linalg.inv(H)))


def qic(fit: FitResult) -> float:
    return float(-2.0 * fit.loglik + 2.0 * fit.qic_penalty)


def compare_models(fits: list[FitResult]) -> list[int]:
    """Indices of the fits in ascending QIC order.

    Ties (|dQIC| < 1e-9) go to the smaller parameter count, then input
    order.  All fits must be on the same counts panel (fingerprint check).
    """
    if not fits:
        return []
    prints = {f.data_fingerprint for f in fits}
    if len(prints) > 1:
        raise InferenceError("fits were computed on different datasets "
                             "(fingerprint mismatch); QIC values are not comparable")
    ordered = sorted(range(len(fits)), key=lambda i: fits[i].qic)
    # group near-ties and apply the tie rule (smaller K, then input order)
    out: list[int] = []
    group = [ordered[0]]
    for i in ordered[1:]:
        if abs(fits[i].qic - fits[group[0]].qic) < 1e-9:
            group.append(i)
        else:
            out.extend(sorted(group, key=lambda j: (fits[j].theta_flat.size, j)))
            group = [i]
    out.extend(sorted(group, key=lambda j: (fits[j].theta_flat.size, j)))
    return out
