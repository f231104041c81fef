"""One-step-ahead prediction and forecast-quality metrics."""

from __future__ import annotations

import numpy as np

from .likelihood import LAMBDA_FLOOR, filter_intensity
from .model import (ModelSpec, ParameterVector, check_theta, coefficient_matrices,
                    validate_counts)
from .weights import WeightMatrixSet


def _as_theta(fit_or_theta) -> ParameterVector:
    return getattr(fit_or_theta, "theta_hat", fit_or_theta)


def one_step_forecast(fit_or_theta, spec: ModelSpec, W: WeightMatrixSet,
                      Y: np.ndarray, X: np.ndarray | None = None,
                      x_next: np.ndarray | None = None,
                      init: str = "first_obs",
                      init_values: np.ndarray | None = None) -> np.ndarray:
    """Conditional mean one step past the supplied history.

    ``Y`` (and ``X`` when the model has covariates) cover the history;
    ``x_next`` holds the covariate values at the forecast time, shape
    (m, p).  Returns the p-vector lambda_hat.
    """
    theta = _as_theta(fit_or_theta)
    spec.check_weights(W)
    Y = validate_counts(Y)
    p, n_times = Y.shape
    T = n_times - 1
    if T + 1 < max(spec.q, spec.r, 1):
        raise ValueError(f"history of length {T + 1} is too short for orders "
                         f"(q, r) = ({spec.q}, {spec.r})")
    check_theta(theta, spec, p)
    if spec.m and x_next is None:
        raise ValueError(f"model has m = {spec.m} covariates; x_next is required")
    if x_next is not None:
        x_next = np.asarray(x_next, dtype=float)
        if x_next.ndim == 1 and spec.m == 1:
            x_next = x_next[None, :]
        if x_next.shape != (spec.m, p):
            raise ValueError(f"x_next must have shape ({spec.m}, {p})")

    log_link = spec.link == "log_linear"
    A, B = coefficient_matrices(theta, spec, W)
    delta_vec = np.full(p, theta.delta[0]) if theta.delta.size == 1 else theta.delta
    z = delta_vec.astype(float).copy()

    if spec.q:
        state = filter_intensity(theta, spec, W, Y, X=X, init=init,
                                 init_values=init_values)
        for i in range(1, spec.q + 1):
            z += A[i - 1] @ state.linpred[:, T + 1 - i]
    for j in range(1, spec.r + 1):
        yl = Y[:, T + 1 - j]
        z += B[j - 1] @ (np.log1p(yl) if log_link else yl)
    if x_next is not None:
        for k in range(spec.m):
            for ell in range(spec.s[k] + 1):
                z += theta.gamma[k][ell] * np.asarray(W.dot(ell, x_next[k]))
    return np.exp(np.clip(z, -300, 300)) if log_link else z


def rolling_one_step(fit_or_theta, spec: ModelSpec, W: WeightMatrixSet,
                     Y: np.ndarray, X: np.ndarray | None = None,
                     init: str = "first_obs") -> np.ndarray:
    """Refiltered one-step intensities over the whole panel with the
    parameters held fixed: entry (:, t) uses data through t - 1."""
    state = filter_intensity(_as_theta(fit_or_theta), spec, W, Y, X=X, init=init)
    return state.intensity


def mspe(Y: np.ndarray, lambda_hat: np.ndarray, r_burn: int = 0) -> float:
    """Mean square prediction error with the first ``r_burn`` time columns
    excluded: mean of (y - lambda_hat)^2 over the remaining cells."""
    Y = np.asarray(Y, dtype=float)
    L = np.asarray(lambda_hat, dtype=float)
    if Y.shape != L.shape:
        raise ValueError(f"panel shapes differ: {Y.shape} vs {L.shape}")
    if not 0 <= r_burn < Y.shape[1]:
        raise ValueError(f"r_burn must be in [0, {Y.shape[1] - 1})")
    diff = (Y - L)[:, r_burn:]
    return float(np.mean(diff ** 2))


def mae(Y: np.ndarray, lambda_hat: np.ndarray) -> float:
    """Mean absolute error over all supplied cells."""
    Y = np.asarray(Y, dtype=float)
    L = np.asarray(lambda_hat, dtype=float)
    if Y.shape != L.shape:
        raise ValueError(f"panel shapes differ: {Y.shape} vs {L.shape}")
    return float(np.mean(np.abs(Y - L)))


def _poisson_loglik_cells(y: np.ndarray, lam: np.ndarray) -> float:
    """sum of y log lam - lam with the 0 log 0 := 0 convention."""
    lam = np.asarray(lam, dtype=float)
    out = -lam.sum()
    pos = y > 0
    out += float(np.sum(y[pos] * np.log(np.maximum(lam[pos], LAMBDA_FLOOR))))
    return out


def explained_deviance(Y: np.ndarray, lambda_hat: np.ndarray) -> float:
    """Proportion of explained deviance relative to the constant-mean null.

    1 for the saturated fit (lambda = y everywhere), 0 for the null model
    (lambda = grand mean); NaN when the panel is constant (both deviances
    vanish).
    """
    Y = np.asarray(Y, dtype=float)
    L = np.asarray(lambda_hat, dtype=float)
    if Y.shape != L.shape:
        raise ValueError(f"panel shapes differ: {Y.shape} vs {L.shape}")
    if np.any(L <= 0):
        raise ValueError("explained deviance requires strictly positive predictions")
    ll_fit = _poisson_loglik_cells(Y, L)
    ll_sat = _poisson_loglik_cells(Y, Y)
    ll_null = _poisson_loglik_cells(Y, np.full_like(Y, Y.mean()))
    denom = ll_null - ll_sat
    if denom == 0:
        return float("nan")
    return float(1.0 - (ll_fit - ll_sat) / denom)


def mse_params(theta_hat, theta_true) -> float:
    """(theta_hat - theta_true)' (theta_hat - theta_true) / K."""
    a = np.asarray(theta_hat, dtype=float).ravel()
    b = np.asarray(theta_true, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"parameter vectors differ in length: {a.size} vs {b.size}")
    return float(np.mean((a - b) ** 2))
