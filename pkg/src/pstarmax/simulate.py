"""Trajectory simulation with Poisson marginals and copula cross-dependence.

Counts are generated from the intensity vector by the unit-rate Poisson
process construction: draw successive copula vectors U_1, U_2, ...,
transform each component to an exponential interarrival E_il = -log(U_il),
and set Y_i = max{k : sum_{l<=k} E_il <= lambda_i}.  Marginals are exactly
Poisson(lambda_i) for any copula; contemporaneous dependence comes from the
coupling of the interarrival uniforms.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .copulas import CopulaSpec, sample_copula
from .model import (ModelSpec, ParameterVector, check_theta, coefficient_matrices,
                    stationarity_margin, validate_covariates)
from .weights import WeightMatrixSet

INTENSITY_OVERFLOW = 1e12
_BLOCK_ELEMENTS = 8_000_000  # chunk size guard for vectorized draws


class SimulationError(RuntimeError):
    """Raised when a simulated intensity exceeds the overflow guard."""


@dataclass(frozen=True)
class SimulationConfig:
    """Length, seed, burn-in, copula, and optional feedback start state.

    ``lambda_init`` seeds the burn-in start (a p-vector, or (p, q) for
    higher feedback orders); by default the covariate-free stationary mean
    is used when the stationarity margin is positive, else the intercept.
    """

    T: int
    seed: int
    burn_in: int = 100
    copula: CopulaSpec = field(default_factory=lambda: CopulaSpec("independent"))
    lambda_init: np.ndarray | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.seed is None:
            raise ValueError("an explicit seed is required")


@dataclass
class SimulationResult:
    """Count panel, intensity panel, and the linear predictor panel
    (nu = log lambda for the log link; equal to the intensity otherwise)."""

    counts: np.ndarray
    intensity: np.ndarray
    linpred: np.ndarray


def sample_counts(lam: np.ndarray, copula: CopulaSpec, rng: np.random.Generator,
                  size: int | None = None) -> np.ndarray:
    """Counts with Poisson(lambda_i) marginals coupled by the copula.

    Returns shape (p,) or (size, p).  The independent family short-circuits
    to numpy's Poisson sampler (distributionally identical).
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.ndim != 1:
        raise ValueError("lambda must be a vector")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValueError("all intensities must be positive and finite")
    p = lam.size
    if copula.family == "independent":
        out = rng.poisson(lam if size is None else np.broadcast_to(lam, (size, p)))
        return out.astype(np.int64)

    n = 1 if size is None else int(size)
    counts = np.zeros((n, p), dtype=np.int64)
    lam_max = float(lam.max())
    first_block = int(np.ceil(lam_max + 6.0 * np.sqrt(lam_max) + 10.0))
    chunk = max(1, int(_BLOCK_ELEMENTS / (first_block * p)))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        counts[lo:hi] = _sample_counts_block(lam, copula, rng, hi - lo, first_block)
    return counts[0] if size is None else counts


def _sample_counts_block(lam, copula, rng, n, first_block):
    p = lam.size
    counts = np.zeros((n, p), dtype=np.int64)
    cum = np.zeros((n, p))
    active = np.arange(n)
    rounds = first_block
    while active.size:
        U = sample_copula(copula, p, rng, size=(rounds, active.size))
        csum = cum[active] + np.cumsum(-np.log(U), axis=0)
        counts[active] += (csum <= lam).sum(axis=0)
        cum[active] = csum[-1]
        active = active[(cum[active] <= lam).any(axis=1)]
        rounds = 16
    return counts


def simulate_path(theta: ParameterVector, spec: ModelSpec, W: WeightMatrixSet,
                  X: np.ndarray | None = None,
                  cfg: SimulationConfig | None = None) -> SimulationResult:
    """Iterate the intensity recursion and draw counts at each step.

    Burn-in steps use the covariate-free model and are discarded; the
    retained sample covers t = 0..T and uses the covariates when present.
    Bit-reproducible for a fixed (seed, config).
    """
    if cfg is None:
        raise ValueError("a SimulationConfig with an explicit seed is required")
    spec.check_weights(W)
    p = W.p
    check_theta(theta, spec, p)
    X = validate_covariates(X, spec, p, cfg.T)
    rng = np.random.default_rng(cfg.seed)
    log_link = spec.link == "log_linear"

    A, B = coefficient_matrices(theta, spec, W)
    delta_vec = np.full(p, theta.delta[0]) if theta.delta.size == 1 else theta.delta.copy()

    xterm = np.zeros((p, cfg.T + 1))
    if X is not None:
        for k in range(spec.m):
            for ell in range(spec.s[k] + 1):
                xterm += theta.gamma[k][ell] * np.asarray(W.dot(ell, X[k]))

    z0 = _start_state(theta, spec, W, delta_vec, cfg)
    q = spec.q
    z_hist = deque((z0[:, i].copy() for i in range(q)), maxlen=max(q, 1))
    lam0 = _to_intensity(z0[:, 0], log_link)
    y_hist = deque((sample_counts(np.maximum(lam0, 1e-12), cfg.copula, rng).astype(float)
                    for _ in range(spec.r)), maxlen=max(spec.r, 1))

    counts = np.zeros((p, cfg.T + 1), dtype=np.int64)
    intensity = np.zeros((p, cfg.T + 1))
    linpred = np.zeros((p, cfg.T + 1))

    for step in range(cfg.burn_in + cfg.T + 1):
        in_sample = step >= cfg.burn_in
        t = step - cfg.burn_in
        z = delta_vec.copy()
        for i in range(q):
            z += A[i] @ z_hist[i]
        for j in range(spec.r):
            yl = y_hist[j]
            z += B[j] @ (np.log1p(yl) if log_link else yl)
        if in_sample:
            z += xterm[:, t]
        lam = _to_intensity(z, log_link)
        if not np.all(np.isfinite(lam)) or lam.max() > INTENSITY_OVERFLOW:
            raise SimulationError(
                f"intensity overflow at step {step} (burn_in={cfg.burn_in}): "
                f"max lambda = {np.nanmax(lam):.3e} exceeds {INTENSITY_OVERFLOW:.0e}; "
                "check the stationarity margin of the supplied parameters")
        y = sample_counts(np.maximum(lam, 1e-12), cfg.copula, rng)
        if in_sample:
            counts[:, t] = y
            intensity[:, t] = lam
            linpred[:, t] = z
        if q:
            z_hist.appendleft(z)
        if spec.r:
            y_hist.appendleft(y.astype(float))
    return SimulationResult(counts=counts, intensity=intensity, linpred=linpred)


def _to_intensity(z: np.ndarray, log_link: bool) -> np.ndarray:
    if not log_link:
        return z
    with np.errstate(over="ignore"):
        return np.exp(np.clip(z, -300.0, 300.0))


def _start_state(theta, spec, W, delta_vec, cfg) -> np.ndarray:
    """(p, max(q,1)) start columns for the linear predictor at burn-in start."""
    p = W.p
    n_cols = max(spec.q, 1)
    if cfg.lambda_init is not None:
        init = np.asarray(cfg.lambda_init, dtype=float)
        if init.ndim == 1:
            init = np.repeat(init[:, None], n_cols, axis=1)
        if init.shape != (p, n_cols):
            raise ValueError(f"lambda_init must have shape ({p},) or ({p}, {n_cols})")
        return init.copy()
    if stationarity_margin(theta, spec) > 0:
        A, B = coefficient_matrices(theta, spec, W)
        M = np.eye(p)
        for mat in (*A, *B):
            M -= mat
        try:
            z = np.linalg.solve(M, delta_vec)
        except np.linalg.LinAlgError:
            z = delta_vec.copy()
    else:
        z = delta_vec.copy()
    return np.repeat(z[:, None], n_cols, axis=1)


def generate_arma_covariate(p: int, T: int, seed: int, ar: float = 0.5,
                            ma: float = 0.3, scale_to_unit: bool = False) -> np.ndarray:
    """Per-location stationary ARMA(1,1) paths with U(0,1) innovations.

    Locations are independent; a 500-step burn-in removes the zero initial
    state, and the whole panel is shifted to be nonnegative when negative
    coefficients produce negative values.  With ``scale_to_unit`` the panel
    is divided by the impulse-response sum (1 + ma)/(1 - ar), mapping it
    back onto the innovation range [0, 1] regardless of the coefficients.
    """
    if abs(ar) >= 1:
        raise ValueError(f"AR coefficient must satisfy |ar| < 1, got {ar}")
    rng = np.random.default_rng(seed)
    burn = 500
    innov = rng.uniform(size=(p, burn + T + 1))
    panel = lfilter([1.0, ma], [1.0, -ar], innov, axis=1)[:, burn:]
    if scale_to_unit:
        gain = (1.0 + ma) / (1.0 - ar)
        if gain > 0:
            panel = panel / gain
    low = panel.min()
    if low < 0:
        panel = panel - low
    return panel
