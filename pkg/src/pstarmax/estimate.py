"""Constrained quasi-maximum-likelihood fitting and standard errors.

The quasi-log-likelihood is maximized subject to the stationarity
constraint sum |alpha| + sum |beta| <= 1 - slack; the linear link adds
componentwise nonnegativity, the log link a coefficient box.  SLSQP with
the analytic score does the heavy lifting; a damped Fisher-scoring polish
then drives the free-coordinate gradient to the configured tolerance so
interior solutions satisfy the first-order condition and refits are
idempotent.  Standard errors come from the sandwich H^-1 G H^-1 / T.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import weights as weights_mod
from .likelihood import QuasiLikelihood, build_sandwich, invert_information
from .model import (ModelSpec, ParameterVector, pack, param_layout, unpack,
                    validate_counts)
from .weights import WeightMatrixSet

BOUND_ATOL = 1e-8

logger = logging.getLogger("pstarmax.estimate")


class EstimationError(RuntimeError):
    """Raised for unusable estimation inputs (non-convergence is reported
    via FitResult.converged, not raised)."""


@dataclass(frozen=True)
class FitConfig:
    init_strategy: str = "first_obs"
    stationarity_criterion: str = "coefficient_sum"
    constraint_slack: float = 1e-6
    grad_tol: float = 1e-8
    max_iter: int = 500
    multistart: int = 1
    multistart_seed: int = 0
    coef_box: float = 10.0   # log link box on alpha/beta/gamma
    delta_box: float = 30.0  # log link box on the intercept
    polish: bool = True

    def __post_init__(self):
        if self.grad_tol <= 0 or self.constraint_slack <= 0:
            raise EstimationError("tolerances must be positive")
        if self.max_iter < 1 or self.multistart < 1:
            raise EstimationError("max_iter and multistart must be >= 1")
        if self.stationarity_criterion not in ("coefficient_sum", "tau_adjusted"):
            raise EstimationError(f"unknown stationarity criterion "
                                  f"{self.stationarity_criterion!r}")


@dataclass
class FitResult:
    spec: ModelSpec
    theta_hat: ParameterVector
    theta_flat: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    loglik: float
    qic: float
    qic_penalty: float
    converged: bool
    iterations: int
    gradient_norm: float
    active_constraints: list[int]
    n_obs_times: int
    p: int
    data_fingerprint: str
    init_strategy: str
    weights: WeightMatrixSet | None = None

    def to_dict(self) -> dict:
        d = {
            "model": self.spec.to_dict(),
            "theta": self.theta_hat.to_dict(),
            "std_errors": self.std_errors.tolist(),
            "covariance": self.covariance.ravel().tolist(),
            "loglik": self.loglik,
            "qic": self.qic,
            "qic_penalty": self.qic_penalty,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "active_constraints": list(self.active_constraints),
            "n_obs_times": self.n_obs_times,
            "p": self.p,
            "data_fingerprint": self.data_fingerprint,
            "init_strategy": self.init_strategy,
        }
        if self.weights is not None:
            triples = []
            for ell, W in enumerate(self.weights.dense_all()):
                rows, cols = np.nonzero(W)
                triples.extend([[int(ell), int(i), int(j), float(W[i, j])]
                                for i, j in zip(rows, cols)])
            d["weights"] = triples
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        spec = ModelSpec.from_dict(d["model"])
        theta = ParameterVector.from_dict(d["theta"])
        flat = pack(theta)
        K = flat.size
        wset = None
        if "weights" in d:
            triples = d["weights"]
            n_orders = max(t[0] for t in triples) + 1
            p = max(max(t[1] for t in triples), max(t[2] for t in triples)) + 1
            mats = [np.zeros((p, p)) for _ in range(n_orders)]
            for ell, i, j, w in triples:
                mats[ell][i, j] = w
            wset = WeightMatrixSet(mats)
        return cls(
            spec=spec, theta_hat=theta, theta_flat=flat,
            covariance=np.asarray(d["covariance"], dtype=float).reshape(K, K),
            std_errors=np.asarray(d["std_errors"], dtype=float),
            loglik=float(d["loglik"]), qic=float(d["qic"]),
            qic_penalty=float(d["qic_penalty"]), converged=bool(d["converged"]),
            iterations=int(d["iterations"]), gradient_norm=float(d["gradient_norm"]),
            active_constraints=[int(i) for i in d["active_constraints"]],
            n_obs_times=int(d["n_obs_times"]), p=int(d["p"]),
            data_fingerprint=d["data_fingerprint"],
            init_strategy=d.get("init_strategy", "first_obs"), weights=wset)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))


def data_fingerprint(Y: np.ndarray) -> str:
    Y = np.ascontiguousarray(np.asarray(Y, dtype=np.int64))
    h = hashlib.sha256()
    h.update(str(Y.shape).encode())
    h.update(Y.tobytes())
    return h.hexdigest()


def default_start(spec: ModelSpec, W: WeightMatrixSet, Y: np.ndarray) -> ParameterVector:
    """Start with total coefficient mass 0.5 split evenly over alpha/beta,
    gamma at zero, and the intercept chosen so the implied stationary mean
    matches the sample mean.  Always strictly feasible."""
    Y = validate_counts(Y)
    n_coef = sum(o + 1 for o in spec.a) + sum(o + 1 for o in spec.b)
    coef = 0.5 / n_coef if n_coef else 0.0
    remaining = 1.0 - (coef * n_coef)
    if spec.intercept == "homogeneous":
        ybar = float(Y.mean())
        base = np.log1p(ybar) if spec.link == "log_linear" else ybar
        delta = np.array([base * remaining])
    else:
        ybar = Y.mean(axis=1)
        base = np.log1p(ybar) if spec.link == "log_linear" else ybar
        delta = base * remaining
    alpha = tuple(np.full(o + 1, coef) for o in spec.a)
    beta = tuple(np.full(o + 1, coef) for o in spec.b)
    gamma = tuple(np.zeros(o + 1) for o in spec.s)
    return ParameterVector(delta=delta, alpha=alpha, beta=beta, gamma=gamma)


def _bounds(spec: ModelSpec, layout, cfg: FitConfig) -> tuple[np.ndarray, np.ndarray]:
    K = layout.K
    if spec.link == "linear":
        lb = np.zeros(K)
        ub = np.full(K, np.inf)
    else:
        lb = np.full(K, -cfg.coef_box)
        ub = np.full(K, cfg.coef_box)
        lb[layout.delta] = -cfg.delta_box
        ub[layout.delta] = cfg.delta_box
    return lb, ub


def _constraint_limit(spec: ModelSpec, W: WeightMatrixSet, cfg: FitConfig) -> float:
    if cfg.stationarity_criterion == "coefficient_sum":
        return 1.0 - cfg.constraint_slack
    return 1.0 / np.sqrt(weights_mod.column_sum_norm_tau(W)) - cfg.constraint_slack


def fit(spec: ModelSpec, W: WeightMatrixSet, Y: np.ndarray,
        X: np.ndarray | None = None, cfg: FitConfig | None = None,
        init_values: np.ndarray | None = None,
        start: ParameterVector | None = None) -> FitResult:
    """Constrained QMLE with sandwich standard errors."""
    cfg = cfg or FitConfig()
    spec.check_weights(W)
    Y = validate_counts(Y)
    T = Y.shape[1] - 1
    if T < max(spec.q, spec.r) + 1:
        raise EstimationError(f"insufficient observations: T = {T} < "
                              f"max(q, r) + 1 = {max(spec.q, spec.r) + 1}")
    engine = QuasiLikelihood(spec, W, Y, X, init=cfg.init_strategy,
                             init_values=init_values)
    layout = param_layout(spec, W.p)
    lb, ub = _bounds(spec, layout, cfg)
    coef_ix = layout.coef_indices
    limit = _constraint_limit(spec, W, cfg)

    x0 = pack(start if start is not None else default_start(spec, W, Y))
    x0 = np.clip(x0, lb, np.where(np.isinf(ub), x0, ub))
    starts = [x0]
    if cfg.multistart > 1:
        rng = np.random.default_rng(cfg.multistart_seed)
        for _ in range(cfg.multistart - 1):
            perturbed = x0 * rng.uniform(0.5, 1.5, size=x0.size)
            s = np.abs(perturbed[coef_ix]).sum() if coef_ix.size else 0.0
            if s > limit:
                perturbed[coef_ix] *= (limit - 1e-3) / s
            starts.append(np.clip(perturbed, lb, np.where(np.isinf(ub), perturbed, ub)))

    best = None
    for x_start in starts:
        candidate = _fit_single(engine, spec, layout, lb, ub, coef_ix, limit, cfg, x_start)
        if best is None or candidate[1] > best[1]:
            best = candidate
    x_hat, loglik, n_iter, converged, grad_norm = best
    logger.debug("fit finished: loglik=%.4f iterations=%d converged=%s "
                 "gradient_norm=%.3e", loglik, n_iter, converged, grad_norm)

    ev = engine.evaluate(x_hat, order=2)
    info = build_sandwich(ev.H, ev.G)
    Hinv = invert_information(ev.H)
    covariance = info.sandwich / engine.N
    std_errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    qic_penalty = float(np.trace(ev.G @ Hinv))
    qic = -2.0 * ev.loglik + 2.0 * qic_penalty

    active = [int(k) for k in range(layout.K)
              if (np.isfinite(lb[k]) and abs(x_hat[k] - lb[k]) <= BOUND_ATOL)
              or (np.isfinite(ub[k]) and abs(x_hat[k] - ub[k]) <= BOUND_ATOL)]

    return FitResult(
        spec=spec, theta_hat=unpack(x_hat, spec), theta_flat=x_hat,
        covariance=covariance, std_errors=std_errors, loglik=float(ev.loglik),
        qic=float(qic), qic_penalty=qic_penalty, converged=bool(converged),
        iterations=int(n_iter), gradient_norm=float(grad_norm),
        active_constraints=active, n_obs_times=engine.N, p=W.p,
        data_fingerprint=data_fingerprint(Y), init_strategy=cfg.init_strategy,
        weights=W)


def _fit_single(engine, spec, layout, lb, ub, coef_ix, limit, cfg, x0):
    scale = float(engine.N)

    def objective(x):
        res = engine.evaluate(x, order=1)
        if not np.isfinite(res.loglik) or not np.all(np.isfinite(res.score)):
            # diverged trial point (line search beyond the stationarity
            # region): steer back with a linear feasibility barrier
            big = 1e10
            g = np.zeros_like(x)
            excess = 0.0
            if coef_ix.size:
                excess = max(np.abs(x[coef_ix]).sum() - limit, 0.0)
                g[coef_ix] = big * np.sign(x[coef_ix])
            return big * (1.0 + excess), g
        return -res.loglik / scale, -res.score / scale

    constraints = []
    if coef_ix.size:
        def c_fun(x):
            return limit - np.abs(x[coef_ix]).sum()

        def c_jac(x):
            g = np.zeros_like(x)
            g[coef_ix] = -np.sign(x[coef_ix])
            return g

        constraints.append({"type": "ineq", "fun": c_fun, "jac": c_jac})

    bounds = [(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
              for lo, hi in zip(lb, ub)]
    res = minimize(objective, x0, jac=True, method="SLSQP", bounds=bounds,
                   constraints=constraints,
                   options={"maxiter": cfg.max_iter, "ftol": 1e-12})
    x = np.clip(res.x, lb, np.where(np.isinf(ub), res.x, ub))
    n_iter = int(res.nit)
    if coef_ix.size:
        s = np.abs(x[coef_ix]).sum()
        if s > limit:
            x[coef_ix] *= limit / s

    if cfg.polish:
        x, extra, grad_norm, kkt_ok = _polish(engine, x, lb, ub, coef_ix, limit, cfg)
        n_iter += extra
        loglik = engine.evaluate(x, order=0).loglik
    else:
        ev = engine.evaluate(x, order=1)
        loglik = ev.loglik
        tol = _effective_tol(cfg.grad_tol, loglik, scale)
        grad_norm, kkt_ok = _kkt_norm(x, ev.score / scale, lb, ub, coef_ix, limit, tol)
    converged = kkt_ok or bool(res.success)
    return x, loglik, n_iter, converged, grad_norm


def _effective_tol(grad_tol: float, loglik: float, scale: float) -> float:
    """First-order tolerance relative to the per-time log-likelihood
    magnitude; an absolute threshold would sit below the double-precision
    noise floor of large panels."""
    return grad_tol * max(1.0, abs(loglik) / scale)


def _free_mask(x, g, lb, ub, coef_ix, limit):
    """Coordinates free to move: not pinned at a bound with an outward
    gradient, and not pushing through an active sum constraint."""
    at_lower = np.isfinite(lb) & (x <= lb + BOUND_ATOL)
    at_upper = np.isfinite(ub) & (x >= ub - BOUND_ATOL)
    free = ~((at_lower & (g <= 0)) | (at_upper & (g >= 0)))
    sum_active = False
    if coef_ix.size:
        slack = limit - np.abs(x[coef_ix]).sum()
        if slack <= 1e-10:
            # moving along +g increases the sum -> treat the block as pinned
            signs = np.sign(x[coef_ix])
            signs[signs == 0] = 1.0
            if signs @ g[coef_ix] > 0:
                sum_active = True
    return free, sum_active


def _kkt_norm(x, g, lb, ub, coef_ix, limit, tol):
    free, sum_active = _free_mask(x, g, lb, ub, coef_ix, limit)
    if sum_active:
        # project the gradient on the constraint tangent within the block
        signs = np.sign(x[coef_ix])
        signs[signs == 0] = 1.0
        gc = g.copy()
        block_free = free[coef_ix]
        nf = block_free.sum()
        if nf:
            lam = (signs[block_free] @ g[coef_ix][block_free]) / nf
            gc[coef_ix[block_free]] -= lam * signs[block_free]
        norm = float(np.abs(gc[free]).max()) if free.any() else 0.0
    else:
        norm = float(np.abs(g[free]).max()) if free.any() else 0.0
    return norm, norm <= tol


def _polish(engine, x, lb, ub, coef_ix, limit, cfg, max_steps: int = 40):
    """Damped Fisher scoring on the free coordinates."""
    scale = float(engine.N)
    n_steps = 0
    ev = engine.evaluate(x, order=2)
    for _ in range(max_steps):
        g = ev.score / scale
        tol = _effective_tol(cfg.grad_tol, ev.loglik, scale)
        grad_norm, ok = _kkt_norm(x, g, lb, ub, coef_ix, limit, tol)
        if ok:
            return x, n_steps, grad_norm, True
        free, sum_active = _free_mask(x, g, lb, ub, coef_ix, limit)
        if not free.any():
            return x, n_steps, grad_norm, True
        idx = np.nonzero(free)[0]
        H = ev.H[np.ix_(idx, idx)]
        try:
            step_free = np.linalg.solve(H + 1e-10 * np.eye(idx.size), g[idx])
        except np.linalg.LinAlgError:
            return x, n_steps, grad_norm, False
        step = np.zeros_like(x)
        step[idx] = step_free
        if sum_active and coef_ix.size:
            signs = np.sign(x[coef_ix])
            signs[signs == 0] = 1.0
            sel = free[coef_ix]
            nf = sel.sum()
            if nf:
                lam = (signs[sel] @ step[coef_ix][sel]) / nf
                step[coef_ix[sel]] -= lam * signs[sel]

        improved = False
        damp = 1.0
        for _ in range(25):
            x_new = np.clip(x + damp * step, lb, np.where(np.isinf(ub), x + damp * step, ub))
            if coef_ix.size:
                s = np.abs(x_new[coef_ix]).sum()
                if s > limit:
                    x_new[coef_ix] *= limit / s
            ev_new = engine.evaluate(x_new, order=2)
            if ev_new.loglik > ev.loglik + 1e-14 * max(1.0, abs(ev.loglik)):
                x, ev = x_new, ev_new
                improved = True
                break
            damp *= 0.5
        n_steps += 1
        if not improved:
            break
    g = ev.score / scale
    tol = _effective_tol(cfg.grad_tol, ev.loglik, scale)
    grad_norm, ok = _kkt_norm(x, g, lb, ub, coef_ix, limit, tol)
    return x, n_steps, grad_norm, ok
