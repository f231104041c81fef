"""Intensity filtering, quasi-log-likelihood, analytic score, and the
empirical H/G information matrices.

The quasi-log-likelihood is the working Poisson likelihood

    l(theta) = sum_t sum_i ( y_it log lambda_it - lambda_it ),

summed over t = max(q, r, 1)..T.  Scores use the derivative recursions

    d lambda_t / d theta_k = driver_t,k + sum_j A_j d lambda_{t-j} / d theta_k

with driver W^(l) lambda_{t-i} for alpha_il, W^(l) Y_{t-j} for beta_jl,
W^(l) X_{k,t} for gamma_kl, and 1 (or e_i) for the intercept; derivatives
of the initialized pre-sample intensities are zero.  The log link runs the
same recursions on nu = log lambda with log(Y + 1) in place of Y.

H is the empirical quasi information; G averages per-time score outer
products (the empirical counterpart needing no copula knowledge); the
sandwich is H^-1 G H^-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (ModelSpec, ParameterVector, check_theta, pack, param_layout,
                    unpack, validate_counts, validate_covariates)
from .weights import WeightMatrixSet

LAMBDA_FLOOR = 1e-10
NU_CLIP = 300.0

INIT_STRATEGIES = ("first_obs", "global_mean", "zero", "supplied")


class LikelihoodError(ValueError):
    """Raised for invalid likelihood inputs."""


class SingularInformationError(RuntimeError):
    """Raised when the empirical quasi information H is numerically singular."""

    def __init__(self, message: str, condition_number: float):
        super().__init__(message)
        self.condition_number = condition_number


@dataclass
class FilterState:
    """Filtered linear-predictor panel and (optionally) its derivatives.

    ``linpred`` holds lambda for the linear link and nu for the log link,
    shape (p, T+1); columns before the first initialized lag are NaN.
    Derivative panels, when materialized, have shape (T+1, p, K) with zeros
    before the likelihood start ``t0``.
    """

    linpred: np.ndarray
    t0: int
    link: str
    init_strategy: str
    derivs: np.ndarray | None = None

    @property
    def intensity(self) -> np.ndarray:
        if self.link == "log_linear":
            with np.errstate(over="ignore", invalid="ignore"):
                return np.exp(np.clip(self.linpred, -NU_CLIP, NU_CLIP))
        return self.linpred


@dataclass
class InfoMatrices:
    """Empirical quasi information H, outer-product matrix G, and the
    sandwich H^-1 G H^-1 (all normalized by the number of summed times)."""

    H: np.ndarray
    G: np.ndarray
    sandwich: np.ndarray


@dataclass
class EvalResult:
    loglik: float
    score: np.ndarray | None = None
    H: np.ndarray | None = None
    G: np.ndarray | None = None
    linpred: np.ndarray | None = None
    derivs: np.ndarray | None = None


class QuasiLikelihood:
    """Evaluation engine for a fixed dataset.

    Precomputes every theta-independent transform (lagged W^(l) panels of
    the observations and covariates) so repeated evaluations inside an
    optimizer touch only the theta-dependent recursion.
    """

    def __init__(self, spec: ModelSpec, W: WeightMatrixSet, Y: np.ndarray,
                 X: np.ndarray | None = None, init: str = "first_obs",
                 init_values: np.ndarray | None = None):
        spec.check_weights(W)
        Y = validate_counts(Y)
        p, n_times = Y.shape
        if p != W.p:
            raise LikelihoodError(f"counts panel has {p} locations, weights have {W.p}")
        T = n_times - 1
        t0 = max(spec.q, spec.r, 1)
        if T < t0:
            raise LikelihoodError(f"insufficient observations: T = {T} < max(q, r, 1) = {t0}")
        if init not in INIT_STRATEGIES:
            raise LikelihoodError(f"unknown init strategy {init!r}")
        X = validate_covariates(X, spec, p, T)

        self.spec = spec
        self.W = W
        self.Y = Y
        self.X = X
        self.p, self.T, self.t0 = p, T, t0
        self.init = init
        self.layout = param_layout(spec, p)
        self.K = self.layout.K
        self.log_link = spec.link == "log_linear"

        obs = np.log1p(Y) if self.log_link else Y
        self.ts = np.arange(t0, T + 1)
        self.N = self.ts.size
        self.Y_ts = Y[:, self.ts]

        max_b = max(spec.b) if spec.b else -1
        WfY = [np.asarray(W.dot(ell, obs)) for ell in range(max_b + 1)]
        beta_cols = []
        for _, lag, ell in self.layout.beta:
            beta_cols.append(WfY[ell][:, self.ts - lag])
        gamma_cols = []
        if X is not None:
            WX = {}
            for k in range(spec.m):
                for ell in range(spec.s[k] + 1):
                    WX[(k, ell)] = np.asarray(W.dot(ell, X[k]))
            for _, k, ell in self.layout.gamma:
                gamma_cols.append(WX[(k - 1, ell)][:, self.ts])
        # (n_cols, p, N) stacks; empty stacks keep a zero first axis
        self._beta_stack = np.stack(beta_cols) if beta_cols else np.zeros((0, p, self.N))
        self._gamma_stack = np.stack(gamma_cols) if gamma_cols else np.zeros((0, p, self.N))

        self._z_init = self._initial_state(init_values)
        self._W_dense = W.dense_all()
        self._const_drivers = None

    def _initial_state(self, init_values) -> np.ndarray:
        """(p, q) linear-predictor columns for times t0-q .. t0-1."""
        q, p = self.spec.q, self.p
        if q == 0:
            return np.zeros((p, 0))
        if self.init == "supplied":
            if init_values is None:
                raise LikelihoodError("init='supplied' requires init_values")
            vals = np.asarray(init_values, dtype=float)
            if vals.ndim == 1:
                vals = np.repeat(vals[:, None], q, axis=1)
            if vals.shape != (p, q):
                raise LikelihoodError(f"init_values must have shape ({p},) or ({p}, {q})")
            return vals.copy()
        if self.init == "zero":
            return np.zeros((p, q))
        if self.init == "first_obs":
            cols = self.Y[:, self.t0 - q:self.t0]
        else:  # global_mean
            cols = np.repeat(self.Y.mean(axis=1)[:, None], q, axis=1)
        return np.log1p(cols) if self.log_link else cols.astype(float)

    # ------------------------------------------------------------------
    def evaluate(self, flat_theta: np.ndarray, order: int = 1,
                 materialize: bool = False,
                 streaming: bool | None = None) -> EvalResult:
        """order 0: loglik; 1: + score; 2: + H and G.

        ``streaming`` (the default for feedback models unless panels are
        materialized) keeps only the q most recent derivative panels in
        memory; both modes produce the same results.
        """
        theta = unpack(np.asarray(flat_theta, dtype=float), self.spec)
        check_theta(theta, self.spec, self.p)
        spec, p = self.spec, self.p

        delta_vec = (np.full(p, theta.delta[0]) if theta.delta.size == 1
                     else theta.delta)
        base = np.repeat(delta_vec[:, None], self.N, axis=1)
        beta_flat = np.concatenate(theta.beta) if theta.beta else np.zeros(0)
        gamma_flat = np.concatenate(theta.gamma) if theta.gamma else np.zeros(0)
        if beta_flat.size:
            base += np.tensordot(beta_flat, self._beta_stack, axes=(0, 0))
        if gamma_flat.size:
            base += np.tensordot(gamma_flat, self._gamma_stack, axes=(0, 0))

        if spec.q == 0:
            derivs = self._constant_drivers() if order >= 1 else None
            return self._collect_tensor(base, derivs, order, materialize)

        if streaming is None:
            streaming = not materialize
        if streaming and not materialize:
            return self._feedback_streaming(theta, base, order)
        Z, derivs = self._feedback_materialized(theta, base, order)
        return self._collect_tensor(Z, derivs, order, materialize)

    def _constant_drivers(self) -> np.ndarray:
        """(N, p, K) derivative panels for q = 0 (theta-independent)."""
        if self._const_drivers is None:
            N, p, K = self.N, self.p, self.K
            D = np.zeros((N, p, K))
            if self.spec.intercept == "homogeneous":
                D[:, :, 0] = 1.0
            else:
                D[:, :, :p] = np.eye(p)
            for c, (ix, _, _) in enumerate(self.layout.beta):
                D[:, :, ix] = self._beta_stack[c].T
            for c, (ix, _, _) in enumerate(self.layout.gamma):
                D[:, :, ix] = self._gamma_stack[c].T
            self._const_drivers = D
        return self._const_drivers

    def _feedback_matrices(self, theta) -> list[np.ndarray]:
        A = []
        for coefs in theta.alpha:
            M = np.zeros((self.p, self.p))
            for ell, c in enumerate(coefs):
                M += c * self._W_dense[ell]
            A.append(M)
        return A

    def _steps(self, theta, base, want_derivs):
        """Yield (n, z_n, D_n) stepping the recursion; D_n is None when
        derivatives are not requested."""
        spec, p, K = self.spec, self.p, self.K
        q = spec.q
        A = self._feedback_matrices(theta)
        z_hist = [self._z_init[:, q - 1 - i].copy() for i in range(q)]  # [0] = z_{t-1}
        dz_hist = [np.zeros((p, K)) for _ in range(q)] if want_derivs else None
        template = np.zeros((p, K))
        if want_derivs:
            if spec.intercept == "homogeneous":
                template[:, 0] = 1.0
            else:
                template[:, :p] = np.eye(p)

        for n in range(self.N):
            Wz = {}
            z = base[:, n].copy()
            for i in range(q):
                zi = z_hist[i]
                for ell, c in enumerate(theta.alpha[i]):
                    Wzi = zi if ell == 0 else np.asarray(self.W.dot(ell, zi))
                    Wz[(i, ell)] = Wzi
                    z += c * Wzi
            D = None
            if want_derivs:
                D = template.copy()
                for c, (ix, _, _) in enumerate(self.layout.beta):
                    D[:, ix] = self._beta_stack[c][:, n]
                for c, (ix, _, _) in enumerate(self.layout.gamma):
                    D[:, ix] = self._gamma_stack[c][:, n]
                for ix, lag, ell in self.layout.alpha:
                    D[:, ix] += Wz[(lag - 1, ell)]
                for i in range(q):
                    D += A[i] @ dz_hist[i]
                dz_hist = [D] + dz_hist[:-1]
            z_hist = [z] + z_hist[:-1]
            yield n, z, D

    def _feedback_materialized(self, theta, base, order):
        want = order >= 1
        Z = np.empty((self.p, self.N))
        derivs = np.zeros((self.N, self.p, self.K)) if want else None
        with np.errstate(over="ignore", invalid="ignore"):
            for n, z, D in self._steps(theta, base, want):
                Z[:, n] = z
                if want:
                    derivs[n] = D
        return Z, derivs

    def _feedback_streaming(self, theta, base, order) -> EvalResult:
        """One forward pass keeping only the q most recent derivative panels."""
        K = self.K
        Z = np.empty((self.p, self.N))
        loglik = 0.0
        st = np.zeros((self.N, K)) if order >= 1 else None
        H = np.zeros((K, K)) if order >= 2 else None
        with np.errstate(over="ignore", invalid="ignore"):
            for n, z, D in self._steps(theta, base, order >= 1):
                Z[:, n] = z
                if not np.all(np.isfinite(z)):  # diverging trial point
                    return self._non_finite_result(order)
                y = self.Y_ts[:, n]
                ll_n, resid, info_w = self._cell_terms(y, z)
                loglik += ll_n
                if order >= 1:
                    st[n] = D.T @ resid
                    if order >= 2:
                        H += D.T @ (info_w[:, None] * D)
        out = EvalResult(loglik=loglik)
        out.linpred = Z
        if order >= 1:
            out.score = st.sum(axis=0)
        if order >= 2:
            H /= self.N
            G = st.T @ st / self.N
            out.H = 0.5 * (H + H.T)
            out.G = 0.5 * (G + G.T)
        if not np.isfinite(out.loglik):
            return self._non_finite_result(order)
        return out

    def _non_finite_result(self, order) -> EvalResult:
        """Signal a numerically diverged evaluation (infeasible trial point)."""
        out = EvalResult(loglik=float("-inf"))
        if order >= 1:
            out.score = np.full(self.K, np.nan)
        if order >= 2:
            out.H = np.full((self.K, self.K), np.nan)
            out.G = np.full((self.K, self.K), np.nan)
        return out

    def _cell_terms(self, y, z):
        """(loglik contribution, score residual, H weight) for one time."""
        if self.log_link:
            zc = np.clip(z, -NU_CLIP, NU_CLIP)
            with np.errstate(over="ignore"):
                lam = np.exp(zc)
            return float(np.sum(y * zc - lam)), y - lam, lam
        lamf = np.maximum(z, LAMBDA_FLOOR)
        return (float(np.sum(y * np.log(lamf) - z)),
                (y - z) / lamf, 1.0 / lamf)

    def _collect_tensor(self, Z, derivs, order, materialize) -> EvalResult:
        Y_ts = self.Y_ts
        if not np.all(np.isfinite(Z)):
            out = self._non_finite_result(order)
            out.linpred = Z
            return out
        with np.errstate(over="ignore", invalid="ignore"):
            if self.log_link:
                Zc = np.clip(Z, -NU_CLIP, NU_CLIP)
                lam = np.exp(Zc)
                loglik = float(np.sum(Y_ts * Zc - lam))
                resid = Y_ts - lam          # score weight on derivatives of nu
                info_w = lam                # H weight
            else:
                lamf = np.maximum(Z, LAMBDA_FLOOR)
                loglik = float(np.sum(Y_ts * np.log(lamf) - Z))
                resid = (Y_ts - Z) / lamf
                info_w = 1.0 / lamf

            out = EvalResult(loglik=loglik)
            out.linpred = Z
            if order >= 1 and derivs is not None:
                st = np.einsum("npk,pn->nk", derivs, resid)
                out.score = st.sum(axis=0)
                if order >= 2:
                    H = np.einsum("npk,pn,npl->kl", derivs, info_w, derivs) / self.N
                    G = st.T @ st / self.N
                    out.H = 0.5 * (H + H.T)
                    out.G = 0.5 * (G + G.T)
                if materialize:
                    out.derivs = derivs
        if not np.isfinite(out.loglik):
            keep = out.linpred
            out = self._non_finite_result(order)
            out.linpred = keep
        return out

    def full_linpred(self, Z: np.ndarray) -> np.ndarray:
        """Embed the evaluated window into a (p, T+1) panel with the
        initialization columns filled and earlier columns NaN."""
        panel = np.full((self.p, self.T + 1), np.nan)
        panel[:, self.ts] = Z
        q = self.spec.q
        if q:
            panel[:, self.t0 - q:self.t0] = self._z_init
        return panel


# ----------------------------------------------------------------------
# One-shot functional wrappers


def filter_intensity(theta: ParameterVector, spec: ModelSpec, W: WeightMatrixSet,
                     Y: np.ndarray, X: np.ndarray | None = None,
                     init: str = "first_obs", init_values: np.ndarray | None = None,
                     materialize_derivs: bool = False) -> FilterState:
    """Run the intensity recursion over the sample."""
    engine = QuasiLikelihood(spec, W, Y, X, init=init, init_values=init_values)
    res = engine.evaluate(pack(theta), order=1 if materialize_derivs else 0,
                          materialize=materialize_derivs)
    derivs = None
    if materialize_derivs and res.derivs is not None:
        derivs = np.zeros((engine.T + 1, engine.p, engine.K))
        derivs[engine.ts] = res.derivs
    return FilterState(linpred=engine.full_linpred(res.linpred), t0=engine.t0,
                       link=spec.link, init_strategy=init, derivs=derivs)


def quasi_log_lik(state: FilterState, Y: np.ndarray) -> float:
    """sum_t sum_i (y log lambda - lambda) over the filtered window."""
    Y = validate_counts(Y)
    if Y.shape != state.linpred.shape:
        raise LikelihoodError(f"counts shape {Y.shape} does not match filtered panel "
                              f"{state.linpred.shape}")
    ts = slice(state.t0, None)
    lam = state.intensity[:, ts]
    lamf = np.maximum(lam, LAMBDA_FLOOR)
    return float(np.sum(Y[:, ts] * np.log(lamf) - lam))


def score(theta: ParameterVector, spec: ModelSpec, W: WeightMatrixSet,
          Y: np.ndarray, X: np.ndarray | None = None, init: str = "first_obs",
          init_values: np.ndarray | None = None) -> np.ndarray:
    """Analytic quasi-score vector (length K)."""
    engine = QuasiLikelihood(spec, W, Y, X, init=init, init_values=init_values)
    return engine.evaluate(pack(theta), order=1).score


def info_matrices(theta: ParameterVector, spec: ModelSpec, W: WeightMatrixSet,
                  Y: np.ndarray, X: np.ndarray | None = None,
                  init: str = "first_obs",
                  init_values: np.ndarray | None = None) -> InfoMatrices:
    """Empirical H, G, and sandwich at theta."""
    engine = QuasiLikelihood(spec, W, Y, X, init=init, init_values=init_values)
    res = engine.evaluate(pack(theta), order=2)
    return build_sandwich(res.H, res.G)


def build_sandwich(H: np.ndarray, G: np.ndarray) -> InfoMatrices:
    Hinv = invert_information(H)
    sandwich = Hinv @ G @ Hinv
    return InfoMatrices(H=H, G=G, sandwich=0.5 * (sandwich + sandwich.T))


def invert_information(H: np.ndarray) -> np.ndarray:
    cond = float(np.linalg.cond(H))
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularInformationError(
            f"quasi information matrix is numerically singular "
            f"(condition number {cond:.3e})", cond)
    return np.linalg.inv(H)
