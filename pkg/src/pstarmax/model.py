"""Model specification, parameter packing, stability conditions, and moments.

Intensity recursions (linear link, lambda; log link works on nu = log lambda
with log(Y + 1) in place of Y):

    lambda_t = delta + sum_i sum_l alpha_il W^(l) lambda_{t-i}
                     + sum_j sum_l beta_jl  W^(l) Y_{t-j}
                     + sum_k sum_l gamma_kl W^(l) X_{k,t}

Parameters pack into a flat vector in the fixed order: intercept block
(scalar delta_0 or one entry per location), then alpha by (time lag,
spatial order), then beta, then gamma.  All score / covariance indices
across the package refer to this order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .validation import ValidationReport
from .weights import WeightMatrixSet, column_sum_norm_tau

LINKS = ("linear", "log_linear")
INTERCEPTS = ("homogeneous", "inhomogeneous")

RANK_RTOL = 1e-8


class ModelError(ValueError):
    """Raised for inconsistent model specifications or parameter vectors."""


@dataclass(frozen=True)
class ModelSpec:
    """Link, intercept structure, and temporal/spatial model orders.

    ``a``, ``b``, ``s`` hold the maximum spatial order for each feedback
    lag, observation lag, and covariate; their lengths define the temporal
    orders q, r and the covariate count m.
    """

    link: str
    a: tuple[int, ...] = ()
    b: tuple[int, ...] = ()
    s: tuple[int, ...] = ()
    intercept: str = "homogeneous"

    def __post_init__(self):
        if self.link not in LINKS:
            raise ModelError(f"link must be one of {LINKS}, got {self.link!r}")
        if self.intercept not in INTERCEPTS:
            raise ModelError(f"intercept must be one of {INTERCEPTS}, got {self.intercept!r}")
        object.__setattr__(self, "a", tuple(int(x) for x in self.a))
        object.__setattr__(self, "b", tuple(int(x) for x in self.b))
        object.__setattr__(self, "s", tuple(int(x) for x in self.s))
        for name, orders in (("a", self.a), ("b", self.b), ("s", self.s)):
            if any(o < 0 for o in orders):
                raise ModelError(f"negative spatial order in {name}: {orders}")
        if self.r == 0 and self.m == 0:
            raise ModelError("r = 0 requires at least one covariate (pure feedback "
                             "models are not identifiable)")

    @property
    def q(self) -> int:
        return len(self.a)

    @property
    def r(self) -> int:
        return len(self.b)

    @property
    def m(self) -> int:
        return len(self.s)

    @property
    def max_spatial_order(self) -> int:
        return max([0, *self.a, *self.b, *self.s])

    def check_weights(self, W: WeightMatrixSet) -> None:
        if self.max_spatial_order > W.ell_max:
            raise ModelError(
                f"spec uses spatial order {self.max_spatial_order} but the weight "
                f"set only has orders 0..{W.ell_max}")

    def n_params(self, p: int) -> int:
        delta_len = 1 if self.intercept == "homogeneous" else p
        return delta_len + sum(o + 1 for o in self.a) + sum(o + 1 for o in self.b) \
            + sum(o + 1 for o in self.s)

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "intercept": self.intercept,
            "q": self.q,
            "r": self.r,
            "m": self.m,
            "a": list(self.a),
            "b": list(self.b),
            "s": list(self.s),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        spec = cls(link=d["link"], a=tuple(d.get("a", [])), b=tuple(d.get("b", [])),
                   s=tuple(d.get("s", [])), intercept=d.get("intercept", "homogeneous"))
        for key in ("q", "r", "m"):
            if key in d and d[key] != getattr(spec, key):
                raise ModelError(f"inconsistent {key} in spec document: "
                                 f"{d[key]} != len of order list")
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ParameterVector:
    """Packed model parameters: intercept delta, feedback alpha, observation
    beta, covariate gamma blocks."""

    delta: np.ndarray
    alpha: tuple[np.ndarray, ...] = ()
    beta: tuple[np.ndarray, ...] = ()
    gamma: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "delta", np.atleast_1d(np.asarray(self.delta, dtype=float)))
        for name in ("alpha", "beta", "gamma"):
            arrs = tuple(np.asarray(v, dtype=float) for v in getattr(self, name))
            object.__setattr__(self, name, arrs)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta.tolist(),
            "alpha": [v.tolist() for v in self.alpha],
            "beta": [v.tolist() for v in self.beta],
            "gamma": [v.tolist() for v in self.gamma],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterVector":
        return cls(delta=np.asarray(d["delta"], dtype=float),
                   alpha=tuple(np.asarray(v, dtype=float) for v in d.get("alpha", [])),
                   beta=tuple(np.asarray(v, dtype=float) for v in d.get("beta", [])),
                   gamma=tuple(np.asarray(v, dtype=float) for v in d.get("gamma", [])))

    def coefficient_sum(self) -> float:
        """sum |alpha| + sum |beta| over all lags and spatial orders."""
        return float(sum(np.abs(v).sum() for v in self.alpha)
                     + sum(np.abs(v).sum() for v in self.beta))


def check_theta(theta: ParameterVector, spec: ModelSpec, p: int | None = None) -> None:
    """Validate block shapes against the spec (and p when known)."""
    if spec.intercept == "homogeneous":
        if theta.delta.shape != (1,):
            raise ModelError(f"homogeneous intercept must be scalar, got shape {theta.delta.shape}")
    elif p is not None and theta.delta.shape != (p,):
        raise ModelError(f"inhomogeneous intercept must have length p={p}, "
                         f"got {theta.delta.shape}")
    for name, orders, arrs in (("alpha", spec.a, theta.alpha),
                               ("beta", spec.b, theta.beta),
                               ("gamma", spec.s, theta.gamma)):
        if len(arrs) != len(orders):
            raise ModelError(f"{name} has {len(arrs)} lags, spec declares {len(orders)}")
        for lag, (o, arr) in enumerate(zip(orders, arrs), start=1):
            if arr.shape != (o + 1,):
                raise ModelError(f"{name}[{lag}] must have length {o + 1}, got {arr.shape}")
    if spec.link == "linear":
        for name, arrs in (("delta", (theta.delta,)), ("alpha", theta.alpha),
                           ("beta", theta.beta), ("gamma", theta.gamma)):
            for arr in arrs:
                if np.any(arr < 0):
                    raise ModelError(f"linear link requires nonnegative {name} parameters")


def pack(theta: ParameterVector) -> np.ndarray:
    """Flatten (delta, alpha, beta, gamma) in the documented order."""
    parts = [theta.delta]
    parts.extend(theta.alpha)
    parts.extend(theta.beta)
    parts.extend(theta.gamma)
    return np.concatenate(parts) if parts else np.empty(0)


def unpack(flat: np.ndarray, spec: ModelSpec) -> ParameterVector:
    """Inverse of :func:`pack`; the intercept length is inferred from the
    total length (1 for homogeneous, p otherwise)."""
    flat = np.asarray(flat, dtype=float)
    n_coef = sum(o + 1 for o in spec.a) + sum(o + 1 for o in spec.b) + sum(o + 1 for o in spec.s)
    delta_len = flat.size - n_coef
    expected = 1 if spec.intercept == "homogeneous" else None
    if delta_len < 1 or (expected is not None and delta_len != expected):
        raise ModelError(f"flat vector of length {flat.size} does not match spec "
                         f"(needs {n_coef} coefficients plus the intercept block)")
    pos = delta_len
    delta = flat[:pos]

    def take(orders):
        nonlocal pos
        out = []
        for o in orders:
            out.append(flat[pos:pos + o + 1])
            pos += o + 1
        return tuple(out)

    alpha = take(spec.a)
    beta = take(spec.b)
    gamma = take(spec.s)
    return ParameterVector(delta=delta, alpha=alpha, beta=beta, gamma=gamma)


@dataclass(frozen=True)
class ParamLayout:
    """Column layout of the packed parameter vector."""

    K: int
    delta: slice
    alpha: tuple[tuple[int, int, int], ...]  # (flat index, time lag i, spatial order l)
    beta: tuple[tuple[int, int, int], ...]
    gamma: tuple[tuple[int, int, int], ...]

    @property
    def coef_indices(self) -> np.ndarray:
        """Indices of the alpha and beta coefficients (stationarity sum)."""
        return np.array([ix for ix, _, _ in self.alpha] + [ix for ix, _, _ in self.beta],
                        dtype=int)


def param_layout(spec: ModelSpec, p: int) -> ParamLayout:
    delta_len = 1 if spec.intercept == "homogeneous" else p
    pos = delta_len
    blocks = {}
    for name, orders in (("alpha", spec.a), ("beta", spec.b), ("gamma", spec.s)):
        entries = []
        for lag, o in enumerate(orders, start=1):
            for ell in range(o + 1):
                entries.append((pos, lag, ell))
                pos += 1
        blocks[name] = tuple(entries)
    return ParamLayout(K=pos, delta=slice(0, delta_len),
                       alpha=blocks["alpha"], beta=blocks["beta"], gamma=blocks["gamma"])


def param_names(spec: ModelSpec, p: int) -> list[str]:
    """Human-readable names aligned with the packed order."""
    layout = param_layout(spec, p)
    names = ["delta_0"] if spec.intercept == "homogeneous" else [f"delta_{i + 1}" for i in range(p)]
    for sym, entries in (("alpha", layout.alpha), ("beta", layout.beta), ("gamma", layout.gamma)):
        for _, lag, ell in entries:
            names.append(f"{sym}[{lag},{ell}]")
    return names


def coefficient_matrices(theta: ParameterVector, spec: ModelSpec,
                         W: WeightMatrixSet) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Lag-coefficient matrices A_i = sum_l alpha_il W^(l), B_j analogous."""
    spec.check_weights(W)
    check_theta(theta, spec, W.p)
    dense = W.dense_all()

    def build(arrs):
        mats = []
        for coefs in arrs:
            M = np.zeros((W.p, W.p))
            for ell, c in enumerate(coefs):
                M += c * dense[ell]
            mats.append(M)
        return mats

    return build(theta.alpha), build(theta.beta)


def stationarity_margin(theta: ParameterVector, spec: ModelSpec,
                        W: WeightMatrixSet | None = None,
                        criterion: str = "coefficient_sum") -> float:
    """Positive margin means the sufficient stationarity condition holds.

    ``coefficient_sum``: 1 - (sum |alpha| + sum |beta|), valid for
    row-normalized weights.  ``tau_adjusted``: 1/sqrt(tau) minus the same
    sum, with tau the maximum absolute column sum over the weight set.
    """
    total = theta.coefficient_sum()
    if criterion == "coefficient_sum":
        return 1.0 - total
    if criterion == "tau_adjusted":
        if W is None:
            raise ModelError("tau_adjusted criterion requires the weight set")
        return 1.0 / np.sqrt(column_sum_norm_tau(W)) - total
    raise ModelError(f"unknown stationarity criterion {criterion!r}")


def spectral_stationarity_norm(theta: ParameterVector, spec: ModelSpec,
                               W: WeightMatrixSet) -> float:
    """Diagnostic: spectral norm of sum_i (|A_i| + |B_i|), elementwise
    absolute values; < 1 is sufficient for stationarity and ergodicity."""
    A, B = coefficient_matrices(theta, spec, W)
    n = max(len(A), len(B))
    if n == 0:
        return 0.0
    total = np.zeros((W.p, W.p))
    for i in range(n):
        if i < len(A):
            total += np.abs(A[i])
        if i < len(B):
            total += np.abs(B[i])
    return float(np.linalg.norm(total, 2))


def stationary_mean(theta: ParameterVector, spec: ModelSpec, W: WeightMatrixSet,
                    mean_covariate_term: np.ndarray | None = None) -> np.ndarray:
    """(I - sum A_i - sum B_j)^{-1} (delta + gamma_bar) for the linear link.

    ``mean_covariate_term`` is the expected covariate contribution
    sum_k sum_l gamma_kl W^(l) E[X_{k,t}], a p-vector.
    """
    if spec.link != "linear":
        raise ModelError("closed-form moments exist only for the linear link; "
                         "log-linear moments are unsupported")
    if stationarity_margin(theta, spec) <= 0:
        raise ModelError("stationarity margin is nonpositive; no stationary mean")
    A, B = coefficient_matrices(theta, spec, W)
    M = np.eye(W.p)
    for mat in (*A, *B):
        M -= mat
    delta_vec = np.full(W.p, theta.delta[0]) if theta.delta.size == 1 else theta.delta
    rhs = delta_vec.astype(float).copy()
    if mean_covariate_term is not None:
        rhs = rhs + np.asarray(mean_covariate_term, dtype=float)
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:  # cannot occur when margin > 0
        raise ModelError(f"singular mean system: {exc}") from exc


def autocovariance(theta: ParameterVector, spec: ModelSpec, W: WeightMatrixSet,
                   Sigma: np.ndarray | None = None, h: int = 0) -> np.ndarray:
    """Autocovariance Gamma(h) of a first-order linear model.

    Gamma_0 solves Gamma_0 = Sigma + V with V = M V M' + B1 Sigma B1' and
    M = A1 + B1 (the Stein-equation form of the vec/Kronecker identity);
    Gamma(1) = M Gamma_0 - A1 Sigma; Gamma(h) = M^{h-1} Gamma(1).

    Sigma defaults to diag(stationary mean), the conditional-independence
    case; a user-supplied Sigma overrides it.
    """
    if spec.link != "linear":
        raise ModelError("closed-form moments exist only for the linear link")
    if spec.q > 1 or spec.r > 1:
        raise ModelError(f"autocovariance supports first-order models only "
                         f"(q, r) <= (1, 1); got ({spec.q}, {spec.r})")
    if h < 0:
        raise ModelError("lag h must be >= 0")
    p = W.p
    A, B = coefficient_matrices(theta, spec, W)
    A1 = A[0] if A else np.zeros((p, p))
    B1 = B[0] if B else np.zeros((p, p))
    if Sigma is None:
        Sigma = np.diag(stationary_mean(theta, spec, W))
    else:
        Sigma = np.asarray(Sigma, dtype=float)
        if Sigma.shape != (p, p):
            raise ModelError(f"Sigma must be {p} x {p}")
    M = A1 + B1
    C = B1 @ Sigma @ B1.T
    if np.abs(M).sum() == 0:
        V = C
    else:
        V = solve_discrete_lyapunov(M, C)
    Gamma0 = Sigma + V
    if h == 0:
        return Gamma0
    Gamma1 = M @ Gamma0 - A1 @ Sigma
    if h == 1:
        return Gamma1
    return np.linalg.matrix_power(M, h - 1) @ Gamma1


def validate_counts(Y: np.ndarray) -> np.ndarray:
    """Counts panel of shape (p, T+1): nonnegative finite integers."""
    Y = np.asarray(Y)
    if Y.ndim != 2:
        raise ModelError(f"counts panel must be 2-D (p, T+1), got shape {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ModelError("counts panel has non-finite entries")
    if np.any(Y < 0):
        raise ModelError("counts panel has negative entries")
    if np.any(Y != np.round(Y)):
        raise ModelError("counts panel has non-integer entries")
    return Y.astype(float)


def validate_covariates(X: np.ndarray | None, spec: ModelSpec, p: int, T: int,
                        link: str | None = None) -> np.ndarray | None:
    """Covariate stack of shape (m, p, T+1); linear link requires X >= 0."""
    link = link or spec.link
    if spec.m == 0:
        return None
    if X is None:
        raise ModelError(f"spec declares m={spec.m} covariates but none were supplied")
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and spec.m == 1:
        X = X[None, :, :]
    if X.shape != (spec.m, p, T + 1):
        raise ModelError(f"covariate stack must have shape ({spec.m}, {p}, {T + 1}), "
                         f"got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ModelError("covariate panel has non-finite entries")
    if link == "linear" and np.any(X < 0):
        raise ModelError("linear link requires nonnegative covariate values")
    return X


def check_identifiability(spec: ModelSpec, W: WeightMatrixSet,
                          Y: np.ndarray | None = None,
                          X: np.ndarray | None = None) -> ValidationReport:
    """Pre-flight identifiability checks.

    Flags: (i) no observation lags and no covariates (pure feedback);
    (ii) spatially constant covariates with positive spatial order;
    (iii) time-constant covariates combined with an inhomogeneous
    intercept; (iv) numerical rank deficiency of the stacked design matrix
    (requires the counts panel; skipped otherwise).  r = 0 with covariates
    is permitted but flagged as a warning.
    """
    report = ValidationReport()
    spec.check_weights(W)
    p = W.p

    if spec.r == 0:
        if spec.m == 0:
            report.add("pure_feedback", "r = 0 with no covariates: model regresses only "
                       "on the latent process and is not identifiable")
        else:
            report.add("no_observation_lags", "r = 0: model has no regression on past "
                       "counts; identification rests entirely on the covariates",
                       severity="warning")

    if X is not None:
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None, :, :]
        for k in range(min(spec.m, X.shape[0])):
            panel = X[k]
            scale = max(1.0, float(np.abs(panel).max()))
            spatially_const = np.all(np.abs(panel - panel.mean(axis=0, keepdims=True))
                                     <= 1e-12 * scale)
            if spatially_const and spec.s[k] > 0:
                report.add("spatially_constant_covariate",
                           f"covariate {k + 1} is spatially constant but has spatial "
                           f"order {spec.s[k]} > 0: the spatial-order parameters are "
                           "not identifiable (only their sum enters)", covariate=k + 1)
            time_const = np.all(np.abs(panel - panel[:, :1]) <= 1e-12 * scale)
            if time_const and spec.intercept == "inhomogeneous":
                report.add("time_constant_covariate",
                           f"covariate {k + 1} is time-constant and cannot be "
                           "distinguished from the inhomogeneous intercept",
                           covariate=k + 1)

    if Y is not None:
        design = _design_matrix(spec, W, np.asarray(Y, dtype=float), X)
        if design is not None and design.shape[0] >= design.shape[1]:
            svals = np.linalg.svd(design, compute_uv=False)
            rank = int(np.sum(svals > RANK_RTOL * (svals[0] if svals[0] > 0 else 1.0)))
            if rank < design.shape[1]:
                report.add("rank_deficient_design",
                           f"design matrix has numerical rank {rank} < "
                           f"{design.shape[1]} columns")
        elif design is not None:
            report.add("short_sample", "fewer stacked rows than design columns",
                       severity="warning")
    return report


def _design_matrix(spec: ModelSpec, W: WeightMatrixSet, Y: np.ndarray,
                   X: np.ndarray | None) -> np.ndarray | None:
    """Stack [intercept | W^l Y_{t-j} | W^l X_{k,t}] over usable times."""
    p, n_times = Y.shape
    T = n_times - 1
    t0 = max(spec.q, spec.r, 1)
    if t0 > T:
        return None
    ts = np.arange(t0, T + 1)
    cols = []
    if spec.intercept == "homogeneous":
        cols.append(np.ones((len(ts) * p, 1)))
    else:
        cols.append(np.tile(np.eye(p), (len(ts), 1)))
    for j, o in enumerate(spec.b, start=1):
        for ell in range(o + 1):
            lagged = W.dot(ell, Y[:, ts - j])
            cols.append(np.asarray(lagged).T.reshape(-1, 1))
    if X is not None:
        for k in range(spec.m):
            for ell in range(spec.s[k] + 1):
                transf = W.dot(ell, X[k][:, ts])
                cols.append(np.asarray(transf).T.reshape(-1, 1))
    return np.hstack(cols)
