"""Monte Carlo replication engine for simulation studies.

A study plan pairs one data-generating model with one or more fitted
models; each replicate simulates a panel, fits every task, and records
parameter errors, test decisions, QIC, and forecast metrics.  Replicate i
draws its stream from splitmix64(master_seed, i + 1), so results are
independent of worker count and of which other replicates run; index 0 is
reserved for the covariate panel, which is generated once and shared by
all replicates.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .copulas import CopulaSpec
from .estimate import FitConfig, fit
from .forecast import mae, mse_params, mspe
from .inference import single_param_test, wald_test
from .likelihood import filter_intensity
from .model import ModelSpec, ParameterVector, unpack
from .simulate import SimulationConfig, generate_arma_covariate, simulate_path
from .weights import (AdjacencyList, GridSpec, WeightMatrixSet, build_grid_4nn,
                      build_grid_directional, from_adjacency, load_csv)

STUDY_KINDS = ("initialization", "size", "power", "anisotropy", "copula",
               "intercept_misspec", "link_misspec", "custom")

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA64 = 0x9E3779B97F4A7C15


def splitmix64(seed: int, index: int) -> int:
    """Named 64-bit mix of (seed, index); drives per-replicate streams."""
    z = (int(seed) + (int(index) + 1) * _GAMMA64) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def replicate_seed(master_seed: int, index: int) -> int:
    return splitmix64(master_seed, index + 1)


def covariate_seed(master_seed: int) -> int:
    return splitmix64(master_seed, 0)


@dataclass(frozen=True)
class WeightsRef:
    """Recipe for rebuilding a weight set inside worker processes."""

    kind: str  # grid4nn | grid_directional | adjacency | csv
    n: int | None = None
    path: str | None = None
    edges: tuple | None = None
    p: int | None = None
    max_order: int = 1

    def resolve(self) -> WeightMatrixSet:
        if self.kind == "grid4nn":
            return build_grid_4nn(GridSpec(self.n))
        if self.kind == "grid_directional":
            return build_grid_directional(GridSpec(self.n))
        if self.kind == "adjacency":
            adj = AdjacencyList.from_edges(self.p, [tuple(e) for e in self.edges])
            return from_adjacency(adj, max_order=self.max_order)
        if self.kind == "csv":
            return load_csv(self.path)
        raise ValueError(f"unknown weights kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.n is not None:
            d["n"] = self.n
        if self.path is not None:
            d["path"] = self.path
        if self.edges is not None:
            d["edges"] = [list(e) for e in self.edges]
            d["p"] = self.p
            d["max_order"] = self.max_order
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WeightsRef":
        edges = tuple(tuple(e) for e in d["edges"]) if "edges" in d else None
        return cls(kind=d["kind"], n=d.get("n"), path=d.get("path"),
                   edges=edges, p=d.get("p"), max_order=d.get("max_order", 1))


@dataclass(frozen=True)
class HypothesisTest:
    """A rejection decision recorded per replicate: either a single
    parameter (boundary-adjusted automatically for the linear link) or a
    general contrast C theta = c0."""

    name: str
    index: int | None = None
    C: tuple | None = None
    c0: tuple | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.index is not None:
            d["index"] = self.index
        if self.C is not None:
            d["C"] = [list(row) for row in self.C]
            d["c0"] = list(self.c0)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HypothesisTest":
        C = tuple(tuple(row) for row in d["C"]) if "C" in d else None
        c0 = tuple(d["c0"]) if "c0" in d else None
        return cls(name=d["name"], index=d.get("index"), C=C, c0=c0)


@dataclass(frozen=True)
class FitTask:
    name: str
    spec: ModelSpec
    weights: WeightsRef
    init: str = "first_obs"
    true_flat: tuple | None = None  # reference for MSE/bias when comparable
    tests: tuple[HypothesisTest, ...] = ()

    def to_dict(self) -> dict:
        d = {"name": self.name, "spec": self.spec.to_dict(),
             "weights": self.weights.to_dict(), "init": self.init,
             "tests": [t.to_dict() for t in self.tests]}
        if self.true_flat is not None:
            d["true_flat"] = list(self.true_flat)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitTask":
        return cls(name=d["name"], spec=ModelSpec.from_dict(d["spec"]),
                   weights=WeightsRef.from_dict(d["weights"]),
                   init=d.get("init", "first_obs"),
                   true_flat=tuple(d["true_flat"]) if "true_flat" in d else None,
                   tests=tuple(HypothesisTest.from_dict(t) for t in d.get("tests", [])))


@dataclass(frozen=True)
class CovariateRecipe:
    """Shared ARMA(1,1) covariate panels, generated once per study.

    ``scale_to_unit`` keeps the panels on the innovation scale [0, 1] so
    covariate effect sizes are comparable across coefficient choices.
    """

    count: int = 1
    ar: float = 0.5
    ma: float = 0.3
    scale_to_unit: bool = True

    def to_dict(self) -> dict:
        return {"count": self.count, "ar": self.ar, "ma": self.ma,
                "scale_to_unit": self.scale_to_unit}

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateRecipe":
        return cls(count=d.get("count", 1), ar=d.get("ar", 0.5), ma=d.get("ma", 0.3),
                   scale_to_unit=d.get("scale_to_unit", True))


@dataclass(frozen=True)
class StudyPlan:
    kind: str
    true_spec: ModelSpec
    true_theta_flat: tuple
    weights: WeightsRef
    T: int
    replicates: int
    master_seed: int
    copula: CopulaSpec
    fits: tuple[FitTask, ...]
    covariates: CovariateRecipe | None = None
    burn_in: int = 100
    alpha_level: float = 0.05

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}")
        if self.replicates < 1:
            raise ValueError("replicate count must be >= 1")
        if not self.fits:
            raise ValueError("at least one fit task is required")
        names = [t.name for t in self.fits]
        if len(set(names)) != len(names):
            raise ValueError(f"fit task names must be unique, got {names}")

    @property
    def true_theta(self) -> ParameterVector:
        return unpack(np.asarray(self.true_theta_flat), self.true_spec)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "true_spec": self.true_spec.to_dict(),
            "true_theta_flat": list(self.true_theta_flat),
            "weights": self.weights.to_dict(),
            "T": self.T,
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "copula": self.copula.to_dict(),
            "fits": [t.to_dict() for t in self.fits],
            "burn_in": self.burn_in,
            "alpha_level": self.alpha_level,
        }
        if self.covariates is not None:
            d["covariates"] = self.covariates.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "StudyPlan":
        return cls(
            kind=d["kind"],
            true_spec=ModelSpec.from_dict(d["true_spec"]),
            true_theta_flat=tuple(d["true_theta_flat"]),
            weights=WeightsRef.from_dict(d["weights"]),
            T=int(d["T"]),
            replicates=int(d["replicates"]),
            master_seed=int(d["master_seed"]),
            copula=CopulaSpec.from_dict(d["copula"]),
            fits=tuple(FitTask.from_dict(t) for t in d["fits"]),
            covariates=CovariateRecipe.from_dict(d["covariates"]) if "covariates" in d else None,
            burn_in=int(d.get("burn_in", 100)),
            alpha_level=float(d.get("alpha_level", 0.05)),
        )

    @classmethod
    def from_json(cls, text: str) -> "StudyPlan":
        return cls.from_dict(json.loads(text))


@dataclass
class StudyReport:
    plan: StudyPlan
    rows: list[dict]
    aggregates: dict

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "aggregates": self.aggregates,
                "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def rows_csv(self) -> str:
        """Flat CSV of replicate rows (vector-valued fields JSON-encoded)."""
        if not self.rows:
            return ""
        keys = sorted({k for row in self.rows for k in row})
        lines = [",".join(keys)]
        for row in self.rows:
            cells = []
            for k in keys:
                v = row.get(k, "")
                if isinstance(v, (list, tuple)):
                    cells.append('"' + json.dumps(list(v)) + '"')
                else:
                    cells.append(str(v))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def shared_covariates(plan: StudyPlan) -> np.ndarray | None:
    """The covariate stack shared by every replicate, or None."""
    m_needed = max([plan.true_spec.m] + [t.spec.m for t in plan.fits])
    if m_needed == 0:
        return None
    recipe = plan.covariates or CovariateRecipe(count=m_needed)
    if recipe.count < m_needed:
        raise ValueError(f"plan declares {recipe.count} covariates but specs need {m_needed}")
    p = plan.weights.resolve().p
    seed0 = covariate_seed(plan.master_seed)
    panels = [generate_arma_covariate(p, plan.T, splitmix64(seed0, k),
                                      ar=recipe.ar, ma=recipe.ma,
                                      scale_to_unit=recipe.scale_to_unit)
              for k in range(recipe.count)]
    return np.stack(panels)


def run_replicate(plan: StudyPlan, X: np.ndarray | None, index: int) -> list[dict]:
    """Simulate once, fit every task, and return one row per task."""
    seed = replicate_seed(plan.master_seed, index)
    W_gen = plan.weights.resolve()
    theta_true = plan.true_theta
    sim = simulate_path(
        theta_true, plan.true_spec, W_gen,
        X=X[:plan.true_spec.m] if (X is not None and plan.true_spec.m) else None,
        cfg=SimulationConfig(T=plan.T, seed=seed, burn_in=plan.burn_in,
                             copula=plan.copula))
    rows = []
    for task in plan.fits:
        row = {"replicate": index, "seed": seed, "model": task.name,
               "init": task.init, "converged": False}
        W_fit = task.weights.resolve()
        try:
            init_values = None
            init = task.init
            if task.init == "supplied":
                t0 = max(task.spec.q, task.spec.r, 1)
                q = task.spec.q
                init_values = sim.linpred[:, t0 - q:t0]
            res = fit(task.spec, W_fit, sim.counts,
                      X=X[:task.spec.m] if (X is not None and task.spec.m) else None,
                      cfg=FitConfig(init_strategy=init), init_values=init_values)
        except Exception as exc:  # counted, never aborts the study
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        row["converged"] = bool(res.converged)
        row["loglik"] = res.loglik
        row["qic"] = res.qic
        row["gradient_norm"] = res.gradient_norm
        row["theta_hat"] = res.theta_flat.tolist()
        if task.true_flat is not None:
            truth = np.asarray(task.true_flat, dtype=float)
            row["mse"] = mse_params(res.theta_flat, truth)
            row["bias"] = (res.theta_flat - truth).tolist()
        t0 = max(task.spec.q, task.spec.r, 1)
        state = filter_intensity(res.theta_hat, task.spec, W_fit, sim.counts,
                                 X=X[:task.spec.m] if (X is not None and task.spec.m) else None,
                                 init=init, init_values=init_values)
        lam_hat = state.intensity[:, t0:]
        y_eval = sim.counts[:, t0:]
        row["mae"] = mae(y_eval, lam_hat)
        row["mspe"] = mspe(y_eval, lam_hat)
        for test in task.tests:
            try:
                if test.index is not None:
                    result = single_param_test(res, test.index)
                else:
                    result = wald_test(res, np.asarray(test.C, dtype=float),
                                       np.asarray(test.c0, dtype=float))
                row[f"p_{test.name}"] = result.p_value
                row[f"reject_{test.name}"] = bool(result.p_value < plan.alpha_level)
            except Exception as exc:
                row[f"error_{test.name}"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _replicate_worker(args):
    plan_json, X, index = args
    return run_replicate(StudyPlan.from_json(plan_json), X, index)


def run_study(plan: StudyPlan, jobs: int = 1) -> StudyReport:
    """Execute the plan; deterministic for a fixed plan and master seed."""
    X = shared_covariates(plan)
    if jobs > 1:
        plan_json = plan.to_json()
        args = [(plan_json, X, i) for i in range(plan.replicates)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_replicate_worker, args, chunksize=4))
    else:
        chunks = [run_replicate(plan, X, i) for i in range(plan.replicates)]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r["replicate"], r["model"], r.get("init", "")))
    return StudyReport(plan=plan, rows=rows, aggregates=aggregate_rows(plan, rows))


def aggregate_rows(plan: StudyPlan, rows: list[dict]) -> dict:
    """Per-task summaries plus QIC model-preference frequencies."""
    agg: dict = {"replicates": plan.replicates, "models": {}}
    names = [t.name for t in plan.fits]
    for name in dict.fromkeys(names):
        sub = [r for r in rows if r["model"] == name]
        ok = [r for r in sub if r["converged"]]
        entry = {
            "n": len(sub),
            "n_converged": len(ok),
            "nonconvergence_rate": 1.0 - len(ok) / len(sub) if sub else float("nan"),
        }
        if ok and "mse" in ok[0]:
            mses = np.array([r["mse"] for r in ok])
            entry["median_mse"] = float(np.median(mses))
            entry["mean_mse"] = float(mses.mean())
            biases = np.array([r["bias"] for r in ok])
            entry["mean_bias"] = biases.mean(axis=0).tolist()
        if ok:
            entry["mean_mae"] = float(np.mean([r["mae"] for r in ok]))
            entry["mean_mspe"] = float(np.mean([r["mspe"] for r in ok]))
        for key in sorted({k for r in ok for k in r if k.startswith("reject_")}):
            decided = [r[key] for r in ok if key in r]
            if decided:
                entry[f"rate_{key[7:]}"] = float(np.mean(decided))
        agg["models"][name] = entry

    unique_models = list(dict.fromkeys(names))
    if len(unique_models) > 1:
        wins = {name: 0 for name in unique_models}
        complete = 0
        by_rep: dict[int, dict] = {}
        for r in rows:
            by_rep.setdefault(r["replicate"], {})[r["model"]] = r
        for rep_rows in by_rep.values():
            if all(name in rep_rows and rep_rows[name]["converged"]
                   for name in unique_models):
                complete += 1
                best = min(unique_models, key=lambda name: rep_rows[name]["qic"])
                wins[best] += 1
        agg["qic_complete_replicates"] = complete
        agg["qic_preference"] = {name: (wins[name] / complete if complete else float("nan"))
                                 for name in unique_models}
    return agg


def power_curve(plan: StudyPlan, param_index: int, values=None,
                lo: float = 0.0, hi: float = 0.5, n_points: int = 11,
                jobs: int = 1) -> list[dict]:
    """Rejection rate of each fit task's tests across a parameter grid.

    One true parameter varies; everything else (including the replicate
    seeds, which are shared across grid values) stays fixed.
    """
    if values is None:
        values = np.linspace(lo, hi, n_points)
    out = []
    for v in np.asarray(values, dtype=float):
        flat = np.asarray(plan.true_theta_flat, dtype=float).copy()
        flat[param_index] = v
        sub = replace(plan, kind="power", true_theta_flat=tuple(flat))
        report = run_study(sub, jobs=jobs)
        entry = {"value": float(v)}
        for name, stats in report.aggregates["models"].items():
            for key, val in stats.items():
                if key.startswith("rate_"):
                    entry[f"{name}.{key}"] = val
            entry[f"{name}.nonconvergence_rate"] = stats["nonconvergence_rate"]
        out.append(entry)
    return out


def covariate_information_diagnostic(spec: ModelSpec, W: WeightMatrixSet,
                                     X: np.ndarray, epsilon: float = 1.5) -> dict:
    """Eigenvalue growth diagnostic for the covariate information matrix.

    Computes F_T = sum_t Xt' Xt with Xt = [intercept | W^(l) X_{k,t}] and
    reports the smallest/largest eigenvalues together with the ratio
    sqrt(max) log(max)^(0.5 epsilon) / min.  No pass/fail threshold is
    claimed; small ratios support covariate-driven consistency.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None, :, :]
    p = W.p
    n_times = X.shape[2]
    cols_per_t = []
    for t in range(n_times):
        cols = []
        if spec.intercept == "homogeneous":
            cols.append(np.ones((p, 1)))
        else:
            cols.append(np.eye(p))
        for k in range(spec.m):
            for ell in range(spec.s[k] + 1):
                cols.append(np.asarray(W.dot(ell, X[k][:, t]))[:, None])
        cols_per_t.append(np.hstack(cols))
    F = sum(Xt.T @ Xt for Xt in cols_per_t)
    eigs = np.linalg.eigvalsh(F)
    lo_eig, hi_eig = float(eigs[0]), float(eigs[-1])
    ratio = float("inf")
    if lo_eig > 0 and hi_eig > 1:
        ratio = np.sqrt(hi_eig) * np.log(hi_eig) ** (0.5 * epsilon) / lo_eig
    return {"min_eigenvalue": lo_eig, "max_eigenvalue": hi_eig,
            "ratio": ratio, "epsilon": epsilon}
