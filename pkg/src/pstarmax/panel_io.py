"""CSV serialization for count, intensity, covariate, and forecast panels.

Long format with a mandatory header: ``t,location,value`` with 0-based
times and 1-based locations; covariate files add a 1-based ``covariate``
column.
"""

from __future__ import annotations

import csv

import numpy as np


class PanelFormatError(ValueError):
    """Raised for malformed panel CSV files."""


def save_panel_csv(path, panel: np.ndarray) -> None:
    """Write a (p, T+1) panel as t,location,value rows."""
    panel = np.asarray(panel)
    p, n_times = panel.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "location", "value"])
        for t in range(n_times):
            for i in range(p):
                val = panel[i, t]
                writer.writerow([t, i + 1, int(val) if float(val).is_integer() else repr(float(val))])


def load_panel_csv(path) -> np.ndarray:
    """Read a t,location,value file into a (p, T+1) float panel."""
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["t", "location", "value"]:
            raise PanelFormatError(f"bad header in {path}: expected t,location,value")
        for line_no, line in enumerate(reader, start=2):
            if not line:
                continue
            try:
                t, loc, val = int(line[0]), int(line[1]), float(line[2])
            except (ValueError, IndexError) as exc:
                raise PanelFormatError(f"{path}:{line_no}: cannot parse row {line!r}") from exc
            if t < 0 or loc < 1:
                raise PanelFormatError(f"{path}:{line_no}: t must be >= 0 and location >= 1")
            cells[(loc - 1, t)] = val
    if not cells:
        raise PanelFormatError(f"no data rows in {path}")
    p = max(k[0] for k in cells) + 1
    n_times = max(k[1] for k in cells) + 1
    if len(cells) != p * n_times:
        raise PanelFormatError(f"{path}: panel is not complete "
                               f"({len(cells)} cells, expected {p * n_times})")
    panel = np.empty((p, n_times))
    for (i, t), val in cells.items():
        panel[i, t] = val
    return panel


def save_covariates_csv(path, X: np.ndarray) -> None:
    """Write an (m, p, T+1) stack as t,location,covariate,value rows."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None, :, :]
    m, p, n_times = X.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "location", "covariate", "value"])
        for k in range(m):
            for t in range(n_times):
                for i in range(p):
                    writer.writerow([t, i + 1, k + 1, repr(float(X[k, i, t]))])


def load_covariates_csv(path) -> np.ndarray:
    """Read a t,location,covariate,value file into an (m, p, T+1) stack."""
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["t", "location", "covariate", "value"]:
            raise PanelFormatError(f"bad header in {path}: expected t,location,covariate,value")
        for line_no, line in enumerate(reader, start=2):
            if not line:
                continue
            try:
                t, loc, k, val = int(line[0]), int(line[1]), int(line[2]), float(line[3])
            except (ValueError, IndexError) as exc:
                raise PanelFormatError(f"{path}:{line_no}: cannot parse row {line!r}") from exc
            if t < 0 or loc < 1 or k < 1:
                raise PanelFormatError(f"{path}:{line_no}: indices out of range")
            cells[(k - 1, loc - 1, t)] = val
    if not cells:
        raise PanelFormatError(f"no data rows in {path}")
    m = max(c[0] for c in cells) + 1
    p = max(c[1] for c in cells) + 1
    n_times = max(c[2] for c in cells) + 1
    if len(cells) != m * p * n_times:
        raise PanelFormatError(f"{path}: covariate stack is not complete")
    X = np.empty((m, p, n_times))
    for (k, i, t), val in cells.items():
        X[k, i, t] = val
    return X


def save_forecast_csv(path, Y: np.ndarray, lambda_hat: np.ndarray, t_start: int = 0) -> None:
    """Write aligned observations and predictions as t,location,y,lambda_hat."""
    Y = np.asarray(Y)
    L = np.asarray(lambda_hat)
    if Y.shape != L.shape:
        raise PanelFormatError(f"panel shapes differ: {Y.shape} vs {L.shape}")
    p, n_times = Y.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "location", "y", "lambda_hat"])
        for t in range(n_times):
            for i in range(p):
                writer.writerow([t_start + t, i + 1, int(Y[i, t]), repr(float(L[i, t]))])
