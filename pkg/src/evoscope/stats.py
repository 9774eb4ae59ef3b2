"""Regression pipeline over run- and generation-level descriptor tables.

Three estimators cover everything downstream: OLS with task fixed
effects and cluster-robust errors for run-level descriptors, a linear
mixed model with a group-level random intercept for generation-level
breakthrough probabilities, and a 2-D binned probability table. All
predictors and responses are z-scored before fitting, so coefficients
are comparable across specs.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy import stats as sps

ZSCORE_MIN_ROWS = 2
LAMBDA_UPPER = 1e6


class ConstantColumnError(ValueError):
    """A column with zero sample variance cannot be z-scored."""


class ColumnGapError(ValueError):
    """A named model spec needs columns the table does not have."""

    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"table lacks required columns: {', '.join(self.missing)}")


def zscore(values) -> np.ndarray:
    """Center and scale to sample sd 1 (denominator n-1)."""
    v = np.asarray(values, dtype=float)
    if v.size < ZSCORE_MIN_ROWS:
        raise ValueError("z-scoring needs at least two rows")
    sd = v.std(ddof=1)
    if sd == 0.0:
        raise ConstantColumnError("constant column cannot be z-scored")
    return (v - v.mean()) / sd


def interaction_column(a_z: np.ndarray, b_z: np.ndarray) -> np.ndarray:
    """Product of two z-scored columns, re-standardized.

    Lives here so the concurrent and lagged mixed specs are guaranteed
    to construct it identically.
    """
    return zscore(np.asarray(a_z) * np.asarray(b_z))


@dataclass
class DesignMatrix:
    y: np.ndarray
    x: np.ndarray
    columns: list
    cluster_ids: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.x)):
            raise ValueError("design contains non-finite entries")
        if self.x.shape[0] != self.y.size:
            raise ValueError("X and y disagree on row count")
        if self.x.shape[1] != len(self.columns):
            raise ValueError("column names do not match X")


@dataclass
class MixedDesign:
    y: np.ndarray
    x: np.ndarray
    columns: list
    group_ids: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if len(set(np.asarray(self.group_ids).tolist())) < 2:
            raise ValueError("mixed model needs at least two groups")


@dataclass
class RegressionResult:
    columns: list
    beta: np.ndarray
    se: np.ndarray
    p: np.ndarray
    n: int
    groups: int
    r2: float = math.nan
    adj_r2: float = math.nan
    naive_se: Optional[np.ndarray] = None
    loglik: float = math.nan
    tau2: float = math.nan
    sigma2: float = math.nan
    converged: bool = True
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        rows = [
            {"column": c, "beta": float(b), "se": float(s), "p": float(pv)}
            for c, b, s, pv in zip(self.columns, self.beta, self.se, self.p)
        ]
        return {
            "rows": rows,
            "n": self.n,
            "groups": self.groups,
            "r2": None if math.isnan(self.r2) else self.r2,
            "adj_r2": None if math.isnan(self.adj_r2) else self.adj_r2,
            "loglik": None if math.isnan(self.loglik) else self.loglik,
            "tau2": None if math.isnan(self.tau2) else self.tau2,
            "sigma2": None if math.isnan(self.sigma2) else self.sigma2,
            "converged": self.converged,
            "notes": list(self.notes),
        }


def ols_fit(design: DesignMatrix) -> RegressionResult:
    """Normal-equations OLS with the cluster sandwich covariance.

    With G >= 2 clusters the covariance gets the small-cluster factor
    (G/(G-1)) * ((n-1)/(n-p)) and p-values use t with G-1 dof.  A single
    cluster falls back to heteroskedasticity-robust errors (HC1, t with
    n-p dof) with a warning.
    """
    x, y = design.x, design.y
    n, p = x.shape
    if n <= p:
        raise ValueError("need more rows than columns")
    if np.linalg.matrix_rank(x) < p:
        raise ValueError("design matrix is rank deficient")
    xtx = x.T @ x
    beta = np.linalg.solve(xtx, x.T @ y)
    resid = y - x @ beta
    sst = float(((y - y.mean()) ** 2).sum())
    ssr = float((resid ** 2).sum())
    r2 = 1.0 - ssr / sst if sst > 0.0 else 1.0
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / (n - p)
    bread = np.linalg.inv(xtx)
    naive_se = np.sqrt(np.diag(bread) * ssr / (n - p))

    clusters = np.asarray(design.cluster_ids)
    labels = list(dict.fromkeys(clusters.tolist()))
    g = len(labels)
    notes = []
    if g >= 2:
        meat = np.zeros((p, p))
        for label in labels:
            mask = clusters == label
            score = x[mask].T @ resid[mask]
            meat += np.outer(score, score)
        correction = (g / (g - 1)) * ((n - 1) / (n - p))
        cov = correction * bread @ meat @ bread
        dof = g - 1
    else:
        warnings.warn("single cluster: falling back to HC1 robust errors")
        notes.append("single-cluster-hc1-fallback")
        meat = (x * (resid ** 2)[:, None]).T @ x
        cov = (n / (n - p)) * bread @ meat @ bread
        dof = n - p
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = np.where(se > 0.0, beta / se, np.inf * np.sign(beta))
    pvals = 2.0 * sps.t.sf(np.abs(tvals), dof)
    return RegressionResult(
        columns=list(design.columns),
        beta=beta,
        se=se,
        p=pvals,
        n=n,
        groups=g,
        r2=r2,
        adj_r2=adj_r2,
        naive_se=naive_se,
        notes=notes,
    )


def _group_slices(group_ids) -> list:
    groups = np.asarray(group_ids)
    return [np.flatnonzero(groups == label)
            for label in dict.fromkeys(groups.tolist())]


def _mixed_profile(lmbda: float, x, y, slices):
    """GLS fit and profile log-likelihood at a fixed variance ratio.

    A_g = I + lambda * J has the closed-form inverse
    I - (lambda / (1 + lambda * n_g)) * J, so everything reduces to
    group sums instead of matrix inversions.
    """
    p = x.shape[1]
    n = y.size
    xtvx = np.zeros((p, p))
    xtvy = np.zeros(p)
    logdet = 0.0
    for idx in slices:
        xg, yg = x[idx], y[idx]
        ng = idx.size
        shrink = lmbda / (1.0 + lmbda * ng)
        xs = xg.sum(axis=0)
        ys = yg.sum()
        xtvx += xg.T @ xg - shrink * np.outer(xs, xs)
        xtvy += xg.T @ yg - shrink * xs * ys
        logdet += math.log(1.0 + lmbda * ng)
    beta = np.linalg.solve(xtvx, xtvy)
    quad = 0.0
    for idx in slices:
        rg = y[idx] - x[idx] @ beta
        shrink = lmbda / (1.0 + lmbda * idx.size)
        quad += float(rg @ rg) - shrink * float(rg.sum()) ** 2
    sigma2 = quad / n
    loglik = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0) - 0.5 * logdet
    return beta, sigma2, loglik, xtvx


def mixed_fit(design: MixedDesign, force_lambda: Optional[float] = None) -> RegressionResult:
    """Random-intercept linear mixed model by maximum likelihood.

    The ratio lambda = tau^2 / sigma^2 is profiled out and optimized by
    bounded 1-D search, with an explicit lambda=0 evaluation so the
    boundary always competes.  Standard errors are model-based GLS ones
    and p-values use the normal approximation.
    """
    x, y = design.x, design.y
    slices = _group_slices(design.group_ids)
    notes = []
    converged = True
    if force_lambda is not None:
        lam = force_lambda
    else:
        result = optimize.minimize_scalar(
            lambda l: -_mixed_profile(l, x, y, slices)[2],
            bounds=(0.0, LAMBDA_UPPER),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if not result.success:
            notes.append("lambda-search-not-converged")
            converged = False
        lam = float(result.x)
        if _mixed_profile(0.0, x, y, slices)[2] >= -result.fun:
            lam = 0.0
    beta, sigma2, loglik, xtvx = _mixed_profile(lam, x, y, slices)
    tau2 = lam * sigma2
    cov = sigma2 * np.linalg.inv(xtvx)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0.0, beta / se, np.inf * np.sign(beta))
    pvals = 2.0 * sps.norm.sf(np.abs(z))
    return RegressionResult(
        columns=list(design.columns),
        beta=beta,
        se=se,
        p=pvals,
        n=y.size,
        groups=len(slices),
        loglik=loglik,
        tau2=tau2,
        sigma2=sigma2,
        converged=converged,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# Binned breakthrough-probability table

@dataclass
class Bin2dTable:
    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray
    means: np.ndarray

    def rows(self) -> list:
        out = []
        bins = self.counts.shape[0]
        for i in range(bins):
            for j in range(bins):
                count = int(self.counts[i, j])
                out.append({
                    "x_bin": i,
                    "y_bin": j,
                    "count": count,
                    "mean_outcome": float(self.means[i, j]) if count else None,
                })
        return out


def _bin_index(v: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return np.zeros(v.size, dtype=int)
    idx = ((v - lo) / (hi - lo) * bins).astype(int)
    return np.minimum(idx, bins - 1)


def bin2d_breakthrough(x, y, outcome, bins: int) -> Bin2dTable:
    """Equal-width 2-D binning of a 0/1 outcome over both axes' ranges."""
    if bins < 2:
        raise ValueError("need at least two bins per axis")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    outcome = np.asarray(outcome, dtype=float)
    xi = _bin_index(x, bins)
    yi = _bin_index(y, bins)
    counts = np.zeros((bins, bins))
    sums = np.zeros((bins, bins))
    np.add.at(counts, (xi, yi), 1.0)
    np.add.at(sums, (xi, yi), outcome)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0.0, sums / np.maximum(counts, 1.0), np.nan)
    return Bin2dTable(
        x_edges=np.linspace(x.min(), x.max(), bins + 1),
        y_edges=np.linspace(y.min(), y.max(), bins + 1),
        counts=counts,
        means=means,
    )


# ---------------------------------------------------------------------------
# Named model specs over descriptor tables

@dataclass(frozen=True)
class OlsSpec:
    name: str
    response: str
    predictors: tuple


MODEL_SPECS = {
    "M1": OlsSpec("M1", "best_final_perf", ("avg_novelty",)),
    "M2": OlsSpec("M2", "best_final_perf", ("initial_novelty",)),
    "M3": OlsSpec("M3", "best_final_perf", ("zero_shot_perf",)),
    "M4": OlsSpec("M4", "best_final_perf", ("zero_shot_perf", "avg_novelty")),
    "M5": OlsSpec("M5", "best_final_perf", ("zero_shot_perf", "initial_novelty")),
    "M6": OlsSpec("M6", "best_final_perf", ("breakthrough_rate",)),
    "M7": OlsSpec("M7", "best_final_perf", ("zero_shot_perf",)),
    "M8": OlsSpec("M8", "best_final_perf", ("zero_shot_perf", "breakthrough_rate")),
    "ZS_PCD": OlsSpec("ZS_PCD", "best_final_perf", ("zero_shot_perf", "pcd")),
    "ZS_LRR_PCD": OlsSpec(
        "ZS_LRR_PCD", "best_final_perf", ("zero_shot_perf", "lrr", "pcd")
    ),
}


def _require(table: dict, names) -> None:
    missing = [n for n in names if n not in table]
    if missing:
        raise ColumnGapError(missing)


def _fixed_effect_columns(categories) -> tuple:
    """Indicator columns for every category except the first (absorbed)."""
    cats = [str(c) for c in categories]
    levels = sorted(set(cats))
    columns = []
    names = []
    for level in levels[1:]:
        columns.append(np.array([1.0 if c == level else 0.0 for c in cats]))
        names.append(f"task[{level}]")
    return columns, names


def build_ols_design(table: dict, spec: OlsSpec, task_col: str = "task_id",
                     cluster_col: str = "operator_id") -> DesignMatrix:
    """Assemble the z-scored design for a named OLS spec.

    Layout: intercept, z-scored predictors in spec order, then task
    indicator columns with the first task absorbed into the intercept.
    """
    _require(table, (spec.response,) + spec.predictors + (task_col, cluster_col))
    n = len(table[spec.response])
    y = zscore(table[spec.response])
    cols = [np.ones(n)]
    names = ["intercept"]
    for pred in spec.predictors:
        cols.append(zscore(table[pred]))
        names.append(f"{pred}_z")
    fe_cols, fe_names = _fixed_effect_columns(table[task_col])
    # A single task level contributes nothing (absorbed entirely).
    cols.extend(fe_cols)
    names.extend(fe_names)
    return DesignMatrix(
        y=y,
        x=np.column_stack(cols),
        columns=names,
        cluster_ids=np.asarray(table[cluster_col]),
    )


def fit_ols_spec(table: dict, spec_name: str, task_col: str = "task_id",
                 cluster_col: str = "operator_id") -> RegressionResult:
    if spec_name not in MODEL_SPECS:
        raise KeyError(f"unknown model spec {spec_name!r}")
    design = build_ols_design(table, MODEL_SPECS[spec_name], task_col, cluster_col)
    return ols_fit(design)


@dataclass(frozen=True)
class MixedSpec:
    name: str
    lagged: bool


MIXED_SPECS = {
    "concurrent": MixedSpec("concurrent", lagged=False),
    "lagged": MixedSpec("lagged", lagged=True),
}

_MIXED_PREDICTORS = ("h_fitness", "h_spatial", "mean_novelty", "max_novelty")


def build_mixed_design(table: dict, spec: MixedSpec, task_col: str = "task_id",
                       group_col: str = "operator_id",
                       run_col: str = "run_id") -> MixedDesign:
    """Generation-level design for the breakthrough-probability model.

    Predictors: the four entropy/novelty columns z-scored, their
    interaction (product of z-scores, re-standardized), the z-scored
    generation index, and task indicators.  The lagged variant pairs
    generation t predictors with the t+1 response inside each run and
    drops every run's final generation.
    """
    needed = _MIXED_PREDICTORS + (
        "generation", "prob_breakthrough", task_col, group_col, run_col,
    )
    _require(table, needed)
    n = len(table["prob_breakthrough"])
    if spec.lagged:
        by_run: dict = {}
        for i in range(n):
            by_run.setdefault(table[run_col][i], []).append(i)
        keep = []
        response_rows = []
        for run in by_run.values():
            ordered = sorted(run, key=lambda i: table["generation"][i])
            for row, nxt in zip(ordered, ordered[1:]):
                keep.append(row)
                response_rows.append(nxt)
        response = [table["prob_breakthrough"][i] for i in response_rows]
    else:
        keep = list(range(n))
        response = list(table["prob_breakthrough"])

    def col(name):
        return [table[name][i] for i in keep]

    y = zscore(response)
    cols = [np.ones(len(keep))]
    names = ["intercept"]
    z_cache = {}
    for pred in _MIXED_PREDICTORS:
        z_cache[pred] = zscore(col(pred))
        cols.append(z_cache[pred])
        names.append(f"{pred}_z")
    cols.append(interaction_column(z_cache["mean_novelty"], z_cache["h_spatial"]))
    names.append("mean_novelty_z:h_spatial_z")
    cols.append(zscore(col("generation")))
    names.append("generation_z")
    fe_cols, fe_names = _fixed_effect_columns(col(task_col))
    cols.extend(fe_cols)
    names.extend(fe_names)
    return MixedDesign(
        y=y,
        x=np.column_stack(cols),
        columns=names,
        group_ids=np.asarray(col(group_col)),
    )


def fit_mixed_spec(table: dict, spec_name: str, task_col: str = "task_id",
                   group_col: str = "operator_id",
                   run_col: str = "run_id") -> RegressionResult:
    if spec_name not in MIXED_SPECS:
        raise KeyError(f"unknown mixed spec {spec_name!r}")
    design = build_mixed_design(table, MIXED_SPECS[spec_name], task_col,
                                group_col, run_col)
    return mixed_fit(design)
