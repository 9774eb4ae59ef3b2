"""2-D landscape embedding for trajectory visualisation.

A stress-minimizing MDS (SMACOF with precomputed dissimilarities) embeds
a sampled base set; everything else is placed by k-NN Shepard
interpolation against the base coordinates.  Coordinates are only for
looking at, so the contract is about stress, not about any particular
orientation of the layout.
"""

import math
from dataclasses import dataclass, field

import numpy as np

OOS_EPS = 1e-8
DEFAULT_CAP_PER_BUCKET = 60
DEFAULT_TOTAL_CAP = 4000


@dataclass
class MdsConfig:
    max_iter: int = 300
    eps: float = 1e-3
    seed: int = 42


@dataclass
class MdsModel:
    ids: list
    coords: np.ndarray
    stress: float
    iterations: int
    config: MdsConfig
    stress_history: list = field(default_factory=list)


def _check_distance_matrix(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError("distance matrix must be square")
    if dist.shape[0] < 2:
        raise ValueError("need at least two points to embed")
    if not np.allclose(dist, dist.T, atol=1e-12):
        raise ValueError("distance matrix must be symmetric")
    if np.any(np.diag(dist) != 0.0):
        raise ValueError("distance matrix must have a zero diagonal")
    if np.any(dist < 0.0):
        raise ValueError("distances must be nonnegative")
    return dist


def raw_stress(dist: np.ndarray, coords: np.ndarray) -> float:
    """Sum over i<j of (D_ij - dhat_ij)^2."""
    delta = coords[:, None, :] - coords[None, :, :]
    dhat = np.sqrt((delta ** 2).sum(axis=2))
    iu = np.triu_indices(dist.shape[0], k=1)
    diff = dist[iu] - dhat[iu]
    return float((diff ** 2).sum())


def _guttman_update(dist: np.ndarray, coords: np.ndarray) -> np.ndarray:
    m = dist.shape[0]
    delta = coords[:, None, :] - coords[None, :, :]
    dhat = np.sqrt((delta ** 2).sum(axis=2))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dhat > 0.0, dist / np.where(dhat > 0.0, dhat, 1.0), 0.0)
    b = -ratio
    np.fill_diagonal(b, 0.0)
    np.fill_diagonal(b, -b.sum(axis=1))
    return (b @ coords) / m


def mds_fit(dist: np.ndarray, cfg: MdsConfig = None, ids: list = None) -> MdsModel:
    """SMACOF from one seeded standard-normal start.

    Iterates the Guttman transform, evaluating stress after each update;
    stops when the decrease falls below cfg.eps or at cfg.max_iter.
    Stress never increases between iterations (majorization guarantee).
    """
    cfg = cfg or MdsConfig()
    dist = _check_distance_matrix(dist)
    m = dist.shape[0]
    rng = np.random.default_rng(cfg.seed)
    coords = rng.standard_normal((m, 2))
    previous = raw_stress(dist, coords)
    history = []
    iterations = 0
    for _ in range(cfg.max_iter):
        coords = _guttman_update(dist, coords)
        stress = raw_stress(dist, coords)
        iterations += 1
        history.append(stress)
        if stress > previous + 1e-9:
            raise AssertionError("SMACOF stress increased; update is broken")
        if previous - stress < cfg.eps:
            previous = stress
            break
        previous = stress
    return MdsModel(
        ids=list(ids) if ids is not None else list(range(m)),
        coords=coords,
        stress=previous,
        iterations=iterations,
        config=cfg,
        stress_history=history,
    )


def oos_place(d_to_base: np.ndarray, model: MdsModel, k: int = 8,
              p: float = 2.0) -> np.ndarray:
    """Shepard-interpolated coordinate from the k nearest base points.

    Weights 1/(d + 1e-8)^p make a coincident base point dominate without
    dividing by zero; the result is a convex combination of base
    coordinates, so it lies inside their hull.
    """
    d = np.asarray(d_to_base, dtype=float)
    m = model.coords.shape[0]
    if k > m:
        raise ValueError("k exceeds the number of base points")
    order = np.argsort(d, kind="stable")[:k]
    w = 1.0 / (d[order] + OOS_EPS) ** p
    return (w[:, None] * model.coords[order]).sum(axis=0) / w.sum()


def oos_place_many(d_matrix: np.ndarray, model: MdsModel, k: int = 8,
                   p: float = 2.0, block: int = 4000) -> np.ndarray:
    """Row-wise oos_place, processed in fixed-size blocks."""
    d_matrix = np.asarray(d_matrix, dtype=float)
    out = np.empty((d_matrix.shape[0], 2))
    for start in range(0, d_matrix.shape[0], block):
        stop = min(start + block, d_matrix.shape[0])
        chunk = d_matrix[start:stop]
        order = np.argsort(chunk, axis=1, kind="stable")[:, :k]
        d_sel = np.take_along_axis(chunk, order, axis=1)
        w = 1.0 / (d_sel + OOS_EPS) ** p
        coords = model.coords[order]
        out[start:stop] = (w[:, :, None] * coords).sum(axis=1) / w.sum(
            axis=1, keepdims=True
        )
    return out


def stratified_sample(buckets: dict, cap_per_bucket: int = DEFAULT_CAP_PER_BUCKET,
                      total_cap: int = DEFAULT_TOTAL_CAP, seed: int = 0) -> list:
    """Base-set selection for the embedding.

    buckets maps (operator, generation) keys to id lists.  Small corpora
    pass through untouched (fit the whole matrix); larger ones get a
    uniform without-replacement sample of up to cap_per_bucket per
    bucket.  Output preserves each bucket's original id order.
    """
    total = sum(len(ids) for ids in buckets.values())
    if total <= total_cap:
        out = []
        for key in sorted(buckets):
            out.extend(buckets[key])
        return out
    rng = np.random.default_rng(seed)
    out = []
    for key in sorted(buckets):
        ids = list(buckets[key])
        if len(ids) <= cap_per_bucket:
            out.extend(ids)
            continue
        chosen = rng.choice(len(ids), size=cap_per_bucket, replace=False)
        keep = set(int(c) for c in chosen)
        out.extend(v for i, v in enumerate(ids) if i in keep)
    return out


def robust_minmax(values: np.ndarray, lo_pct: float = 1.0,
                  hi_pct: float = 99.0) -> np.ndarray:
    """Percentile-clipped min-max to [0, 1]; constant input maps to 0."""
    v = np.asarray(values, dtype=float)
    lo = float(np.percentile(v, lo_pct))
    hi = float(np.percentile(v, hi_pct))
    if hi <= lo:
        return np.zeros_like(v)
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)
