"""Ordinary kriging over voxel coordinates for condition-free reconstruction.

Pipeline: empirical semivariogram from sample pairs, least-squares fit of an
exponential model, then one factorization of the kriging matrix reused for
every query voxel. Singular systems (e.g. constant fields collapsing the
variogram) fall back to inverse-distance weighting, recorded in metadata.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.optimize import least_squares
from scipy.spatial.distance import cdist, pdist

from .core import ArmVolume, SparseObservation, VoxelGridSpec

_COINCIDENT = 1e-10


@dataclass(frozen=True)
class VariogramModel:
    """Exponential variogram gamma(h) = nugget + sill * (1 - exp(-h / range))."""

    nugget: float
    sill: float
    range_m: float

    def __post_init__(self):
        if self.nugget < 0:
            raise ValueError("nugget must be >= 0")
        if self.sill <= 0:
            raise ValueError("sill must be > 0")
        if self.range_m <= 0:
            raise ValueError("range must be > 0")

    def gamma(self, h):
        h = np.asarray(h, dtype=np.float64)
        return (self.nugget + self.sill * (1.0 - np.exp(-h / self.range_m)))[()]

    def to_dict(self) -> dict:
        return {"nugget": self.nugget, "sill": self.sill, "range_m": self.range_m}


def empirical_variogram(coords: np.ndarray, values: np.ndarray,
                        n_bins: int = 15) -> tuple[np.ndarray, np.ndarray]:
    """Binned semivariance over all sample pairs.

    Returns (lag centers, mean semivariance) for the non-empty of n_bins
    uniform distance bins.
    """
    d = pdist(coords.astype(np.float64))
    g = 0.5 * pdist(values.reshape(-1, 1).astype(np.float64),
                    metric="sqeuclidean")
    edges = np.linspace(0.0, d.max() + 1e-9, n_bins + 1)
    which = np.digitize(d, edges) - 1
    lags, semis = [], []
    for b in range(n_bins):
        sel = which == b
        if sel.any():
            lags.append(d[sel].mean())
            semis.append(g[sel].mean())
    return np.array(lags), np.array(semis)


def fit_variogram(lags: np.ndarray, semis: np.ndarray) -> VariogramModel:
    """Bounded least-squares fit of the exponential model."""
    h_max = float(lags.max())
    p0 = np.array([0.0, max(float(semis.max()), 1e-6), h_max / 3.0])
    lo = np.array([0.0, 1e-10, 1e-6 * h_max])
    hi = np.array([max(float(semis.max()), 1e-6), 10.0 * max(float(semis.max()), 1e-6),
                   10.0 * h_max])
    p0 = np.clip(p0, lo, hi)

    def resid(p):
        return VariogramModel(*p).gamma(lags) - semis

    fit = least_squares(resid, p0, bounds=(lo, hi))
    return VariogramModel(nugget=float(fit.x[0]), sill=float(fit.x[1]),
                          range_m=float(fit.x[2]))


def kriging_system(coords: np.ndarray, vario: VariogramModel,
                   query: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve one ordinary-kriging system; returns (weights, Lagrange multiplier).

    The unbiasedness row forces the weights to sum to one. Coincident
    sample/query pairs use gamma = 0 exactly, which makes zero-nugget kriging
    an exact interpolator.
    """
    n = coords.shape[0]
    a = _kriging_matrix(coords, vario)
    b = np.empty(n + 1)
    d = np.linalg.norm(coords - query[None, :], axis=1)
    b[:n] = vario.gamma(d)
    b[:n][d < _COINCIDENT] = 0.0
    b[n] = 1.0
    x = np.linalg.solve(a, b)
    return x[:n], float(x[n])


def _kriging_matrix(coords: np.ndarray, vario: VariogramModel) -> np.ndarray:
    n = coords.shape[0]
    a = np.ones((n + 1, n + 1))
    a[:n, :n] = vario.gamma(cdist(coords, coords))
    np.fill_diagonal(a, 0.0)
    a[n, n] = 0.0
    return a


def idw_predict(coords: np.ndarray, values: np.ndarray, queries: np.ndarray,
                power: float = 2.0) -> np.ndarray:
    """Inverse-distance weighting (power 2), exact at sample locations."""
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], 4096):
        q = queries[start:start + 4096]
        d = cdist(q, coords)
        exact = d < _COINCIDENT
        w = 1.0 / np.maximum(d, _COINCIDENT) ** power
        w[exact.any(axis=1)] = 0.0
        w[exact] = 1.0
        out[start:start + 4096] = (w @ values) / w.sum(axis=1)
    return out


def kriging_predict(obs: SparseObservation, spec: VoxelGridSpec,
                    vario: VariogramModel | None = None, n_bins: int = 15,
                    max_samples: int = 2000, seed: int = 0) -> tuple[ArmVolume, dict]:
    """Ordinary kriging of the full voxel grid from sparse observations.

    Returns the predicted volume and metadata (variogram, fallback flag,
    subsampling). Requires at least 4 samples at more than one location.
    """
    if len(obs) < 4:
        raise ValueError(f"kriging requires at least 4 samples, got {len(obs)}")
    coords = obs.coords().astype(np.float64) * spec.delta
    values = np.asarray(obs.values, dtype=np.float64)
    if np.all(np.all(coords == coords[0], axis=1)):
        raise ValueError("kriging requires samples at more than one location")

    meta: dict = {"method": "ordinary_kriging", "n_samples": len(obs)}
    if len(obs) > max_samples:
        keep = np.random.default_rng(seed).choice(len(obs), size=max_samples,
                                                  replace=False)
        coords, values = coords[keep], values[keep]
        meta["subsampled_to"] = max_samples

    if vario is None:
        lags, semis = empirical_variogram(coords, values, n_bins=n_bins)
        try:
            vario = fit_variogram(lags, semis)
        except ValueError:
            vario = None
    meta["variogram"] = vario.to_dict() if vario is not None else None

    ll, ww, hh = np.meshgrid(np.arange(spec.L), np.arange(spec.W), np.arange(spec.H),
                             indexing="ij")
    queries = np.stack([ll.ravel(), ww.ravel(), hh.ravel()], axis=1).astype(np.float64)
    queries *= spec.delta

    pred = None
    if vario is not None:
        pred = _solve_all(coords, values, queries, vario)
    if pred is None:
        pred = idw_predict(coords, values, queries)
        meta["method"] = "idw_fallback"
    return ArmVolume(values=pred.reshape(spec.shape), spec=spec), meta


def _solve_all(coords: np.ndarray, values: np.ndarray, queries: np.ndarray,
               vario: VariogramModel) -> np.ndarray | None:
    """Factor the kriging matrix once and solve every query; None if singular."""
    n = coords.shape[0]
    a = _kriging_matrix(coords, vario)
    try:
        lu, piv = linalg.lu_factor(a)
    except linalg.LinAlgError:
        return None
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], 4096):
        q = queries[start:start + 4096]
        d = cdist(coords, q)
        b = np.ones((n + 1, q.shape[0]))
        b[:n] = vario.gamma(d)
        b[:n][d < _COINCIDENT] = 0.0
        w = linalg.lu_solve((lu, piv), b)
        out[start:start + 4096] = w[:n].T @ values
    if not np.isfinite(out).all():
        return None
    return out
