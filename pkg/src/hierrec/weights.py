"""Weighting matrices for the reconciliation objective.

A :class:`WeightMatrix` is always the covariance-like matrix ``W`` of the
closed forms (the objective's metric is ``W^{-1}``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from hierrec.errors import InputError, NumericalError
from hierrec.hierarchy import Hierarchy, elementary_hierarchies, level_matrix

KINDS = ("identity", "diagonal", "full")
SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Symmetric positive-definite weighting.

    ``values`` is the diagonal for ``identity``/``diagonal`` and the full
    matrix for ``full``. ``intensity`` carries the shrinkage intensity when
    the matrix came from :func:`shrinkage_covariance`.
    """

    kind: str
    values: np.ndarray
    source: str = "unit"
    intensity: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown weight kind {self.kind!r}")
        v = np.array(self.values, dtype=float)
        if self.kind == "full":
            if v.ndim != 2 or v.shape[0] != v.shape[1]:
                raise InputError(f"full weight matrix must be square, got shape {v.shape}")
            scale = max(1.0, float(np.max(np.abs(v), initial=0.0)))
            if not np.allclose(v, v.T, rtol=0.0, atol=1e-12 * scale):
                raise InputError("weight matrix is not symmetric")
            v = 0.5 * (v + v.T)
            if not np.all(np.isfinite(v)) or np.any(np.diag(v) <= 0):
                raise NumericalError("weight matrix needs finite, positive diagonal entries")
            try:
                np.linalg.cholesky(v)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("weight matrix is not positive definite") from exc
        else:
            if v.ndim != 1:
                raise InputError("diagonal weights must be a vector")
            if v.size == 0:
                raise InputError("weight matrix must have dimension >= 1")
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise NumericalError("diagonal weights must be finite and > 0")
            if self.kind == "identity" and not np.all(v == 1.0):
                raise InputError("identity weights must be all ones")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def diag(cls, values, source: str = "unit") -> "WeightMatrix":
        return cls("diagonal", np.asarray(values, dtype=float), source)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.kind != "full"

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values) if self.kind == "full" else self.values

    def dense(self) -> np.ndarray:
        return self.values.copy() if self.kind == "full" else np.diag(self.values)

    def subset(self, idx) -> "WeightMatrix":
        """Principal submatrix on the index list ``idx``."""
        idx = np.asarray(idx, dtype=int)
        if self.kind == "full":
            return WeightMatrix("full", self.values[np.ix_(idx, idx)], self.source, self.intensity)
        kind = "identity" if self.kind == "identity" else "diagonal"
        return WeightMatrix(kind, self.values[idx], self.source, self.intensity)

    def __repr__(self) -> str:
        return f"WeightMatrix(kind={self.kind!r}, dim={self.dim}, source={self.source!r})"


@dataclass(frozen=True, eq=False)
class CombinationWeights:
    """Block-diagonal combination weights ``P_l`` (n_b x n_l) of one level."""

    level: int
    P: np.ndarray

    @property
    def blocks(self) -> tuple[np.ndarray, ...]:
        return tuple(self.P[self.P[:, j] != 0, j] for j in range(self.P.shape[1]))

    def vector(self) -> np.ndarray:
        """Per-bottom weight (each bottom series sits in exactly one block)."""
        return self.P.sum(axis=1)

    @classmethod
    def from_vector(cls, h: Hierarchy, l: int, p, normalize: bool = False) -> "CombinationWeights":
        """Scatter the per-bottom vector ``p`` into the level-``l`` block pattern.

        With ``normalize`` each elementary block is rescaled to sum to one,
        otherwise the sums are validated.
        """
        p = np.asarray(p, dtype=float).ravel()
        if p.shape != (h.n_b,):
            raise InputError(f"expected {h.n_b} combination weights, got {p.shape[0]}")
        P = np.zeros((h.n_b, h.level_sizes[l - 1]))
        for j, eh in enumerate(elementary_hierarchies(h, l)):
            idx = list(eh.bottom_indices)
            block = p[idx]
            if normalize:
                s = block.sum()
                if not s > 0:
                    raise InputError(f"block {eh.parent_id!r} has non-positive total weight")
                block = block / s
            P[idx, j] = block
        return validate_combination_weights(cls(l, P), h)


def validate_combination_weights(cw: CombinationWeights, h: Hierarchy) -> CombinationWeights:
    Cl = level_matrix(h, cw.level)
    Cl = Cl.toarray() if sparse.issparse(Cl) else np.asarray(Cl)
    P = np.asarray(cw.P, dtype=float)
    if P.shape != Cl.T.shape:
        raise InputError(f"P has shape {P.shape}, expected {Cl.T.shape}")
    if not np.array_equal(P != 0, Cl.T != 0):
        raise InputError("sparsity pattern of P does not match the level aggregation matrix")
    sizes = Cl.sum(axis=1)
    for j in range(P.shape[1]):
        block = P[Cl[j] != 0, j]
        single = sizes[j] == 1
        if np.any(block <= 0) or np.any(block > 1) or (not single and np.any(block >= 1)):
            raise InputError(f"combination weights of block {j} must lie in (0, 1)")
        if abs(block.sum() - 1.0) > SUM_TOL:
            raise InputError(f"combination weights of block {j} sum to {block.sum()!r}, not 1")
    return cw


def _as_proportions(p) -> np.ndarray:
    if isinstance(p, CombinationWeights):
        return p.vector()
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 0:
        raise InputError("empty proportion vector")
    if np.any(p <= 0) or np.any(p >= 1):
        raise InputError("proportions must lie in (0, 1)")
    return p


def weights_from_proportions(p) -> WeightMatrix:
    """Diagonal weights ``1 / p_i`` (the reciprocal rule).

    Note that as a covariance ``diag(1/p)`` splits a discrepancy in shares
    proportional to ``1/p_i``, not ``p_i``; :func:`covariance_from_proportions`
    is the weighting that reproduces the proportional split exactly.
    """
    return WeightMatrix.diag(1.0 / _as_proportions(p), source="proportions")


def covariance_from_proportions(p) -> WeightMatrix:
    """Diagonal weights ``p_i``: the closed-form smoother then equals ``P_l``."""
    return WeightMatrix.diag(_as_proportions(p), source="proportions")


def proportions_from_weights(W: WeightMatrix, h: Hierarchy, l: int) -> CombinationWeights:
    """Shares ``sigma2_i / sum(sigma2 in block)`` per level-``l`` elementary hierarchy."""
    if not W.is_diagonal:
        raise InputError("proportions can only be derived from diagonal weights")
    if W.dim != h.n_b:
        raise InputError(f"weights have dimension {W.dim}, expected {h.n_b}")
    return CombinationWeights.from_vector(h, l, W.diagonal(), normalize=True)


def unit_weights(n: int) -> WeightMatrix:
    if n < 1:
        raise InputError("unit weights need n >= 1")
    return WeightMatrix("identity", np.ones(n), "unit")


def _floor(var: np.ndarray, var_floor: float | None, what: str) -> np.ndarray:
    zero = ~(var > 0)
    if np.any(zero):
        if var_floor is None:
            raise InputError(f"zero variance in {what} (columns {np.flatnonzero(zero)[:5].tolist()}); "
                             "use a variance floor to proceed")
        var = np.where(zero, var_floor, var)
    return var


def stratum_of(index, period: int) -> np.ndarray:
    """Calendar stratum of absolute time index ``index``."""
    return np.asarray(index) % period


def training_variance_weights(
    history,
    seasonal_period: int = 1,
    seasonal: bool = False,
    horizon: int = 1,
    start: int = 0,
    var_floor: float | None = None,
) -> WeightMatrix:
    """Diagonal weights from the sample variance (denominator n-1) of each column.

    ``history`` is (T x k) with row ``t`` at absolute time ``start + t``. When
    ``seasonal`` the variance is taken within the stratum that forecast
    ``horizon`` (made at the end of the window) falls into.
    """
    x = np.asarray(history, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T = x.shape[0]
    if seasonal:
        if seasonal_period < 1:
            raise InputError("seasonal period must be >= 1")
        strata = stratum_of(start + np.arange(T), seasonal_period)
        target = int(stratum_of(start + T - 1 + horizon, seasonal_period))
        counts = np.bincount(strata, minlength=seasonal_period)
        if np.any(counts < 2):
            raise InputError(f"every stratum needs >= 2 observations, got counts {counts.tolist()}")
        var = x[strata == target].var(axis=0, ddof=1)
        what = f"stratum {target}"
    else:
        if T < 2:
            raise InputError("variance needs at least 2 observations")
        var = x.var(axis=0, ddof=1)
        what = "training data"
    var = _floor(var, var_floor, what)
    return WeightMatrix.diag(var, source="training-variance")


def shrinkage_intensity(residuals, var_floor: float | None = None) -> float:
    """Schafer-Strimmer intensity toward the diagonal target, clamped to [0, 1]."""
    return _shrinkage(np.asarray(residuals, dtype=float), var_floor)[0]


def _shrinkage(x: np.ndarray, var_floor: float | None):
    if x.ndim != 2 or x.shape[0] < 3:
        raise InputError("shrinkage needs a (T x n) residual matrix with T >= 3")
    T = x.shape[0]
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (T - 1)
    var = np.diag(cov).copy()
    zero = ~(var > 0)
    sd = np.sqrt(np.where(zero, 1.0, var))
    z = np.where(zero, 0.0, xc / sd)
    if np.any(zero):
        var = _floor(var, var_floor, "residuals")
        cov[zero, :] = 0.0
        cov[:, zero] = 0.0
        cov[np.diag_indices_from(cov)] = var
    wbar = z.T @ z / T
    w2 = (z**2).T @ (z**2)
    var_r = T / (T - 1) ** 3 * (w2 - T * wbar**2)
    r = T / (T - 1) * wbar
    off = ~np.eye(x.shape[1], dtype=bool)
    denom = float(np.sum(r[off] ** 2))
    lam = 1.0 if denom == 0 else float(np.clip(np.sum(var_r[off]) / denom, 0.0, 1.0))
    return lam, cov, var


def shrinkage_covariance(
    residuals, intensity: float | None = None, var_floor: float | None = None
) -> WeightMatrix:
    """``lam * diag(cov) + (1 - lam) * cov`` of in-sample residuals (T x n).

    ``intensity`` overrides the estimated shrinkage intensity.
    """
    x = np.asarray(residuals, dtype=float)
    lam, cov, var = _shrinkage(x, var_floor)
    if intensity is not None:
        if not 0.0 <= intensity <= 1.0:
            raise InputError("shrinkage intensity must lie in [0, 1]")
        lam = float(intensity)
    W = lam * np.diag(var) + (1.0 - lam) * cov
    return WeightMatrix("full", W, source=f"residual-shrinkage(lambda={lam:.6g})", intensity=lam)


def residual_variance_weights(residuals, var_floor: float | None = None) -> WeightMatrix:
    """Diagonal of the residual sample covariance (the ``wls`` weighting)."""
    x = np.asarray(residuals, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("residual variance needs a (T x n) matrix with T >= 2")
    var = _floor(x.var(axis=0, ddof=1), var_floor, "residuals")
    return WeightMatrix.diag(var, source="residual-variance")


def stack_weights(parts: Sequence[WeightMatrix]) -> WeightMatrix:
    """Block-diagonal concatenation of diagonal weights."""
    if any(not w.is_diagonal for w in parts):
        raise InputError("only diagonal weights can be stacked")
    return WeightMatrix.diag(np.concatenate([w.diagonal() for w in parts]), source=parts[0].source)
