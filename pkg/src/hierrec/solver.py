"""Equality-constrained weighted least squares and its bound-constrained variant.

Every problem has the form

    minimize (x - xhat)' W^{-1} (x - xhat)   subject to  A x = target
    [and x_i >= 0 for i in a given index set]

with ``W`` a :class:`~hierrec.weights.WeightMatrix`. The equality solve
factorizes ``A W A'`` (Cholesky), never ``W^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from hierrec.errors import ConvergenceError, InfeasibleError, InputError, NumericalError
from hierrec.weights import WeightMatrix

# relative pivot size below which A W A' is treated as singular
RANK_RTOL = 1e-12
# above this many constraints a sparse A keeps A W A' sparse
SPARSE_FACTOR_LIMIT = 3000
MAX_ITER_FACTOR = 50


@dataclass(frozen=True, eq=False)
class EqualitySystem:
    A: np.ndarray | sparse.spmatrix
    target: np.ndarray
    W: WeightMatrix
    xhat: np.ndarray

    def __post_init__(self):
        A = self.A
        if sparse.issparse(A):
            A = sparse.csr_matrix(A, dtype=float)
        else:
            A = np.atleast_2d(np.asarray(A, dtype=float))
        m, k = A.shape
        target = np.asarray(self.target, dtype=float).reshape(-1)
        xhat = np.asarray(self.xhat, dtype=float).reshape(-1)
        if xhat.shape != (k,):
            raise InputError(f"prior has length {xhat.shape[0]}, constraint matrix has {k} columns")
        if target.shape != (m,):
            raise InputError(f"target has length {target.shape[0]}, constraint matrix has {m} rows")
        if self.W.dim != k:
            raise InputError(f"weight matrix has dimension {self.W.dim}, expected {k}")
        if not (np.all(np.isfinite(xhat)) and np.all(np.isfinite(target))):
            raise InputError("prior and target must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "xhat", xhat)

    @property
    def k(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass
class SolveDiagnostics:
    """KKT bookkeeping of one solve.

    ``multipliers`` are the equality multipliers and ``bound_multipliers``
    the multipliers of the bounds listed in ``active_set``, both scaled to the
    objective as written (gradient = A' multipliers + bound multipliers).
    """

    kkt_residual: float
    iterations: int
    objective: float
    active_set_size: int = 0
    stationarity: float = 0.0
    primal_residual: float = 0.0
    complementarity: float = 0.0
    dual_infeasibility: float = 0.0
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active_set: tuple[int, ...] = ()
    bound_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _times_w(W: WeightMatrix, X):
    """``W @ X`` for a dense or sparse X (rows indexed like W)."""
    if W.is_diagonal:
        if sparse.issparse(X):
            return sparse.diags(W.values) @ X
        X = np.asarray(X)
        return W.values[:, None] * X if X.ndim == 2 else W.values * X
    if sparse.issparse(X):
        return np.asarray((X.T @ W.values).T)
    return W.values @ X


class EqualityFactor:
    """Cholesky factor of ``A W A'``, reusable across right-hand sides."""

    def __init__(self, A, W: WeightMatrix):
        self.A = A
        self.W = W
        self.m, self.k = A.shape
        self._wfac = None
        if self.m == 0:
            self.WAt = np.zeros((self.k, 0))
            self._kind = "empty"
            return
        WAt = _times_w(W, A.T)
        M = A @ WAt
        if sparse.issparse(M) and self.m > SPARSE_FACTOR_LIMIT:
            self.WAt = WAt.tocsr()
            try:
                self._lu = splinalg.splu(sparse.csc_matrix(M))
            except RuntimeError as exc:
                raise NumericalError("constraint matrix is rank deficient (singular A W A')") from exc
            self._kind = "splu"
            return
        if sparse.issparse(M):
            M = M.toarray()
        self.WAt = WAt.toarray() if sparse.issparse(WAt) else np.asarray(WAt)
        M = np.asarray(M)
        try:
            self._cho = linalg.cho_factor(M, lower=True, check_finite=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("A W A' is not positive definite (rank-deficient A or indefinite W)") from exc
        piv = np.abs(np.diag(self._cho[0]))
        top = float(np.max(np.diag(M)))
        if not np.all(piv**2 > RANK_RTOL * top):
            raise NumericalError("constraint matrix is rank deficient (tiny pivot in A W A')")
        self._kind = "cho"

    def solve_reduced(self, rhs: np.ndarray) -> np.ndarray:
        if self._kind == "empty":
            return np.zeros(0)
        if self._kind == "splu":
            return self._lu.solve(rhs)
        return linalg.cho_solve(self._cho, rhs)

    def solve(self, xhat: np.ndarray, target: np.ndarray):
        """Return ``(x, nu, discrepancy)`` with ``x = xhat + W A' nu``."""
        disc = target - self.A @ xhat
        nu = self.solve_reduced(disc)
        x = xhat + self.WAt @ nu if self.m else xhat.copy()
        return x, nu, disc

    def winv(self, v: np.ndarray) -> np.ndarray:
        """``W^{-1} v`` (Cholesky of W cached on first use for full W)."""
        if self.W.is_diagonal:
            return v / self.W.values
        if self._wfac is None:
            self._wfac = linalg.cho_factor(self.W.values, lower=True)
        return linalg.cho_solve(self._wfac, v)


def factorize(A, W: WeightMatrix) -> EqualityFactor:
    if sparse.issparse(A):
        A = sparse.csr_matrix(A, dtype=float)
    else:
        A = np.atleast_2d(np.asarray(A, dtype=float))
    if W.dim != A.shape[1]:
        raise InputError(f"weight matrix has dimension {W.dim}, expected {A.shape[1]}")
    return EqualityFactor(A, W)


def _kkt(sys: EqualitySystem, fac: EqualityFactor, x, lam, active=(), mu=None):
    """Stationarity, primal, complementarity and dual-feasibility residuals."""
    grad = 2.0 * fac.winv(x - sys.xhat)
    resid = grad - (sys.A.T @ lam if sys.m else 0.0)
    comp = 0.0
    dual = 0.0
    if len(active):
        act = np.asarray(active, dtype=int)
        resid = np.array(resid, dtype=float, copy=True)
        resid[act] -= mu
        comp = float(np.max(np.abs(mu * x[act])))
        dual = float(max(0.0, -np.min(mu)))
    stat = float(np.max(np.abs(resid), initial=0.0))
    primal = float(np.max(np.abs(sys.A @ x - sys.target), initial=0.0)) if sys.m else 0.0
    return stat, primal, comp, dual


def _objective(fac: EqualityFactor, x, xhat) -> float:
    d = x - xhat
    return float(max(0.0, d @ fac.winv(d)))


def solve_equality(sys: EqualitySystem, factor: EqualityFactor | None = None):
    """Closed-form solution ``xhat + W A' (A W A')^{-1} (target - A xhat)``."""
    fac = factor if factor is not None else factorize(sys.A, sys.W)
    x, nu, disc = fac.solve(sys.xhat, sys.target)
    lam = 2.0 * nu
    obj = float(max(0.0, disc @ nu)) if sys.m else 0.0
    stat, primal, _, _ = _kkt(sys, fac, x, lam)
    diag = SolveDiagnostics(
        kkt_residual=max(stat, primal),
        iterations=1,
        objective=obj,
        stationarity=stat,
        primal_residual=primal,
        multipliers=lam,
    )
    return x, diag


def solve_endogenous(yhat_l, U_l, W_l: WeightMatrix, factor: EqualityFactor | None = None):
    """Project ``yhat_l`` onto ``{y : U_l' y = 0}`` in the ``W_l^{-1}`` metric.

    ``U_l`` is passed in its transposed (constraint-row) form ``[I | -C_l]``.
    """
    U = U_l if sparse.issparse(U_l) else np.atleast_2d(np.asarray(U_l, dtype=float))
    sys = EqualitySystem(U, np.zeros(U.shape[0]), W_l, yhat_l)
    return solve_equality(sys, factor)


def _dense(A) -> np.ndarray:
    return A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=float)


def solve_nonnegative(
    sys: EqualitySystem,
    nonneg_indices: Iterable[int],
    factor: EqualityFactor | None = None,
    max_iter: int | None = None,
):
    """Minimize the same objective with ``x_i >= 0`` for the listed indices.

    Dual active-set method on the bounds, started from the equality
    solution. If that solution is already feasible it is returned unchanged.
    Violated bounds are taken in increasing index order; ties in the
    ratio test go to the lowest index.
    """
    idx = np.array(sorted(set(int(i) for i in nonneg_indices)), dtype=int)
    if idx.size and (idx[0] < 0 or idx[-1] >= sys.k):
        raise InputError("bound index out of range")
    fac = factor if factor is not None else factorize(sys.A, sys.W)
    x, diag = solve_equality(sys, fac)

    scale = 1.0 + max(np.max(np.abs(sys.xhat), initial=0.0), np.max(np.abs(x), initial=0.0))
    vtol = min(1e-13 * scale, 1e-10)
    if not idx.size or np.all(x[idx] >= -vtol):
        diag.active_set_size = 0
        return x, diag

    A = _dense(sys.A)
    m, k = A.shape
    Wd = sys.W.dense()
    cap = MAX_ITER_FACTOR * k if max_iter is None else max_iter
    active: list[int] = []
    u: dict[int, float] = {}
    it = 0
    in_set = np.zeros(k, dtype=bool)
    in_set[idx] = True

    def violated():
        cand = np.flatnonzero(in_set & (x < -vtol))
        cand = [j for j in cand if j not in u]
        return cand[0] if cand else None

    p = violated()
    while p is not None:
        up = 0.0
        while True:
            it += 1
            if it > cap:
                raise ConvergenceError(f"non-negative solve did not converge in {cap} iterations")
            E = np.zeros((len(active), k))
            E[np.arange(len(active)), active] = 1.0
            N = np.vstack([A, E])
            WN = Wd @ N.T
            try:
                cf = linalg.cho_factor(N @ WN, lower=True)
            except linalg.LinAlgError as exc:
                raise NumericalError("active constraint normals became dependent") from exc
            wp = Wd[:, p]
            r = linalg.cho_solve(cf, N @ wp)
            z = wp - WN @ r
            r_b = r[m:]
            rtol = 1e-14 * max(1.0, float(np.max(np.abs(r_b), initial=0.0)))
            t1, drop = np.inf, None
            for i, j in enumerate(active):
                if r_b[i] > rtol:
                    ratio = u[j] / r_b[i]
                    if ratio < t1 or (ratio == t1 and j < drop):
                        t1, drop = ratio, j
            zp = z[p]
            if zp <= 1e-12 * Wd[p, p]:
                if drop is None:
                    raise InfeasibleError(
                        f"bounds and equality constraints are incompatible (at variable {p})"
                    )
                for i, j in enumerate(active):
                    u[j] -= t1 * r_b[i]
                up += t1
                active.remove(drop)
                del u[drop]
                continue
            t2 = -x[p] / zp
            t = min(t1, t2)
            x = x + t * z
            for i, j in enumerate(active):
                u[j] -= t * r_b[i]
            up += t
            if t2 <= t1:
                active.append(p)
                u[p] = up
                x[p] = 0.0
                break
            active.remove(drop)
            del u[drop]
        p = violated()

    # polish: exact solve on the final active set; pick up rounding leftovers
    for _ in range(k + 1):
        x, lam, mu, pfac, aug = _polish(sys, A, active)
        extra = [j for j in np.flatnonzero(in_set & (x < -vtol)) if j not in active]
        if not extra:
            break
        active.extend(int(j) for j in extra)
    else:
        raise ConvergenceError("polishing step did not settle")

    order = np.argsort(active)
    act = tuple(int(active[i]) for i in order)
    mu = mu[order]
    x[list(act)] = 0.0
    stat, primal, comp, dual = _kkt(sys, fac, x, lam, act, mu)
    diag = SolveDiagnostics(
        kkt_residual=max(stat, primal, comp, dual),
        iterations=it,
        objective=_objective(fac, x, sys.xhat),
        active_set_size=len(act),
        stationarity=stat,
        primal_residual=primal,
        complementarity=comp,
        dual_infeasibility=dual,
        multipliers=lam,
        active_set=act,
        bound_multipliers=mu,
    )
    return x, diag


def _polish(sys: EqualitySystem, A: np.ndarray, active: list[int]):
    m, k = A.shape
    E = np.zeros((len(active), k))
    E[np.arange(len(active)), active] = 1.0
    aug = np.vstack([A, E])
    fac = factorize(aug, sys.W)
    x, nu, _ = fac.solve(sys.xhat, np.concatenate([sys.target, np.zeros(len(active))]))
    lam = 2.0 * nu[:m]
    mu = 2.0 * nu[m:]
    return x, lam, mu, fac, aug


def bottom_map(h, W: WeightMatrix) -> np.ndarray:
    """``(S' W^{-1} S)^{-1} S' W^{-1}`` (n_b x n) via a Cholesky factor of W."""
    S = h.S.toarray() if sparse.issparse(h.S) else np.asarray(h.S)
    if W.dim != S.shape[0]:
        raise InputError(f"weight matrix has dimension {W.dim}, expected {S.shape[0]}")
    if W.is_diagonal:
        isd = 1.0 / np.sqrt(W.values)
        Ls = S * isd[:, None]
        right = np.diag(isd)
    else:
        Lw = np.linalg.cholesky(W.values)
        Ls = linalg.solve_triangular(Lw, S, lower=True)
        right = linalg.solve_triangular(Lw, np.eye(S.shape[0]), lower=True)
    gram = Ls.T @ Ls
    try:
        cf = linalg.cho_factor(gram, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("S' W^{-1} S is singular") from exc
    return linalg.cho_solve(cf, Ls.T @ right)


def projection_matrix(h, W: WeightMatrix) -> np.ndarray:
    """The (n x n) reconciliation map ``S (S' W^{-1} S)^{-1} S' W^{-1}``."""
    G = bottom_map(h, W)
    return np.asarray(h.S @ G)
