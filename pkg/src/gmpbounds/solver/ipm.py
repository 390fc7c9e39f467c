"""Primal-dual interior-point method for block conic programs.

The program is brought into the standard form

    minimise c'x   s.t.   A x = b,   G x + s = h,   s in K,

where ``K`` is a product of a nonnegative orthant and PSD cones, and solved
through its homogeneous self-dual embedding with Nesterov-Todd scaling and
a Mehrotra predictor-corrector. Infeasibility and unboundedness are read off
certificates produced by the embedding.

Every variable of the standard form sits in at least one cone, so the
matrix ``H = G' (W'W)^{-1} G`` is positive definite and block diagonal over
groups of variables linked through PSD blocks. The Newton system is solved
with dense QR factors of the scaled constraint rows of each group and a
dense Schur complement on the (few) equality rows.

When the tolerances cannot be met (typically because the last digits are
lost to rounding), the best iterate seen is returned with status
``inaccurate`` provided it meets the looser ``reduced_tol``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ..errors import IllConditioned, NumericalFailure
from .program import ConicProgram

log = logging.getLogger(__name__)

STATUSES = ("optimal", "inaccurate", "infeasible", "unbounded", "numerical-failure")
STALL_ITERATIONS = 8


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 200
    feasibility_tol: float = 1e-8
    gap_tol: float = 1e-8
    step_fraction: float = 0.98
    refinement_steps: int = 2
    reduced_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if min(self.feasibility_tol, self.gap_tol, self.reduced_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass
class ConicSolution:
    """Result of :func:`solve_conic`.

    ``y_eq`` and ``y_ub`` are multipliers of the equality and inequality
    rows with the sign convention ``c + A_eq' y_eq + A_ub' y_ub = (cone duals)``
    for minimisation, so ``y_ub <= 0`` at optimality.
    """

    status: str
    x: np.ndarray | None
    y_eq: np.ndarray | None
    y_ub: np.ndarray | None
    objective: float
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    history: list[dict] = field(default_factory=list, repr=False)

    @property
    def relative_gap(self) -> float:
        denom = max(abs(self.primal_objective), abs(self.dual_objective), 1e-300)
        return self.gap / denom


# ----------------------------------------------------------------------------
# standard form


class _Infeasible(Exception):
    pass


@dataclass
class _PsdClass:
    m: int
    vidx: np.ndarray  # (nb, p) internal variable indices
    F: np.ndarray  # (nb, p, m, m)
    F0: np.ndarray  # (nb, m, m)
    flat: np.ndarray | None = None  # (nb, p, p) positions in the H buffer
    R: np.ndarray | None = None
    Rinv: np.ndarray | None = None
    lam: np.ndarray | None = None


@dataclass
class _Standard:
    n: int
    c: np.ndarray
    A: np.ndarray  # dense (m, n), rows normalised
    b: np.ndarray
    lp: np.ndarray  # variables in the orthant
    classes: list[_PsdClass]
    # mapping back to the user program
    sign: float
    keep: np.ndarray
    neg_of: np.ndarray  # user var -> internal index of negative part (or -1)
    row_of: np.ndarray  # internal row -> original row (eq rows first, then ub)
    row_scale: np.ndarray
    n_eq: int
    n_ub: int


def _standardize(prog: ConicProgram) -> _Standard:
    n = prog.n_vars
    sign = 1.0 if prog.sense == "min" else -1.0
    c = sign * prog.c
    A_eq = prog.A_eq.tocsc()
    A_ub = prog.A_ub.tocsc()
    in_block = np.zeros(n, bool)
    for blk in prog.blocks:
        in_block[blk.var] = True
    used = (c != 0) | (np.diff(A_eq.indptr) > 0) | (np.diff(A_ub.indptr) > 0) | in_block
    keep = np.flatnonzero(used)
    split = used & ~in_block & ~prog.nonneg
    neg = np.flatnonzero(split)

    n_keep, n_neg, m_ub = len(keep), len(neg), A_ub.shape[0]
    n_int = n_keep + n_neg + m_ub
    pos_of = -np.ones(n, np.int64)
    pos_of[keep] = np.arange(n_keep)
    neg_of = -np.ones(n, np.int64)
    neg_of[neg] = n_keep + np.arange(n_neg)

    A_full = sp.vstack([A_eq, A_ub]).tocsc()
    A = np.zeros((A_full.shape[0], n_int))
    A[:, :n_keep] = A_full[:, keep].toarray()
    A[:, n_keep:n_keep + n_neg] = -A_full[:, neg].toarray()
    A[A_eq.shape[0]:, n_keep + n_neg:] = np.eye(m_ub)
    b = np.concatenate([prog.b_eq, prog.b_ub])
    c_int = np.concatenate([c[keep], -c[neg], np.zeros(m_ub)])

    lp_mask = np.zeros(n_int, bool)
    lp_mask[pos_of[keep[(prog.nonneg | split)[keep]]]] = True
    lp_mask[n_keep:] = True
    lp = np.flatnonzero(lp_mask)

    # PSD blocks grouped by (size, number of variables)
    buckets: dict[tuple[int, int], list] = {}
    for blk in prog.blocks:
        vars_, F = blk.coefficient_tensor()
        F0 = np.zeros((blk.size, blk.size)) if blk.const is None else blk.const
        buckets.setdefault((blk.size, len(vars_)), []).append((pos_of[vars_], F, F0))
    classes = []
    for (m, p), items in sorted(buckets.items()):
        classes.append(_PsdClass(
            m,
            np.array([it[0] for it in items], np.int64).reshape(len(items), p),
            np.array([it[1] for it in items]).reshape(len(items), p, m, m),
            np.array([it[2] for it in items]).reshape(len(items), m, m),
        ))

    # presolve equality rows: normalise, then drop linearly dependent rows
    row_of = np.arange(A.shape[0])
    norms = np.linalg.norm(A, axis=1)
    zero = norms == 0
    if np.any(np.abs(b[zero]) > 1e-12):
        raise _Infeasible("a constraint row is zero but its right-hand side is not")
    A, b, row_of, norms = A[~zero], b[~zero], row_of[~zero], norms[~zero]
    A = A / norms[:, None]
    b = b / norms
    if A.shape[0] > 1:
        _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > 1e-10 * d[0]))
        if rank < A.shape[0]:
            kept, dropped = np.sort(piv[:rank]), piv[rank:]
            coef, *_ = np.linalg.lstsq(A[kept].T, A[dropped].T, rcond=None)
            if np.any(np.abs(coef.T @ b[kept] - b[dropped]) > 1e-8 * (1 + np.abs(b[dropped]))):
                raise _Infeasible("dependent equality rows are inconsistent")
            A, b, row_of, norms = A[kept], b[kept], row_of[kept], norms[kept]
    return _Standard(n_int, c_int, A, b, lp, classes, sign, keep, neg_of, row_of, norms,
                     A_eq.shape[0], m_ub)


# ----------------------------------------------------------------------------
# cone vectors are lists [orthant part, PSD class 0, PSD class 1, ...]


def _dot(u, v) -> float:
    return float(u[0] @ v[0] + sum(np.vdot(a, b) for a, b in zip(u[1:], v[1:])))


def _axpy(a: float, x, y):
    return [a * xi + yi for xi, yi in zip(x, y)]


def _sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def _T(X: np.ndarray) -> np.ndarray:
    return np.swapaxes(X, -1, -2)


def _square_factor(X: np.ndarray) -> np.ndarray:
    """Batched ``L`` with ``L L' = X``: Cholesky, or clipped eigenvalues when
    rounding has pushed an iterate to the edge of the cone."""
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        ev, Q = np.linalg.eigh(X)
        floor = np.finfo(float).eps * np.maximum(ev[:, -1:], np.finfo(float).tiny)
        return Q * np.sqrt(np.maximum(ev, floor))[:, None, :]


def _nt_scaling(S: np.ndarray, Z: np.ndarray):
    """Batched NT scaling: ``R`` with ``R^{-1} S R^{-T} = R' Z R = diag(lam)``."""
    Ls = _square_factor(S)
    Lz = _square_factor(Z)
    U, lam, Vt = np.linalg.svd(_T(Lz) @ Ls)
    R = Ls @ _T(Vt) / np.sqrt(lam)[:, None, :]
    return R, lam


class _Kkt:
    """Cone operators, scaling and the factorised Newton system."""

    def __init__(self, std: _Standard):
        self.std = std
        n = std.n
        # variable groups linked through PSD blocks
        rows, cols = [], []
        for cl in std.classes:
            rows.append(np.repeat(cl.vidx[:, :1], cl.vidx.shape[1], axis=1).ravel())
            cols.append(cl.vidx.ravel())
        if rows:
            r, c = np.concatenate(rows), np.concatenate(cols)
        else:
            r = c = np.zeros(0, np.int64)
        graph = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
        _, label = connected_components(graph, directed=False)
        order = np.argsort(label, kind="stable")
        bounds = np.flatnonzero(np.diff(label[order])) + 1
        groups = np.split(order, bounds) if n else []
        by_size: dict[int, list[np.ndarray]] = {}
        for g in groups:
            by_size.setdefault(len(g), []).append(np.sort(g))
        self.sizes = sorted(by_size)
        self.gidx = [np.array(by_size[k], np.int64) for k in self.sizes]
        # Each group owns a dense slab of rows of B = W^{-T} G: one row per
        # matrix entry of its PSD blocks and one per orthant variable.
        grp_class = np.zeros(n, np.int64)
        grp_index = np.zeros(n, np.int64)
        var_loc = np.zeros(n, np.int64)
        for ci, gi in enumerate(self.gidx):
            grp_class[gi] = ci
            grp_index[gi] = np.arange(gi.shape[0])[:, None]
            var_loc[gi] = np.arange(gi.shape[1])[None, :]
        row_count = [np.zeros(gi.shape[0], np.int64) for gi in self.gidx]
        block_rows = []
        for cl in std.classes:
            first = cl.vidx[:, 0]
            offs = np.empty(len(first), np.int64)
            for b, v in enumerate(first):
                ci, g = grp_class[v], grp_index[v]
                offs[b] = row_count[ci][g]
                row_count[ci][g] += cl.m * cl.m
            block_rows.append(offs)
        lp_rows = np.empty(len(std.lp), np.int64)
        for i, v in enumerate(std.lp):
            ci, g = grp_class[v], grp_index[v]
            lp_rows[i] = row_count[ci][g]
            row_count[ci][g] += 1
        self.rows = [max(int(rc.max()), k) for rc, k in zip(row_count, self.sizes)]
        base_of_class, off = [], 0
        self.buf_slices = []
        for k, gi, rows_k in zip(self.sizes, self.gidx, self.rows):
            size = gi.shape[0] * rows_k * k
            base_of_class.append(off)
            self.buf_slices.append(slice(off, off + size))
            off += size
        self.buf_len = off
        base_of_class = np.array(base_of_class, np.int64)
        sizes = np.array(self.sizes, np.int64)
        rows_arr = np.array(self.rows, np.int64)

        def origin(v):
            ci = grp_class[v]
            return base_of_class[ci] + grp_index[v] * rows_arr[ci] * sizes[ci], sizes[ci]

        for cl, offs in zip(std.classes, block_rows):
            base, k = origin(cl.vidx[:, 0])
            entry = np.arange(cl.m * cl.m)
            cl.flat = (base[:, None, None]
                       + (offs[:, None, None] + entry[None, None, :]) * k[:, None, None]
                       + var_loc[cl.vidx][:, :, None])
        base, k = origin(std.lp)
        self.lp_flat = base + lp_rows * k + var_loc[std.lp]
        self.A_groups = [std.A[:, gi].transpose(1, 2, 0) for gi in self.gidx]  # (ng, k, m)
        self.h = [np.zeros(len(std.lp))] + [cl.F0.copy() for cl in std.classes]
        self.nu = len(std.lp) + sum(cl.F.shape[0] * cl.m for cl in std.classes)

    # -- cone operators ------------------------------------------------------
    def G(self, x):
        out = [-x[self.std.lp]]
        for cl in self.std.classes:
            out.append(-np.einsum("bpij,bp->bij", cl.F, x[cl.vidx], optimize=True))
        return out

    def Gt(self, u):
        out = np.zeros(self.std.n)
        out[self.std.lp] -= u[0]
        for cl, U in zip(self.std.classes, u[1:]):
            vals = -np.einsum("bpij,bij->bp", cl.F, U, optimize=True)
            out += np.bincount(cl.vidx.ravel(), vals.ravel(), minlength=self.std.n)
        return out

    def identity(self):
        return [np.ones(len(self.std.lp))] + [
            np.broadcast_to(np.eye(cl.m), cl.F0.shape).copy() for cl in self.std.classes
        ]

    def W(self, u):  # z -> W z
        return [self.d * u[0]] + [_T(cl.R) @ U @ cl.R for cl, U in zip(self.std.classes, u[1:])]

    def Wt(self, u):  # adjoint of W
        return [self.d * u[0]] + [cl.R @ U @ _T(cl.R) for cl, U in zip(self.std.classes, u[1:])]

    def WitT(self, u):  # s -> W^{-T} s
        return [u[0] / self.d] + [cl.Rinv @ U @ _T(cl.Rinv) for cl, U in zip(self.std.classes, u[1:])]

    def WtW(self, u):
        return self.Wt(self.W(u))

    def WtW_inv(self, u):
        v = self.WitT(u)
        return [v[0] / self.d] + [_T(cl.Rinv) @ V @ cl.Rinv for cl, V in zip(self.std.classes, v[1:])]

    def lam_vec(self):
        return [self.lam_lp] + [
            np.einsum("bi,ij->bij", cl.lam, np.eye(cl.m)) for cl in self.std.classes
        ]

    # -- scaling -----------------------------------------------------------
    def set_scaling(self, s, z):
        self.d = np.sqrt(s[0] / z[0])
        self.lam_lp = np.sqrt(s[0] * z[0])
        for cl, S, Z in zip(self.std.classes, s[1:], z[1:]):
            cl.R, cl.lam = _nt_scaling(_sym(S), _sym(Z))
            cl.Rinv = np.linalg.inv(cl.R)

    def set_identity_scaling(self):
        self.d = np.ones(len(self.std.lp))
        self.lam_lp = np.ones(len(self.std.lp))
        for cl in self.std.classes:
            nb = cl.F.shape[0]
            cl.R = np.broadcast_to(np.eye(cl.m), (nb, cl.m, cl.m)).copy()
            cl.Rinv = cl.R.copy()
            cl.lam = np.ones((nb, cl.m))

    # -- Newton system -------------------------------------------------------
    def factor(self):
        """QR-factor ``B = W^{-T} G`` group by group and form the Schur complement."""
        std = self.std
        buf = np.zeros(self.buf_len)
        buf[self.lp_flat] = 1.0 / self.d
        for cl in std.classes:
            Q = cl.Rinv[:, None] @ cl.F @ _T(cl.Rinv)[:, None]
            buf[cl.flat] = Q.reshape(Q.shape[0], Q.shape[1], -1)
        self.Rinv_g = []
        m = std.A.shape[0]
        Ys = []
        for k, gi, rows_k, sl, Ag in zip(self.sizes, self.gidx, self.rows, self.buf_slices,
                                         self.A_groups):
            Bg = buf[sl].reshape(gi.shape[0], rows_k, k)
            Ri = np.linalg.inv(_batched_qr(Bg))
            self.Rinv_g.append(Ri)
            if m:
                Ys.append((_T(Ri) @ Ag).reshape(-1, m))
        if m:
            self.S_R = _triangular_factor(np.concatenate(Ys))

    def Hinv(self, v):
        out = np.empty_like(v)
        for gi, Ri in zip(self.gidx, self.Rinv_g):
            w = _T(Ri) @ v[gi][:, :, None]
            out[gi] = (Ri @ w)[:, :, 0]
        return out

    def _solve_once(self, r1, r2, r3):
        A = self.std.A
        g = r1 + self.Gt(self.WtW_inv(r3))
        Hg = self.Hinv(g)
        if A.shape[0]:
            rhs = A @ Hg - r2
            dy = sla.solve_triangular(
                self.S_R, sla.solve_triangular(self.S_R, rhs, trans="T"))
            dx = self.Hinv(g - A.T @ dy)
        else:
            dy = np.zeros(0)
            dx = Hg
        dz = self.WtW_inv(_axpy(-1.0, r3, self.G(dx)))
        return dx, dy, dz

    def solve(self, r1, r2, r3, refine: int):
        A = self.std.A
        dx, dy, dz = self._solve_once(r1, r2, r3)
        for _ in range(refine):
            e1 = r1 - (A.T @ dy + self.Gt(dz))
            e2 = r2 - A @ dx
            e3 = _axpy(-1.0, _axpy(-1.0, self.WtW(dz), self.G(dx)), r3)
            cx, cy, cz = self._solve_once(e1, e2, e3)
            dx, dy, dz = dx + cx, dy + cy, _axpy(1.0, cz, dz)
        return dx, dy, dz


def _regularised_r(B: np.ndarray) -> np.ndarray:
    """``R`` factor of ``B`` with diagonal perturbation of ``B'B`` up to 1e-10."""
    R = np.linalg.qr(B, mode="r")
    d = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    scale = max(float(d.max(initial=0.0)), 1e-300)
    if d.min(initial=np.inf) > 1e-13 * scale:
        return R
    eye = np.eye(B.shape[-1])
    for delta in (1e-14, 1e-12, 1e-10):
        R = np.linalg.qr(np.concatenate([B, math.sqrt(delta) * scale * eye]), mode="r")
        d = np.abs(np.diagonal(R))
        if d.min() > 1e-13 * scale:
            return R
    raise IllConditioned("Newton system block is numerically singular")


def _batched_qr(B: np.ndarray) -> np.ndarray:
    R = np.linalg.qr(B, mode="r")
    d = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    bad = d.min(axis=1) <= 1e-13 * np.maximum(d.max(axis=1), 1e-300)
    for i in np.flatnonzero(bad):
        R[i] = _regularised_r(B[i])
    return R


def _triangular_factor(Y: np.ndarray) -> np.ndarray:
    """Upper triangular ``R`` with ``R'R = Y'Y`` (perturbed if singular)."""
    try:
        return _regularised_r(Y)
    except IllConditioned as exc:
        raise IllConditioned("Schur complement is numerically singular") from exc


def _max_step(lam, dv) -> float:
    """Largest ``a`` with ``lam + a * dv`` in the cone (``lam`` is a scaled point)."""
    amax = math.inf
    lp_lam, lp_dv = lam[0], dv[0]
    neg = lp_dv < 0
    if np.any(neg):
        amax = min(amax, float(np.min(-lp_lam[neg] / lp_dv[neg])))
    for L, D in zip(lam[1:], dv[1:]):
        if L.shape[0] == 0:
            continue
        isq = 1.0 / np.sqrt(np.diagonal(L, axis1=1, axis2=2))
        M = D * isq[:, :, None] * isq[:, None, :]
        ev = np.linalg.eigvalsh(_sym(M))[:, 0].min()
        if ev < 0:
            amax = min(amax, -1.0 / ev)
    return amax


def _circ(u, v):
    """Jordan product ``u o v`` in each cone."""
    return [u[0] * v[0]] + [_sym(U @ V) for U, V in zip(u[1:], v[1:])]


def _lam_div(lam_lp, lam_cls, u):
    """Solve ``lam o x = u`` for diagonal ``lam``."""
    out = [u[0] / lam_lp]
    for lam, U in zip(lam_cls, u[1:]):
        out.append(2.0 * U / (lam[:, :, None] + lam[:, None, :]))
    return out


# ----------------------------------------------------------------------------


def solve_conic(prog: ConicProgram, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve ``prog`` with the embedded interior-point method.

    Returns a solution with status ``optimal``, ``inaccurate``,
    ``infeasible`` or ``unbounded``. Raises :class:`NumericalFailure` (or its subclass
    :class:`IllConditioned`) when no certificate is reached; the last
    iterate is attached to the exception as ``exc.solution``.
    """
    settings = settings or SolverSettings()
    try:
        std = _standardize(prog)
    except _Infeasible as exc:
        log.debug("presolve: %s", exc)
        return _empty(prog, "infeasible")
    return _HsdRun(std, prog, settings).run()


def _empty(prog: ConicProgram, status: str) -> ConicSolution:
    nan = float("nan")
    return ConicSolution(status, None, None, None, nan, nan, nan, nan, nan, nan, 0)


class _HsdRun:
    def __init__(self, std: _Standard, prog: ConicProgram, settings: SolverSettings):
        self.std, self.prog, self.st = std, prog, settings
        self.kkt = _Kkt(std)

    def run(self) -> ConicSolution:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return self._run()

    def _run(self) -> ConicSolution:
        std, kkt, st = self.std, self.kkt, self.st
        A, b, c, h = std.A, std.b, std.c, kkt.h
        resx0 = max(1.0, float(np.linalg.norm(c)))
        resy0 = max(1.0, float(np.linalg.norm(b)))
        resz0 = max(1.0, math.sqrt(_dot(h, h)))

        # starting point from two least-squares solves with identity scaling
        kkt.set_identity_scaling()
        try:
            kkt.factor()
            x, y, zh = kkt.solve(np.zeros(std.n), b, h, st.refinement_steps)
            _, _, z = kkt.solve(-c, np.zeros_like(b), [0 * u for u in h], st.refinement_steps)
        except IllConditioned as exc:
            raise IllConditioned(f"cannot factor the initial Newton system: {exc}") from exc
        s = [-u for u in zh]
        s = _shift_into_cone(s, kkt)
        z = _shift_into_cone(z, kkt)
        tau = kappa = 1.0
        kkt.set_scaling(s, z)

        history: list[dict] = []
        status = None
        best, best_merit, since_best = None, math.inf, 0
        for it in range(st.max_iterations + 1):
            Gx = kkt.G(x)
            rx = A.T @ y + kkt.Gt(z) + c * tau
            ry = b * tau - A @ x
            rz = [hi * tau - gi - si for hi, gi, si in zip(h, Gx, s)]
            cx, by, hz = float(c @ x), float(b @ y), _dot(h, z)
            rt = kappa + cx + by + hz
            sz = _dot(s, z)
            mu = (sz + tau * kappa) / (kkt.nu + 1)
            pcost, dcost = cx / tau, -(by + hz) / tau
            gap = sz / tau ** 2
            pres = max(np.linalg.norm(ry) / resy0, math.sqrt(_dot(rz, rz)) / resz0) / tau
            dres = np.linalg.norm(rx) / resx0 / tau
            if pcost < 0:
                relgap = gap / -pcost
            elif dcost > 0:
                relgap = gap / dcost
            else:
                relgap = math.inf
            pinf = dinf = math.inf
            if hz + by < 0:
                pinf = np.linalg.norm(A.T @ y + kkt.Gt(z)) / resx0 / -(hz + by)
            if cx < 0:
                gs = [gi + si for gi, si in zip(Gx, s)]
                dinf = max(np.linalg.norm(A @ x) / resy0, math.sqrt(_dot(gs, gs)) / resz0) / -cx
            if not all(math.isfinite(v) for v in (pres, dres, gap, tau, kappa)):
                history.append(dict(iteration=it, pcost=pcost, dcost=dcost, gap=gap, pres=pres,
                                    dres=dres, sz=sz, tau=tau, kappa=kappa))
                break
            history.append(dict(iteration=it, pcost=pcost, dcost=dcost, gap=gap, pres=pres,
                                dres=dres, sz=sz, tau=tau, kappa=kappa))
            log.debug("it %3d pcost % .8e dcost % .8e gap %.2e pres %.2e dres %.2e",
                      it, pcost, dcost, gap, pres, dres)
            if pres <= st.feasibility_tol and dres <= st.feasibility_tol and (
                gap <= st.gap_tol or relgap <= st.gap_tol
            ):
                status = "optimal"
                break
            if pinf <= st.feasibility_tol:
                status = "infeasible"
                break
            if dinf <= st.feasibility_tol:
                status = "unbounded"
                break
            merit = max(pres, dres, min(gap, relgap))
            if merit < best_merit:
                best_merit, since_best = merit, 0
                best = (x, y, s, z, tau, kappa, len(history), pres, dres, gap)
            else:
                since_best += 1
                if best_merit <= st.reduced_tol and since_best >= STALL_ITERATIONS:
                    break
            if it == st.max_iterations:
                break
            try:
                step = self._step(x, y, s, z, tau, kappa, rx, ry, rz, rt, mu)
            except (IllConditioned, np.linalg.LinAlgError, ValueError) as exc:
                if best_merit <= st.reduced_tol:
                    return self._fallback(best, history)
                sol = self._finish("numerical-failure", x, y, s, z, tau, kappa, history,
                                   pres, dres, gap)
                err = IllConditioned(f"iteration {it}: {exc}")
                err.solution = sol
                raise err from exc
            if step is None:
                break
            x, y, s, z, tau, kappa = step

        if status is None and best_merit <= st.reduced_tol:
            return self._fallback(best, history)
        if status is None:
            sol = self._finish("numerical-failure", x, y, s, z, tau, kappa, history,
                               pres, dres, gap)
            err = NumericalFailure(
                f"no convergence after {len(history) - 1} iterations "
                f"(pres {pres:.1e}, dres {dres:.1e}, gap {gap:.1e})"
            )
            err.solution = sol
            raise err
        return self._finish(status, x, y, s, z, tau, kappa, history, pres, dres, gap)

    def _step(self, x, y, s, z, tau, kappa, rx, ry, rz, rt, mu):
        std, kkt, st = self.std, self.kkt, self.st
        A, b, c, h = std.A, std.b, std.c, kkt.h
        kkt.factor()
        lam = kkt.lam_vec()
        lam_cls = [cl.lam for cl in std.classes]
        x2, y2, z2 = kkt.solve(-c, b, h, st.refinement_steps)
        Wz2 = kkt.W(z2)
        denom0 = _dot(Wz2, Wz2)

        def newton(eta, dsrhs, rhs_k):
            r3 = _axpy(-1.0, kkt.Wt(dsrhs), [eta * u for u in rz])
            x1, y1, z1 = kkt.solve(-eta * rx, eta * ry, r3, st.refinement_steps)
            r4 = -eta * rt - rhs_k / tau
            dtau = (c @ x1 + b @ y1 + _dot(h, z1) - r4) / (denom0 + kappa / tau)
            dx = x1 + dtau * x2
            dy = y1 + dtau * y2
            dz = _axpy(dtau, z2, z1)
            dz_t = kkt.W(dz)
            # ds from the linearised primal rows rather than from dsrhs - W dz:
            # the latter cancels badly once the scaling is ill conditioned
            ds = _axpy(-1.0, kkt.G(dx), _axpy(dtau, h, [eta * u for u in rz]))
            ds_t = kkt.WitT(ds)
            dkappa = (rhs_k - kappa * dtau) / tau
            return dx, dy, ds_t, dz_t, dtau, dkappa, dz, ds

        def max_step(ds_t, dz_t, dtau, dkappa):
            a = min(_max_step(lam, ds_t), _max_step(lam, dz_t))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        # predictor
        lamsq = _circ(lam, lam)
        aff = newton(1.0, [-u for u in lam], -tau * kappa)
        a_aff = min(1.0, max_step(*aff[2:6]))
        sigma = (1.0 - a_aff) ** 3
        # corrector
        rhs_c = [-(u + v) for u, v in zip(lamsq, _circ(aff[2], aff[3]))]
        e = kkt.identity()
        rhs_c = _axpy(sigma * mu, e, rhs_c)
        dsrhs = _lam_div(kkt.lam_lp, lam_cls, rhs_c)
        rhs_k = -tau * kappa + sigma * mu - aff[4] * aff[5]
        dx, dy, ds_t, dz_t, dtau, dkappa, dz, ds = newton(1.0 - sigma, dsrhs, rhs_k)
        alpha = min(1.0, st.step_fraction * max_step(ds_t, dz_t, dtau, dkappa))
        if not alpha > 1e-14:
            return None
        s = _axpy(alpha, ds, s)
        z = _axpy(alpha, dz, z)
        kkt.set_scaling(s, z)
        return (x + alpha * dx, y + alpha * dy, s, z,
                tau + alpha * dtau, kappa + alpha * dkappa)

    def _fallback(self, best, history):
        x, y, s, z, tau, kappa, upto, pres, dres, gap = best
        log.info("tolerances not met; returning iterate %d (pres %.1e, dres %.1e, gap %.1e)",
                 upto - 1, pres, dres, gap)
        return self._finish("inaccurate", x, y, s, z, tau, kappa, history[:upto],
                            pres, dres, gap, iterations=len(history) - 1)

    def _finish(self, status, x, y, s, z, tau, kappa, history, pres, dres, gap,
                iterations=None):
        std, prog = self.std, self.prog
        if status in ("optimal", "inaccurate", "numerical-failure"):
            xs, ys = x / tau, y / tau
        else:
            xs, ys = x, y
        n = prog.n_vars
        x_user = np.zeros(n)
        x_user[std.keep] = xs[: len(std.keep)]
        has_neg = std.neg_of >= 0
        x_user[has_neg] -= xs[std.neg_of[has_neg]]
        y_rows = np.zeros(std.n_eq + std.n_ub)
        y_rows[std.row_of] = ys / std.row_scale
        y_rows *= std.sign
        last = history[-1] if history else {}
        pobj = std.sign * last.get("pcost", float("nan")) + prog.offset
        dobj = std.sign * last.get("dcost", float("nan")) + prog.offset
        obj = prog.objective(x_user) if status in ("optimal", "inaccurate") else float("nan")
        return ConicSolution(
            status, x_user, y_rows[: std.n_eq], y_rows[std.n_eq:], obj,
            pobj, dobj, float(pres), float(dres), float(gap),
            len(history) - 1 if iterations is None else iterations, history,
        )


def _shift_into_cone(u, kkt: _Kkt):
    """Move ``u`` strictly inside the cone along the identity direction."""
    worst = -math.inf
    if len(u[0]):
        worst = max(worst, float(-u[0].min()))
    for U in u[1:]:
        if U.shape[0]:
            worst = max(worst, float(-np.linalg.eigvalsh(_sym(U))[:, 0].min()))
    if worst == -math.inf:
        return u
    norm = math.sqrt(_dot(u, u))
    if worst >= -1e-8 * max(norm, 1.0):
        return _axpy(1.0 + max(worst, 0.0), kkt.identity(), u)
    return [v.copy() for v in u]
