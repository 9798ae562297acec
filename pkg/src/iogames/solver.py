"""Dense primal-dual interior-point solver for block PSD cone programs.

Standard form::

    minimise   <c, x> + offset       maximise   <b, y> + offset
    s.t.       A x = b               s.t.       A^T y + z = c
               x in K                           z in K

with K a product of complex Hermitian PSD cones and nonnegative orthants.
PSD blocks are stored as Hermitian matrices; the linear data lives in the
real orthonormal coordinates of :func:`iogames.linalg.hvec`.

The iteration is Mehrotra predictor-corrector with Nesterov-Todd scaling and
a dense Schur complement.  Redundant equality rows are removed up front by an
SVD on each connected component of the constraint pattern, which also
orthonormalises the constraint matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .linalg import hermitian_basis, hermitize, hmat, hvec

log = logging.getLogger(__name__)

MAX_BLOCK = 256
MAX_ROWS = 20000


class SolverError(RuntimeError):
    """Numerical breakdown or iteration exhaustion; carries the last iterate."""

    def __init__(self, message: str, solution: "Solution | None" = None):
        super().__init__(message)
        self.solution = solution


class StructureError(ValueError):
    pass


@dataclass(frozen=True)
class Block:
    name: str
    kind: str  # "psd" or "nonneg"
    size: int

    @property
    def nvars(self) -> int:
        return self.size * self.size if self.kind == "psd" else self.size


@dataclass(eq=False)
class ConeProgram:
    blocks: list[Block]
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    offset: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = sum(blk.nvars for blk in self.blocks)
        if self.A.shape != (len(self.b), n) or self.c.shape != (n,):
            raise StructureError(
                f"inconsistent program: A {self.A.shape}, b {self.b.shape}, c {self.c.shape}, n={n}"
            )
        for blk in self.blocks:
            if blk.kind == "psd" and blk.size > MAX_BLOCK:
                raise StructureError(f"block {blk.name} of order {blk.size} exceeds {MAX_BLOCK}")
        if len(self.b) > MAX_ROWS:
            raise StructureError(f"{len(self.b)} constraint rows exceed {MAX_ROWS}")

    @property
    def slices(self) -> dict[str, slice]:
        out, pos = {}, 0
        for blk in self.blocks:
            out[blk.name] = slice(pos, pos + blk.nvars)
            pos += blk.nvars
        return out

    def split(self, v: np.ndarray) -> dict[str, np.ndarray]:
        """Vector in program coordinates -> named block values."""
        out = {}
        for blk, sl in zip(self.blocks, self.slices.values()):
            out[blk.name] = hmat(v[sl], blk.size) if blk.kind == "psd" else v[sl].copy()
        return out

    def scaled(self, factor: float) -> "ConeProgram":
        return ConeProgram(self.blocks, self.A, self.b, factor * self.c, factor * self.offset, dict(self.metadata))


@dataclass(eq=False)
class Solution:
    status: str  # optimal | infeasible | ill-conditioned | max-iterations
    primal_value: float
    dual_value: float
    gap: float
    primal: dict[str, np.ndarray]
    dual_slack: dict[str, np.ndarray]
    y: np.ndarray
    primal_residual: float
    dual_residual: float
    complementarity: float
    iterations: int
    program: ConeProgram = field(repr=False)
    history: list = field(default_factory=list, repr=False)  # per-iterate (pobj, dobj, relp, reld, x.z)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# --- program construction ----------------------------------------------------

LinearFn = Callable[[np.ndarray], np.ndarray]


class ProgramBuilder:
    """Assemble a :class:`ConeProgram` from linear maps on named blocks.

    Each equality is ``sum_k fn_k(var_k) = rhs``.  The maps are applied to
    the whole stacked basis of a block at once, so every ``fn`` must accept
    a leading batch axis.  Hermitian-valued constraints contribute n*n real
    rows; anything else contributes real and imaginary parts.
    """

    def __init__(self):
        self.blocks: list[Block] = []
        self._eqs: list[tuple[list[tuple[str, LinearFn]], np.ndarray, bool]] = []
        self._obj: dict[str, np.ndarray] = {}
        self.offset = 0.0

    def psd(self, name: str, n: int) -> str:
        self._add(Block(name, "psd", int(n)))
        return name

    def nonneg(self, name: str, p: int = 1) -> str:
        self._add(Block(name, "nonneg", int(p)))
        return name

    def _add(self, blk: Block) -> None:
        if any(b.name == blk.name for b in self.blocks):
            raise StructureError(f"duplicate block {blk.name}")
        self.blocks.append(blk)

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise StructureError(f"unknown block {name}")

    def equal(self, terms: Sequence[tuple[str, LinearFn]], rhs, hermitian: bool = True) -> None:
        self._eqs.append((list(terms), np.asarray(rhs), hermitian))

    def objective(self, name: str, weight) -> None:
        w = np.asarray(weight)
        self._obj[name] = self._obj.get(name, 0) + w

    def _rows(self, values: np.ndarray, hermitian: bool) -> np.ndarray:
        # values has a leading batch axis
        values = np.asarray(values)
        batch = values.shape[0]
        if hermitian and values.ndim >= 3 and values.shape[-1] == values.shape[-2]:
            return hvec(values).reshape(batch, -1)
        flat = values.reshape(batch, -1)
        if np.iscomplexobj(flat):
            return np.concatenate([flat.real, flat.imag], axis=1)
        return flat

    def build(self, **metadata) -> ConeProgram:
        cols = {}
        pos = 0
        for blk in self.blocks:
            cols[blk.name] = slice(pos, pos + blk.nvars)
            pos += blk.nvars
        nvar = pos
        row_blocks, rhs_blocks = [], []
        for terms, rhs, herm in self._eqs:
            rhs_row = self._rows(rhs[None], herm)[0]
            rows = np.zeros((len(rhs_row), nvar))
            for name, fn in terms:
                blk = self.block(name)
                if blk.kind == "psd":
                    basis = hermitian_basis(blk.size)
                else:
                    basis = np.eye(blk.size)
                vals = self._rows(fn(basis), herm)
                if vals.shape[1] != len(rhs_row):
                    raise StructureError(f"term on {name} yields {vals.shape[1]} rows, expected {len(rhs_row)}")
                rows[:, cols[name]] += vals.T
            row_blocks.append(rows)
            rhs_blocks.append(rhs_row)
        A = np.vstack(row_blocks) if row_blocks else np.zeros((0, nvar))
        b = np.concatenate(rhs_blocks) if rhs_blocks else np.zeros(0)
        c = np.zeros(nvar)
        for name, w in self._obj.items():
            blk = self.block(name)
            c[cols[name]] += hvec(w) if blk.kind == "psd" else np.broadcast_to(w, (blk.size,))
        return ConeProgram(list(self.blocks), A, b, c, float(self.offset), dict(metadata))


# --- cone helpers -------------------------------------------------------------


def _jordan(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * (a @ b + b @ a)


class _PsdScaling:
    """NT scaling X = R lam R^H, Z = R^-H lam R^-1 with lam diagonal."""

    def __init__(self, x: np.ndarray, z: np.ndarray):
        l1 = _chol(x)
        l2 = _chol(z)
        u, s, vh = np.linalg.svd(l2.conj().T @ l1)
        self.lam = s
        self.r = l1 @ vh.conj().T / np.sqrt(s)
        self.rinv = (np.sqrt(s)[:, None] * vh) @ sla.solve_triangular(l1, np.eye(len(s)), lower=True)
        self.g = self.r @ self.r.conj().T

    def gram_operator(self) -> np.ndarray:
        """Matrix of X -> G X G in hvec coordinates."""
        n = len(self.lam)
        return hvec(self.g @ hermitian_basis(n) @ self.g).T

    def operator(self) -> np.ndarray:
        """Matrix of X -> R X R^H in hvec coordinates; K K^T is X -> G X G."""
        n = len(self.lam)
        basis = hermitian_basis(n)
        return hvec(self.r @ basis @ self.r.conj().T).T

    def to_scaled_x(self, dx: np.ndarray) -> np.ndarray:
        return self.rinv @ dx @ self.rinv.conj().T

    def to_scaled_z(self, dz: np.ndarray) -> np.ndarray:
        return self.r.conj().T @ dz @ self.r


def _sandwich(ak, h: np.ndarray) -> np.ndarray:
    """ak h ak^T for dense or sparse ak."""
    if sp.issparse(ak):
        left = np.asarray(ak @ h)  # h is symmetric
        return np.asarray(ak @ left.T)
    return ak @ h @ ak.T


def _chol(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(hermitize(a))
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(hermitize(a))
        w = np.maximum(w, 1e-300 + 1e-14 * max(w.max(), 1e-300))
        q, r = np.linalg.qr((v * np.sqrt(w)).conj().T)
        lo = r.conj().T
        sign = np.sign(np.diag(lo).real)
        sign[sign == 0] = 1
        return lo * sign


def _lyap_solve(lam: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve lam o d = rhs for diagonal lam (Jordan product)."""
    return 2.0 * rhs / (lam[:, None] + lam[None, :])


def _max_step_psd(lam: np.ndarray, dxs: np.ndarray) -> float:
    isq = 1.0 / np.sqrt(lam)
    m = hermitize(isq[:, None] * dxs * isq[None, :])
    g = np.linalg.eigvalsh(m)[0]
    return np.inf if g >= 0 else -1.0 / g


def _max_step_lp(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


# --- the solver ----------------------------------------------------------------


@dataclass
class SolverOptions:
    gap_tol: float = 1e-10
    feas_tol: float = 1e-9
    accept_gap: float = 1e-7
    accept_feas: float = 1e-8
    max_iter: int = 120
    infeasible_bound: float = 1e8


def _reduce_dense(A: np.ndarray, b: np.ndarray, rtol: float):
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > rtol * max(s[0], 1.0))) if s.size else 0
    ur = u[:, :r]
    return vt[:r], (ur.T @ b) / s[:r], b - ur @ (ur.T @ b)


def reduce_rows(A: np.ndarray, b: np.ndarray, rtol: float = 1e-10):
    """Orthonormal row basis of A with matching rhs, plus a consistency residual.

    Constraint matrices here are very sparse and split into many
    independent pieces, so the SVD runs per connected component of the
    row/column incidence graph.
    """
    m, n = A.shape
    if m == 0:
        return A, b, 0.0
    bnorm = 1.0 + np.linalg.norm(b)
    if m * n <= 250_000:
        rows, rhs, miss = _reduce_dense(A, b, rtol)
        return rows, rhs, float(np.linalg.norm(miss) / bnorm)
    pattern = sp.csr_matrix(np.abs(A) > 0)
    graph = sp.bmat([[None, pattern], [pattern.T, None]])
    _, label = connected_components(graph, directed=False)
    rlab, clab = label[:m], label[m:]
    out_rows, out_rhs, miss2 = [], [], 0.0
    order_r = np.argsort(rlab, kind="stable")
    order_c = np.argsort(clab, kind="stable")
    rsplit = np.searchsorted(rlab[order_r], np.unique(rlab), side="left")
    groups_r = dict(zip(np.unique(rlab), np.split(order_r, rsplit[1:])))
    ucl = np.unique(clab)
    csplit = np.searchsorted(clab[order_c], ucl, side="left")
    groups_c = dict(zip(ucl, np.split(order_c, csplit[1:])))
    for comp, ridx in groups_r.items():
        cidx = groups_c.get(comp)
        if cidx is None:  # rows with no variables at all
            miss2 += float(b[ridx] @ b[ridx])
            continue
        rows, rhs, miss = _reduce_dense(A[np.ix_(ridx, cidx)], b[ridx], rtol)
        full = np.zeros((rows.shape[0], n))
        full[:, cidx] = rows
        out_rows.append(full)
        out_rhs.append(rhs)
        miss2 += float(miss @ miss)
    red = np.vstack(out_rows) if out_rows else np.zeros((0, n))
    rhs = np.concatenate(out_rhs) if out_rhs else np.zeros(0)
    return red, rhs, float(np.sqrt(miss2) / bnorm)


def solve(program: ConeProgram, tol: float | None = None, options: SolverOptions | None = None) -> Solution:
    """Solve a cone program; raise :class:`SolverError` on breakdown.

    Deterministic: no randomness, fixed iteration order.
    """
    opts = options or SolverOptions()
    if tol is not None:
        opts = SolverOptions(**{**opts.__dict__, "gap_tol": min(opts.gap_tol, tol)})

    A, b, resid = reduce_rows(program.A, program.b)
    if resid > 1e-9:
        sol = _empty_solution(program, "infeasible", resid)
        return sol

    blocks = program.blocks
    slices = list(program.slices.values())
    # per-block column slices, sparse when that pays off
    sparse = A.size > 0 and np.count_nonzero(A) < 0.1 * A.size
    ablocks = [sp.csr_matrix(A[:, sl]) if sparse else A[:, sl] for sl in slices]
    c = program.c
    m = A.shape[0]
    nu = sum(blk.size for blk in blocks)
    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(c)

    # initial point: scaled identities
    x, z = [], []
    for blk, sl in zip(blocks, slices):
        ak = A[:, sl]
        anorm = np.linalg.norm(ak, axis=1).max() if m else 0.0
        ck = np.linalg.norm(c[sl])
        n = blk.size
        xi = max(10.0, np.sqrt(n), n * np.max((1 + np.abs(b)) / (1 + np.linalg.norm(ak, axis=1)), initial=0.0))
        ze = max(10.0, np.sqrt(n), anorm, ck)
        if blk.kind == "psd":
            x.append(xi * np.eye(n, dtype=complex))
            z.append(ze * np.eye(n, dtype=complex))
        else:
            x.append(np.full(n, xi))
            z.append(np.full(n, ze))
    y = np.zeros(m)

    def vec(parts):
        return np.concatenate([hvec(p) if blk.kind == "psd" else p for blk, p in zip(blocks, parts)])

    def unvec(v):
        return [hmat(v[sl], blk.size) if blk.kind == "psd" else v[sl] for blk, sl in zip(blocks, slices)]

    status = "max-iterations"
    it = 0
    best = None
    stall = 0
    history = []
    for it in range(opts.max_iter + 1):
        xv, zv = vec(x), vec(z)
        rp = b - A @ xv
        rd = c - A.T @ y - zv
        pobj = float(c @ xv)
        dobj = float(b @ y)
        mu = float(xv @ zv) / nu
        relp = np.linalg.norm(rp) / bnorm
        reld = np.linalg.norm(rd) / cnorm
        gap = abs((pobj + program.offset) - (dobj + program.offset)) / max(1.0, abs(pobj + program.offset))
        compl = float(xv @ zv) / max(1.0, abs(pobj + program.offset))
        err = max(relp, reld, gap, compl)
        history.append((pobj + program.offset, dobj + program.offset, relp, reld, float(xv @ zv)))
        if best is None or err < best[0]:
            best = (err, [p.copy() for p in x], y.copy(), [p.copy() for p in z])
            stall = 0
        else:
            stall += 1
        log.debug("it=%d pobj=%.10e dobj=%.10e relp=%.2e reld=%.2e gap=%.2e", it, pobj, dobj, relp, reld, gap)
        if relp <= opts.feas_tol and reld <= opts.feas_tol and gap <= opts.gap_tol and compl <= opts.gap_tol:
            status = "optimal"
            break
        if it == opts.max_iter or stall > 3:
            break
        # infeasibility: dual ray growing with bounded residual
        if m and np.linalg.norm(y) > opts.infeasible_bound and dobj > opts.infeasible_bound and reld < 1e-6:
            status = "infeasible"
            break
        if np.linalg.norm(xv) > opts.infeasible_bound and pobj < -opts.infeasible_bound and relp < 1e-6:
            status = "dual-infeasible"
            break

        try:
            step = _newton(A, ablocks, blocks, slices, x, z, rp, rd, mu, m)
        except np.linalg.LinAlgError as exc:
            status = "ill-conditioned"
            log.debug("Newton system breakdown: %s", exc)
            break
        ap, ad, dx, dy, dz = step
        for k, blk in enumerate(blocks):
            x[k] = x[k] + ap * dx[k]
            z[k] = z[k] + ad * dz[k]
            if blk.kind == "psd":
                x[k] = hermitize(x[k])
                z[k] = hermitize(z[k])
        y = y + ad * dy
        if max(ap, ad) < 1e-10:
            status = "ill-conditioned"
            break

    if status != "optimal" and best is not None:
        _, x, y, z = best
    xv, zv = vec(x), vec(z)
    rp = b - A @ xv
    rd = c - A.T @ y - zv
    pval = float(c @ xv) + program.offset
    dval = float(b @ y) + program.offset
    relp = float(np.linalg.norm(rp) / bnorm)
    reld = float(np.linalg.norm(rd) / cnorm)
    gap = abs(pval - dval) / max(1.0, abs(pval))
    compl = float(xv @ zv) / max(1.0, abs(pval))
    if status not in ("optimal", "infeasible", "dual-infeasible"):
        if relp <= opts.accept_feas and reld <= opts.accept_feas and gap <= opts.accept_gap and compl <= opts.accept_gap:
            status = "optimal"
    # report residuals against the original (unreduced) constraints
    xv_full = xv
    prim_res = float(np.linalg.norm(program.b - program.A @ xv_full) / (1 + np.linalg.norm(program.b)))
    names = [blk.name for blk in blocks]
    return Solution(
        status=status,
        primal_value=pval,
        dual_value=dval,
        gap=gap,
        primal=dict(zip(names, x)),
        dual_slack=dict(zip(names, z)),
        y=y,
        primal_residual=max(prim_res, relp),
        dual_residual=reld,
        complementarity=compl,
        iterations=it,
        program=program,
        history=history,
    )


def _empty_solution(program: ConeProgram, status: str, resid: float) -> Solution:
    names = [blk.name for blk in program.blocks]
    zeros = [np.zeros((blk.size, blk.size), complex) if blk.kind == "psd" else np.zeros(blk.size) for blk in program.blocks]
    return Solution(status, np.nan, np.nan, np.inf, dict(zip(names, zeros)), dict(zip(names, zeros)),
                    np.zeros(0), resid, np.inf, np.inf, 0, program)


def _newton(A, ablocks, blocks, slices, x, z, rp, rd, mu, m):
    """One Mehrotra predictor-corrector step; returns step lengths and direction."""
    scal = []
    schur = np.zeros((m, m))
    for blk, ak, xk, zk in zip(blocks, ablocks, x, z):
        if blk.kind == "psd":
            sc = _PsdScaling(xk, zk)
            h = sc.gram_operator()
            schur += _sandwich(ak, h)
        else:
            g = np.sqrt(xk / zk)
            sc = (g, np.sqrt(xk * zk))
            schur += _sandwich(ak, np.diag(g * g))
        scal.append(sc)
    rdk = [rd[sl] for sl in slices]

    try:
        factor = sla.cho_factor(schur, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        reg = 1e-14 * max(1.0, np.abs(np.diag(schur)).max())
        factor = sla.cho_factor(schur + reg * np.eye(m), lower=True, check_finite=False)

    def direction(rcs):
        # rcs: scaled complementarity rhs per block
        dparts, rhs_terms = [], np.array(rp, dtype=float)
        gr = []
        for blk, ak, sc, rc, rdv in zip(blocks, ablocks, scal, rcs, rdk):
            if blk.kind == "psd":
                d = _lyap_solve(sc.lam, rc)
                rdr = sc.r @ d @ sc.r.conj().T
                g_rd = sc.g @ hmat(rdv, blk.size) @ sc.g
                rhs_terms += ak @ (hvec(g_rd) - hvec(rdr))
            else:
                g, lam = sc
                d = rc / lam
                rdr = g * d
                g_rd = g * g * rdv
                rhs_terms += ak @ (g_rd - rdr)
            dparts.append(d)
            gr.append((rdr, g_rd))
        dy = sla.cho_solve(factor, rhs_terms, check_finite=False) if m else np.zeros(0)
        dxs, dzs, dxt, dzt = [], [], [], []
        for blk, ak, sc, d, rdv in zip(blocks, ablocks, scal, dparts, rdk):
            dzv = rdv - ak.T @ dy
            if blk.kind == "psd":
                dz = hmat(dzv, blk.size)
                dx = hermitize(sc.r @ d @ sc.r.conj().T - sc.g @ dz @ sc.g)
                dxs.append(dx)
                dzs.append(dz)
                dxt.append(sc.to_scaled_x(dx))
                dzt.append(sc.to_scaled_z(dz))
            else:
                g, lam = sc
                # x~ = x/g, z~ = z g with g = sqrt(x/z)
                dx = g * d - g * g * dzv
                dxs.append(dx)
                dzs.append(dzv)
                dxt.append(dx / g)
                dzt.append(dzv * g)
        return dxs, dy, dzs, dxt, dzt

    def steps(dxt, dzt):
        ap = ad = 1.0
        for sc, blk, a, bz, xk, zk in zip(scal, blocks, dxt, dzt, x, z):
            if blk.kind == "psd":
                ap = min(ap, _max_step_psd(sc.lam, a))
                ad = min(ad, _max_step_psd(sc.lam, bz))
            else:
                g, lam = sc
                ap = min(ap, _max_step_lp(lam, a))
                ad = min(ad, _max_step_lp(lam, bz))
        return ap, ad

    nu = sum(blk.size for blk in blocks)
    # predictor
    rc_aff = [(-np.diag(sc.lam ** 2)).astype(complex) if blk.kind == "psd" else -sc[1] ** 2
              for blk, sc in zip(blocks, scal)]
    dx_a, dy_a, dz_a, dxt_a, dzt_a = direction(rc_aff)
    ap, ad = steps(dxt_a, dzt_a)
    mu_aff = 0.0
    for blk, xk, zk, dx, dz in zip(blocks, x, z, dx_a, dz_a):
        xa = xk + ap * dx
        za = zk + ad * dz
        mu_aff += float(np.sum(xa.conj() * za).real) if blk.kind == "psd" else float(xa @ za)
    mu_aff /= nu
    sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0

    # corrector
    rc = []
    for blk, sc, a, bz in zip(blocks, scal, dxt_a, dzt_a):
        if blk.kind == "psd":
            n = len(sc.lam)
            rc.append(sigma * mu * np.eye(n) - np.diag(sc.lam ** 2) - _jordan(a, bz))
        else:
            rc.append(sigma * mu - sc[1] ** 2 - a * bz)
    dx, dy, dz, dxt, dzt = direction(rc)
    ap, ad = steps(dxt, dzt)
    tau = 0.9 + 0.09 * min(1.0, ap, ad)
    return min(1.0, tau * ap), min(1.0, tau * ad), dx, dy, dz
