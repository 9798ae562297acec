"""Dense complex linear algebra with explicit tensor-factor bookkeeping.

Factor convention: row-major Kronecker order, the first listed factor is the
slowest index (``np.kron(a, b)`` has ``a`` on factor 0).

The array-level helpers (``ptrace``, ``ptranspose``, ``trace_replace``,
``hvec``/``hmat``) accept leading batch dimensions, which the conic-program
builder relies on to materialise linear maps column by column.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
DECOMPOSITION_TOL = 1e-10
FEASIBILITY_TOL = 1e-8


class FactorError(ValueError):
    """Raised for an invalid tensor-factor index or inconsistent dims."""


class NotHermitianError(ValueError):
    pass


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2).conj())


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


def min_eig(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermitize(a))[0])


def _check_factors(dims: Sequence[int], factors) -> tuple[int, ...]:
    out = tuple(sorted({int(f) for f in np.atleast_1d(factors)}))
    for f in out:
        if not 0 <= f < len(dims):
            raise FactorError(f"factor index {f} out of range for dims {tuple(dims)}")
    return out


def _check_shape(x: np.ndarray, dims: Sequence[int]) -> None:
    n = int(np.prod(dims))
    if x.shape[-2:] != (n, n):
        raise FactorError(f"matrix of shape {x.shape[-2:]} does not match dims {tuple(dims)}")


# --- Hermitian vectorisation -------------------------------------------------
#
# Orthonormal basis for Hermitian n x n matrices under <A, B> = Re tr(A B):
# E_kk, (E_kl + E_lk)/sqrt2 and i(E_kl - E_lk)/sqrt2 for k < l.


@lru_cache(maxsize=None)
def _triu(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, 1)


def hvec(x: np.ndarray) -> np.ndarray:
    """Real coordinates of Hermitian matrices, shape (..., n*n)."""
    x = np.asarray(x)
    n = x.shape[-1]
    iu, ju = _triu(n)
    diag = np.diagonal(x, axis1=-2, axis2=-1).real
    off = x[..., iu, ju]
    return np.concatenate([diag, np.sqrt(2) * off.real, np.sqrt(2) * off.imag], axis=-1)


def hmat(v: np.ndarray, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`hvec`."""
    v = np.asarray(v, dtype=float)
    if n is None:
        n = int(round(np.sqrt(v.shape[-1])))
    if n * n != v.shape[-1]:
        raise ValueError(f"vector length {v.shape[-1]} is not a square")
    iu, ju = _triu(n)
    m = len(iu)
    out = np.zeros(v.shape[:-1] + (n, n), dtype=complex)
    idx = np.arange(n)
    out[..., idx, idx] = v[..., :n]
    off = (v[..., n : n + m] + 1j * v[..., n + m :]) / np.sqrt(2)
    out[..., iu, ju] = off
    out[..., ju, iu] = off.conj()
    return out


@lru_cache(maxsize=None)
def hermitian_basis(n: int) -> np.ndarray:
    """The orthonormal Hermitian basis behind :func:`hvec`, shape (n*n, n, n)."""
    basis = hmat(np.eye(n * n), n)
    basis.setflags(write=False)
    return basis


# --- Tensor-factor operations ------------------------------------------------


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batch-aware Kronecker product over the last two axes."""
    a = np.asarray(a)
    b = np.asarray(b)
    out = np.einsum("...ij,...kl->...ikjl", a, b)
    lead = out.shape[:-4]
    return out.reshape(lead + (a.shape[-2] * b.shape[-2], a.shape[-1] * b.shape[-1]))


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def ptrace(x: np.ndarray, dims: Sequence[int], keep) -> np.ndarray:
    """Partial trace keeping the factors in ``keep`` (in their original order)."""
    dims = tuple(int(d) for d in dims)
    keep = _check_factors(dims, keep) if np.size(keep) else ()
    _check_shape(x, dims)
    lead = x.shape[:-2]
    nl = len(lead)
    k = len(dims)
    t = x.reshape(lead + dims + dims)
    cur = list(range(k))
    for f in reversed(range(k)):
        if f in keep:
            continue
        pos = cur.index(f)
        t = np.trace(t, axis1=nl + pos, axis2=nl + len(cur) + pos)
        cur.pop(pos)
    n = int(np.prod([dims[f] for f in keep])) if keep else 1
    return t.reshape(lead + (n, n))


def ptranspose(x: np.ndarray, dims: Sequence[int], factors) -> np.ndarray:
    """Transpose on the chosen factor(s) only."""
    dims = tuple(int(d) for d in dims)
    factors = _check_factors(dims, factors)
    _check_shape(x, dims)
    lead = x.shape[:-2]
    nl = len(lead)
    k = len(dims)
    t = x.reshape(lead + dims + dims)
    axes = list(range(nl + 2 * k))
    for f in factors:
        axes[nl + f], axes[nl + k + f] = axes[nl + k + f], axes[nl + f]
    return t.transpose(axes).reshape(x.shape)


def trace_replace(x: np.ndarray, dims: Sequence[int], factors) -> np.ndarray:
    """tr_F(x) tensored with I_F / d_F, reinserted at the original positions."""
    dims = tuple(int(d) for d in dims)
    factors = _check_factors(dims, factors) if np.size(factors) else ()
    _check_shape(x, dims)
    lead = x.shape[:-2]
    nl = len(lead)
    k = len(dims)
    t = x.reshape(lead + dims + dims)
    for f in factors:
        d = dims[f]
        if d == 1:
            continue
        tr = np.trace(t, axis1=nl + f, axis2=nl + k + f)
        tr = np.expand_dims(np.expand_dims(tr, nl + f), nl + k + f)
        shape = [1] * (nl + 2 * k)
        shape[nl + f] = d
        shape[nl + k + f] = d
        t = tr * (np.eye(d) / d).reshape(shape)
    return t.reshape(x.shape)


def permute_factors(x: np.ndarray, dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors; ``order[i]`` is the old index of the new factor i."""
    dims = tuple(int(d) for d in dims)
    order = tuple(int(o) for o in order)
    if sorted(order) != list(range(len(dims))):
        raise FactorError(f"{order} is not a permutation of the factors")
    _check_shape(x, dims)
    lead = x.shape[:-2]
    nl = len(lead)
    k = len(dims)
    t = x.reshape(lead + dims + dims)
    axes = list(range(nl)) + [nl + o for o in order] + [nl + k + o for o in order]
    return t.transpose(axes).reshape(x.shape)


def embed_identity(x: np.ndarray, dims: Sequence[int], position: int) -> np.ndarray:
    """Insert an identity factor of dimension ``dims[position]`` into ``x``.

    ``dims`` are the dims of the result; ``x`` lives on all other factors.
    """
    dims = tuple(int(d) for d in dims)
    rest = dims[:position] + dims[position + 1 :]
    y = kron(x, np.eye(dims[position]))
    order = list(range(len(rest)))
    order.insert(position, len(rest))
    return permute_factors(y, rest + (dims[position],), order)


# --- Eigen and Schmidt decompositions -----------------------------------------


def eig_psd_parts(a: np.ndarray, tol: float = HERMITIAN_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Split a Hermitian matrix into positive and negative parts a = P - N."""
    w, v = np.linalg.eigh(hermitize(a))
    pos = np.where(w > tol, w, 0.0)
    neg = np.where(w < -tol, -w, 0.0)
    return (v * pos) @ v.conj().T, (v * neg) @ v.conj().T


def realign(x: np.ndarray, da: int, db: int) -> np.ndarray:
    """R[(i,i'),(j,j')] = x[(i,j),(i',j')] for x on A (x) B."""
    t = x.reshape(da, db, da, db).transpose(0, 2, 1, 3)
    return t.reshape(da * da, db * db)


def schmidt_arrays(
    x: np.ndarray, da: int, db: int, tol: float = 1e-13
) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Hermitian operator-Schmidt terms of ``x`` on A (x) B (array level).

    The coefficient matrix in the real Hermitian bases is real, so its SVD
    yields Hermitian left and right factors of unit Hilbert-Schmidt norm.
    """
    ba = hermitian_basis(da)
    bb = hermitian_basis(db)
    ta = ba.transpose(0, 2, 1).reshape(da * da, da * da)
    tb = bb.transpose(0, 2, 1).reshape(db * db, db * db)
    coeff = (ta @ realign(x, da, db) @ tb.T).real
    u, s, vt = np.linalg.svd(coeff, full_matrices=False)
    scale = max(1.0, float(s[0])) if s.size else 1.0
    terms = []
    for k, w in enumerate(s):
        if w <= tol * scale:
            break
        left = np.tensordot(u[:, k], ba, axes=1)
        right = np.tensordot(vt[k], bb, axes=1)
        terms.append((float(w), left, right))
    return terms


def multi_schmidt(
    x: np.ndarray, group_dims: Sequence[int], tol: float = 1e-13
) -> list[tuple[float, list[np.ndarray]]]:
    """Sum of Hermitian product terms across several factor groups.

    Built by successive bipartite splits (first group | rest).  Trivial
    groups (dimension 1) get the factor [[1]].
    """
    group_dims = [int(g) for g in group_dims]
    if len(group_dims) == 1:
        nrm = float(np.linalg.norm(x))
        if nrm <= tol:
            return []
        return [(nrm, [hermitize(x) / nrm])]
    head, rest = group_dims[0], group_dims[1:]
    drest = int(np.prod(rest))
    if head == 1:
        return [(w, [np.ones((1, 1), dtype=complex)] + fs) for w, fs in multi_schmidt(x, rest, tol)]
    out = []
    for w, left, right in schmidt_arrays(x, head, drest, tol):
        for w2, fs in multi_schmidt(right, rest, tol):
            out.append((w * w2, [left] + fs))
    return out


# --- Typed surface -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ComplexMatrix:
    """Dense square complex matrix with declared tensor-factor dimensions."""

    data: np.ndarray
    dims: tuple[int, ...] = ()
    labels: tuple[str, ...] | None = None
    hermitian: bool = field(default=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise FactorError(f"expected a square matrix, got shape {data.shape}")
        dims = tuple(int(d) for d in self.dims) or (data.shape[0],)
        if int(np.prod(dims)) != data.shape[0]:
            raise FactorError(f"dims {dims} do not multiply to {data.shape[0]}")
        if self.labels is not None and len(self.labels) != len(dims):
            raise FactorError("one label per factor is required")
        if self.hermitian:
            if not is_hermitian(data):
                raise NotHermitianError("matrix flagged Hermitian is not Hermitian within 1e-12")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dims", dims)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def order(self) -> int:
        return self.data.shape[0]

    def factor_index(self, factor) -> int:
        if isinstance(factor, str):
            if self.labels is None or factor not in self.labels:
                raise FactorError(f"unknown factor label {factor!r}")
            return self.labels.index(factor)
        return int(factor)

    def _derive(self, data, dims=None, labels=None) -> "ComplexMatrix":
        return ComplexMatrix(
            hermitize(data) if self.hermitian else data,
            dims if dims is not None else self.dims,
            labels if labels is not None else self.labels,
            hermitian=self.hermitian,
        )


def _as_matrix(m) -> ComplexMatrix:
    return m if isinstance(m, ComplexMatrix) else ComplexMatrix(m)


def tensor(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Kronecker product with concatenated dims (and labels when both carry them)."""
    a, b = _as_matrix(a), _as_matrix(b)
    labels = a.labels + b.labels if a.labels is not None and b.labels is not None else None
    return ComplexMatrix(
        np.kron(a.data, b.data), a.dims + b.dims, labels, hermitian=a.hermitian and b.hermitian
    )


def partial_trace(m: ComplexMatrix, keep) -> ComplexMatrix:
    m = _as_matrix(m)
    keep = [m.factor_index(f) for f in np.atleast_1d(keep)] if np.size(keep) else []
    keep = _check_factors(m.dims, keep) if keep else ()
    dims = tuple(m.dims[f] for f in keep) or (1,)
    labels = tuple(m.labels[f] for f in keep) if m.labels is not None and keep else None
    return ComplexMatrix(ptrace(m.data, m.dims, keep), dims, labels, hermitian=m.hermitian)


def partial_transpose(m: ComplexMatrix, factor) -> ComplexMatrix:
    m = _as_matrix(m)
    return m._derive(ptranspose(m.data, m.dims, m.factor_index(factor)))


def trace_and_replace(m: ComplexMatrix, factor) -> ComplexMatrix:
    m = _as_matrix(m)
    idx = [m.factor_index(f) for f in np.atleast_1d(factor)]
    return m._derive(trace_replace(m.data, m.dims, idx))


def hermitian_eig(m: ComplexMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and unitary eigenvectors of a Hermitian matrix."""
    m = _as_matrix(m)
    if not is_hermitian(m.data):
        raise NotHermitianError("hermitian_eig needs a Hermitian matrix")
    return np.linalg.eigh(hermitize(m.data))


@dataclass(frozen=True, eq=False)
class SchmidtTerm:
    weight: float
    left: ComplexMatrix
    right: ComplexMatrix


def operator_schmidt(m: ComplexMatrix, cut) -> list[SchmidtTerm]:
    """Hermitian operator-Schmidt decomposition across ``cut | rest``.

    ``cut`` lists the factors on the left side; weights come out descending.
    """
    m = _as_matrix(m)
    if not is_hermitian(m.data):
        raise NotHermitianError("operator_schmidt needs a Hermitian matrix")
    left = _check_factors(m.dims, [m.factor_index(f) for f in np.atleast_1d(cut)])
    right = tuple(f for f in range(len(m.dims)) if f not in left)
    x = permute_factors(m.data, m.dims, left + right)
    dl = tuple(m.dims[f] for f in left)
    dr = tuple(m.dims[f] for f in right) or (1,)
    terms = schmidt_arrays(x, int(np.prod(dl)), int(np.prod(dr)))
    return [
        SchmidtTerm(w, ComplexMatrix(hermitize(a), dl, hermitian=True), ComplexMatrix(hermitize(b), dr, hermitian=True))
        for w, a, b in terms
    ]
