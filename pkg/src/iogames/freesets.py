"""Convex free sets compiled into conic descriptions.

A :class:`ConicFreeSet` describes the cone over a free set: candidate
blocks (one per Choi block of the object, same layout as
:attr:`ChoiObject.blocks`), auxiliary PSD blocks, and homogeneous linear
equalities tying them together.  Normalisation never appears in the
equalities; it is added by whichever program uses the set.  Every set
includes the validity constraints of its object family, so a point of the
cone with unit mean block-trace per setting is a valid free object.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linalg import kron, ptrace, ptranspose
from .solver import SolverError

LinearFn = Callable[[np.ndarray], np.ndarray]

MAX_AUX_ORDER = 1024
MAX_ASSIGNMENTS = 256


class FreeSetError(ValueError):
    pass


def cand(k: int) -> str:
    return f"cand{k}"


def _trace(b: np.ndarray) -> np.ndarray:
    return np.trace(b, axis1=-2, axis2=-1)


@dataclass(frozen=True)
class Equality:
    """sum over terms of fn(block) == 0."""

    terms: tuple[tuple[str, LinearFn], ...]
    hermitian: bool = True

    def evaluate(self, values: dict[str, np.ndarray]) -> np.ndarray:
        return sum(fn(np.asarray(values[name])[None])[0] for name, fn in self.terms)


@dataclass(frozen=True, eq=False)
class ConicFreeSet:
    label: str
    family: str  # "channel" or "process"
    dims: tuple[int, ...]  # tensor factors of every candidate block
    arities: tuple[int, ...]
    aux: tuple[tuple[str, int], ...]
    equalities: tuple[Equality, ...]
    slater_point: tuple[np.ndarray, ...] | None = None
    flags: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def block_order(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_blocks(self) -> int:
        return sum(self.arities)

    @property
    def n_settings(self) -> int:
        return len(self.arities)

    def block_index(self) -> list[tuple[int, int]]:
        return [(x, a) for x, n in enumerate(self.arities) for a in range(n)]

    def residual(self, blocks: Sequence[np.ndarray], aux: dict[str, np.ndarray] | None = None) -> float:
        """Largest equality violation for a concrete (candidate, aux) pair."""
        values = {cand(k): np.asarray(b) for k, b in enumerate(blocks)}
        values.update(aux or {})
        return max((float(np.max(np.abs(eq.evaluate(values)))) for eq in self.equalities), default=0.0)

    def matches(self, obj) -> bool:
        return tuple(obj.arities) == self.arities and tuple(obj.dims) == self.dims and obj.family == self.family

    def check_candidate(self, obj) -> None:
        if not self.matches(obj):
            raise FreeSetError(
                f"object ({obj.family}, arities {tuple(obj.arities)}, dims {tuple(obj.dims)}) does not fit "
                f"free set {self.label} ({self.family}, arities {self.arities}, dims {self.dims})"
            )


def maximally_mixed_blocks(arities: Sequence[int], order: int) -> tuple[np.ndarray, ...]:
    return tuple(np.eye(order, dtype=complex) / (order * n) for n in arities for _ in range(n))


# --- validity constraints ----------------------------------------------------


def _setting_blocks(arities) -> list[list[int]]:
    out, k = [], 0
    for n in arities:
        out.append(list(range(k, k + n)))
        k += n
    return out


def channel_validity(arities, d_in: int, d_out: int) -> list[Equality]:
    """Per setting: tr_out sum_a G_a proportional to I, and equal traces across settings."""
    dims = (d_in, d_out)
    eye = np.eye(d_in)

    def marginal(b):
        return ptrace(b, dims, [0]) - _trace(b)[:, None, None] * eye / d_in

    def tr(b):
        return _trace(b).real

    def neg_tr(b):
        return -_trace(b).real

    eqs = []
    groups = _setting_blocks(arities)
    for ks in groups:
        eqs.append(Equality(tuple((cand(k), marginal) for k in ks)))
    for ks in groups[1:]:
        eqs.append(Equality(tuple((cand(k), tr) for k in ks) + tuple((cand(k), neg_tr) for k in groups[0]), False))
    return eqs


def process_validity(arities, dims) -> list[Equality]:
    """Per setting: sum_a W_a lies in the validity subspace; equal traces across settings."""
    from .supermaps import validity_complement

    def off_subspace(b):
        return validity_complement(b, dims)

    def tr(b):
        return _trace(b).real

    def neg_tr(b):
        return -_trace(b).real

    eqs = []
    groups = _setting_blocks(arities)
    for ks in groups:
        eqs.append(Equality(tuple((cand(k), off_subspace) for k in ks)))
    for ks in groups[1:]:
        eqs.append(Equality(tuple((cand(k), tr) for k in ks) + tuple((cand(k), neg_tr) for k in groups[0]), False))
    return eqs


def _base(arities, dims, family) -> list[Equality]:
    if family == "channel":
        return channel_validity(arities, *dims)
    return process_validity(arities, dims)


def compile_all_valid(arities: Sequence[int], dims: Sequence[int], family: str = "channel") -> ConicFreeSet:
    """Every valid object of the given shape (used for canonicalisation)."""
    arities, dims = tuple(arities), tuple(dims)
    order = int(np.prod(dims))
    return ConicFreeSet("all", family, dims, arities, (), tuple(_base(arities, dims, family)),
                        maximally_mixed_blocks(arities, order), params={})


def assignments(arities: Sequence[int]) -> list[tuple[int, ...]]:
    total = int(np.prod(arities))
    if total > MAX_ASSIGNMENTS:
        raise FreeSetError(f"{total} deterministic assignments exceed the cap of {MAX_ASSIGNMENTS}")
    return list(itertools.product(*[range(n) for n in arities]))


def _neg(fn: LinearFn) -> LinearFn:
    return lambda b: -fn(b)


def _identity(b):
    return b


def _minus(b):
    return -b


# --- channel free sets -------------------------------------------------------


def compile_compatible_channels(n_channels: int, d_in: int, d_out: int) -> ConicFreeSet:
    """Channels that are marginals of one broadcast channel A -> B_1 ... B_n."""
    if n_channels < 2:
        raise FreeSetError("compatibility needs at least two channels")
    order = d_in * d_out**n_channels
    if order > MAX_AUX_ORDER:
        raise FreeSetError(f"broadcast Choi of order {order} exceeds {MAX_AUX_ORDER}")
    bdims = (d_in,) + (d_out,) * n_channels
    arities = (1,) * n_channels
    eqs = channel_validity(arities, d_in, d_out)
    for x in range(n_channels):
        eqs.append(Equality(((cand(x), _identity), ("broadcast", lambda b, x=x: -ptrace(b, bdims, [0, 1 + x])))))
    eqs.append(Equality((("broadcast", lambda b: ptrace(b, bdims, [0]) - _trace(b)[:, None, None] * np.eye(d_in) / d_in),)))
    return ConicFreeSet(
        "compatible_channels", "channel", (d_in, d_out), arities, (("broadcast", order),), tuple(eqs),
        maximally_mixed_blocks(arities, d_in * d_out),
        params={"n_channels": n_channels, "d_in": d_in, "d_out": d_out},
    )


def _classical_embed(d: int, n: int, a: int) -> LinearFn:
    proj = np.zeros((n, n))
    proj[a, a] = 1.0
    return lambda b: kron(np.swapaxes(b, -1, -2), proj) / d


def compile_jointly_measurable(outcome_counts: Sequence[int], d: int) -> ConicFreeSet:
    """POVMs (as classical-output channels) with a common parent POVM."""
    counts = tuple(int(n) for n in outcome_counts)
    if len(counts) < 2:
        raise FreeSetError("joint measurability needs at least two POVMs")
    if len(set(counts)) != 1:
        raise FreeSetError("classical-output encoding needs equal outcome counts")
    n = counts[0]
    lams = assignments(counts)
    arities = (1,) * len(counts)
    aux = tuple((f"parent{i}", d) for i in range(len(lams)))
    eqs = channel_validity(arities, d, n)
    for x in range(len(counts)):
        terms = [(cand(x), _identity)]
        for i, lam in enumerate(lams):
            terms.append((f"parent{i}", _neg(_classical_embed(d, n, lam[x]))))
        eqs.append(Equality(tuple(terms)))
    return ConicFreeSet(
        "jointly_measurable", "channel", (d, n), arities, aux, tuple(eqs),
        maximally_mixed_blocks(arities, d * n),
        params={"outcome_counts": list(counts), "d": d},
    )


def compile_entanglement_breaking_ppt(d_in: int, d_out: int, n_channels: int = 1) -> ConicFreeSet:
    """Channels whose Choi matrix has a PSD partial transpose."""
    dims = (d_in, d_out)
    arities = (1,) * n_channels
    eqs = channel_validity(arities, d_in, d_out)
    aux = []
    for x in range(n_channels):
        aux.append((f"pt{x}", d_in * d_out))
        eqs.append(Equality(((f"pt{x}", _identity), (cand(x), lambda b: -ptranspose(b, dims, [1])))))
    flags = {"surrogate": d_in * d_out > 6}
    if flags["surrogate"]:
        flags["note"] = "PPT surrogate, exact only for d_in*d_out <= 6"
    return ConicFreeSet(
        "entanglement_breaking_ppt", "channel", dims, arities, tuple(aux), tuple(eqs),
        maximally_mixed_blocks(arities, d_in * d_out), flags,
        params={"d_in": d_in, "d_out": d_out, "n_channels": n_channels},
    )


def compile_classical_channels(d_in: int, basis: np.ndarray | None = None, d_out: int | None = None,
                               n_channels: int = 1) -> ConicFreeSet:
    """Measure-and-prepare channels that output basis states only."""
    basis = np.eye(d_out or d_in, dtype=complex) if basis is None else np.asarray(basis, dtype=complex)
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
        raise FreeSetError("basis must be a square matrix whose rows are basis vectors")
    if np.max(np.abs(basis.conj() @ basis.T - np.eye(len(basis)))) > 1e-10:
        raise FreeSetError("basis is not orthonormal")
    d_out = basis.shape[0]
    dims = (d_in, d_out)
    arities = (1,) * n_channels
    eqs = channel_validity(arities, d_in, d_out)
    aux = []
    for x in range(n_channels):
        terms = [(cand(x), _identity)]
        for a, v in enumerate(basis):
            proj = np.outer(v, v.conj())
            aux.append((f"povm{x}_{a}", d_in))
            terms.append((f"povm{x}_{a}", lambda b, proj=proj: -kron(np.swapaxes(b, -1, -2), proj) / d_in))
        eqs.append(Equality(tuple(terms)))
    return ConicFreeSet(
        "classical_channels", "channel", dims, arities, tuple(aux), tuple(eqs),
        maximally_mixed_blocks(arities, d_in * d_out),
        params={"d_in": d_in, "d_out": d_out, "n_channels": n_channels},
    )


def compile_compatible_instruments(arities: Sequence[int], d_in: int, d_out: int) -> ConicFreeSet:
    """Instruments obtained from one parent instrument by classical post-processing."""
    arities = tuple(int(n) for n in arities)
    if len(arities) < 2:
        raise FreeSetError("compatibility needs at least two instruments")
    lams = assignments(arities)
    order = d_in * d_out
    aux = tuple((f"parent{i}", order) for i in range(len(lams)))
    eqs = channel_validity(arities, d_in, d_out)
    k = 0
    for x, n in enumerate(arities):
        for a in range(n):
            terms = [(cand(k), _identity)]
            terms += [(f"parent{i}", _minus) for i, lam in enumerate(lams) if lam[x] == a]
            eqs.append(Equality(tuple(terms)))
            k += 1
    return ConicFreeSet(
        "compatible_instruments", "channel", (d_in, d_out), arities, aux, tuple(eqs),
        maximally_mixed_blocks(arities, order),
        params={"arities": list(arities), "d_in": d_in, "d_out": d_out},
    )


def check_group(unitaries: Sequence[np.ndarray], tol: float = 1e-10) -> None:
    """Closure under multiplication, up to a global phase."""
    us = [np.asarray(u, dtype=complex) for u in unitaries]
    d = us[0].shape[0]
    for u in us:
        if np.max(np.abs(u.conj().T @ u - np.eye(d))) > tol:
            raise FreeSetError("group element is not unitary")
    for g, h in itertools.product(us, us):
        gh = g @ h
        if not any(abs(abs(np.trace(k.conj().T @ gh)) - d) <= tol * d for k in us):
            raise FreeSetError("unitaries are not closed under multiplication")


def compile_g_covariant(d: int, group_unitaries: Sequence[np.ndarray], n_channels: int = 1) -> ConicFreeSet:
    """Channels with L(U rho U^dag) = U L(rho) U^dag for every group element."""
    us = [np.asarray(u, dtype=complex) for u in group_unitaries]
    check_group(us)
    arities = (1,) * n_channels
    eqs = channel_validity(arities, d, d)
    for u in us:
        v = np.kron(u.conj(), u)
        if np.max(np.abs(v - np.eye(d * d))) < 1e-14:
            continue
        for x in range(n_channels):
            eqs.append(Equality(((cand(x), lambda b, v=v: b @ v - v @ b),), hermitian=False))
    return ConicFreeSet(
        "g_covariant", "channel", (d, d), arities, (), tuple(eqs),
        maximally_mixed_blocks(arities, d * d),
        params={"d": d, "group": [u.tolist() for u in us], "n_channels": n_channels},
    )


# --- membership ----------------------------------------------------------------


@dataclass
class MembershipCertificate:
    verdict: str  # "in" or "out"
    aux: dict[str, np.ndarray] | None = None
    witness: list[np.ndarray] | None = None
    value: float = 0.0  # tr[Y J] for "out", PSD shortfall for "in"
    free_max: float | None = None
    sampled_max: float | None = None
    residual: float = 0.0
    status: str = "optimal"

    @property
    def member(self) -> bool:
        return self.verdict == "in"


def membership(candidate, f: ConicFreeSet, tol: float = 1e-7) -> MembershipCertificate:
    """Decide candidate in F and return a re-verifiable certificate.

    "in": an aux assignment satisfying the equalities with PSD shortfall at
    most ``tol``.  "out": a witness Y with tr[Y J] > 1 >= max_F tr[Y T].
    """
    from .robustness import feasibility_shortfall, robustness

    f.check_candidate(candidate)
    status, shortfall, aux, resid = feasibility_shortfall(candidate, f)
    if status == "optimal" and shortfall <= tol:
        return MembershipCertificate("in", aux=aux, value=shortfall, residual=resid)
    rep = robustness(candidate, f)
    if rep.status != "optimal":
        raise SolverError(f"membership undecided: feasibility {status}, robustness {rep.status}")
    w = rep.witness
    return MembershipCertificate(
        "out", witness=w.blocks, value=w.value, free_max=w.free_max, sampled_max=w.sampled_max,
        residual=max(w.free_max - 1.0, 0.0), status=status,
    )
