"""Two-slot supermaps: validity, circuits, causal separability and testers.

Process matrices live on the factors (I0, I1, O1, I2, O2, O0) with unit
trace.  The probability rule pairing a process with an input state, two
slot Choi blocks (same unit-trace convention as channels) and a final
effect is ``D tr[W (rho^T (x) K^T (x) L^T (x) M)]`` with
``D = d_I0 d_I1 d_O1 d_I2 d_O2``.

Every linear constraint used here is a combination of trace-and-replace
maps ``R_X``.  Those maps commute and are projectors, so the Hermitian
operator space splits into components labelled by the set K of factors on
which the component is traceless; ``R_X`` keeps component K iff X and K
are disjoint.  A constraint ``sum_X c_X R_X W = 0`` therefore kills exactly
the components whose surviving coefficient sum is nonzero, which gives the
validity projector in closed form.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .freesets import (
    ConicFreeSet,
    Equality,
    FreeSetError,
    assignments,
    cand,
    maximally_mixed_blocks,
    process_validity,
)
from .linalg import kron_all, trace_replace
from .objects import PROCESS_LABELS, Check, ChoiChannel, ChoiObject, InvalidObjectError, ProcessMatrix, _psd_residual

I0, I1, O1, I2, O2, O0 = range(6)

# sum_X c_X R_X W = 0, X given as factor tuples
Constraint = tuple[tuple[tuple[int, ...], float], ...]

VALIDITY_CONSTRAINTS: tuple[Constraint, ...] = (
    (((I1, O1, I2, O2, O0), 1.0), ((I0, I1, O1, I2, O2, O0), -1.0)),
    (((I2, O2, O0), 1.0), ((O1, I2, O2, O0), -1.0)),
    (((I1, O1, O0), 1.0), ((O2, I1, O1, O0), -1.0)),
    (((O0,), 1.0), ((O1, O0), -1.0), ((O2, O0), -1.0), ((O1, O2, O0), 1.0)),
)


def comb_constraints(order: str = "1<2") -> tuple[Constraint, ...]:
    """Fixed-order two-slot comb: the slot that comes second may signal to O0 only."""
    first, second = ((I1, O1), (I2, O2)) if order == "1<2" else ((I2, O2), (I1, O1))
    return (
        (((O0,), 1.0), ((second[1], O0), -1.0)),
        (((second[0], second[1], O0), 1.0), ((first[1], second[0], second[1], O0), -1.0)),
        (((first[0], first[1], second[0], second[1], O0), 1.0), ((I0, I1, O1, I2, O2, O0), -1.0)),
    )


def _check_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 6:
        raise InvalidObjectError(f"expected six factor dims {PROCESS_LABELS}, got {dims}")
    return dims


@lru_cache(maxsize=None)
def _allowed_components(dims: tuple[int, ...], constraints: tuple[Constraint, ...]) -> tuple[frozenset, ...]:
    live = [f for f in range(6) if dims[f] > 1]
    allowed = []
    for r in range(len(live) + 1):
        for k in itertools.combinations(live, r):
            ks = set(k)
            if all(abs(sum(c for x, c in con if not ks & set(x))) < 1e-12 for con in constraints):
                allowed.append(frozenset(k))
    return tuple(allowed)


def _component(x: np.ndarray, dims, k: frozenset) -> np.ndarray:
    y = x
    for f in range(6):
        if dims[f] == 1:
            continue
        y = y - trace_replace(y, dims, [f]) if f in k else trace_replace(y, dims, [f])
    return y


def subspace_project(x: np.ndarray, dims, constraints: Sequence[Constraint]) -> np.ndarray:
    """Orthogonal projection onto {W : every constraint holds} (batch-aware)."""
    dims = _check_dims(dims)
    x = np.asarray(x)
    comps = _allowed_components(dims, tuple(constraints))
    live = [f for f in range(6) if dims[f] > 1]
    if len(comps) > 2 ** len(live) // 2:
        banned = [frozenset(k) for r in range(len(live) + 1) for k in itertools.combinations(live, r)
                  if frozenset(k) not in comps]
        return x - sum((_component(x, dims, k) for k in banned), np.zeros_like(x))
    return sum((_component(x, dims, k) for k in comps), np.zeros_like(x))


def validity_project(w, dims=None) -> np.ndarray:
    """The projector L_V onto the span of valid two-slot process matrices."""
    if isinstance(w, ProcessMatrix):
        w, dims = w.W, w.factor_dims
    if dims is None:
        raise InvalidObjectError("factor dims are required for a bare array")
    return subspace_project(np.asarray(w, dtype=complex), dims, VALIDITY_CONSTRAINTS)


def validity_complement(x: np.ndarray, dims) -> np.ndarray:
    return x - validity_project(x, dims)


def constraint_residual(w: np.ndarray, dims, constraints: Sequence[Constraint]) -> float:
    """Largest violation of the constraints, evaluated term by term."""
    worst = 0.0
    for con in constraints:
        val = sum(c * trace_replace(w, dims, list(x)) for x, c in con)
        worst = max(worst, float(np.max(np.abs(val))))
    return worst


def _constraint_equalities(name: str, dims, constraints) -> list[Equality]:
    eqs = []
    for con in constraints:
        fn = (lambda b, con=con: sum(c * trace_replace(b, dims, list(x)) for x, c in con))
        eqs.append(Equality(((name, fn),)))
    return eqs


# --- objects --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SuperinstrumentCollection(ChoiObject):
    """Blocks W_{a|x} on the process factors; each sum over a is a valid process."""

    elements: tuple[tuple[np.ndarray, ...], ...]
    factor_dims: tuple[int, ...]

    kind = "superinstruments"
    family = "process"

    def __post_init__(self):
        dims = _check_dims(self.factor_dims)
        n = int(np.prod(dims))
        elems = tuple(tuple(np.array(w, dtype=complex) for w in inst) for inst in self.elements)
        if not elems or any(not inst for inst in elems):
            raise InvalidObjectError("every superinstrument needs at least one element")
        if any(w.shape != (n, n) for inst in elems for w in inst):
            raise InvalidObjectError("superinstrument blocks do not match the factor dims")
        object.__setattr__(self, "elements", elems)
        object.__setattr__(self, "factor_dims", dims)

    @property
    def blocks(self):
        return tuple(w for inst in self.elements for w in inst)

    @property
    def arities(self):
        return tuple(len(inst) for inst in self.elements)

    @property
    def dims(self):
        return self.factor_dims

    def process(self, x: int) -> ProcessMatrix:
        return ProcessMatrix(sum(self.elements[x]), self.factor_dims)

    def checks(self) -> list[Check]:
        out = []
        for x, inst in enumerate(self.elements):
            for a, w in enumerate(inst):
                out.append(Check(f"element[{x}][{a}].psd", _psd_residual(w), 1e-10))
            out += [Check(f"element[{x}].sum.{c.name}", c.residual, c.tol) for c in self.process(x).checks()]
        return out


# --- circuits and the probability rule ----------------------------------------------


def _choi_tensor(j: ChoiChannel, *split) -> np.ndarray:
    """Standard (trace d_in) Choi as a tensor with the given index split."""
    c = np.asarray(j.J) * j.d_in
    return c.reshape(split + split)


def circuit_matrix(pre: ChoiChannel, mid: ChoiChannel, post: ChoiChannel, order: str = "1<2",
                   slot_dims: tuple[int, int, int, int] = (2, 2, 2, 2)) -> tuple[np.ndarray, tuple[int, ...]]:
    """Unit-trace-convention matrix of the circuit pre -> slot -> mid -> slot -> post.

    ``pre``: I0 -> I_first (x) anc, ``mid``: O_first (x) anc -> I_second (x) anc2,
    ``post``: O_second (x) anc2 -> O0, with ``slot_dims = (d_I1, d_O1, d_I2, d_O2)``.
    A CP but non-TP ``post`` gives the matching subnormalised tester element.
    """
    if order not in ("1<2", "2<1"):
        raise InvalidObjectError(f"unknown order {order!r}")
    dI1, dO1, dI2, dO2 = (int(d) for d in slot_dims)
    dIa, dOa, dIb, dOb = (dI1, dO1, dI2, dO2) if order == "1<2" else (dI2, dO2, dI1, dO1)
    d_I0, d_O0 = pre.d_in, post.d_out
    if pre.d_out % dIa:
        raise InvalidObjectError("dimension chain mismatch at the first slot")
    anc = pre.d_out // dIa
    if mid.d_in != dOa * anc or mid.d_out % dIb:
        raise InvalidObjectError("dimension chain mismatch at the middle channel")
    anc2 = mid.d_out // dIb
    if post.d_in != dOb * anc2:
        raise InvalidObjectError("dimension chain mismatch at the last channel")
    P = _choi_tensor(pre, d_I0, dIa, anc)
    Mi = _choi_tensor(mid, dOa, anc, dIb, anc2)
    Po = _choi_tensor(post, dOb, anc2, d_O0)
    # link products: shared spaces contract ket with ket and bra with bra
    w = np.einsum("abrABR,orpsORPS,qszQSZ->abopqzABOPQZ", P, Mi, Po)
    if order == "2<1":
        w = w.transpose(0, 3, 4, 1, 2, 5, 6, 9, 10, 7, 8, 11)
    dims = (d_I0, dI1, dO1, dI2, dO2, d_O0)
    n = int(np.prod(dims))
    w = w.reshape(n, n) / (d_I0 * dO1 * dO2)
    return (w + w.conj().T) / 2, dims


def process_of_circuit(pre: ChoiChannel, mid: ChoiChannel, post: ChoiChannel, order: str = "1<2",
                       slot_dims: tuple[int, int, int, int] = (2, 2, 2, 2)) -> ProcessMatrix:
    """Process matrix induced by a fixed-order circuit with two open slots."""
    w, dims = circuit_matrix(pre, mid, post, order, slot_dims)
    return ProcessMatrix(w, dims)


def probability_weight(dims) -> int:
    d = _check_dims(dims)
    return d[I0] * d[I1] * d[O1] * d[I2] * d[O2]


def probability(w: ProcessMatrix, jC: np.ndarray, jD: np.ndarray, m: np.ndarray, rho) -> float:
    """Outcome probability for slot CP blocks jC, jD, final effect m and input rho."""
    rho = getattr(rho, "mat", rho)
    dims = w.factor_dims
    op = kron_all([np.asarray(rho).T, np.asarray(jC).T, np.asarray(jD).T, np.asarray(m)])
    if op.shape != w.W.shape:
        raise InvalidObjectError(f"operator of shape {op.shape} does not fit process of shape {w.W.shape}")
    return float(probability_weight(dims) * np.vdot(op.conj().T, w.W).real)


def apply_slots(w: ProcessMatrix, jC: np.ndarray, jD: np.ndarray, rho) -> np.ndarray:
    """Unnormalised output on O0 of the circuit with slot blocks jC, jD."""
    rho = getattr(rho, "mat", rho)
    d = w.factor_dims
    n_in = int(np.prod(d[:5]))
    op = kron_all([np.asarray(rho).T, np.asarray(jC).T, np.asarray(jD).T])
    t = (np.kron(op, np.eye(d[O0])) @ w.W).reshape(n_in, d[O0], n_in, d[O0])
    return probability_weight(d) * np.einsum("iaib->ab", t)


# --- free sets -----------------------------------------------------------------------


def compile_valid_processes(dims, arities: Sequence[int] = (1,)) -> ConicFreeSet:
    from .freesets import compile_all_valid

    return compile_all_valid(tuple(arities), _check_dims(dims), "process")


def compile_causally_ordered(dims, order: str = "1<2") -> ConicFreeSet:
    dims = _check_dims(dims)
    eqs = process_validity((1,), dims) + _constraint_equalities(cand(0), dims, comb_constraints(order))
    return ConicFreeSet(f"causally_ordered_{order}", "process", dims, (1,), (), tuple(eqs),
                        maximally_mixed_blocks((1,), int(np.prod(dims))), params={"dims": list(dims), "order": order})


def compile_causally_separable(dims) -> ConicFreeSet:
    """W = W_1 + W_2 with W_1 a 1<2 comb and W_2 a 2<1 comb (both unnormalised)."""
    dims = _check_dims(dims)
    n = int(np.prod(dims))

    def minus(b):
        return -b

    def same(b):
        return b

    eqs = process_validity((1,), dims)
    eqs.append(Equality(((cand(0), same), ("order12", minus), ("order21", minus))))
    eqs += _constraint_equalities("order12", dims, comb_constraints("1<2"))
    eqs += _constraint_equalities("order21", dims, comb_constraints("2<1"))
    return ConicFreeSet("causally_separable", "process", dims, (1,), (("order12", n), ("order21", n)), tuple(eqs),
                        maximally_mixed_blocks((1,), n), params={"dims": list(dims)})


def compile_compatible_testers(arities: Sequence[int], dims, order: str = "1<2") -> ConicFreeSet:
    """Testers that are classical post-processings of one parent tester on an ordered comb."""
    arities = tuple(int(a) for a in arities)
    if len(arities) < 2:
        raise FreeSetError("compatibility needs at least two testers")
    dims = _check_dims(dims)
    n = int(np.prod(dims))
    lams = assignments(arities)
    aux = tuple((f"parent{i}", n) for i in range(len(lams)))
    eqs = process_validity(arities, dims)
    k = 0
    for x, na in enumerate(arities):
        for a in range(na):
            terms = [(cand(k), lambda b: b)]
            terms += [(f"parent{i}", lambda b: -b) for i, lam in enumerate(lams) if lam[x] == a]
            eqs.append(Equality(tuple(terms)))
            k += 1
    for con in comb_constraints(order):
        fn = (lambda b, con=con: sum(c * trace_replace(b, dims, list(x)) for x, c in con))
        eqs.append(Equality(tuple((name, fn) for name, _ in aux)))
    return ConicFreeSet("compatible_testers", "process", dims, arities, aux, tuple(eqs),
                        maximally_mixed_blocks(arities, n),
                        params={"arities": list(arities), "dims": list(dims), "order": order})


# --- robustness and games ---------------------------------------------------------------


def supermap_robustness(w, f: ConicFreeSet, tol: float | None = None):
    from .robustness import robustness

    if not isinstance(w, (ProcessMatrix, SuperinstrumentCollection)):
        raise InvalidObjectError("supermap robustness needs a process matrix or superinstrument collection")
    return robustness(w, f, tol=tol)


def game_from_process_witness(y, dims=None):
    from .games import game_from_witness

    return game_from_witness(y, dims)


def verify_theorem2(w, f: ConicFreeSet, tol: float = 1e-5):
    from .games import verify_theorem1

    if not isinstance(w, (ProcessMatrix, SuperinstrumentCollection)):
        raise InvalidObjectError("supermap equality checks need a process matrix or superinstrument collection")
    return verify_theorem1(w, f, tol)


# --- fixtures ---------------------------------------------------------------------------


def ocb_process() -> ProcessMatrix:
    """Causally nonseparable two-party process with trivial I0 and O0."""
    from .objects import PAULI

    X, Z, I = PAULI["X"], PAULI["Z"], PAULI["I"]
    # factor order I1, O1, I2, O2
    w = kron_all([I, I, I, I]) + (kron_all([I, Z, Z, I]) + kron_all([Z, I, X, Z])) / np.sqrt(2)
    return ProcessMatrix(w / 16, (1, 2, 2, 2, 2, 1))


def swap_tester_pair() -> SuperinstrumentCollection:
    """Two testers probing a qubit slot with anticommuting correlators.

    Half of a maximally entangled pair enters slot 1, slot 1's output is
    fed straight into slot 2, and slot 2's output is measured jointly
    with the reference qubit.  Tester 0 measures Z(x)Z, tester 1 X(x)Z.
    """
    from .objects import PAULI

    X, Z = PAULI["X"], PAULI["Z"]
    phi = np.zeros(4)
    phi[0] = phi[3] = 1 / np.sqrt(2)
    pre = ChoiChannel(np.outer(phi, phi).astype(complex), 1, 4)  # prepares |phi+> on I1 (x) ref
    mid = ChoiChannel(np.outer(*(2 * [np.eye(4).reshape(-1) / 2])).astype(complex), 4, 4)  # O1 ref -> I2 ref
    elements = []
    for obs in (np.kron(Z, Z), np.kron(X, Z)):
        inst = []
        for sgn in (1, -1):
            eff = (np.eye(4) + sgn * obs) / 2
            post = ChoiChannel(eff.T / 4, 4, 1)  # rho -> tr[eff rho]
            inst.append(circuit_matrix(pre, mid, post)[0])
        elements.append(tuple(inst))
    return SuperinstrumentCollection(tuple(elements), (1, 2, 2, 2, 2, 1))
