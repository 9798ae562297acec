import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iogames.linalg import (
    ComplexMatrix,
    FactorError,
    NotHermitianError,
    hermitian_eig,
    hmat,
    hvec,
    kron_all,
    multi_schmidt,
    operator_schmidt,
    partial_trace,
    partial_transpose,
    ptrace,
    tensor,
    trace_and_replace,
    trace_replace,
)
from iogames.objects import PAULI

from conftest import random_hermitian, random_matrix

X, Y, Z, I2 = PAULI["X"], PAULI["Y"], PAULI["Z"], PAULI["I"]
seeds = st.integers(0, 2**31 - 1)


def cm(a, dims=(), **kw):
    return ComplexMatrix(a, dims, **kw)


# --- tensor -------------------------------------------------------------------------


def test_tensor_identities():
    assert np.allclose(tensor(cm(I2), cm(I2)).data, np.eye(4))
    assert np.allclose(tensor(cm(Z), cm(Z)).data, np.diag([1, -1, -1, 1]))
    assert tensor(cm(Z, labels=("A",)), cm(Z, labels=("B",))).labels == ("A", "B")


def test_factor_order_canonical_vector():
    # first factor is the slowest index: |1> (x) |0> sits at position 2
    e0, e1 = np.diag([1, 0]), np.diag([0, 1])
    assert np.argmax(np.diag(tensor(cm(e1), cm(e0)).data)) == 2


@given(seeds)
def test_tensor_trace_and_mixed_product(seed):
    rng = np.random.default_rng(seed)
    a, b, c, d = (random_matrix(rng, 2) for _ in range(4))
    assert np.isclose(np.trace(tensor(cm(a), cm(b)).data), np.trace(a) * np.trace(b))
    lhs = tensor(cm(a), cm(b)).data @ tensor(cm(c), cm(d)).data
    assert np.max(np.abs(lhs - np.kron(a @ c, b @ d))) <= 1e-11
    left = tensor(tensor(cm(a), cm(b)), cm(c)).data
    right = tensor(cm(a), tensor(cm(b), cm(c))).data
    assert np.max(np.abs(left - right)) <= 1e-11


def test_dims_must_multiply():
    with pytest.raises(FactorError):
        cm(np.eye(4), (2, 3))
    with pytest.raises(NotHermitianError):
        cm(np.array([[0, 1], [0, 0]]), hermitian=True)


# --- partial trace --------------------------------------------------------------------


@given(seeds, st.sampled_from([(2, 3), (3, 2), (2, 2, 2)]))
def test_partial_trace_of_products(seed, dims):
    rng = np.random.default_rng(seed)
    facs = [random_matrix(rng, d) for d in dims]
    m = cm(kron_all(facs), dims)
    for f in range(len(dims)):
        rest = np.prod([np.trace(g) for k, g in enumerate(facs) if k != f])
        assert np.allclose(partial_trace(m, [f]).data, rest * facs[f], atol=1e-10)
    assert np.isclose(np.trace(partial_trace(m, [0]).data), np.trace(m.data))


def test_partial_trace_examples():
    a, b = np.diag([1.0, 2.0]), np.array([[1, 1j], [-1j, 3]])
    assert np.allclose(partial_trace(cm(np.kron(a, b), (2, 2)), [0]).data, 4 * a)
    full = partial_trace(cm(np.kron(a, b), (2, 2)), [])
    assert full.data.shape == (1, 1) and np.isclose(full.data[0, 0], 12)
    phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    j_id = np.outer(phi, phi)
    assert np.allclose(partial_trace(cm(j_id, (2, 2)), [0]).data, np.eye(2) / 2)
    with pytest.raises(FactorError):
        partial_trace(cm(j_id, (2, 2)), [2])


def test_partial_trace_by_label():
    m = cm(np.kron(np.eye(2), Z), (2, 2), labels=("A", "B"))
    assert np.allclose(partial_trace(m, ["B"]).data, 2 * Z)


# --- partial transpose ------------------------------------------------------------------


def test_partial_transpose_examples(rng):
    a, b = random_matrix(rng, 2), random_matrix(rng, 2)
    assert np.allclose(partial_transpose(cm(np.kron(a, b), (2, 2)), 1).data, np.kron(a, b.T))
    h = cm(random_hermitian(rng, 4), (2, 2))
    assert np.allclose(partial_transpose(partial_transpose(h, 1), 1).data, h.data)
    phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    ev = np.linalg.eigvalsh(partial_transpose(cm(np.outer(phi, phi), (2, 2)), 1).data)
    assert np.isclose(ev[0], -0.5)  # swap/2 with tr J = 1
    with pytest.raises(FactorError):
        partial_transpose(h, 5)


# --- eigendecomposition ---------------------------------------------------------------


def test_hermitian_eig_examples(rng):
    ev, _ = hermitian_eig(cm(X))
    assert np.allclose(ev, [-1, 1])
    assert np.allclose(hermitian_eig(cm(np.eye(5)))[0], 1)
    h = random_hermitian(rng, 6)
    ev, v = hermitian_eig(cm(h))
    assert np.all(np.diff(ev) >= 0)
    assert np.max(np.abs(v @ np.diag(ev) @ v.conj().T - h)) <= 1e-10
    assert np.max(np.abs(v.conj().T @ v - np.eye(6))) <= 1e-12
    with pytest.raises(NotHermitianError):
        hermitian_eig(cm(np.array([[0, 1], [0, 0]])))


# --- operator Schmidt -------------------------------------------------------------------


def test_schmidt_product_single_term(rng):
    a, b = random_hermitian(rng, 2), random_hermitian(rng, 3)
    terms = operator_schmidt(cm(np.kron(a, b), (2, 3)), [0])
    assert len(terms) == 1
    assert np.isclose(terms[0].weight, np.linalg.norm(a) * np.linalg.norm(b))


def test_schmidt_swap_pauli_terms():
    swap = np.eye(4)[[0, 2, 1, 3]]
    terms = operator_schmidt(cm(swap, (2, 2)), [0])
    assert len(terms) == 4
    assert np.allclose([t.weight for t in terms], 1.0)  # swap = sum_P P(x)P / 2, |P|_F = sqrt 2
    assert operator_schmidt(cm(np.zeros((4, 4)), (2, 2)), [0]) == []


@given(seeds, st.sampled_from([(2, 2), (2, 3), (4, 4), (2, 2, 2), (2, 4, 2)]))
def test_schmidt_reconstruction(seed, dims):
    rng = np.random.default_rng(seed)
    n = int(np.prod(dims))
    h = random_hermitian(rng, n)
    terms = operator_schmidt(cm(h, dims), [0])
    rec = sum(t.weight * np.kron(t.left.data, t.right.data) for t in terms)
    assert np.linalg.norm(rec - h) <= 1e-10
    ws = [t.weight for t in terms]
    assert ws == sorted(ws, reverse=True)
    assert len(terms) <= min(dims[0] ** 2, (n // dims[0]) ** 2)
    for t in terms:
        assert np.isclose(np.linalg.norm(t.left.data), 1) and np.isclose(np.linalg.norm(t.right.data), 1)
        assert t.left.hermitian and t.right.hermitian


@given(seeds)
def test_multi_schmidt_reconstruction(seed):
    rng = np.random.default_rng(seed)
    groups = [2, 4, 4, 2]
    h = random_hermitian(rng, 64)
    rec = sum(w * kron_all(f) for w, f in multi_schmidt(h, groups))
    assert np.linalg.norm(rec - h) <= 1e-10


# --- trace and replace ------------------------------------------------------------------


def test_trace_and_replace_examples(rng):
    a, b = random_hermitian(rng, 2), random_hermitian(rng, 2)
    m = cm(np.kron(a, b), (2, 2))
    assert np.allclose(trace_and_replace(m, 1).data, np.kron(a, np.eye(2) / 2) * np.trace(b))
    once = trace_and_replace(m, 1)
    assert np.allclose(trace_and_replace(once, 1).data, once.data)
    h = random_hermitian(rng, 8)
    dims = (2, 2, 2)
    ab = trace_replace(trace_replace(h, dims, [0]), dims, [2])
    ba = trace_replace(trace_replace(h, dims, [2]), dims, [0])
    assert np.max(np.abs(ab - ba)) <= 1e-12


@given(seeds, st.integers(0, 2))
def test_trace_and_replace_properties(seed, f):
    rng = np.random.default_rng(seed)
    dims = (2, 3, 2)
    h = random_hermitian(rng, 12)
    out = trace_replace(h, dims, [f])
    assert np.isclose(np.trace(out), np.trace(h))
    assert np.max(np.abs(partial_transpose(cm(out, dims), f).data - out)) <= 1e-12
    assert np.max(np.abs(trace_replace(out, dims, [f]) - out)) <= 1e-12


# --- vectorisation ----------------------------------------------------------------------


@given(seeds, st.integers(1, 6))
def test_hvec_isometry(seed, n):
    rng = np.random.default_rng(seed)
    a, b = random_hermitian(rng, n), random_hermitian(rng, n)
    assert np.isclose(hvec(a) @ hvec(b), np.vdot(a, b).real)
    assert np.allclose(hmat(hvec(a), n), a)


def test_ptrace_batched(rng):
    stack = np.stack([random_hermitian(rng, 4) for _ in range(3)])
    out = ptrace(stack, (2, 2), [1])
    for k in range(3):
        assert np.allclose(out[k], ptrace(stack[k], (2, 2), [1]))
