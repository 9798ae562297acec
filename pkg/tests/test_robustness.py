import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iogames.freesets import (
    compile_classical_channels,
    compile_compatible_channels,
    compile_compatible_instruments,
    compile_entanglement_breaking_ppt,
    compile_g_covariant,
    compile_jointly_measurable,
    membership,
)
from iogames.linalg import trace_replace
from iogames.objects import (
    PAULI,
    ChannelCollection,
    ChoiChannel,
    InstrumentCollection,
    ProcessMatrix,
    depolarizing,
    povms_to_channels,
    random_channel,
    standard_object,
    validate,
)
from iogames.robustness import build_robustness_primal, extract_witness, robustness
from iogames.solver import solve
from iogames.supermaps import SuperinstrumentCollection, compile_causally_separable, ocb_process

cp = pytest.importorskip("cvxpy")

X, Z, I2 = PAULI["X"], PAULI["Z"], PAULI["I"]
SQRT2 = np.sqrt(2)


def check_report(rep, obj, f):
    assert rep.status == "optimal"
    assert rep.gap <= 1e-7
    assert rep.slater_checked
    w = rep.witness
    assert w.min_eig >= -1e-9
    assert w.free_max <= 1 + 1e-6
    assert abs(w.value - rep.value) <= 1e-6
    assert rep.certified
    if rep.robustness > 1e-6:
        # witness vanishes on the optimal noise, which is itself a valid object
        assert abs(w.pair(rep.noise)) <= 1e-6
        for blk in rep.noise:
            assert np.linalg.eigvalsh(blk)[0] >= -1e-7
        total = sum(np.trace(b).real for b in rep.noise)
        assert abs(total - f.n_settings) <= 1e-7
    assert membership(_like(obj, rep.free_point), f).member


def _like(obj, blocks):
    """Object of the same shape as ``obj`` holding ``blocks``."""
    if obj.kind == "process":
        return ProcessMatrix(blocks[0], obj.dims)
    grouped, k = [], 0
    for n in obj.arities:
        grouped.append(tuple(blocks[k:k + n]))
        k += n
    if obj.kind == "superinstruments":
        return SuperinstrumentCollection(tuple(grouped), obj.dims)
    if obj.kind == "instruments":
        return InstrumentCollection(tuple(grouped), *obj.dims)
    return ChannelCollection(tuple(ChoiChannel(b, *obj.dims) for b in blocks))


CASES = {
    "identity/classical": (lambda: standard_object("identity"), lambda: compile_classical_channels(2), 1.0),
    "identity/ppt": (lambda: standard_object("identity"), lambda: compile_entanglement_breaking_ppt(2, 2), 1.0),
    "depolarizing0.8/ppt": (lambda: ChannelCollection((depolarizing(0.8),)),
                            lambda: compile_entanglement_breaking_ppt(2, 2), 0.7),
    "xz/jm": (lambda: standard_object("noisy_xz_channels", eta=1.0), lambda: compile_jointly_measurable([2, 2], 2),
              3 - 2 * SQRT2),
    "identity_pair/compatible": (lambda: standard_object("identity", copies=2),
                                 lambda: compile_compatible_channels(2, 2, 2), 1 / 3),
    "luders/compatible": (lambda: standard_object("luders", eta=1.0),
                          lambda: compile_compatible_instruments([2, 2], 2, 2), 0.5),
    "hadamard/z2": (lambda: standard_object("hadamard"), lambda: compile_g_covariant(2, [I2, Z]), 1.0),
    "ocb/separable": (ocb_process, lambda: compile_causally_separable((1, 2, 2, 2, 2, 1)), 3 - 2 * SQRT2),
}


@pytest.mark.parametrize("name", list(CASES))
def test_frozen_robustness(name):
    make_obj, make_f, expected = CASES[name]
    obj, f = make_obj(), make_f()
    rep = robustness(obj, f)
    check_report(rep, obj, f)
    assert abs(rep.robustness - expected) <= 1e-7


def test_member_has_zero_robustness_and_unit_witness():
    obj, f = ChannelCollection((depolarizing(0.2),)), compile_entanglement_breaking_ppt(2, 2)
    rep = robustness(obj, f)
    assert abs(rep.robustness) <= 1e-7
    assert abs(rep.witness.value - 1) <= 1e-6
    assert rep.noise is None


def test_extract_witness_api():
    obj, f = standard_object("identity"), compile_classical_channels(2)
    sol = solve(build_robustness_primal(obj, f))
    w = extract_witness(sol, f, obj)
    assert w.verified and abs(w.value - 2) <= 1e-6


# --- independent cvxpy oracles ---------------------------------------------------------


def cvx_solve(prob):
    for name in ("CLARABEL", "CVXOPT"):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=name)
        except cp.error.SolverError:
            continue
        if prob.status == "optimal":
            return prob.value
    pytest.skip("no reference solver reached optimality")


def cvx_jm(povms):
    """Generalised robustness of POVMs: min tr(sum G)/d - 1 with dominating parent."""
    d = povms[0][0].shape[0]
    lams = [(a, b) for a in range(2) for b in range(2)]
    g = [cp.Variable((d, d), hermitian=True) for _ in lams]
    cons = [gi >> 0 for gi in g]
    tot = sum(g)
    cons.append(tot == cp.real(cp.trace(tot)) / d * np.eye(d))
    for x in range(2):
        for a in range(2):
            cons.append(sum(gi for gi, lam in zip(g, lams) if lam[x] == a) - povms[x][a] >> 0)
    prob = cp.Problem(cp.Minimize(cp.real(cp.trace(tot)) / d - 1), cons)
    return cvx_solve(prob)


@pytest.mark.parametrize("eta", [0.6, 0.8, 0.9, 1.0])
def test_jm_against_cvxpy(eta):
    pair = [(I2 + s * eta * P) / 2 for s in (1, -1) for P in (X,)], [(I2 + s * eta * Z) / 2 for s in (1, -1)]
    obj = standard_object("noisy_xz_channels", eta=eta)
    rep = robustness(obj, compile_jointly_measurable([2, 2], 2))
    assert abs(rep.robustness - cvx_jm(pair)) <= 1e-6


def cvx_compatible(j1, j2):
    b = cp.Variable((8, 8), hermitian=True)
    t = cp.real(cp.trace(b))
    m1 = cp.partial_trace(b, [2, 2, 2], axis=2)
    m2 = cp.partial_trace(b, [2, 2, 2], axis=1)
    cons = [b >> 0, m1 - j1 >> 0, m2 - j2 >> 0,
            cp.partial_trace(m1, [2, 2], axis=1) == t / 2 * np.eye(2)]
    prob = cp.Problem(cp.Minimize(t - 1), cons)
    return cvx_solve(prob)


@pytest.mark.parametrize("seed", range(3))
def test_compatible_channels_against_cvxpy(seed):
    rng = np.random.default_rng(seed)
    c1, c2 = random_channel(2, 2, rng), random_channel(2, 2, rng)
    rep = robustness(ChannelCollection((c1, c2)), compile_compatible_channels(2, 2, 2))
    assert rep.status == "optimal"
    assert abs(rep.robustness - cvx_compatible(c1.J, c2.J)) <= 1e-6


def _tr_rep_matrix(dims, factors):
    n = int(np.prod(dims))
    basis = np.eye(n * n).reshape(n * n, n, n)
    return np.stack([trace_replace(e, dims, factors).reshape(-1) for e in basis], axis=1)


def test_ocb_against_cvxpy_comb_formulation():
    # two-slot combs with trivial I0/O0, factors (A_I, A_O, B_I, B_O), unit trace:
    #   A before B:  W = _{B_O} W  and  _{B_I B_O} W = _{A_O B_I B_O} W
    dims = (2, 2, 2, 2)
    w = ocb_process().W
    ops = {k: _tr_rep_matrix(dims, list(k)) for k in ((3,), (2, 3), (1, 2, 3), (1,), (0, 1), (0, 1, 3))}
    # W is real, and averaging a feasible pair with its conjugate keeps it feasible
    assert np.allclose(w.imag, 0)
    w = w.real
    w1 = cp.Variable((16, 16), symmetric=True)
    w2 = cp.Variable((16, 16), symmetric=True)

    def rep(k, v):
        return cp.reshape(ops[tuple(k)].real @ cp.vec(v, order="C"), (16, 16), order="C")

    cons = [w1 >> 0, w2 >> 0, w1 + w2 - w >> 0,
            rep([3], w1) == w1, rep([2, 3], w1) == rep([1, 2, 3], w1),
            rep([1], w2) == w2, rep([0, 1], w2) == rep([0, 1, 3], w2)]
    prob = cp.Problem(cp.Minimize(cp.trace(w1 + w2) - 1), cons)
    ref = cvx_solve(prob)
    rep_ours = robustness(ocb_process(), compile_causally_separable((1, 2, 2, 2, 2, 1)))
    assert abs(rep_ours.robustness - ref) <= 1e-6


# --- properties ----------------------------------------------------------------------


@given(st.integers(0, 2**31 - 1), st.sampled_from([0.1, 1.0, 10.0]))
def test_monotone_under_free_mixing(seed, s):
    rng = np.random.default_rng(seed)
    f = compile_classical_channels(2)
    lam = random_channel(2, 2, rng)
    gamma = standard_object("classical", axis="X", eta=float(rng.uniform(0, 1))).channels[0]
    r0 = robustness(ChannelCollection((lam,)), f).robustness
    mixed = ChoiChannel((lam.J + s * gamma.J) / (1 + s), 2, 2)
    r1 = robustness(ChannelCollection((mixed,)), f).robustness
    assert r1 <= r0 + 1e-6


@given(st.integers(0, 2**31 - 1))
def test_membership_iff_zero_robustness(seed):
    rng = np.random.default_rng(seed)
    p = float(rng.uniform(0, 1))
    obj, f = ChannelCollection((depolarizing(p),)), compile_entanglement_breaking_ppt(2, 2)
    if abs(p - 1 / 3) < 1e-5:
        return
    rep = robustness(obj, f)
    assert membership(obj, f).member == (rep.robustness <= 1e-6)


def test_noise_is_valid_channel():
    rep = robustness(standard_object("identity"), compile_classical_channels(2))
    noise = ChoiChannel(rep.noise[0], 2, 2)
    assert validate(noise).passed


def test_deterministic_values():
    obj, f = povms_to_channels(standard_object("noisy_xz", eta=0.9)), compile_jointly_measurable([2, 2], 2)
    a, b = robustness(obj, f), robustness(obj, f)
    assert a.value == b.value and a.iterations == b.iterations
