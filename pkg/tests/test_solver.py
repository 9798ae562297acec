import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iogames.freesets import compile_classical_channels, compile_entanglement_breaking_ppt
from iogames.objects import depolarizing, random_channel, standard_object
from iogames.robustness import build_robustness_primal
from iogames.solver import ConeProgram, ProgramBuilder, StructureError, solve

from conftest import random_hermitian

cp = pytest.importorskip("cvxpy")


def dominate_program(a):
    """min tr X  s.t.  X - S = A,  X, S psd."""
    n = a.shape[0]
    pb = ProgramBuilder()
    pb.psd("X", n)
    pb.psd("S", n)
    pb.equal([("X", lambda b: b), ("S", lambda b: -b)], a)
    pb.objective("X", np.eye(n))
    return pb.build(kind="dominate")


@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_dominating_trace_eigenvalue_oracle(seed, n):
    a = random_hermitian(np.random.default_rng(seed), n)
    sol = solve(dominate_program(a))
    assert sol.optimal
    expected = np.clip(np.linalg.eigvalsh(a), 0, None).sum()
    assert abs(sol.primal_value - expected) <= 1e-7
    assert sol.gap <= 1e-7
    assert sol.primal_residual <= 1e-8 and sol.dual_residual <= 1e-8


def test_weak_duality_on_feasible_iterates(rng):
    sol = solve(dominate_program(random_hermitian(rng, 4)))
    feasible = [h for h in sol.history if h[2] <= 1e-8 and h[3] <= 1e-8]
    assert feasible, "no iterate reached feasibility"
    for pobj, dobj, *_ in feasible:
        assert dobj <= pobj + 1e-9


def test_objective_scaling(rng):
    prog = dominate_program(random_hermitian(rng, 3))
    base = solve(prog)
    for c in (0.5, 3.0):
        s = solve(prog.scaled(c))
        assert abs(s.primal_value - c * base.primal_value) <= 1e-7 * c
        assert abs(s.dual_value - c * base.dual_value) <= 1e-7 * c


def test_deterministic(rng):
    prog = dominate_program(random_hermitian(rng, 4))
    a, b = solve(prog), solve(prog)
    assert a.primal_value == b.primal_value and a.iterations == b.iterations


def test_lp_blocks():
    # min t  s.t.  t - s = 0.5, t, s >= 0
    pb = ProgramBuilder()
    pb.nonneg("t", 2)
    pb.equal([("t", lambda b: b[:, 0] - b[:, 1])], 0.5, hermitian=False)
    pb.objective("t", np.array([1.0, 0.0]))
    sol = solve(pb.build())
    assert sol.optimal and abs(sol.primal_value - 0.5) <= 1e-8


def test_inconsistent_equalities_infeasible():
    pb = ProgramBuilder()
    pb.psd("X", 2)
    pb.equal([("X", lambda b: np.trace(b, axis1=-2, axis2=-1).real)], 1.0, hermitian=False)
    pb.equal([("X", lambda b: np.trace(b, axis1=-2, axis2=-1).real)], 2.0, hermitian=False)
    assert solve(pb.build()).status == "infeasible"


def test_conic_infeasible_detected():
    # X psd with X_00 = -1
    pb = ProgramBuilder()
    pb.psd("X", 2)
    pb.equal([("X", lambda b: b[..., 0, 0].real)], -1.0, hermitian=False)
    pb.objective("X", np.eye(2))
    assert solve(pb.build()).status != "optimal"


def test_structure_errors():
    pb = ProgramBuilder()
    pb.psd("X", 2)
    with pytest.raises(StructureError):
        pb.psd("X", 3)
    with pytest.raises(StructureError):
        ConeProgram(pb.blocks, np.zeros((1, 3)), np.zeros(1), np.zeros(4))


# --- robustness primal structure and cross-checks ----------------------------------------


def test_primal_block_count():
    cands = standard_object("identity", copies=1)
    f = compile_classical_channels(2)
    prog = build_robustness_primal(cands, f)
    names = [b.name for b in prog.blocks]
    assert sum(n.startswith("S") for n in names) == 1
    assert len(names) == 1 + len(f.aux)


def test_member_value_one():
    prog = build_robustness_primal(standard_object("depolarizing", p=0.2), compile_entanglement_breaking_ppt(2, 2))
    sol = solve(prog)
    assert sol.optimal and abs(sol.primal_value - 1) <= 1e-7


def _cvx_ppt_robustness(j):
    """Independent formulation: min t s.t. (J + t N)/(1+t) has PSD PT, N a channel Choi."""
    g = cp.Variable((4, 4), hermitian=True)  # unnormalised free point (1+t) J_free
    n = g - j
    t = cp.real(cp.trace(g)) - 1
    cons = [n >> 0, g >> 0, cp.partial_transpose(g, [2, 2], 1) >> 0,
            cp.partial_trace(g, [2, 2], 1) == cp.real(cp.trace(g)) * np.eye(2) / 2]
    prob = cp.Problem(cp.Minimize(t), cons)
    prob.solve(solver="CLARABEL")
    return prob.value


@pytest.mark.parametrize("seed", range(4))
def test_random_channels_against_cvxpy(seed):
    from iogames.robustness import robustness

    c = random_channel(2, 2, np.random.default_rng(seed))
    rep = robustness(c, compile_entanglement_breaking_ppt(2, 2))
    assert rep.status == "optimal" and rep.gap <= 1e-7
    assert abs(rep.robustness - _cvx_ppt_robustness(c.J)) <= 1e-6


def test_depolarizing_closed_form():
    from iogames.robustness import robustness

    # PPT robustness of the qubit depolarizing channel: max(0, (3p - 1)/2)
    for p in (0.2, 0.5, 0.8, 1.0):
        rep = robustness(depolarizing(p), compile_entanglement_breaking_ppt(2, 2))
        assert abs(rep.robustness - max(0.0, (3 * p - 1) / 2)) <= 1e-7
