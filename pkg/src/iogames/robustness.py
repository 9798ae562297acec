"""Robustness programs over compiled free sets, witnesses and Slater checks.

The robustness primal works with slack blocks ``S_k = G_k - J_k``, so the
free object ``G`` is eliminated and each slack is an explicit PSD variable::

    minimise (1/|X|) sum_k tr(S_k + J_k)
    s.t.     E(S + J, aux) = 0,  S_k >= 0,  aux >= 0

``|X|`` counts settings, not blocks.  The optimal value is ``1 + R`` and the
dual slack on ``S_k`` is the witness block ``Y_k``: it is PSD and
``sum_k tr[Y_k T_k] <= 1`` on every normalised free ``T``.
"""

from __future__ import annotations

import time
import weakref
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .freesets import ConicFreeSet, Equality, cand
from .linalg import hermitize, min_eig
from .solver import ConeProgram, ProgramBuilder, Solution, SolverOptions, solve

WITNESS_PSD_TOL = 1e-9
WITNESS_MAX_TOL = 1e-6
WITNESS_VALUE_TOL = 1e-6
SLATER_MARGIN = 1e-6


class WitnessError(RuntimeError):
    pass


def _blocks_of(obj) -> list[np.ndarray]:
    return [np.asarray(b) for b in (obj.blocks if hasattr(obj, "blocks") else obj)]


def _zero_like(eq: Equality, f: ConicFreeSet) -> np.ndarray:
    name, fn = eq.terms[0]
    return np.zeros_like(fn(np.zeros((1, _order(f, name), _order(f, name)), dtype=complex))[0])


def _order(f: ConicFreeSet, name: str) -> int:
    if name.startswith("cand"):
        return f.block_order
    return dict(f.aux)[name]


# --- primal program -----------------------------------------------------------


def build_robustness_primal(candidate, f: ConicFreeSet) -> ConeProgram:
    f.check_candidate(candidate)
    blocks = _blocks_of(candidate)
    nset = f.n_settings
    pb = ProgramBuilder()
    rename = {}
    for k in range(len(blocks)):
        rename[cand(k)] = pb.psd(f"S{k}", f.block_order)
        pb.objective(f"S{k}", np.eye(f.block_order) / nset)
    for name, n in f.aux:
        pb.psd(name, n)
    # E(S + J, aux) = 0: candidate terms act on S, J moves to the rhs
    for eq in f.equalities:
        terms, rhs = [], None
        for name, fn in eq.terms:
            if name.startswith("cand"):
                k = int(name[4:])
                val = fn(blocks[k][None])[0]
                rhs = -val if rhs is None else rhs - val
            terms.append((rename.get(name, name), fn))
        if rhs is None:
            rhs = _zero_like(eq, f)
        pb.equal(terms, rhs, hermitian=eq.hermitian)
    pb.offset = float(sum(np.trace(b).real for b in blocks) / nset)
    return pb.build(kind="robustness", free_set=f.label)


# --- witness -------------------------------------------------------------------


@dataclass
class Witness:
    blocks: list[np.ndarray]
    arities: tuple[int, ...]
    dims: tuple[int, ...]
    family: str
    value: float  # sum_k tr[Y_k J_k]
    free_max: float  # max over normalised free T of sum_k tr[Y_k T_k]
    sampled_max: float
    min_eig: float
    free_max_status: str = "optimal"

    def pair(self, blocks: Sequence[np.ndarray]) -> float:
        return float(sum(np.vdot(y, np.asarray(b)).real for y, b in zip(self.blocks, blocks)))

    @property
    def verified(self) -> bool:
        return (
            self.min_eig >= -WITNESS_PSD_TOL
            and self.free_max <= 1 + WITNESS_MAX_TOL
            and self.sampled_max <= 1 + WITNESS_MAX_TOL
        )


def pair(ys: Sequence[np.ndarray], blocks: Sequence[np.ndarray]) -> float:
    return float(sum(np.vdot(np.asarray(y), np.asarray(b)).real for y, b in zip(ys, blocks)))


def optimise_over_set(f: ConicFreeSet, weights: Sequence[np.ndarray], sense: str = "max",
                      options: SolverOptions | None = None) -> tuple[float, Solution]:
    """max (or min) of sum_k tr[W_k T_k] over normalised T in F."""
    pb = ProgramBuilder()
    weights = [hermitize(np.asarray(w, dtype=complex)) for w in weights]
    # unit-norm objective so solver tolerances act relative to the weights' scale
    scale = max((float(np.linalg.norm(w)) for w in weights), default=0.0) or 1.0
    sign = -1.0 if sense == "max" else 1.0
    for k, w in enumerate(weights):
        pb.psd(cand(k), f.block_order)
        pb.objective(cand(k), (sign / scale) * w)
    for name, n in f.aux:
        pb.psd(name, n)
    for eq in f.equalities:
        pb.equal(eq.terms, _zero_like(eq, f), hermitian=eq.hermitian)
    pb.equal([(cand(k), lambda b: np.trace(b, axis1=-2, axis2=-1).real) for k in range(f.n_blocks)],
             float(f.n_settings), hermitian=False)
    sol = solve(pb.build(kind=f"{sense}_over_set", free_set=f.label), options=options)
    return sign * scale * sol.primal_value, sol


def max_over_set(f: ConicFreeSet, weights: Sequence[np.ndarray]) -> tuple[float, Solution]:
    return optimise_over_set(f, weights, "max")


def extract_witness(sol: Solution, f: ConicFreeSet, candidate, free_point: Sequence[np.ndarray] | None = None) -> Witness:
    """Read Y off the slack duals and re-verify it with an independent solve."""
    if not sol.optimal:
        raise WitnessError(f"cannot extract a witness from a {sol.status} solve")
    blocks = _blocks_of(candidate)
    ys = [hermitize(sol.dual_slack[f"S{k}"]) for k in range(len(blocks))]
    value = pair(ys, blocks)
    fmax, fsol = max_over_set(f, ys)
    samples = [f.slater_point] if f.slater_point is not None else []
    if free_point is not None:
        samples.append(free_point)
    smax = max((pair(ys, s) for s in samples), default=-np.inf)
    return Witness(ys, f.arities, f.dims, f.family, value, fmax, smax,
                   min(min_eig(y) for y in ys), fsol.status)


# --- Slater ----------------------------------------------------------------------

_SLATER_CACHE: "weakref.WeakKeyDictionary[ConicFreeSet, float]" = weakref.WeakKeyDictionary()


def slater_margin(f: ConicFreeSet) -> float:
    """max s such that some normalised point of F has every block >= s I."""
    if f in _SLATER_CACHE:
        return _SLATER_CACHE[f]
    pb = ProgramBuilder()
    pb.nonneg("s", 2)  # s and its slack up to 1
    for k in range(f.n_blocks):
        pb.psd(cand(k), f.block_order)
    for name, n in f.aux:
        pb.psd(name, n)
    for eq in f.equalities:
        terms = list(eq.terms)
        shift = sum(fn(np.eye(_order(f, name), dtype=complex)[None])[0] for name, fn in eq.terms)
        terms.append(("s", lambda b, img=shift: b[:, :1].reshape((-1,) + (1,) * np.ndim(img)) * img[None]))
        pb.equal(terms, np.zeros_like(shift), hermitian=eq.hermitian)
    n = f.block_order
    pb.equal([(cand(k), lambda b: np.trace(b, axis1=-2, axis2=-1).real) for k in range(f.n_blocks)]
             + [("s", lambda b: b[:, 0] * n * f.n_blocks)], float(f.n_settings), hermitian=False)
    pb.equal([("s", lambda b: b.sum(axis=1))], 1.0, hermitian=False)
    pb.objective("s", np.array([-1.0, 0.0]))
    sol = solve(pb.build(kind="slater", free_set=f.label))
    margin = -sol.primal_value if sol.status == "optimal" else 0.0
    _SLATER_CACHE[f] = float(margin)
    return float(margin)


def slater_check(f: ConicFreeSet, candidate_shape=None) -> bool:
    """True iff F has a strictly feasible normalised point (margin above 1e-6)."""
    if candidate_shape is not None and tuple(candidate_shape) not in (f.dims, (f.block_order, f.block_order)):
        return False
    return slater_margin(f) > SLATER_MARGIN


# --- membership feasibility -------------------------------------------------------


def feasibility_shortfall(candidate, f: ConicFreeSet):
    """Smallest s >= 0 such that aux + s I >= 0 solves F's equalities for J fixed.

    Returns ``(status, shortfall, aux, equality_residual)``; the candidate's own
    PSD shortfall is included.
    """
    blocks = _blocks_of(candidate)
    cand_short = max(0.0, -min(min_eig(b) for b in blocks))
    fixed = {cand(k): b for k, b in enumerate(blocks)}
    if not f.aux:
        resid = f.residual(blocks)
        ok = resid <= 1e-8
        return ("optimal" if ok else "infeasible"), (cand_short if ok else np.inf), {}, resid
    pb = ProgramBuilder()
    for name, n in f.aux:
        pb.psd(name, n)
    pb.nonneg("s", 2)  # aux = P + (s - 1) I with s in [0, 2]
    for eq in f.equalities:
        terms, rhs = [], None
        shift = None
        for name, fn in eq.terms:
            if name in fixed:
                val = fn(fixed[name][None])[0]
                rhs = -val if rhs is None else rhs - val
                continue
            terms.append((name, fn))
            img = fn(np.eye(_order(f, name), dtype=complex)[None])[0]
            shift = img if shift is None else shift + img
        if not terms:
            if np.max(np.abs(rhs)) > 1e-8:
                return "infeasible", np.inf, None, float(np.max(np.abs(rhs)))
            continue
        if rhs is None:
            rhs = _zero_like(eq, f)
        terms.append(("s", lambda b, img=shift: b[:, :1].reshape((-1,) + (1,) * np.ndim(img)) * img[None]))
        pb.equal(terms, rhs + shift, hermitian=eq.hermitian)
    pb.equal([("s", lambda b: b.sum(axis=1))], 2.0, hermitian=False)
    pb.objective("s", np.array([-1.0, 0.0]))
    sol = solve(pb.build(kind="membership", free_set=f.label))
    if sol.status != "optimal":
        return sol.status, np.inf, None, sol.primal_residual
    s = float(sol.primal["s"][0])
    aux = {name: sol.primal[name] + (s - 1.0) * np.eye(n) for name, n in f.aux}
    resid = f.residual(blocks, aux)
    return "optimal", max(0.0, 1.0 - s, cand_short), aux, resid


# --- reports ------------------------------------------------------------------------


@dataclass
class RobustnessReport:
    status: str
    value: float  # 1 + R
    dual_value: float
    gap: float
    witness: Witness | None
    free_point: list[np.ndarray] | None
    noise: list[np.ndarray] | None
    slater_checked: bool
    iterations: int
    residuals: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def robustness(self) -> float:
        return self.value - 1.0

    @property
    def certified(self) -> bool:
        return (self.status == "optimal" and self.slater_checked and self.gap <= 1e-7
                and self.witness is not None and self.witness.verified
                and abs(self.witness.value - self.value) <= WITNESS_VALUE_TOL)

    def summary(self) -> dict:
        out = {
            "status": self.status,
            "robustness": self.robustness,
            "primal_value": self.value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "slater_checked": self.slater_checked,
            "iterations": self.iterations,
            "residuals": dict(self.residuals),
            "flags": dict(self.flags),
        }
        if self.witness is not None:
            out["witness_check"] = {
                "pairing": self.witness.value,
                "free_max": self.witness.free_max,
                "sampled_max": self.witness.sampled_max,
                "min_eig": self.witness.min_eig,
                "verified": self.witness.verified,
            }
        return out


def robustness(candidate, f: ConicFreeSet, tol: float | None = None, verify: bool = True,
               options: SolverOptions | None = None) -> RobustnessReport:
    """Generalised robustness of ``candidate`` with respect to ``f``."""
    t0 = time.perf_counter()
    f.check_candidate(candidate)
    slater = slater_check(f)
    prog = build_robustness_primal(candidate, f)
    sol = solve(prog, tol=tol, options=options)
    blocks = _blocks_of(candidate)
    residuals = {"primal": sol.primal_residual, "dual": sol.dual_residual, "complementarity": sol.complementarity}
    if not sol.optimal:
        return RobustnessReport(sol.status, sol.primal_value, sol.dual_value, sol.gap, None, None, None, slater,
                                sol.iterations, residuals, dict(f.flags), time.perf_counter() - t0)
    value = sol.primal_value
    slack = [hermitize(sol.primal[f"S{k}"]) for k in range(len(blocks))]
    free_point = [(s + b) / value for s, b in zip(slack, blocks)]
    r = value - 1.0
    noise = [s / r for s in slack] if r > 1e-6 else None
    witness = None
    if verify:
        witness = extract_witness(sol, f, candidate, free_point)
        residuals["witness_value"] = abs(witness.value - value)
        residuals["witness_free_max_excess"] = max(0.0, witness.free_max - 1.0)
        if noise is not None:
            residuals["witness_on_noise"] = abs(witness.pair(noise))
    return RobustnessReport("optimal", value, sol.dual_value, sol.gap, witness, free_point, noise, slater,
                            sol.iterations, residuals, dict(f.flags), time.perf_counter() - t0)
