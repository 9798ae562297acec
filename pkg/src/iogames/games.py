"""Input-output games: payoffs, witness-to-game construction, canonical form.

One class covers both plain input-output games on channel-like objects and
collaborative games on two-slot processes; only the number of slots
differs.  For each setting x a game holds

* a prior ``p(i, x)`` over input states (summing to one over all i and x),
* input states on I0,
* for every slot, a complete instrument (CP Choi blocks summing to a channel),
* one POVM on O0,
* rewards ``w[x][i, k, l, a, j]`` with k, l the slot outcomes, a the
  outcome of the object itself (instrument or tester element) and j the
  POVM outcome.  Without slots the k and l axes are absent.

The payoff pairs the game with a block-structured object through one
operator per block, ``P = sum_{x,a} tr[G_{a|x} J_{a|x}]`` where
``G_{a|x} = D sum p w rho^T (x) K^T (x) L^T (x) M`` and D is the product of
input and slot dimensions.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .freesets import ConicFreeSet, compile_all_valid
from .linalg import eig_psd_parts, hermitize, kron_all, multi_schmidt, ptrace
from .objects import ChannelCollection, apply_choi
from .solver import SolverError

DEGENERACY_TOL = 1e-10
# below this payoff range the canonical remap amplifies solver noise past the equality tolerance
CONDITIONING_TOL = 1e-6
SPLIT_TOL = 1e-12
DECOMPOSITION_TOL = 1e-8


class GameError(ValueError):
    pass


class DegenerateGameError(GameError):
    pass


@dataclass(frozen=True)
class CanonicalRecord:
    """raw reward = scale * reward + shift."""

    shift: float = 0.0
    scale: float = 1.0

    def then(self, shift: float, scale: float) -> "CanonicalRecord":
        # new reward = (reward - shift) / scale
        return CanonicalRecord(self.shift + self.scale * shift, self.scale * scale)


@dataclass(frozen=True)
class Setting:
    prior: np.ndarray  # p(i, x) for this x, shape (n_i,)
    states: tuple[np.ndarray, ...]
    slots: tuple[tuple[np.ndarray, ...], ...]  # one complete instrument per slot
    povm: tuple[np.ndarray, ...]
    rewards: np.ndarray  # (n_i, n_k, n_l, n_a, n_j); slot axes absent without slots


@dataclass(frozen=True, eq=False)
class InputOutputGame:
    """A game on objects with block dims ``dims`` and outcome arities ``arities``.

    ``dims`` is ``(d_in, d_out)`` for channel families and the six process
    factor dims for two-slot games.
    """

    dims: tuple[int, ...]
    arities: tuple[int, ...]
    settings: tuple[Setting, ...]
    record: CanonicalRecord = CanonicalRecord()
    canonical: bool = False

    @property
    def family(self) -> str:
        return "process" if len(self.dims) == 6 else "channel"

    @property
    def n_slots(self) -> int:
        return 2 if self.family == "process" else 0

    @property
    def d_in(self) -> int:
        return self.dims[0]

    @property
    def d_out(self) -> int:
        return self.dims[-1]

    @property
    def slot_dims(self) -> tuple[tuple[int, int], ...]:
        if self.n_slots == 0:
            return ()
        d = self.dims
        return ((d[1], d[2]), (d[3], d[4]))

    @property
    def weight(self) -> int:
        """D: input dimension times every slot's input and output dimension."""
        return int(self.d_in * np.prod([a * b for a, b in self.slot_dims] or [1]))

    def with_rewards(self, fn, record: CanonicalRecord, canonical: bool) -> "InputOutputGame":
        return replace(self, settings=tuple(replace(s, rewards=fn(s.rewards)) for s in self.settings),
                       record=record, canonical=canonical)

    def operators(self) -> list[np.ndarray]:
        """G_{a|x} for every block, setting-major."""
        return list(self._operators)

    @cached_property
    def _operators(self) -> tuple[np.ndarray, ...]:
        out = []
        for s, n_a in zip(self.settings, self.arities):
            out += setting_operators(self, s, n_a)
        return tuple(out)

    def check(self) -> None:
        total = sum(float(np.sum(s.prior)) for s in self.settings)
        if abs(total - 1.0) > 1e-9:
            raise GameError(f"priors sum to {total}, not 1")
        for x, s in enumerate(self.settings):
            if np.any(s.prior < -1e-12):
                raise GameError(f"negative prior in setting {x}")
            d = self.d_out
            if np.max(np.abs(sum(s.povm) - np.eye(d))) > 1e-9:
                raise GameError(f"POVM of setting {x} is not complete")
            for k, inst in enumerate(s.slots):
                tot = sum(inst)
                di, do = self.slot_dims[k]
                if np.max(np.abs(ptrace(tot, (di, do), [0]) - np.eye(di) / di)) > 1e-9:
                    raise GameError(f"slot {k} instrument of setting {x} is not trace preserving")


CollaborativeGame = InputOutputGame


def setting_operators(g: InputOutputGame, s: Setting, n_a: int) -> list[np.ndarray]:
    order = int(np.prod(g.dims))
    if len(s.states) == 0:
        return [np.zeros((order, order), dtype=complex) for _ in range(n_a)]
    rho_t = np.stack([np.asarray(r).T for r in s.states])
    povm = np.stack(s.povm)
    rew = s.rewards * s.prior.reshape((-1,) + (1,) * (s.rewards.ndim - 1))
    ops = []
    for a in range(n_a):
        if g.n_slots == 0:
            c = rew[:, a, :]  # (i, j)
            t = np.einsum("ij,iab,jcd->acbd", c, rho_t, povm, optimize=True)
        else:
            kt = np.stack([np.asarray(k).T for k in s.slots[0]])
            lt = np.stack([np.asarray(k).T for k in s.slots[1]])
            c = rew[:, :, :, a, :]  # (i, k, l, j)
            t = np.einsum("iklj,iab,kcd,lef,jgh->acegbdfh", c, rho_t, kt, lt, povm, optimize=True)
        ops.append(g.weight * t.reshape(order, order))
    return ops


# --- payoff ---------------------------------------------------------------------


def _blocks(obj) -> list[np.ndarray]:
    return [np.asarray(b) for b in obj.blocks]


def _check_fit(g: InputOutputGame, obj) -> None:
    if tuple(obj.dims) != g.dims or tuple(obj.arities) != g.arities:
        raise GameError(f"object (dims {tuple(obj.dims)}, arities {tuple(obj.arities)}) does not fit game "
                        f"(dims {g.dims}, arities {g.arities})")


def payoff(g: InputOutputGame, obj) -> float:
    """Expected reward of the game played with ``obj``."""
    _check_fit(g, obj)
    return float(sum(np.vdot(op, b).real for op, b in zip(g.operators(), _blocks(obj))))


def payoff_direct(g: InputOutputGame, obj) -> float:
    """Same payoff evaluated by applying each channel block to each state (no slots)."""
    _check_fit(g, obj)
    if g.n_slots:
        raise GameError("direct evaluation only covers games without slots")
    blocks = _blocks(obj)
    total, k = 0.0, 0
    for s, n_a in zip(g.settings, g.arities):
        for a in range(n_a):
            for i, rho in enumerate(s.states):
                out = apply_choi(blocks[k + a], rho, g.d_in, g.d_out)
                for j, m in enumerate(s.povm):
                    total += s.prior[i] * s.rewards[i, a, j] * np.trace(out @ m).real
        k += n_a
    return float(total)


# --- witness -> game ------------------------------------------------------------------


def _groups(dims) -> list[int]:
    if len(dims) == 2:
        return [dims[0], dims[1]]
    return [dims[0], dims[1] * dims[2], dims[3] * dims[4], dims[5]]


def _collect(parts: list, key, mat: np.ndarray) -> int:
    for idx, (k, _) in enumerate(parts):
        if k == key:
            return idx
    parts.append((key, mat))
    return len(parts) - 1


def game_from_witness(witness, dims=None) -> InputOutputGame:
    """Build the game whose raw payoff is sum_k tr[Y_k J_k] on every object.

    Each block is split into Hermitian product terms across (input | slots |
    output); every factor is split into positive and negative parts.  Input
    parts become states, slot parts become instrument elements (shrunk and
    completed against the fully depolarising channel), output parts become
    effects (rescaled and completed to a POVM).  Signs and all scale
    factors move into the rewards, so states, instruments and POVMs stay
    physical and completions carry reward zero.
    """
    blocks = [hermitize(np.asarray(y, dtype=complex)) for y in witness.blocks]
    dims = tuple(dims or witness.dims)
    arities = tuple(witness.arities)
    shell = InputOutputGame(dims, arities, ())
    D = shell.weight
    groups = _groups(dims)
    slot_dims = shell.slot_dims

    raw = []
    k = 0
    for x, n_a in enumerate(arities):
        states, slot_parts, effects, entries = [], [[] for _ in slot_dims], [], []
        for a in range(n_a):
            y = blocks[k + a] / D
            terms = multi_schmidt(y, groups)
            recon = np.zeros_like(y)
            for w, factors in terms:
                recon += w * kron_all(factors)
                split = []
                for fac in factors:
                    pos, neg = eig_psd_parts(fac, SPLIT_TOL)
                    split.append([(sgn, part) for sgn, part in ((1.0, pos), (-1.0, neg))
                                  if np.linalg.norm(part) > SPLIT_TOL])
                for combo in itertools.product(*split):
                    sign = float(np.prod([c[0] for c in combo]))
                    in_part = combo[0][1]
                    tr_in = np.trace(in_part).real
                    # parts are shared between terms of one block with the same factor and sign
                    i = _collect(states, (a, id(factors[0]), combo[0][0]), (in_part / tr_in).T)
                    ks = tuple(_collect(slot_parts[sl], (a, id(factors[1 + sl]), combo[1 + sl][0]), combo[1 + sl][1].T)
                               for sl in range(len(slot_dims)))
                    j = _collect(effects, (a, id(factors[-1]), combo[-1][0]), combo[-1][1])
                    entries.append((i, ks, a, j, sign * w * tr_in))
            resid = float(np.linalg.norm(recon - y))
            if resid > DECOMPOSITION_TOL * max(1.0, np.linalg.norm(y)):
                raise GameError(f"decomposition residual {resid:.2e} on block ({x}, {a})")
        raw.append((states, slot_parts, effects, entries))
        k += n_a

    n_states = sum(len(r[0]) for r in raw)
    if n_states == 0:
        raise DegenerateGameError("zero witness gives an empty game")
    settings = []
    for (states, slot_parts, effects, entries), n_a in zip(raw, arities):
        if not states:
            settings.append(_empty_setting(shell, n_a))
            continue
        p = 1.0 / n_states
        # slot instruments: shrink by c and complete against I/(d_I d_O)
        insts, shrink = [], []
        for sl, (di, do) in enumerate(slot_dims):
            mats = [m for _, m in slot_parts[sl]]
            ref = np.eye(di * do) / (di * do)
            top = np.linalg.eigvalsh(hermitize(sum(mats)))[-1]
            c = 1.0 / (di * do * top)
            inst = [c * m for m in mats] + [hermitize(ref - c * sum(mats))]
            insts.append(tuple(inst))
            shrink.append(c)
        ems = [m for _, m in effects]
        top = np.linalg.eigvalsh(hermitize(sum(ems)))[-1]
        povm = tuple([m / top for m in ems] + [hermitize(np.eye(shell.d_out) - sum(ems) / top)])
        shape = (len(states),) + tuple(len(i) for i in insts) + (n_a, len(povm))
        rew = np.zeros(shape)
        for i, ks, a, j, val in entries:
            rew[(i,) + ks + (a, j)] += val * top / (p * float(np.prod(shrink)))
        settings.append(Setting(np.full(len(states), p), tuple(m for _, m in states), tuple(insts), povm, rew))
    g = InputOutputGame(dims, arities, tuple(settings))
    g.check()
    return g


def _empty_setting(shell: InputOutputGame, n_a: int) -> Setting:
    insts = tuple((np.eye(di * do) / (di * do),) for di, do in shell.slot_dims)
    shape = (0,) + tuple(1 for _ in insts) + (n_a, 1)
    return Setting(np.zeros(0), (), insts, (np.eye(shell.d_out, dtype=complex),), np.zeros(shape))


# --- canonical form ---------------------------------------------------------------------


def payoff_range(g: InputOutputGame) -> tuple[float, float]:
    """(min, max) of the payoff over every valid object of the game's shape."""
    from .robustness import optimise_over_set

    f = compile_all_valid(g.arities, g.dims, g.family)
    ops = g.operators()
    lo, slo = optimise_over_set(f, ops, "min")
    hi, shi = optimise_over_set(f, ops, "max")
    if not (slo.optimal and shi.optimal):
        raise GameError(f"payoff range solves failed ({slo.status}, {shi.status})")
    return lo, hi


def canonicalize(g: InputOutputGame) -> InputOutputGame:
    """Affinely remap rewards so the payoff spans exactly [0, 1] over valid objects.

    Every reward entry (completions included) is shifted, so the payoff
    moves by exactly the shift because the priors sum to one.
    """
    lo, hi = payoff_range(g)
    if hi - lo <= DEGENERACY_TOL:
        raise DegenerateGameError(f"payoff is constant ({lo:.3e}) over all valid objects")
    scale = hi - lo
    return g.with_rewards(lambda w: (w - lo) / scale, g.record.then(lo, scale), True)


def free_max_payoff(g: InputOutputGame, f: ConicFreeSet) -> float:
    from .robustness import optimise_over_set

    value, sol = optimise_over_set(f, g.operators(), "max")
    if not sol.optimal:
        raise GameError(f"free-set maximisation ended with status {sol.status}")
    return value


# --- discrimination form ---------------------------------------------------------------


@dataclass
class DiscriminationForm:
    """P = norm * sum_{j,x} prob[x][j] tr[states[x][j] M_{j|x}]."""

    states: list[list[np.ndarray | None]]
    probs: list[np.ndarray]
    norm: float
    payoff: float


def discrimination_form(g: InputOutputGame, c: ChannelCollection) -> DiscriminationForm:
    """Rewrite a nonnegative-reward game on channels as state discrimination."""
    if g.n_slots or any(n != 1 for n in g.arities):
        raise GameError("discrimination form covers channel games only")
    if any(np.any(s.rewards < 0) for s in g.settings):
        raise GameError("discrimination form needs nonnegative rewards")
    _check_fit(g, c)
    sigmas = []
    for s, ch in zip(g.settings, c.channels):
        outs = [apply_choi(ch.J, rho, g.d_in, g.d_out) for rho in s.states]
        sig = []
        for j in range(len(s.povm)):
            sig.append(sum((s.prior[i] * s.rewards[i, 0, j] * outs[i] for i in range(len(outs))),
                           np.zeros((g.d_out, g.d_out), dtype=complex)))
        sigmas.append(sig)
    norm = float(sum(np.trace(m).real for sig in sigmas for m in sig))
    states, probs = [], []
    for sig in sigmas:
        tr = np.array([np.trace(m).real for m in sig])
        probs.append(tr / norm if norm > 0 else np.zeros_like(tr))
        states.append([m / t if t > 0 else None for m, t in zip(sig, tr)])
    total = 0.0
    for s, st, pr in zip(g.settings, states, probs):
        for j, m in enumerate(s.povm):
            if st[j] is not None:
                total += pr[j] * np.trace(st[j] @ m).real
    return DiscriminationForm(states, probs, norm, norm * total)


# --- end-to-end check -------------------------------------------------------------------


@dataclass
class PayoffReport:
    payoff: float
    free_max: float
    global_max: float
    ratio: float
    robustness_bound: float  # 1 + R
    equality_residual: float
    tol: float
    game: InputOutputGame | None = None
    robustness: object = None
    residuals: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.equality_residual <= self.tol and self.flags.get("slater_checked", False))

    def summary(self) -> dict:
        return {
            "payoff": self.payoff,
            "free_max": self.free_max,
            "global_max": self.global_max,
            "ratio": self.ratio,
            "robustness_bound": self.robustness_bound,
            "equality_residual": self.equality_residual,
            "tol": self.tol,
            "passed": self.passed,
            "residuals": dict(self.residuals),
            "flags": dict(self.flags),
        }


def verify_theorem1(obj, f: ConicFreeSet, tol: float = 1e-5) -> PayoffReport:
    """Robustness, witness, game, canonical form and payoffs in one pass.

    Checks that the witness-built game achieves the robustness bound:
    |P(obj) / max_F P - (1 + R)| <= tol.
    """
    from .robustness import robustness, slater_check

    t0 = time.perf_counter()
    if not slater_check(f):
        raise GameError(f"free set {f.label} has no strictly feasible point; equality not certified")
    rep = robustness(obj, f)
    if rep.status != "optimal" or rep.witness is None:
        raise SolverError(f"robustness solve ended with status {rep.status}")
    w = rep.witness
    raw = game_from_witness(w, f.dims)
    exact = abs(payoff(raw, obj) - w.value)
    flags = {"slater_checked": True, **rep.flags}
    try:
        game = canonicalize(raw)
    except DegenerateGameError:
        # constant witness payoff, only possible for members: compare raw values
        game = raw
        flags["degenerate_game"] = True
    if game.canonical and game.record.scale < CONDITIONING_TOL:
        game = raw
        flags["ill_conditioned_game"] = True
    p = payoff(game, obj)
    fmax = free_max_payoff(game, f)
    ratio = p / fmax if abs(fmax) > 1e-12 else np.inf
    bound = rep.value
    return PayoffReport(
        payoff=p,
        free_max=fmax,
        global_max=1.0 if game.canonical else float("nan"),
        ratio=ratio,
        robustness_bound=bound,
        equality_residual=abs(ratio - bound),
        tol=tol,
        game=game,
        robustness=rep,
        residuals={
            "gap": rep.gap,
            "witness_free_max_excess": max(0.0, w.free_max - 1.0),
            "witness_value": abs(w.value - rep.value),
            "game_exactness": exact,
            "canonical_shift": game.record.shift,
            "canonical_scale": game.record.scale,
        },
        flags=flags,
        seconds=time.perf_counter() - t0,
    )
