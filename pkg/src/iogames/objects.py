"""States, POVMs, channels, instruments and process matrices in the Choi picture.

Normalisation follows one convention throughout: every Choi matrix has unit
trace, ``J = (1/d_in) sum_ij |i><j| (x) L(|i><j|)`` with the input factor
first, so a valid channel satisfies ``tr_out J = I / d_in``.  Instrument
elements keep the same 1/d_in prefactor, so their sum is literally the
channel's Choi matrix.  Process matrices also have unit trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import FEASIBILITY_TOL, hermitize, is_hermitian, min_eig, ptrace

STATE_TOL = 1e-10
PROCESS_LABELS = ("I0", "I1", "O1", "I2", "O2", "O0")

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


class InvalidObjectError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    mat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mat, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidObjectError(f"density matrix must be square, got {m.shape}")
        if not is_hermitian(m, 1e-10):
            raise InvalidObjectError("density matrix is not Hermitian")
        m = hermitize(m)
        if min_eig(m) < -STATE_TOL or abs(np.trace(m).real - 1) > STATE_TOL:
            raise InvalidObjectError("density matrix must be PSD with unit trace")
        object.__setattr__(self, "mat", m)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]


@dataclass(frozen=True, eq=False)
class Povm:
    effects: tuple[np.ndarray, ...]

    def __post_init__(self):
        effects = tuple(hermitize(np.array(e, dtype=complex)) for e in self.effects)
        if not effects:
            raise InvalidObjectError("a POVM needs at least one effect")
        d = effects[0].shape[0]
        if any(e.shape != (d, d) for e in effects):
            raise InvalidObjectError("POVM effects must share one dimension")
        if any(min_eig(e) < -STATE_TOL for e in effects):
            raise InvalidObjectError("POVM effects must be PSD")
        if np.max(np.abs(sum(effects) - np.eye(d))) > STATE_TOL:
            raise InvalidObjectError("POVM effects must sum to the identity")
        object.__setattr__(self, "effects", effects)

    @property
    def dim(self) -> int:
        return self.effects[0].shape[0]

    def __len__(self) -> int:
        return len(self.effects)


@dataclass(frozen=True)
class Check:
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tol)


@dataclass(frozen=True)
class ValidityReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [{"name": c.name, "residual": c.residual, "tol": c.tol, "passed": c.passed} for c in self.checks],
        }


def _psd_residual(m: np.ndarray) -> float:
    return max(0.0, -min_eig(m))


def _channel_checks(j: np.ndarray, d_in: int, d_out: int, prefix: str, subnormalised: bool = False) -> list[Check]:
    checks = [
        Check(f"{prefix}hermitian", float(np.max(np.abs(j - j.conj().T))), 1e-12),
        Check(f"{prefix}psd", _psd_residual(j), STATE_TOL),
    ]
    if not subnormalised:
        checks.append(Check(f"{prefix}trace", abs(np.trace(j).real - 1.0), STATE_TOL))
        marg = ptrace(j, (d_in, d_out), [0])
        checks.append(Check(f"{prefix}marginal", float(np.linalg.norm(marg - np.eye(d_in) / d_in)), FEASIBILITY_TOL))
    return checks


class ChoiObject:
    """Common surface for everything that robustness programs act on.

    ``blocks`` are flattened setting-major (x outer, outcome a inner);
    ``arities[x]`` counts the outcomes of setting x.
    """

    family = "channel"  # or "process"
    kind = "object"

    @property
    def blocks(self) -> tuple[np.ndarray, ...]:
        raise NotImplementedError

    @property
    def arities(self) -> tuple[int, ...]:
        raise NotImplementedError

    @property
    def dims(self) -> tuple[int, ...]:
        raise NotImplementedError

    @property
    def n_settings(self) -> int:
        return len(self.arities)

    def block_index(self) -> list[tuple[int, int]]:
        return [(x, a) for x, n in enumerate(self.arities) for a in range(n)]

    def checks(self) -> list[Check]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ChoiChannel(ChoiObject):
    J: np.ndarray
    d_in: int
    d_out: int

    kind = "channel"

    def __post_init__(self):
        j = np.array(self.J, dtype=complex)
        if j.shape != (self.d_in * self.d_out,) * 2:
            raise InvalidObjectError(f"Choi matrix of shape {j.shape} does not match d_in={self.d_in}, d_out={self.d_out}")
        object.__setattr__(self, "J", j)

    @property
    def blocks(self):
        return (self.J,)

    @property
    def arities(self):
        return (1,)

    @property
    def dims(self):
        return (self.d_in, self.d_out)

    def checks(self) -> list[Check]:
        return _channel_checks(self.J, self.d_in, self.d_out, "")


@dataclass(frozen=True, eq=False)
class ChannelCollection(ChoiObject):
    channels: tuple[ChoiChannel, ...]

    kind = "channels"

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans:
            raise InvalidObjectError("a channel collection cannot be empty")
        if len({c.dims for c in chans}) != 1:
            raise InvalidObjectError("channels in a collection must share dimensions")
        object.__setattr__(self, "channels", chans)

    @property
    def blocks(self):
        return tuple(c.J for c in self.channels)

    @property
    def arities(self):
        return (1,) * len(self.channels)

    @property
    def dims(self):
        return self.channels[0].dims

    def __len__(self) -> int:
        return len(self.channels)

    def checks(self) -> list[Check]:
        out = []
        for x, c in enumerate(self.channels):
            out += _channel_checks(c.J, c.d_in, c.d_out, f"channel[{x}].")
        return out


@dataclass(frozen=True, eq=False)
class InstrumentCollection(ChoiObject):
    """Choi blocks J_{a|x}, given as one list of blocks per setting x."""

    elements: tuple[tuple[np.ndarray, ...], ...]
    d_in: int
    d_out: int

    kind = "instruments"

    def __post_init__(self):
        elems = tuple(tuple(np.array(j, dtype=complex) for j in inst) for inst in self.elements)
        if not elems or any(not inst for inst in elems):
            raise InvalidObjectError("every instrument needs at least one element")
        n = self.d_in * self.d_out
        if any(j.shape != (n, n) for inst in elems for j in inst):
            raise InvalidObjectError("instrument blocks do not match the declared dimensions")
        object.__setattr__(self, "elements", elems)

    @property
    def blocks(self):
        return tuple(j for inst in self.elements for j in inst)

    @property
    def arities(self):
        return tuple(len(inst) for inst in self.elements)

    @property
    def dims(self):
        return (self.d_in, self.d_out)

    def channel(self, x: int) -> ChoiChannel:
        return ChoiChannel(sum(self.elements[x]), self.d_in, self.d_out)

    def checks(self) -> list[Check]:
        out = []
        for x, inst in enumerate(self.elements):
            for a, j in enumerate(inst):
                out += _channel_checks(j, self.d_in, self.d_out, f"instrument[{x}][{a}].", subnormalised=True)
            out += _channel_checks(sum(inst), self.d_in, self.d_out, f"instrument[{x}].sum.")
        return out


@dataclass(frozen=True, eq=False)
class ProcessMatrix(ChoiObject):
    """Two-slot process matrix on factors (I0, I1, O1, I2, O2, O0), unit trace."""

    W: np.ndarray
    factor_dims: tuple[int, ...]
    labels: tuple[str, ...] = PROCESS_LABELS

    kind = "process"
    family = "process"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        if len(dims) != 6 or tuple(self.labels) != PROCESS_LABELS:
            raise InvalidObjectError(f"process matrices need the six factors {PROCESS_LABELS}")
        w = np.array(self.W, dtype=complex)
        if w.shape != (int(np.prod(dims)),) * 2:
            raise InvalidObjectError(f"process matrix of shape {w.shape} does not match dims {dims}")
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "factor_dims", dims)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def blocks(self):
        return (self.W,)

    @property
    def arities(self):
        return (1,)

    @property
    def dims(self):
        return self.factor_dims

    def checks(self) -> list[Check]:
        from .supermaps import validity_project

        w = self.W
        return [
            Check("hermitian", float(np.max(np.abs(w - w.conj().T))), 1e-12),
            Check("psd", _psd_residual(w), STATE_TOL),
            Check("trace", abs(np.trace(w).real - 1.0), STATE_TOL),
            Check("validity", float(np.linalg.norm(validity_project(w, self.factor_dims) - w)), FEASIBILITY_TOL),
        ]


def validate(obj) -> ValidityReport:
    """Check every invariant of ``obj`` and report residuals; never raises."""
    if isinstance(obj, (DensityMatrix, Povm)):
        return ValidityReport((Check("constructed", 0.0, 0.0),))
    return ValidityReport(tuple(obj.checks()))


# --- constructors --------------------------------------------------------------


def kraus_to_choi(kraus: Sequence[np.ndarray]) -> np.ndarray:
    """Unit-trace-convention Choi matrix of a CP map (no trace-preservation check)."""
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    d_out, d_in = kraus[0].shape
    j = np.zeros((d_in * d_out,) * 2, dtype=complex)
    for k in kraus:
        v = k.T.reshape(-1)  # sum_i |i> (x) K|i>
        j += np.outer(v, v.conj())
    return j / d_in


def channel_to_choi(kraus: Sequence[np.ndarray]) -> ChoiChannel:
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    d_out, d_in = kraus[0].shape
    tp = sum(k.conj().T @ k for k in kraus)
    if np.max(np.abs(tp - np.eye(d_in))) > 1e-10:
        raise InvalidObjectError("Kraus operators are not trace preserving")
    return ChoiChannel(hermitize(kraus_to_choi(kraus)), d_in, d_out)


def apply_choi(j: np.ndarray, rho: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    """L(rho) = d_in tr_in[(rho^T (x) I) J] for a (possibly subnormalised) Choi block."""
    t = np.asarray(j).reshape(d_in, d_out, d_in, d_out)
    return d_in * np.einsum("iojp,ij->op", t, np.asarray(rho))


def apply_channel(c: ChoiChannel, rho: DensityMatrix) -> DensityMatrix:
    if rho.dim != c.d_in:
        raise InvalidObjectError(f"state of dimension {rho.dim} does not fit channel input {c.d_in}")
    return DensityMatrix(hermitize(apply_choi(c.J, rho.mat, c.d_in, c.d_out)))


def choi_to_kraus(j: np.ndarray, d_in: int, d_out: int, tol: float = 1e-12) -> list[np.ndarray]:
    w, v = np.linalg.eigh(hermitize(j) * d_in)
    return [np.sqrt(lam) * v[:, k].reshape(d_in, d_out).T for k, lam in enumerate(w) if lam > tol]


def depolarizing(p: float, d: int = 2) -> ChoiChannel:
    """L(rho) = p rho + (1 - p) tr(rho) I/d."""
    if not 0.0 <= p <= 1.0:
        raise InvalidObjectError(f"depolarizing visibility {p} outside [0, 1]")
    phi = np.eye(d).reshape(-1) / np.sqrt(d)
    return ChoiChannel(p * np.outer(phi, phi) + (1 - p) * np.eye(d * d) / d**2, d, d)


def unitary_channel(u: np.ndarray) -> ChoiChannel:
    return channel_to_choi([np.asarray(u, dtype=complex)])


def measure_prepare(povm: Povm, states: Sequence[np.ndarray]) -> ChoiChannel:
    """L(rho) = sum_a tr[N_a rho] sigma_a."""
    d = povm.dim
    dout = np.asarray(states[0]).shape[0]
    j = sum(np.kron(e.T, np.asarray(s, dtype=complex)) for e, s in zip(povm.effects, states)) / d
    return ChoiChannel(hermitize(j), d, dout)


def classical_channel(povm: Povm, basis: Sequence[np.ndarray] | None = None) -> ChoiChannel:
    """Send only the classical outcome: L(rho) = sum_a tr[N_a rho] |a><a|."""
    n = len(povm)
    basis = np.eye(n) if basis is None else basis
    return measure_prepare(povm, [np.outer(b, np.conj(b)) for b in basis])


def povms_to_channels(povms: Sequence[Povm]) -> ChannelCollection:
    """Encode POVMs as classical-output channels (one per POVM)."""
    n = {len(p) for p in povms}
    if len(n) != 1:
        raise InvalidObjectError("POVMs must share an outcome count to form a uniform channel collection")
    return ChannelCollection(tuple(classical_channel(p) for p in povms))


def noisy_pauli_povm(axis: str, eta: float) -> Povm:
    if not 0.0 <= eta <= 1.0:
        raise InvalidObjectError(f"visibility {eta} outside [0, 1]")
    s = PAULI[axis]
    return Povm(((np.eye(2) + eta * s) / 2, (np.eye(2) - eta * s) / 2))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(a))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def luders_instrument(povm: Povm) -> tuple[np.ndarray, ...]:
    return tuple(hermitize(kraus_to_choi([_psd_sqrt(e)])) for e in povm.effects)


def measure_prepare_instrument(povm: Povm, state: np.ndarray | None = None) -> tuple[np.ndarray, ...]:
    d = povm.dim
    state = np.eye(d) / d if state is None else np.asarray(state, dtype=complex)
    return tuple(np.kron(e.T, state) / d for e in povm.effects)


def random_channel(d_in: int, d_out: int, rng: np.random.Generator, n_kraus: int | None = None) -> ChoiChannel:
    n_kraus = n_kraus or d_in * d_out
    g = rng.normal(size=(n_kraus * d_out, d_in)) + 1j * rng.normal(size=(n_kraus * d_out, d_in))
    q, _ = np.linalg.qr(g)
    return channel_to_choi([q[k * d_out : (k + 1) * d_out] for k in range(n_kraus)])


def random_state(d: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    rank = rank or d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return DensityMatrix(rho / np.trace(rho).real)


def random_povm(d: int, n: int, rng: np.random.Generator) -> Povm:
    g = [(lambda m: m @ m.conj().T)(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) for _ in range(n)]
    s = sum(g)
    w, v = np.linalg.eigh(s)
    isq = (v / np.sqrt(w)) @ v.conj().T
    return Povm(tuple(isq @ e @ isq for e in g))


STANDARD_KINDS = (
    "identity",
    "depolarizing",
    "unitary",
    "hadamard",
    "classical",
    "noisy_xz",
    "noisy_xz_channels",
    "luders",
    "measure_prepare_instruments",
    "random_channel",
)


def standard_object(kind: str, **params):
    """Fixture objects used across tests, the CLI and scans.

    ``identity`` / ``depolarizing`` / ``unitary`` / ``hadamard`` /
    ``classical`` / ``random_channel`` give a :class:`ChannelCollection`
    (``copies`` repeats the channel); ``noisy_xz`` gives the pair of noisy
    X and Z qubit POVMs and ``noisy_xz_channels`` their classical-output
    encoding; ``luders`` and ``measure_prepare_instruments`` give an
    :class:`InstrumentCollection` for the noisy X/Z pair.
    """
    copies = int(params.pop("copies", 1))

    def coll(ch):
        return ChannelCollection((ch,) * copies)

    if kind == "identity":
        d = int(params.get("d", 2))
        return coll(depolarizing(1.0, d))
    if kind == "depolarizing":
        return coll(depolarizing(float(params.get("p", 1.0)), int(params.get("d", 2))))
    if kind == "unitary":
        return coll(unitary_channel(np.asarray(params["u"])))
    if kind == "hadamard":
        return coll(unitary_channel(HADAMARD))
    if kind == "classical":
        povm = params.get("povm") or noisy_pauli_povm(params.get("axis", "Z"), float(params.get("eta", 1.0)))
        return coll(classical_channel(povm, params.get("basis")))
    if kind == "random_channel":
        rng = np.random.default_rng(int(params.get("seed", 0)))
        n = int(params.get("n", copies))
        return ChannelCollection(tuple(random_channel(int(params.get("d_in", 2)), int(params.get("d_out", 2)), rng)
                                       for _ in range(n)))
    if kind in ("noisy_xz", "noisy_xz_channels", "luders", "measure_prepare_instruments"):
        eta = float(params.get("eta", 1.0))
        pair = (noisy_pauli_povm("X", eta), noisy_pauli_povm("Z", eta))
        if kind == "noisy_xz":
            return pair
        if kind == "noisy_xz_channels":
            return povms_to_channels(pair)
        build = luders_instrument if kind == "luders" else measure_prepare_instrument
        return InstrumentCollection(tuple(build(p) for p in pair), 2, 2)
    raise InvalidObjectError(f"unknown standard object {kind!r}; choose from {STANDARD_KINDS}")
