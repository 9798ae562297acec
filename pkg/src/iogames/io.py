"""JSON schema for instances, fixtures and reports, plus codecs for the numerics.

Complex matrices travel as nested lists of ``[re, im]`` pairs.  Python's
float repr round-trips exactly, so ``dumps(parse(text)) == text`` for any
file this module wrote.
"""

from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path
from typing import Any, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .freesets import (
    ConicFreeSet,
    compile_all_valid,
    compile_classical_channels,
    compile_compatible_channels,
    compile_compatible_instruments,
    compile_entanglement_breaking_ppt,
    compile_g_covariant,
    compile_jointly_measurable,
)
from .games import CanonicalRecord, InputOutputGame, Setting
from .objects import (
    PAULI,
    PROCESS_LABELS,
    ChannelCollection,
    ChoiChannel,
    ChoiObject,
    InstrumentCollection,
    InvalidObjectError,
    ProcessMatrix,
    standard_object,
    validate,
)
from .robustness import Witness
from .supermaps import (
    SuperinstrumentCollection,
    compile_causally_ordered,
    compile_causally_separable,
    compile_compatible_testers,
    compile_valid_processes,
)

SCHEMA_VERSION = 1
FIXTURE_ENV = "IOGAMES_FIXTURES"

Pair = tuple[float, float]
Matrix = list[list[Pair]]
Scalar = Union[int, float, str]


class SchemaError(ValueError):
    """Instance or fixture text that does not match the schema."""


# --- complex codecs ------------------------------------------------------------------


def encode_matrix(m) -> Matrix:
    m = np.asarray(m, dtype=complex)
    return [[(float(z.real), float(z.imag)) for z in row] for row in m]


def decode_matrix(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise SchemaError("complex matrices are lists of rows of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


# --- schema ------------------------------------------------------------------------


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


FAMILY_PARAMS = {
    "identity": {"d", "copies"},
    "depolarizing": {"p", "d", "copies"},
    "hadamard": {"copies"},
    "classical": {"axis", "eta", "copies"},
    "random_channel": {"seed", "n", "d_in", "d_out"},
    "noisy_xz_channels": {"eta"},
    "luders": {"eta"},
    "measure_prepare_instruments": {"eta"},
}

OBJECT_KINDS = ("channel", "channels", "instruments", "process", "superinstruments")


class ObjectSpec(Strict):
    """Exactly one of: a fixture name, a standard family, or explicit blocks."""

    fixture: str | None = None
    family: str | None = None
    params: dict[str, Scalar] | None = None
    kind: Literal["channel", "channels", "instruments", "process", "superinstruments"] | None = None
    dims: list[int] | None = None
    labels: list[str] | None = None
    blocks: list[list[Matrix]] | None = None  # blocks[x][a]

    @model_validator(mode="after")
    def _one_form(self):
        forms = [self.fixture is not None, self.family is not None, self.kind is not None]
        if sum(forms) != 1:
            raise ValueError("object needs exactly one of 'fixture', 'family' or 'kind'")
        if self.family is not None:
            if self.family not in FAMILY_PARAMS:
                raise ValueError(f"unknown family {self.family!r}; choose from {sorted(FAMILY_PARAMS)}")
            extra = set(self.params or {}) - FAMILY_PARAMS[self.family]
            if extra:
                raise ValueError(f"unknown params {sorted(extra)} for family {self.family!r}")
        elif self.params is not None:
            raise ValueError("'params' only goes with 'family'")
        if self.kind is not None and (self.dims is None or self.blocks is None):
            raise ValueError("explicit objects need 'dims' and 'blocks'")
        if self.kind is None and (self.dims or self.blocks or self.labels):
            raise ValueError("'dims', 'labels' and 'blocks' only go with 'kind'")
        return self


FREE_SET_PARAMS = {
    "all_valid": set(),
    "compatible_channels": set(),
    "jointly_measurable": set(),
    "entanglement_breaking_ppt": set(),
    "classical_channels": {"basis"},
    "compatible_instruments": set(),
    "g_covariant": {"group", "unitaries"},
    "valid_processes": set(),
    "causally_ordered": {"order"},
    "causally_separable": set(),
    "compatible_testers": {"order"},
}

NAMED_GROUPS = {
    "z2": ("I", "Z"),
    "x2": ("I", "X"),
    "pauli": ("I", "X", "Y", "Z"),
}


class FreeSetSpec(Strict):
    """Free-set tag; shapes (dims, arities) are taken from the object."""

    tag: str
    params: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _known(self):
        if self.tag not in FREE_SET_PARAMS:
            raise ValueError(f"unknown free set {self.tag!r}; choose from {sorted(FREE_SET_PARAMS)}")
        extra = set(self.params) - FREE_SET_PARAMS[self.tag]
        if extra:
            raise ValueError(f"unknown params {sorted(extra)} for free set {self.tag!r}")
        return self


class ScanSpec(Strict):
    param: str
    start: float
    stop: float
    steps: int = Field(ge=2)


class Tolerances(Strict):
    equality: float = Field(1e-5, gt=0)  # payoff equality residual
    membership: float = Field(1e-7, gt=0)  # feasibility shortfall
    zero: float = Field(1e-6, gt=0)  # R below this counts as zero


class InstanceFile(Strict):
    version: Literal[1] = SCHEMA_VERSION
    object: ObjectSpec
    free_set: FreeSetSpec
    task: Literal["robustness", "membership", "game", "verify", "scan"]
    scan: ScanSpec | None = None
    tolerances: Tolerances = Field(default_factory=Tolerances)

    @model_validator(mode="after")
    def _scan(self):
        if self.task == "scan":
            if self.scan is None:
                raise ValueError("scan instances need a 'scan' section")
            if self.object.family is None:
                raise ValueError("scans sweep a parameter of a standard 'family' object")
            if self.scan.param not in FAMILY_PARAMS[self.object.family]:
                raise ValueError(f"family {self.object.family!r} has no parameter {self.scan.param!r}")
        return self


class FixtureFile(Strict):
    version: Literal[1] = SCHEMA_VERSION
    name: str
    description: str = ""
    object: ObjectSpec

    @model_validator(mode="after")
    def _explicit(self):
        if self.object.kind is None:
            raise ValueError("fixture files hold explicit objects")
        return self


class ReportFile(Strict):
    version: Literal[1] = SCHEMA_VERSION
    instance: dict
    task: str
    status: Literal["ok", "schema_error", "solver_failure", "verification_failure"]
    exit_code: int
    message: str = ""
    values: dict[str, Any] = Field(default_factory=dict)
    residuals: dict[str, Any] = Field(default_factory=dict)
    flags: dict[str, Any] = Field(default_factory=dict)
    diagnostics: dict[str, Any] = Field(default_factory=dict)
    witness: dict | None = None
    game: dict | None = None
    timing: dict[str, float] = Field(default_factory=dict)


# --- text round trips ----------------------------------------------------------------


def dumps(model: BaseModel) -> str:
    data = model.model_dump(mode="json", exclude_none=True)
    return json.dumps(data, separators=(",", ":"), sort_keys=True, allow_nan=True) + "\n"


def _parse(cls, text: str):
    try:
        return cls.model_validate(json.loads(text))
    except json.JSONDecodeError as e:
        raise SchemaError(f"malformed JSON: {e}") from e
    except ValidationError as e:
        raise SchemaError(str(e)) from e


def parse_instance(text: str) -> InstanceFile:
    return _parse(InstanceFile, text)


def parse_fixture(text: str) -> FixtureFile:
    return _parse(FixtureFile, text)


def load_instance(path) -> InstanceFile:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}") from e
    return parse_instance(text)


# --- fixtures ------------------------------------------------------------------------


def fixture_dir() -> Path:
    env = os.environ.get(FIXTURE_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files("iogames") / "fixtures"))


def load_fixture(name: str) -> ChoiObject:
    path = fixture_dir() / f"{name}.json"
    if not path.is_file():
        raise SchemaError(f"no fixture {name!r} in {path.parent}")
    return build_object(parse_fixture(path.read_text()).object)


def object_spec(obj: ChoiObject) -> ObjectSpec:
    """Explicit-block spec of a constructed object."""
    blocks, k = [], 0
    for n in obj.arities:
        blocks.append([encode_matrix(b) for b in obj.blocks[k:k + n]])
        k += n
    labels = list(PROCESS_LABELS) if obj.family == "process" else None
    return ObjectSpec(kind=obj.kind, dims=list(obj.dims), labels=labels, blocks=blocks)


def fixture_file(name: str, obj: ChoiObject, description: str = "") -> FixtureFile:
    return FixtureFile(name=name, description=description, object=object_spec(obj))


# --- building numerics from specs -------------------------------------------------------


def build_object(spec: ObjectSpec, overrides: dict | None = None) -> ChoiObject:
    """Construct the object and reject it unless every validity check passes."""
    obj = _construct(spec, overrides)
    bad = validate(obj).failures()
    if bad:
        worst = ", ".join(f"{c.name} ({c.residual:.2e})" for c in bad[:3])
        raise InvalidObjectError(f"object fails validity checks: {worst}")
    return obj


def _construct(spec: ObjectSpec, overrides: dict | None) -> ChoiObject:
    if spec.fixture is not None:
        return load_fixture(spec.fixture)
    if spec.family is not None:
        params = dict(spec.params or {})
        params.update(overrides or {})
        obj = standard_object(spec.family, **params)
        if not isinstance(obj, ChoiObject):
            raise SchemaError(f"family {spec.family!r} does not give a block object")
        return obj
    dims = tuple(spec.dims)
    blocks = [[decode_matrix(m) for m in row] for row in spec.blocks]
    if spec.kind in ("channel", "channels"):
        if len(dims) != 2 or any(len(row) != 1 for row in blocks):
            raise SchemaError("channel objects have dims [d_in, d_out] and one block per setting")
        chans = tuple(ChoiChannel(row[0], *dims) for row in blocks)
        return chans[0] if spec.kind == "channel" and len(chans) == 1 else ChannelCollection(chans)
    if spec.kind == "instruments":
        return InstrumentCollection(tuple(tuple(row) for row in blocks), *dims)
    labels = tuple(spec.labels or PROCESS_LABELS)
    if spec.kind == "process":
        if len(blocks) != 1 or len(blocks[0]) != 1:
            raise SchemaError("process objects hold a single block")
        return ProcessMatrix(blocks[0][0], tuple(dims), labels)
    if labels != PROCESS_LABELS:
        raise SchemaError(f"superinstrument factors must be labelled {PROCESS_LABELS}")
    return SuperinstrumentCollection(tuple(tuple(row) for row in blocks), tuple(dims))


def _unitaries(params: dict) -> list[np.ndarray]:
    if "unitaries" in params:
        return [decode_matrix(u) for u in params["unitaries"]]
    name = params.get("group", "z2")
    if name not in NAMED_GROUPS:
        raise SchemaError(f"unknown group {name!r}; choose from {sorted(NAMED_GROUPS)}")
    return [PAULI[p] for p in NAMED_GROUPS[name]]


def build_free_set(spec: FreeSetSpec, obj: ChoiObject) -> ConicFreeSet:
    """Compile the free set, taking dims and arities from ``obj``."""
    tag, p = spec.tag, spec.params
    dims, arities, n = tuple(obj.dims), tuple(obj.arities), obj.n_settings
    if tag == "all_valid":
        return compile_all_valid(arities, dims, obj.family)
    process_tags = ("valid_processes", "causally_ordered", "causally_separable", "compatible_testers")
    if (tag in process_tags) != (obj.family == "process"):
        raise SchemaError(f"free set {tag!r} does not apply to a {obj.family} object")
    if tag not in ("compatible_instruments", "compatible_testers", "valid_processes") and any(a != 1 for a in arities):
        raise SchemaError(f"free set {tag!r} takes one block per setting")
    if tag == "valid_processes":
        return compile_valid_processes(dims, arities)
    if tag == "causally_ordered":
        return compile_causally_ordered(dims, p.get("order", "1<2"))
    if tag == "causally_separable":
        return compile_causally_separable(dims)
    if tag == "compatible_testers":
        return compile_compatible_testers(arities, dims, p.get("order", "1<2"))
    d_in, d_out = dims
    if tag == "compatible_channels":
        return compile_compatible_channels(n, d_in, d_out)
    if tag == "jointly_measurable":
        return compile_jointly_measurable([d_out] * n, d_in)
    if tag == "entanglement_breaking_ppt":
        return compile_entanglement_breaking_ppt(d_in, d_out, n)
    if tag == "classical_channels":
        basis = decode_matrix(p["basis"]) if "basis" in p else None
        return compile_classical_channels(d_in, basis, d_out, n)
    if tag == "compatible_instruments":
        return compile_compatible_instruments(arities, d_in, d_out)
    if d_in != d_out:
        raise SchemaError("covariant channels need d_in == d_out")
    return compile_g_covariant(d_in, _unitaries(p), n)


# --- payloads ----------------------------------------------------------------------


def witness_payload(w: Witness) -> dict:
    return {
        "blocks": [encode_matrix(y) for y in w.blocks],
        "arities": list(w.arities),
        "dims": list(w.dims),
        "value": w.value,
        "free_max": w.free_max,
        "free_max_status": w.free_max_status,
        "min_eig": w.min_eig,
    }


def game_payload(g: InputOutputGame) -> dict:
    settings = []
    for s in g.settings:
        settings.append({
            "prior": [float(v) for v in s.prior],
            "states": [encode_matrix(r) for r in s.states],
            "slots": [[encode_matrix(k) for k in inst] for inst in s.slots],
            "povm": [encode_matrix(m) for m in s.povm],
            "rewards_shape": list(s.rewards.shape),
            "rewards": [float(v) for v in s.rewards.reshape(-1)],
        })
    return {
        "dims": list(g.dims),
        "arities": list(g.arities),
        "canonical": g.canonical,
        "canonical_record": {"shift": g.record.shift, "scale": g.record.scale},
        "settings": settings,
    }


def game_from_payload(data: dict) -> InputOutputGame:
    """Rebuild a game from its report payload, no solver needed."""
    settings = []
    for s in data["settings"]:
        settings.append(Setting(
            np.asarray(s["prior"], dtype=float),
            tuple(decode_matrix(r) for r in s["states"]),
            tuple(tuple(decode_matrix(k) for k in inst) for inst in s["slots"]),
            tuple(decode_matrix(m) for m in s["povm"]),
            np.asarray(s["rewards"], dtype=float).reshape(s["rewards_shape"]),
        ))
    rec = data["canonical_record"]
    return InputOutputGame(tuple(data["dims"]), tuple(data["arities"]), tuple(settings),
                           CanonicalRecord(rec["shift"], rec["scale"]), bool(data["canonical"]))
