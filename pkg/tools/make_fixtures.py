"""Regenerate the shipped JSON fixtures from their constructors.

    python3 tools/make_fixtures.py [target_dir]
"""

import sys
from pathlib import Path

import numpy as np

from iogames.io import FreeSetSpec, InstanceFile, ObjectSpec, ScanSpec, dumps, fixture_file
from iogames.objects import ChoiChannel, standard_object, unitary_channel
from iogames.supermaps import ocb_process, process_of_circuit, swap_tester_pair


def ordered_comb():
    """Sequential circuit: |0> into slot 1, a CNOT memory, trace out at the end."""
    pre = ChoiChannel(np.diag([1, 0, 0, 0]).astype(complex), 1, 4)  # |00> on I1 (x) memory
    cnot = np.eye(4)[[0, 1, 3, 2]]
    mid = unitary_channel(cnot)
    post = ChoiChannel(np.eye(4, dtype=complex) / 4, 4, 1)
    return process_of_circuit(pre, mid, post)


OBJECTS = {
    "ocb": (ocb_process(), "causally nonseparable two-slot process, trivial I0 and O0"),
    "swap_testers": (swap_tester_pair(), "two qubit-slot testers measuring Z(x)Z and X(x)Z"),
    "ordered_comb": (ordered_comb(), "fixed-order comb from a CNOT memory circuit"),
    "identity_qubit": (standard_object("identity"), "qubit identity channel"),
    "depolarizing_0.2": (standard_object("depolarizing", p=0.2), "qubit depolarizing channel, visibility 0.2"),
    "depolarizing_0.8": (standard_object("depolarizing", p=0.8), "qubit depolarizing channel, visibility 0.8"),
    "hadamard": (standard_object("hadamard"), "qubit Hadamard unitary channel"),
    "identity_pair": (standard_object("identity", copies=2), "two qubit identity channels"),
    "mixed_pair": (standard_object("depolarizing", p=0.0, copies=2), "two completely depolarizing channels"),
    "xz_sharp": (standard_object("noisy_xz_channels", eta=1.0), "sharp X and Z measurements, classical outputs"),
    "xz_half": (standard_object("noisy_xz_channels", eta=0.5), "X and Z measurements at visibility 0.5"),
    "luders_xz": (standard_object("luders", eta=1.0), "Lueders instruments of sharp X and Z"),
    "mp_xz_0.3": (standard_object("measure_prepare_instruments", eta=0.3),
                  "measure-and-prepare instruments of X and Z at visibility 0.3"),
}


def inst(obj, tag, task, **kw):
    return InstanceFile(object=ObjectSpec(**obj), free_set=FreeSetSpec(tag=tag, params=kw.pop("fs", {})), task=task,
                        **kw)


INSTANCES = {
    "membership_depolarizing_ppt": inst({"family": "depolarizing", "params": {"p": 0.2}},
                                        "entanglement_breaking_ppt", "membership"),
    "membership_depolarizing_ppt_out": inst({"fixture": "depolarizing_0.8"}, "entanglement_breaking_ppt", "membership"),
    "robustness_identity_classical": inst({"fixture": "identity_qubit"}, "classical_channels", "robustness"),
    "verify_identity_classical": inst({"fixture": "identity_qubit"}, "classical_channels", "verify"),
    "verify_xz_jm": inst({"fixture": "xz_sharp"}, "jointly_measurable", "verify"),
    "membership_xz_half_jm": inst({"fixture": "xz_half"}, "jointly_measurable", "membership"),
    "game_xz_jm": inst({"fixture": "xz_sharp"}, "jointly_measurable", "game"),
    "robustness_identity_pair": inst({"fixture": "identity_pair"}, "compatible_channels", "robustness"),
    "membership_mixed_pair": inst({"fixture": "mixed_pair"}, "compatible_channels", "membership"),
    "verify_luders_instruments": inst({"fixture": "luders_xz"}, "compatible_instruments", "verify"),
    "membership_mp_instruments": inst({"fixture": "mp_xz_0.3"}, "compatible_instruments", "membership"),
    "robustness_hadamard_covariant": inst({"fixture": "hadamard"}, "g_covariant", "robustness", fs={"group": "z2"}),
    "membership_depolarizing_covariant": inst({"fixture": "depolarizing_0.2"}, "g_covariant", "membership",
                                              fs={"group": "z2"}),
    "robustness_ocb": inst({"fixture": "ocb"}, "causally_separable", "robustness"),
    "verify_ocb": inst({"fixture": "ocb"}, "causally_separable", "verify"),
    "membership_ordered_comb": inst({"fixture": "ordered_comb"}, "causally_separable", "membership"),
    "verify_swap_testers": inst({"fixture": "swap_testers"}, "compatible_testers", "verify"),
    "scan_depolarizing_ppt": inst({"family": "depolarizing", "params": {"p": 0.0}}, "entanglement_breaking_ppt",
                                  "scan", scan=ScanSpec(param="p", start=0.0, stop=1.0, steps=101)),
    "scan_xz_jm": inst({"family": "noisy_xz_channels", "params": {"eta": 0.0}}, "jointly_measurable", "scan",
                       scan=ScanSpec(param="eta", start=0.0, stop=1.0, steps=41)),
}


def main(target: Path) -> None:
    (target / "instances").mkdir(parents=True, exist_ok=True)
    for name, (obj, desc) in OBJECTS.items():
        (target / f"{name}.json").write_text(dumps(fixture_file(name, obj, desc)))
    for name, instance in INSTANCES.items():
        (target / "instances" / f"{name}.json").write_text(dumps(instance))


if __name__ == "__main__":
    default = Path(__file__).resolve().parents[1] / "src" / "iogames" / "fixtures"
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else default)
