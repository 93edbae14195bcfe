"""Named machine parameter sets that scenario files can reference with "preset"."""

from dataclasses import dataclass, fields
from typing import Any, Dict

from grid.energy import MachineParams
from grid.shared import ParameterError

MACHINE_FIELDS = tuple(f.name for f in fields(MachineParams))


@dataclass(frozen=True)
class MachinePreset:
    description: str
    values: Dict[str, float]


MACHINE_PRESETS: Dict[str, MachinePreset] = {
    "round_rotor": MachinePreset(
        "Round-rotor unit, fast d-axis damper; satisfies the dissipation condition on both axes.",
        {
            "m": 4.0,
            "xd": 1.8, "xdp": 0.3, "xdpp": 0.25,
            "xq": 1.7, "xqp": 0.55, "xqpp": 0.25,
            "tdp": 8.0, "tdpp": 0.03,
            "tqp": 0.4, "tqpp": 0.05,
            "ef": 1.2,
        },
    ),
    "thermal_unit": MachinePreset(
        "Large steam unit with equal subtransient reactances.",
        {
            "m": 6.5,
            "xd": 1.81, "xdp": 0.30, "xdpp": 0.23,
            "xq": 1.76, "xqp": 0.65, "xqpp": 0.23,
            "tdp": 8.0, "tdpp": 0.03,
            "tqp": 1.0, "tqpp": 0.07,
            "ef": 1.1,
        },
    ),
    "slow_damper": MachinePreset(
        "Round-rotor reactances with a 10 s d-axis subtransient constant; fails the dissipation condition.",
        {
            "m": 4.0,
            "xd": 1.8, "xdp": 0.3, "xdpp": 0.25,
            "xq": 1.7, "xqp": 0.55, "xqpp": 0.25,
            "tdp": 8.0, "tdpp": 10.0,
            "tqp": 0.4, "tqpp": 0.05,
            "ef": 1.2,
        },
    ),
}


def get_preset(name: str) -> MachinePreset:
    preset = MACHINE_PRESETS.get(str(name).lower())
    if preset is None:
        known = ", ".join(sorted(MACHINE_PRESETS))
        raise ParameterError(f"unknown machine preset {name!r} (known: {known})")
    return preset


def expand_machine(entry: Dict[str, Any]) -> Dict[str, Any]:
    """Preset values overlaid with the entry's own fields; "preset" itself is dropped."""
    merged: Dict[str, Any] = {}
    if "preset" in entry:
        merged.update(get_preset(entry["preset"]).values)
    merged.update({k: v for k, v in entry.items() if k != "preset"})
    return merged


def preset_params(name: str, **overrides: float) -> MachineParams:
    values = dict(get_preset(name).values)
    values.update(overrides)
    return MachineParams(**values)
