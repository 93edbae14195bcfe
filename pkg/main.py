"""Command-line entry point for the grid simulator.

    python main.py validate scenarios/three_machine_ring.json
    python main.py simulate scenarios/three_machine_ring.json --out out --method rk4 --dt 1e-3
"""

import argparse
import importlib
import sys
from typing import Callable, List, Optional, Sequence, Tuple

from dotenv import load_dotenv

# Env-driven knobs in grid.shared are read at import time.
load_dotenv()

# ----------------- Command registry -----------------
# (public_name, module_path, function_name, help)

COMMAND_DEFS: List[Tuple[str, str, str, str]] = [
    ("validate", "grid.commands", "cmd_validate", "check every structural condition of a scenario"),
    ("dispatch", "grid.commands", "cmd_dispatch", "print the optimal dispatch and marginal cost"),
    ("steady-state", "grid.commands", "cmd_steady_state", "solve the closed-loop steady state"),
    ("simulate", "grid.commands", "cmd_simulate", "integrate the closed loop and write CSV + report"),
    ("basin", "grid.commands", "cmd_basin", "probe convergence for growing initial perturbations"),
    ("batch", "grid.commands", "cmd_batch", "simulate several scenarios concurrently"),
]


def _resolve(module_path: str, func_name: str) -> Callable:
    module = importlib.import_module(module_path)
    func = getattr(module, func_name, None)
    if func is None:
        raise AttributeError(f"{module_path} has no attribute {func_name}")
    return func


def _validate_registry() -> List[str]:
    """Import every command eagerly; return the registry mismatches found."""
    problems = []
    for name, module_path, func_name, _ in COMMAND_DEFS:
        try:
            _resolve(module_path, func_name)
        except Exception as exc:
            problems.append(f"{name}: {exc}")
            print(f"[main] WARNING registry mismatch: {name} ({module_path}.{func_name}): {exc}", file=sys.stderr)
    return problems


def _add_integrator_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=("rk4", "rk45"), help="override integrator.method")
    parser.add_argument("--dt", type=float, help="override integrator.dt (s)")
    parser.add_argument("--t-end", dest="t_end", type=float, help="override integrator.t_end (s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grid", description="Sixth-order power network simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, _, _, help_text in COMMAND_DEFS:
        cmd = sub.add_parser(name, help=help_text)
        if name == "batch":
            cmd.add_argument("configs", nargs="+", help="scenario JSON files")
            cmd.add_argument("--out", help="output root; each scenario writes into <out>/<name>/")
            _add_integrator_flags(cmd)
            continue
        cmd.add_argument("config", help="scenario JSON file")
        if name in ("validate", "basin", "simulate"):
            cmd.add_argument("--out", help="output directory")
        if name == "simulate":
            _add_integrator_flags(cmd)
            cmd.add_argument(
                "--require-converged",
                action="store_true",
                help="exit 2 when the endpoint fails steady-state verification",
            )
        if name == "basin":
            cmd.add_argument("--magnitudes", type=float, nargs="+", help="perturbation sizes to probe")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    for name, module_path, func_name, _ in COMMAND_DEFS:
        if name == args.command:
            return int(_resolve(module_path, func_name)(args))
    return 2


if __name__ == "__main__":
    sys.exit(main())
