"""Command-line entry point: ``tmsv-bell {sweep-chsh,sweep-parity,wigner-grid,verify}``.

Numbers are written with 12 significant digits in positional notation, so
output files are byte-identical for identical flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import bell_polarization as bp
from . import chsh_optimizer as co
from . import fock_core as fc
from . import tmsv_state as ts
from . import verification
from . import wigner as wg

DEGENERATE = "degenerate"
SUPPORT = "shell"

CHSH_COLUMNS = (
    "zeta",
    "cutoff",
    "tail_mass",
    "S_canonical",
    "S_optimized",
    "normalizer",
    "mean_polarization_A",
    "mean_polarization_B",
)
PARITY_COLUMNS = ("zeta", "parity_numeric", "parity_closed_form", "abs_error")
WIGNER_COLUMNS = ("q_A", "p_A", "q_B", "p_B", "W")


@dataclass
class SweepConfig:
    zeta_values: list[float]
    tail_tolerance: float = 1e-10
    output_format: str = "csv"
    output_path: Optional[str] = None
    seed: int = 0
    support: str = SUPPORT
    optimizer: dict = field(default_factory=lambda: asdict(co.OptimizerConfig()))

    def __post_init__(self):
        if not self.zeta_values:
            raise ValueError("at least one --zeta value is required")
        for z in self.zeta_values:
            if not (math.isfinite(z) and z >= 0):
                raise ValueError(f"zeta values must be finite and >= 0, got {z}")
        if self.output_format not in ("csv", "json"):
            raise ValueError(f"unknown format {self.output_format!r}")
        if not 0 < self.tail_tolerance < 1:
            raise ValueError("--tail-tol must lie in (0, 1)")


def fmt(x) -> str:
    """12 significant digits, positional, locale-independent."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x == 0:
        return "0"
    return np.format_float_positional(x, precision=12, unique=False, fractional=False, trim="-")


# ---------------------------------------------------------------------------
# Row builders
# ---------------------------------------------------------------------------


def chsh_rows(cfg: SweepConfig) -> list[dict]:
    opt_cfg = co.OptimizerConfig(**cfg.optimizer)
    rows = []
    for zeta in cfg.zeta_values:
        trunc = ts.choose_cutoff(zeta, cfg.tail_tolerance, cfg.support)
        state = ts.build_state_schmidt(zeta, trunc, cfg.support)
        kernel = bp.CorrelationKernel(state)
        row = {
            "zeta": zeta,
            "cutoff": trunc.cutoff,
            "tail_mass": state.truncation_error,
            "normalizer": kernel.normalizer,
            "mean_polarization_A": bp.mean_polarization(state, fc.Channel.A),
            "mean_polarization_B": bp.mean_polarization(state, fc.Channel.B),
        }
        if kernel.normalizer <= 0:
            row["S_canonical"] = row["S_optimized"] = DEGENERATE
        else:
            row["S_canonical"] = bp.chsh_value(state, bp.CANONICAL_ANGLES, kernel=kernel).s_value
            row["S_optimized"] = co.optimize(kernel.E, opt_cfg).best.s_value
        rows.append({k: row[k] for k in CHSH_COLUMNS})
    return rows


def parity_rows(cfg: SweepConfig) -> list[dict]:
    rows = []
    for zeta in cfg.zeta_values:
        trunc = ts.choose_cutoff(zeta, cfg.tail_tolerance, cfg.support)
        state = ts.build_state_schmidt(zeta, trunc, cfg.support)
        numeric = bp.parity_expectation(state)
        closed = bp.parity_closed_form(zeta)
        rows.append(
            {
                "zeta": zeta,
                "parity_numeric": numeric,
                "parity_closed_form": closed,
                "abs_error": abs(numeric - closed),
            }
        )
    return rows


def wigner_rows(zeta: float, grid: wg.QuadratureGrid) -> Iterable[tuple]:
    x = grid.axis()
    q_b, p_b = np.meshgrid(x, x, indexing="ij")
    q_b, p_b = q_b.ravel(), p_b.ravel()
    for q_a in x:
        for p_a in x:
            vals = wg.wigner_sector(zeta, complex(q_a, p_a), q_b + 1j * p_b)
            for j in range(q_b.size):
                yield (q_a, p_a, q_b[j], p_b[j], vals[j])


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def _json_value(v) -> str:
    return json.dumps(v) if isinstance(v, str) else fmt(v)


def render_csv(columns: Sequence[str], rows: Iterable[dict | tuple], trailer: str | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        values = [row[c] for c in columns] if isinstance(row, dict) else row
        writer.writerow([fmt(v) for v in values])
    if trailer:
        buf.write(trailer + "\n")
    return buf.getvalue()


def render_json(config: dict, columns: Sequence[str], rows: Iterable[dict | tuple], summary: dict | None = None) -> str:
    lines = ["{", f'  "config": {json.dumps(config, sort_keys=True)},', '  "rows": [']
    body = []
    for row in rows:
        values = [row[c] for c in columns] if isinstance(row, dict) else row
        body.append(
            "    {" + ", ".join(f"{json.dumps(c)}: {_json_value(v)}" for c, v in zip(columns, values)) + "}"
        )
    lines.append(",\n".join(body))
    if summary is None:
        lines.append("  ]")
    else:
        lines.append("  ],")
        items = ", ".join(f"{json.dumps(k)}: {_json_value(v)}" for k, v in summary.items())
        lines.append(f'  "summary": {{{items}}}')
    lines.append("}")
    return "\n".join(lines) + "\n"


def emit(text: str, path: Optional[str]) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise SystemExit(f"cannot write {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _config_dict(cfg: SweepConfig) -> dict:
    out = asdict(cfg)
    out.pop("output_path")
    return out


def cmd_sweep_chsh(cfg: SweepConfig) -> str:
    rows = chsh_rows(cfg)
    if cfg.output_format == "csv":
        text = render_csv(CHSH_COLUMNS, rows)
    else:
        text = render_json(_config_dict(cfg), CHSH_COLUMNS, rows)
    emit(text, cfg.output_path)
    return text


def cmd_sweep_parity(cfg: SweepConfig) -> str:
    rows = parity_rows(cfg)
    if cfg.output_format == "csv":
        text = render_csv(PARITY_COLUMNS, rows)
    else:
        text = render_json(_config_dict(cfg), PARITY_COLUMNS, rows)
    emit(text, cfg.output_path)
    return text


def cmd_wigner_grid(zeta: float, grid: wg.QuadratureGrid, output_format="csv", output_path=None) -> str:
    quad = wg.integrate_wigner(zeta, grid)
    summary = {
        "normalization": quad.total,
        "min_W": quad.minimum,
        "boundary_ratio": quad.boundary_ratio,
        "grid_too_narrow": bool(quad.too_narrow),
    }
    rows = wigner_rows(zeta, grid)
    if output_format == "csv":
        trailer = "# " + ",".join(f"{k}={fmt(v)}" for k, v in summary.items())
        text = render_csv(WIGNER_COLUMNS, rows, trailer)
    else:
        config = {"zeta": zeta, "half_width": grid.half_width, "points": grid.points}
        text = render_json(config, WIGNER_COLUMNS, rows, summary)
    emit(text, output_path)
    return text


def cmd_verify(tail_tolerance: float = 1e-10, seed: int = 0, inject_kx_sign_flip: bool = False, out=None) -> int:
    out = out or sys.stdout
    builder = verification.sign_flipped_kx if inject_kx_sign_flip else fc.build_kx
    results = verification.run_verification(tail_tolerance, seed, builder)
    for r in results:
        out.write(r.line() + "\n")
    failed = sum(not r.passed for r in results)
    out.write(f"{len(results) - failed}/{len(results)} checks passed\n")
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmsv-bell",
        description="Polarization CHSH tests on a product of two two-mode squeezed vacua.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, zeta_required=True):
        p.add_argument("--zeta", type=float, action="append", required=zeta_required,
                       help="squeezing parameter (repeatable)")
        p.add_argument("--tail-tol", type=float, default=1e-10, help="target discarded probability")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--out", default=None, help="output file (default: stdout)")
        p.add_argument("--seed", type=int, default=0)

    common(sub.add_parser("sweep-chsh", help="CHSH value per zeta at canonical and optimized angles"))
    common(sub.add_parser("sweep-parity", help="single-mode parity expectation per zeta"))

    pw = sub.add_parser("wigner-grid", help="dump a 4-d grid of the sector Wigner function")
    common(pw)
    pw.add_argument("--grid-half-width", type=float, default=None,
                    help="default 4*max(1, e^zeta)")
    pw.add_argument("--grid-points", type=int, default=17,
                    help="nodes per axis (odd counts include the origin)")

    pv = sub.add_parser("verify", help="run the full invariant suite")
    common(pv, zeta_required=False)
    pv.add_argument("--inject-kx-sign-flip", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.tail_tol, args.seed, args.inject_kx_sign_flip)
        if args.command == "wigner-grid":
            if len(args.zeta) != 1:
                raise ValueError("wigner-grid takes exactly one --zeta")
            zeta = args.zeta[0]
            half = args.grid_half_width or wg.QuadratureGrid.default(zeta).half_width
            grid = wg.QuadratureGrid(half, args.grid_points)
            cmd_wigner_grid(zeta, grid, args.format, args.out)
            return 0
        cfg = SweepConfig(
            zeta_values=args.zeta,
            tail_tolerance=args.tail_tol,
            output_format=args.format,
            output_path=args.out,
            seed=args.seed,
        )
        if args.command == "sweep-chsh":
            cmd_sweep_chsh(cfg)
        else:
            cmd_sweep_parity(cfg)
        return 0
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
