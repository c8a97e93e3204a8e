"""Command-line entry point.

Every command writes JSON (or CSV for trajectories) with sorted keys and a
``"schema": 1`` tag.  Exit codes: 0 success, 1 failed invariant, 2 input
error.  Options may also come from a TOML file (``--config``) whose tables
are named after the commands; flags given on the command line win.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click
import numpy as np
import tomli

from . import borel_laplace as bl
from .formal_normalization import ConfigError, run_pipeline, verify_conjugacy, symplectic_defect
from .painleve import check_transversally_hamiltonian, p1_field
from .saddle_node import FieldShapeError, SaddleNodeField, classify
from .sectorial import (
    SectorGeometry,
    SectorialField,
    StabilityViolation,
    formal_homological,
    homological_path_integral,
    integrate_flow,
    lie_residual,
)
from .series_core import SeriesError, UniSeries

SCHEMA = 1
EXIT_OK, EXIT_INVARIANT, EXIT_INPUT = 0, 1, 2
TOL_RESIDUAL = 1e-8


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


def _cplx(z: complex) -> dict:
    return {"re": float(np.real(z)), "im": float(np.imag(z))}


def _load_json(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _load_field(path: str) -> SaddleNodeField:
    data = _load_json(path)
    try:
        return SaddleNodeField.from_json_dict(data)
    except (FieldShapeError, SeriesError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _emit(report: dict, out: str | None) -> None:
    report = {"schema": SCHEMA, **report}
    text = json.dumps(report, sort_keys=True, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        click.echo(text)


def _check(name: str, value: float, tol: float) -> dict:
    return {"name": name, "value": float(value), "tolerance": tol, "passed": bool(value <= tol)}


def _finish(report: dict, out: str | None) -> None:
    _emit(report, out)
    if not all(c["passed"] for c in report.get("checks", [])):
        sys.exit(EXIT_INVARIANT)


@click.group()
@click.option("--config", type=click.Path(dir_okay=False), default=None, help="TOML file with per-command tables.")
@click.pass_context
def main(ctx: click.Context, config: str | None) -> None:
    """Normal forms of doubly-resonant saddle-nodes."""
    if config:
        try:
            with open(config, "rb") as fh:
                table = tomli.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read {config}: {exc.strerror}") from exc
        except tomli.TOMLDecodeError as exc:
            raise InputError(f"{config}: {exc}") from exc
        ctx.default_map = {k: {kk.replace("-", "_"): vv for kk, vv in v.items()} for k, v in table.items()}


# ---------------------------------------------------------------------------
# normalize
# ---------------------------------------------------------------------------


def _pipeline_report(Y: SaddleNodeField, order: int, ydeg: int | None) -> tuple[dict, object]:
    try:
        res = run_pipeline(Y, order, D=ydeg)
    except ConfigError as exc:
        raise InputError(str(exc)) from exc
    resid = verify_conjugacy(Y, res.map, res.Y_N, x_below=order)
    report = {
        "normal_form": res.data.to_json_dict(),
        "map": res.map.to_json_dict(),
        "residual_max": resid.max_abs,
        "provenance": list(res.map.provenance),
        "checks": [
            _check("conjugacy_residual", resid.max_abs, TOL_RESIDUAL),
        ],
    }
    return report, res


@main.command()
@click.option("--input", "input_", required=True, type=str, help="Field JSON.")
@click.option("--order", "-N", type=int, default=4, show_default=True)
@click.option("--ydeg", "-D", type=int, default=None, help="y-degree (defaults to the input's).")
@click.option("--out", type=str, default=None)
def normalize(input_: str, order: int, ydeg: int | None, out: str | None) -> None:
    """Formal normalization up to O(x^N)."""
    if order < 1:
        raise InputError("order must be at least 1")
    Y = _load_field(input_)
    report, res = _pipeline_report(Y, order, ydeg)
    report["c1_plus_c2_max"] = (res.data.c1 + res.data.c2).max_abs()
    _finish(report, out)


# ---------------------------------------------------------------------------
# borel
# ---------------------------------------------------------------------------


def _parse_series(path: str) -> UniSeries:
    data = _load_json(path)
    coeffs = data.get("coefficients") if isinstance(data, dict) else data
    if not isinstance(coeffs, list) or not coeffs:
        raise InputError(f"{path}: expected a non-empty coefficient list")
    out = []
    for i, c in enumerate(coeffs):
        try:
            if isinstance(c, dict):
                out.append(complex(float(c.get("re", 0.0)), float(c.get("im", 0.0))))
            elif isinstance(c, list):
                out.append(complex(float(c[0]), float(c[1])))
            else:
                out.append(complex(float(c)))
        except (TypeError, ValueError, IndexError) as exc:
            raise InputError(f"{path}: coefficient #{i}: {exc}") from exc
    return UniSeries(out)


def _parse_point(text: str) -> complex:
    p = Path(text)
    if p.suffix == ".json" and p.exists():
        v = _load_json(text)
        if isinstance(v, dict):
            return complex(float(v.get("re", 0.0)), float(v.get("im", 0.0)))
        return complex(float(v))
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError as exc:
        raise InputError(f"cannot parse evaluation point {text!r}") from exc


@main.command()
@click.option("--series", required=True, type=str, help="Coefficient JSON.")
@click.option("--kind", type=click.Choice(["bis", "plain"]), default="bis", show_default=True)
@click.option("--pade", type=str, default=None, help="p,q")
@click.option("--direction", type=float, default=0.0, show_default=True)
@click.option("--eval", "eval_", required=True, type=str, help="Point or JSON file.")
@click.option("--beta", type=float, default=1.0, show_default=True, help="Weight for the reported norm.")
@click.option("--out", type=str, default=None)
def borel(series: str, kind: str, pade: str | None, direction: float, eval_: str, beta: float, out: str | None) -> None:
    """Borel-Pade-Laplace sum of a series at one point."""
    f = _parse_series(series)
    x = _parse_point(eval_)
    order = None
    if pade:
        try:
            p, q = (int(s) for s in pade.split(","))
        except ValueError as exc:
            raise InputError(f"--pade expects p,q, got {pade!r}") from exc
        order = (p, q)
    # both conventions define the same sum; ``kind`` only selects the reported norm
    bs = bl.borel(f, "B_bis")
    try:
        cont = bl.pade_continue(bs, order)
        value = bl.laplace_sum(bl.BorelSeries(bs.coeffs, "B_bis", bs.constant, cont), direction, x)
    except bl.BorelError as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)}, out)
        sys.exit(EXIT_INVARIANT)
    norm = bl.weighted_norm(
        f, bl.WeightedNormParams(beta, bl.Direction(direction)), "bis" if kind == "bis" else "plain"
    )
    _emit(
        {
            "value": _cplx(value),
            "pole_report": cont.pole_report(),
            "norm": {"beta": beta, "value": norm.value, "refinement_change": norm.refinement_change},
        },
        out,
    )


# ---------------------------------------------------------------------------
# sector
# ---------------------------------------------------------------------------


def _parse_base(text: str) -> np.ndarray:
    try:
        v = [float(s) for s in text.split(",")]
    except ValueError as exc:
        raise InputError(f"--base: {exc}") from exc
    if len(v) != 6:
        raise InputError("--base expects six numbers x0r,x0i,y1r,y1i,y2r,y2i")
    return np.array([complex(v[0], v[1]), complex(v[2], v[3]), complex(v[4], v[5])])


@main.command()
@click.option("--input", "input_", required=True, type=str, help="Field JSON.")
@click.option("--order", "-N", type=int, default=2, show_default=True)
@click.option("--base", required=True, type=str, help="x0r,x0i,y1r,y1i,y2r,y2i (original coordinates)")
@click.option("--sign", type=click.Choice(["1", "-1"]), default="1", show_default=True)
@click.option("--t-end", type=float, default=None)
@click.option("--x-min-factor", type=float, default=0.25, show_default=True)
@click.option("--emit", type=str, default=None, help="Trajectory CSV.")
@click.option("--residual-check", is_flag=True, help="Homological residual at the base point.")
@click.option("--out", type=str, default=None)
def sector(
    input_: str, order: int, base: str, sign: str, t_end: float | None, x_min_factor: float,
    emit: str | None, residual_check: bool, out: str | None,
) -> None:
    """Flow of the prepared field from a base point."""
    Y = _load_field(input_)
    p = _parse_base(base)
    try:
        res = run_pipeline(Y, order + 2)
    except ConfigError as exc:
        raise InputError(str(exc)) from exc
    fld = SectorialField.from_prepared(res.data.lam, res.data.a1, res.data.a2, res.D, res.R)
    geom = SectorGeometry.auto(fld.a, sign=int(sign), fld=fld)
    q = p.copy()
    q[0] = complex(fld.to_rotated(p[0]))
    report: dict = {
        "geometry": {
            "r": geom.r, "epsilon": geom.epsilon, "omega": geom.omega, "omega_prime": geom.omega_prime,
            "mu": geom.mu, "delta": geom.delta, "delta_prime": geom.delta_prime, "sign": geom.sign,
            "r_prime": geom.r_prime,
        },
        "rotation": _cplx(fld.lam),
        "checks": [],
    }
    try:
        tr = integrate_flow(fld, q, geom, t_end=t_end, x_min=None if t_end else x_min_factor * abs(q[0]))
    except StabilityViolation as exc:
        report["checks"].append({"name": "stability", "passed": False, "t": exc.t})
        _finish(report, out)
        return
    report["checks"].append({"name": "stability", "passed": True, "t": float(tr.times[-1])})
    if emit:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "re_x", "im_x", "re_y1", "im_y1", "re_y2", "im_y2", "in_sigma", "in_theta", "in_omega"])
        for t, s, f in zip(tr.times, tr.states, tr.flags):
            x = complex(fld.from_rotated(s[0]))
            w.writerow(
                [f"{t:.12e}", f"{x.real:.12e}", f"{x.imag:.12e}", f"{s[1].real:.12e}", f"{s[1].imag:.12e}",
                 f"{s[2].real:.12e}", f"{s[2].imag:.12e}", int(f.in_sigma),
                 int(f.in_theta_plus or f.in_theta_minus), int(f.in_omega)]
            )
        Path(emit).write_text(buf.getvalue())
    if residual_check:
        A = (-fld.R).mul_x(-(order + 2))
        M = order + 1
        formal = formal_homological(fld, A, M)
        val = homological_path_integral(A, M, fld, q, geom, formal=formal)
        alpha = lambda x, y1, y2: homological_path_integral(A, M, fld, [x, y1, y2], geom, formal=formal).value  # noqa: E731
        target = q[0] ** (M + 1) * complex(A(q[0], q[1], q[2]))
        rel = lie_residual(alpha, fld, q, target)
        report["path_integral"] = {"value": _cplx(val.value), "tail": _cplx(val.tail), "tail_error": val.tail_error}
        report["checks"].append(_check("homological_residual", rel, 1e-6))
    _finish(report, out)


# ---------------------------------------------------------------------------
# painleve
# ---------------------------------------------------------------------------


@main.command()
@click.option("--demo", is_flag=True, required=True, help="Run the full worked example.")
@click.option("--order", "-N", type=int, default=4, show_default=True)
@click.option("--out", type=str, default=None)
def painleve(demo: bool, order: int, out: str | None) -> None:
    """Painleve I at infinity: build, classify, normalize, check."""
    Y = p1_field()
    cls = classify(Y)
    cert = check_transversally_hamiltonian(Y)
    report, res = _pipeline_report(Y, order, None)
    d = res.data
    sdef = symplectic_defect(res.map, order)
    report["classification"] = cls
    report["hamiltonian"] = {"is_hamiltonian": cert.is_hamiltonian, "max_offending": cert.max_offending}
    report["checks"] += [
        _check("residue_minus_one", abs(d.residue - 1), 1e-9),
        _check("a1_plus_a2_minus_one", abs(d.a1 + d.a2 - 1), 1e-9),
        _check("c1_plus_c2", (d.c1 + d.c2).max_abs(), 1e-8),
        _check("symplectic_defect", sdef, 1e-8),
        {"name": "transversally_hamiltonian", "passed": bool(cert.is_hamiltonian), "value": cert.max_offending},
    ]
    _finish(report, out)


if __name__ == "__main__":  # pragma: no cover
    main()
