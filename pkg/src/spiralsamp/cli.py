"""Command-line front end.

Every subcommand writes its CSV/JSON artifacts plus ``manifest.json`` into
``--out``.  ``--config file.json`` supplies the same keys as the flags and
wins over them.  Exit status: 0 success, 2 rejected input, 3 a computed
check failed; failures print one JSON line on stderr.
"""
from __future__ import annotations

import csv
import json
import math
import platform
import sys
import time
from importlib.metadata import version as _dist_version
from pathlib import Path

import click
import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import ConstantViolationError, NumericalError, ParameterDomainError, SpiralSampError, ValidationError

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

KINDS = click.Choice(["spiral", "circles", "lines"])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(type(o).__name__)


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _load_config(path, command, allowed):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterDomainError("config file unreadable", path=str(path), reason=str(exc)) from exc
    if not isinstance(doc, dict):
        raise ParameterDomainError("config must be a JSON object")
    if "params" in doc or "command" in doc:
        extra = set(doc) - {"command", "params", "output_path", "seed"}
        if extra:
            raise ParameterDomainError("unknown config keys", keys=sorted(extra))
        if doc.get("command", command) != command:
            raise ParameterDomainError("config is for another command", command=doc["command"])
        flat = dict(doc.get("params", {}))
        if "output_path" in doc:
            flat["out"] = doc["output_path"]
        if "seed" in doc:
            flat["seed"] = doc["seed"]
    else:
        flat = dict(doc)
    flat = {k.replace("-", "_"): v for k, v in flat.items()}
    unknown = set(flat) - allowed
    if unknown:
        raise ParameterDomainError("unknown config keys", keys=sorted(unknown), allowed=sorted(allowed))
    return flat


def _versions():
    return {
        "spiralsamp": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "click": _dist_version("click"),
        "python": platform.python_version(),
    }


def _run(command: str, params: dict, body):
    """Merge config, run ``body(params, outdir)`` and write the manifest."""
    allowed = set(params) - {"config"}
    cfg_path = params.pop("config", None)
    if cfg_path is not None:
        over = _load_config(cfg_path, command, allowed)
        for k, v in over.items():
            if isinstance(params.get(k), tuple) and not isinstance(v, list):
                v = [v]
            params[k] = tuple(v) if isinstance(v, list) else v
    out = Path(params.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with threadpool_limits(limits=params.get("threads")):
        result = body(params, out) or {}
    wall = time.perf_counter() - t0
    manifest = {
        "command": command,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(params.items())},
        "seed": params.get("seed"),
        "versions": _versions(),
        "constants": result.get("constants", {}),
        "results": result.get("results", {}),
        "outputs": sorted(result.get("outputs", [])) + ["manifest.json"],
        "wall_time_s": wall,
    }
    _write_json(out / "manifest.json", manifest)
    if result.get("failure"):
        raise ConstantViolationError(result["failure"], out=str(out))


def _options(*opts):
    def deco(f):
        for o in reversed(opts):
            f = o(f)
        return f

    return deco


_common = _options(
    click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True, help="Output directory."),
    click.option("--seed", type=int, default=0, show_default=True, help="Seed for random ensembles."),
    click.option("--threads", type=click.IntRange(min=1), default=None, help="Cap on BLAS/FFT worker threads."),
    click.option("--config", type=click.Path(dir_okay=False), default=None, help="JSON file overriding flags."),
)
_kind = click.option("--kind", type=KINDS, default="spiral", show_default=True)
_eta = click.option("--eta", type=float, default=1.0, show_default=True, help="Spacing of the curve.")
_theta0 = click.option("--theta0", type=float, default=0.0, show_default=True)
_window = click.option("--window", "--R", "window", type=float, default=10.0, show_default=True, help="Window R.")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="spiralsamp")
def cli():
    """Fourier sampling along spirals: experiments and checks."""


def _trajectory(kind, eta, theta0, direction=None, tau=None):
    from .trajectory import make_trajectory

    params = {"eta": eta}
    if kind == "spiral":
        params["theta0"] = theta0
    if kind == "lines":
        params = {"direction": direction or (0.0, 1.0), "tau": tau or eta}
    return make_trajectory(kind, params)


@cli.command("trajectory-export")
@_kind
@_eta
@_theta0
@_window
@click.option("--max-step", type=float, default=None, help="Largest arc length per panel.")
@_common
def trajectory_export(**params):
    """Arc-length quadrature nodes of the clipped curve."""

    def body(p, out):
        from .trajectory import arc_quadrature, write_quadrature_csv

        traj = _trajectory(p["kind"], p["eta"], p["theta0"])
        q = arc_quadrature(traj, p["window"], max_step=p["max_step"])
        write_quadrature_csv(q, out / "trajectory.csv")
        return {
            "outputs": ["trajectory.csv"],
            "results": {"nodes": len(q), "arc_length": q.total_weight},
            "constants": {"trajectory": traj.describe()},
        }

    _run("trajectory-export", params, body)


@cli.command()
@_kind
@_eta
@_theta0
@_window
@click.option("--probe-mesh", type=float, default=None, help="Probe spacing (default eta/100).")
@_common
def gap(**params):
    """Largest hole of the curve inside the window."""

    def body(p, out):
        from .trajectory import gap_estimate

        traj = _trajectory(p["kind"], p["eta"], p["theta0"])
        g = gap_estimate(traj, p["window"], p["probe_mesh"])
        _write_csv(
            out / "gap.csv",
            ["kind", "eta", "window", "probe_mesh", "gap", "error_bar", "x", "y"],
            [[p["kind"], p["eta"], p["window"], g.error_bar, g.gap, g.error_bar, *g.location]],
        )
        return {"outputs": ["gap.csv"], "results": {"gap": g.gap, "error_bar": g.error_bar}}

    _run("gap", params, body)


@cli.command("weak-limit")
@_kind
@_eta
@_theta0
@_window
@click.option("--n", type=click.IntRange(min=0), default=0, show_default=True, help="Translate index.")
@_common
def weak_limit(**params):
    """Per-crossing distance of the n-th translate to the vertical lattice."""

    def body(p, out):
        from .trajectory import crossing_deviations, weak_limit_deviation

        traj = _trajectory(p["kind"], p["eta"], p["theta0"])
        R = p["window"]
        k, dev = crossing_deviations(traj, p["n"], R)
        rows = [[int(kk), float(d), 33.0 * R * R / kk if kk > 0 else math.inf] for kk, d in zip(k, dev)]
        _write_csv(out / "weak_limit.csv", ["k", "deviation", "bound"], rows)
        worst = weak_limit_deviation(traj, p["n"], R)
        return {
            "outputs": ["weak_limit.csv"],
            "results": {"max_deviation": worst, "crossings": len(rows), "n": p["n"]},
        }

    _run("weak-limit", params, body)


@cli.command()
@_kind
@_eta
@_theta0
@click.option("--cone-beta", type=float, default=0.0, show_default=True, help="Cone axis angle in turns.")
@click.option("--cone-alpha", type=float, default=0.05, show_default=True, help="Cone half-aperture in turns.")
@click.option("--k-min", type=int, default=10, show_default=True)
@click.option("--k-max", type=int, default=60, show_default=True)
@_common
def classify(**params):
    """Estimate the spiraling parameters on a cone."""

    def body(p, out):
        from .trajectory import classify_spiraling

        traj = _trajectory(p["kind"], p["eta"], p["theta0"])
        rep = classify_spiraling(traj, p["cone_beta"], p["cone_alpha"], range(p["k_min"], p["k_max"] + 1))
        doc = {
            "alpha": rep.alpha,
            "beta": rep.beta,
            "rho0": rep.rho0,
            "eta_fit": rep.eta_fit,
            "velocity": rep.velocity,
            "tau": rep.tau,
            "curvature_tail": rep.curvature_tail,
            "monotone_from": rep.monotone_from,
            "residuals": rep.residuals,
        }
        _write_json(out / "classify.json", doc)
        return {"outputs": ["classify.json"], "results": doc}

    _run("classify", params, body)


def _resolve_eta(p):
    from .witness import eta_from_epsilon

    if p.get("eta_from_eps") is not None:
        return eta_from_epsilon(p["eta_from_eps"])
    if p.get("epsilon") is not None:
        return eta_from_epsilon(p["epsilon"])
    if p.get("eta") is None:
        raise ParameterDomainError("give --eta, --epsilon or --eta-from-eps")
    return p["eta"]


@cli.command()
@click.option("--eta", type=float, default=None, help="Spacing; must exceed sqrt(2)/2.")
@click.option("--epsilon", type=float, default=None, help="Undersampling factor.")
@click.option("--eta-from-eps", type=float, default=None, help="Set eta = (1+eps) sqrt(2)/2.")
@click.option("--zeta", type=float, default=0.2, show_default=True, help="Target sampled level.")
@click.option("--kind", type=click.Choice(["spiral", "circles"]), default="spiral", show_default=True)
@click.option("--grid", type=int, default=512, show_default=True, help="Witness grid size.")
@click.option(
    "--window", "--R", "window", type=float, default=None, help="Sampling window (default: past the bump tail)."
)
@_common
def witness(**params):
    """Build a witness and check its four guarantees."""

    def body(p, out):
        from .fourier import default_bump
        from .witness import build_witness, class_lambda, witness_checks, witness_quadrature

        eta = _resolve_eta(p)
        bump = default_bump()
        lam = class_lambda(eta, p["kind"], seed=p["seed"])
        spec, f = build_witness(eta, p["zeta"], bump=bump, kind=p["kind"], n=p["grid"], lam=lam)
        q = witness_quadrature(spec, bump, window=p["window"])
        rep = witness_checks(f, spec, q, bump)
        _write_json(out / "witness.json", rep.to_dict())
        res = {"outputs": ["witness.json"], "constants": {"spec": spec.to_dict()}, "results": {"pass": rep.passed}}
        if not rep.passed["ii"]:
            res["failure"] = "sampled level exceeds 1.1 zeta"
        elif not rep.ok:
            res["failure"] = "witness check failed: " + ",".join(k for k, v in rep.passed.items() if not v)
        return res

    _run("witness", params, body)


@cli.command("margin-bv")
@click.option("--epsilon", type=float, default=0.2, show_default=True)
@click.option("--zeta", type=float, multiple=True, help="Repeat for a sweep (default 0.2 .. 0.05).")
@click.option("--kind", type=click.Choice(["spiral", "circles"]), default="spiral", show_default=True)
@_common
def margin_bv(**params):
    """Witness margins against their variation."""

    def body(p, out):
        from .margin import bv_summary, margin_upper_bv, write_margin_csv, write_summary_json

        zetas = list(p["zeta"]) or [0.2, 0.15, 0.1, 0.075, 0.05]
        reps = margin_upper_bv(p["epsilon"], zetas, kind=p["kind"], seed=p["seed"])
        summ = bv_summary(reps)
        write_margin_csv(reps, out / "margin_bv.csv")
        write_summary_json(summ, reps, out / "margin_bv.json")
        return {"outputs": ["margin_bv.csv", "margin_bv.json"], "results": summ, "constants": {"C_fit": summ["C_fit"]}}

    _run("margin-bv", params, body)


@cli.command("margin-sparse")
@click.option("--epsilon", type=float, default=0.2, show_default=True)
@click.option("--N", "N", type=int, multiple=True, help="Repeat for a sweep (default 64 .. 4096).")
@click.option("--grid", type=int, default=512, show_default=True, help="Cell grid for the Haar analysis.")
@click.option("--kind", type=click.Choice(["spiral", "circles"]), default="spiral", show_default=True)
@click.option("--window", "--R", "window", type=float, default=32.0, show_default=True, help="Sampling window.")
@_common
def margin_sparse(**params):
    """Margins of N-term, scale-limited Haar approximations of the witnesses."""

    def body(p, out):
        from .margin import margin_upper_sparse, sparse_summary, write_margin_csv, write_summary_json

        g = int(p["grid"])
        if g < 2 or g & (g - 1):
            raise ParameterDomainError("grid must be a power of two", grid=g)
        Ns = list(p["N"]) or [64, 128, 256, 512, 1024, 2048, 4096]
        reps = margin_upper_sparse(
            p["epsilon"], Ns, kind=p["kind"], m=g.bit_length() - 1, window=p["window"], seed=p["seed"]
        )
        summ = sparse_summary(reps)
        write_margin_csv(reps, out / "margin_sparse.csv")
        write_summary_json(summ, reps, out / "margin_sparse.json")
        return {
            "outputs": ["margin_sparse.csv", "margin_sparse.json"],
            "results": summ,
            "constants": {"K0_fit": summ["K0_fit"]},
        }

    _run("margin-sparse", params, body)


@cli.command("nyquist-sweep")
@click.option("--eta", type=float, multiple=True, help="Repeat for several spacings (default 0.6, 0.85).")
@click.option("--window", "--R", "window", type=float, multiple=True, help="Repeat; increasing (default 4, 8, 16).")
@click.option("--n", type=int, default=32, show_default=True, help="Pixels per side of the basis.")
@click.option("--omega", type=click.Choice(["square", "disc"]), default="square", show_default=True)
@click.option("--diameter", type=float, default=math.sqrt(2.0), show_default=True)
@click.option("--max-step", type=float, default=0.5, show_default=True)
@_kind
@_theta0
@_common
def nyquist_sweep(**params):
    """Smallest singular value of the pixel sampling matrix per (eta, R)."""

    def body(p, out):
        from .margin import nyquist_sweep as sweep
        from .margin import write_sweep_csv

        etas = list(p["eta"]) or [0.6, 0.85]
        wins = list(p["window"]) or [4.0, 8.0, 16.0]
        rows = sweep(
            etas, wins, n_side=p["n"], omega=p["omega"], diameter=p["diameter"], kind=p["kind"],
            max_step=p["max_step"], theta0=p["theta0"],
        )
        write_sweep_csv(rows, out / "nyquist_sweep.csv")
        return {
            "outputs": ["nyquist_sweep.csv"],
            "results": {"rows": [[r.eta, r.window, r.sigma_min, r.sigma_max, r.rows] for r in rows]},
        }

    _run("nyquist-sweep", params, body)


def _haar_input(p):
    from .fourier import GridFunction

    if p["input"]:
        path = Path(p["input"])
        f = GridFunction.load(path)
        return f, {"input": str(path)}
    n = p["grid"]
    if p["function"] == "disc":
        f = GridFunction.from_callable(lambda x, y: (np.hypot(x, y) < 0.3).astype(float), n)
    elif p["function"] == "half":
        f = GridFunction.from_callable(lambda x, y: (x < 0).astype(float), n)
    else:
        f = GridFunction.from_callable(lambda x, y: np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y), n)
    return f, {"function": p["function"]}


@cli.command()
@click.option("--input", type=click.Path(exists=True, dir_okay=False), default=None, help="Grid file (binary).")
@click.option(
    "--function", type=click.Choice(["disc", "half", "cosine"]), default="disc", show_default=True,
    help="Built-in test function when no input is given.",
)
@click.option("--grid", type=int, default=64, show_default=True)
@click.option("--N", "N", type=int, default=None, help="Keep the N largest coefficients.")
@click.option("--J", "J", type=int, default=None, help="Keep scales 0..J.")
@_common
def haar(**params):
    """Haar analysis, N-term thresholding and scale projection of a grid."""

    def body(p, out):
        from .wavelet import (
            discrete_variation,
            haar_analyze,
            haar_synthesize,
            nterm_threshold,
            project_scales,
            write_coefficients_csv,
        )

        f, src = _haar_input(p)
        c = haar_analyze(f)
        a = c
        if p["N"] is not None:
            a = nterm_threshold(a, p["N"])
        if p["J"] is not None:
            a = project_scales(a, p["J"])
        write_coefficients_csv(a, out / "haar_coefficients.csv")
        g = haar_synthesize(a, f.n)
        diff = f.values - g.values
        res = {
            "source": src,
            "n": f.n,
            "norm2": f.norm2(),
            "variation": discrete_variation(f),
            "kept": a.nonzero(),
            "approx_error": float(np.sqrt(np.sum(np.abs(diff) ** 2)) * f.mesh),
        }
        _write_json(out / "haar.json", res)
        return {"outputs": ["haar_coefficients.csv", "haar.json"], "results": res}

    _run("haar", params, body)


def _diagnostic(status, payload):
    sys.stderr.write(json.dumps({"status": status, **payload}, default=_json_default, sort_keys=True) + "\n")
    sys.stderr.flush()


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="spiralsamp", standalone_mode=False)
    except click.exceptions.Abort:
        _diagnostic(EXIT_VALIDATION, {"error": "aborted", "message": "aborted"})
        sys.exit(EXIT_VALIDATION)
    except click.ClickException as exc:
        _diagnostic(EXIT_VALIDATION, {"error": "usage", "message": exc.format_message()})
        sys.exit(EXIT_VALIDATION)
    except ValidationError as exc:
        _diagnostic(EXIT_VALIDATION, {"error": exc.code, "message": str(exc), "details": exc.details})
        sys.exit(EXIT_VALIDATION)
    except NumericalError as exc:
        _diagnostic(EXIT_NUMERICAL, {"error": exc.code, "message": str(exc), "details": exc.details})
        sys.exit(EXIT_NUMERICAL)
    except SpiralSampError as exc:  # pragma: no cover - every error belongs to a family
        _diagnostic(EXIT_NUMERICAL, {"error": exc.code, "message": str(exc), "details": exc.details})
        sys.exit(EXIT_NUMERICAL)
    sys.exit(0)


if __name__ == "__main__":  # pragma: no cover
    main()
