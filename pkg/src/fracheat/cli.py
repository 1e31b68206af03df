"""Command-line driver: manifest-described experiments and report merging.

Usage:
    fracheat run MANIFEST.json [--out DIR] [--cache use|rebuild] [--threads K]
    fracheat report DIR

A manifest is a JSON object with an experiment ``kind``, a parameter
block, and optionally ``out``/``cache`` defaults (flags win).  Parameters
are validated against the schema below before any computation starts, so
an invalid manifest never leaves partial artifacts.  Outputs are plain CSV
plus JSON sidecars, written atomically, with no timestamps or random
state, so identical manifests reproduce byte-identical artifacts.

Exit codes: 0 success, 1 failing checks in a merged report, 2 invalid
manifest, 3 precondition refusal (for example Green certification at
s <= 1/4).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_FAILCHECK = 1
EXIT_BADMANIFEST = 2
EXIT_REFUSED = 3

_GEOMETRY = {
    "type": "object",
    "properties": {
        "dim": {"enum": [1, 2]},
        "lo": {"type": "array", "items": {"type": "number"}},
        "hi": {"type": "array", "items": {"type": "number"}},
        "padding": {"type": "number", "exclusiveMinimum": 0},
        "n": {"type": "integer", "minimum": 16},
    },
    "required": ["dim", "lo", "hi", "n"],
    "additionalProperties": False,
}

_LADDER = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["uniform", "geometric"]},
        "t_min": {"type": "number", "exclusiveMinimum": 0},
        "t_max": {"type": "number", "exclusiveMinimum": 0},
        "count": {"type": "integer", "minimum": 2},
    },
    "required": ["kind", "t_max", "count"],
    "additionalProperties": False,
}

MANIFEST_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {
            "enum": [
                "assemble",
                "kernel",
                "certify",
                "solve",
                "hypersing",
                "regfit",
                "kpz",
                "report",
            ]
        },
        "out": {"type": "string"},
        "cache": {"enum": ["use", "rebuild"]},
        "geometry": _GEOMETRY,
        "order": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
        "s": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "rho": {"type": "number"},
        "times": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "target": {"enum": ["kernel-gradient", "green-gradient", "comparability"]},
        "coarse_n": {"type": "integer", "minimum": 16},
        "ladder": _LADDER,
        "data": {
            "type": "object",
            "properties": {
                "w0": {"enum": [None, "spike", "eigenmode", "ones"]},
                "w0_mass": {"type": "number"},
                "source": {"enum": [None, "spike", "eigenmode"]},
                "source_amplitude": {"type": "number"},
                "m": {"type": "number", "minimum": 1},
                "sigma": {"type": "number", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "method": {"enum": ["duhamel", "implicit-euler", "both"]},
        "lam": {"type": "number"},
        "alpha": {"type": "number", "exclusiveMinimum": -1},
        "density": {"enum": ["ones", "spike"]},
        "m": {"type": "number", "minimum": 1},
        "p": {"type": "number", "minimum": 1},
        "checks": {"type": "array", "items": {"type": "object"}},
        "q": {"type": "number", "minimum": 1},
        "q_values": {"type": "array", "items": {"type": "number", "minimum": 1}},
        "amplitudes": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "horizons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "amplitude": {"type": "number", "minimum": 0},
        "directory": {"type": "string"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_KIND_REQUIRED = {
    "assemble": ["geometry", "order"],
    "kernel": ["geometry", "s", "times"],
    "certify": ["geometry", "s", "target"],
    "solve": ["geometry", "s", "ladder"],
    "hypersing": ["geometry", "s", "lam", "density", "p", "times"],
    "regfit": ["geometry", "s", "checks"],
    "kpz": ["geometry", "s"],
    "report": ["directory"],
}


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_json(path: Path, payload) -> None:
    _atomic_write(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def validate_manifest(doc) -> list[str]:
    """Schema plus per-kind requirement diagnostics; empty list means valid."""
    import jsonschema

    problems = []
    validator = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)
    for err in sorted(validator.iter_errors(doc), key=str):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        problems.append(f"{where}: {err.message}")
    if problems:
        return problems
    kind = doc["kind"]
    for key in _KIND_REQUIRED[kind]:
        if key not in doc:
            problems.append(f"<root>: kind {kind!r} requires field {key!r}")
    return problems


def _grid(geom):
    from .core import Grid, SpatialDomain

    dom = SpatialDomain(
        geom["dim"], tuple(geom["lo"]), tuple(geom["hi"]), geom.get("padding", 1.0)
    )
    return Grid(dom, geom["n"])


def _ladder(spec):
    import numpy as np

    from .solver import geometric_ladder, uniform_ladder

    if spec["kind"] == "uniform":
        return uniform_ladder(spec["t_max"], spec["count"])
    return geometric_ladder(spec.get("t_min", spec["t_max"] / 64), spec["t_max"], spec["count"])


def _cached_operator(grid, order, cache_dir: Path, policy: str):
    from .fracop import OperatorMatrix, QuadratureScheme, assemble, operator_cache_key

    scheme = QuadratureScheme()
    path = cache_dir / f"op_{operator_cache_key(grid, order, scheme)}.npz"
    if policy == "use" and path.exists():
        return OperatorMatrix.load(path, grid, order, scheme), path, True
    op = assemble(grid, order, scheme)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    op.save(tmp)
    os.replace(tmp, path)
    return op, path, False


def _cached_decomposition(op, cache_dir: Path, policy: str):
    from .kernel import SpectralDecomposition, spectral_decompose

    path = cache_dir / f"dec_{op.key()}.npz"
    if policy == "use" and path.exists():
        return SpectralDecomposition.load(path, op)
    dec = spectral_decompose(op)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    dec.save(tmp)
    os.replace(tmp, path)
    return dec


def _run_assemble(doc, out: Path, cache_dir: Path, policy: str) -> int:
    grid = _grid(doc["geometry"])
    op, path, hit = _cached_operator(grid, doc["order"], cache_dir, policy)
    write_json(
        out / "assemble.json",
        {
            "kind": "assemble",
            "order": doc["order"],
            "n": grid.n,
            "interior_nodes": int(grid.interior_idx.size),
            # file name only: outputs must not depend on the output location
            "cache_file": path.name,
            "cache_hit": hit,
            "pass": True,
        },
    )
    return EXIT_OK


def _run_kernel(doc, out: Path, cache_dir: Path, policy: str) -> int:
    import numpy as np

    from .kernel import heat_kernel

    grid = _grid(doc["geometry"])
    op, _, _ = _cached_operator(grid, 2 * doc["s"], cache_dir, policy)
    dec = _cached_decomposition(op, cache_dir, policy)
    times = sorted(doc["times"])
    rows = []
    masses = []
    for t in times:
        P = heat_kernel(dec, t)
        sym = float(np.max(np.abs(P.values - P.values.T)))
        mass = P.column_mass()
        masses.append(mass)
        rows.append([t, sym, float(mass.max()), float(mass.min())])
    t0, t1 = times[0], times[1] if len(times) > 1 else 2 * times[0]
    P0, P1, P01 = heat_kernel(dec, t0), heat_kernel(dec, t1), heat_kernel(dec, t0 + t1)
    semi = float(
        np.max(np.abs(P01.values - grid.cell_measure * (P0.values @ P1.values)))
        / np.max(np.abs(P01.values))
    )
    mass_decreasing = bool(
        all(np.all(b <= a + 1e-12) for a, b in zip(masses[:-1], masses[1:]))
    )
    write_csv(out / "kernel_mass.csv", ["t", "symmetry_gap", "mass_max", "mass_min"], rows)
    write_json(
        out / "kernel.json",
        {
            "kind": "kernel",
            "s": doc["s"],
            "times": times,
            "semigroup_residual": semi,
            "mass_bounded": bool(max(r[2] for r in rows) <= 1 + 1e-8),
            "mass_decreasing": mass_decreasing,
            "pass": bool(semi <= 1e-8 and mass_decreasing),
        },
    )
    return EXIT_OK


def _run_certify(doc, out: Path, cache_dir: Path, policy: str) -> int:
    from .bounds import (
        certify_comparability,
        certify_green_gradient,
        certify_kernel_gradient,
        with_stability,
    )

    s = doc["s"]
    rho = doc.get("rho", s)
    times = doc.get("times", [0.05, 0.1, 0.2, 0.4])
    target = doc["target"]

    def one(n):
        geom = dict(doc["geometry"], n=n)
        grid = _grid(geom)
        op, _, _ = _cached_operator(grid, 2 * s, cache_dir, policy)
        dec = _cached_decomposition(op, cache_dir, policy)
        if target == "kernel-gradient":
            return certify_kernel_gradient(dec, rho, times)
        if target == "green-gradient":
            return certify_green_gradient(dec, rho)
        return certify_comparability(dec, times)

    fine = one(doc["geometry"]["n"])
    if "coarse_n" in doc:
        coarse = one(doc["coarse_n"])
        fine = with_stability(fine, coarse)
    payload = fine.to_json()
    payload["kind"] = "certify"
    payload["target"] = target
    if fine.stability_ratio is not None:
        payload["pass"] = bool(0.8 <= fine.stability_ratio <= 1.25)
    else:
        payload["pass"] = True
    write_json(out / f"certify_{target}.json", payload)
    return EXIT_OK


def _build_data(grid, dec, data):
    import numpy as np

    from .solver import SourceSpec

    w0 = None
    kind = data.get("w0")
    if kind == "spike":
        w0 = grid.spike(mass=data.get("w0_mass", 1.0))
    elif kind == "eigenmode":
        w0 = dec.mode_field(0)
    elif kind == "ones":
        w0 = grid.field(np.where(grid.interior, 1.0, 0.0))
    source = None
    if data.get("source") == "spike":
        amp = data.get("source_amplitude", 1.0)
        base = grid.spike(mass=1.0).interior_values()
        source = lambda t: amp * base
    elif data.get("source") == "eigenmode":
        amp = data.get("source_amplitude", 1.0)
        base = dec.eigenvectors[:, 0]
        source = lambda t: amp * base
    return SourceSpec(w0=w0, source=source, m=data.get("m", 1.0), sigma=data.get("sigma", 1.0))


def _run_solve(doc, out: Path, cache_dir: Path, policy: str) -> int:
    import numpy as np

    from .solver import solve_duhamel, solve_implicit_euler

    grid = _grid(doc["geometry"])
    op, _, _ = _cached_operator(grid, 2 * doc["s"], cache_dir, policy)
    dec = _cached_decomposition(op, cache_dir, policy)
    ladder = _ladder(doc["ladder"])
    src = _build_data(grid, dec, doc.get("data", {}))
    method = doc.get("method", "duhamel")
    outputs = {}
    if method in ("duhamel", "both"):
        outputs["duhamel"] = solve_duhamel(dec, src, ladder)
    if method in ("implicit-euler", "both"):
        outputs["implicit-euler"] = solve_implicit_euler(op, src, ladder)
    for name, traj in outputs.items():
        rows = []
        for t, fld in zip(traj.times, traj.fields):
            for i in range(grid.node_count):
                rows.append([float(t), i, *map(float, grid.nodes[i]), float(fld.values[i])])
        coords = [f"x{k}" for k in range(grid.dim)]
        write_csv(out / f"solution_{name}.csv", ["t", "index", *coords, "value"], rows)
    summary = {
        "kind": "solve",
        "method": method,
        "ladder": [float(t) for t in ladder],
        "provenance": sorted(outputs),
        "pass": True,
    }
    if len(outputs) == 2:
        gap = max(
            float(np.max(np.abs(a.values - b.values)))
            for a, b in zip(outputs["duhamel"].fields, outputs["implicit-euler"].fields)
        )
        summary["cross_validation_gap"] = gap
    write_json(out / "solve.json", summary)
    return EXIT_OK


def _run_hypersing(doc, out: Path, cache_dir: Path, policy: str) -> int:
    import numpy as np

    from .hypersing import HyperSingularSpec, scaling_slope

    grid = _grid(doc["geometry"])
    if doc["density"] == "ones":
        dens = grid.field(np.where(grid.interior, 1.0, 0.0))
    else:
        dens = grid.spike(mass=1.0)
    spec = HyperSingularSpec(
        s=doc["s"], lam=doc["lam"], alpha=doc.get("alpha", 0.0), density=dens, m=doc.get("m", 1.0)
    )
    res = scaling_slope(spec, doc["p"], doc["times"])
    res["kind"] = "hypersing"
    res["pass"] = bool(abs(res["measured"] - res["predicted"]) <= 0.15)
    write_csv(
        out / "hypersing_norms.csv",
        ["t", "norm"],
        list(zip(res["times"], res["norms"])),
    )
    write_json(out / "hypersing.json", res)
    return EXIT_OK


def _run_regfit(doc, out: Path, cache_dir: Path, policy: str) -> int:
    import numpy as np

    from . import regfit

    grid = _grid(doc["geometry"])
    op, _, _ = _cached_operator(grid, 2 * doc["s"], cache_dir, policy)
    dec = _cached_decomposition(op, cache_dir, policy)
    results = []
    for check in doc["checks"]:
        name = check.get("check")
        window = check.get("window", [0.02, 0.3])
        times = np.geomspace(window[0], window[1], check.get("points", 9))
        if name == "smoothing":
            results.append(
                regfit.smoothing_slope(
                    dec, check["sigma"], check["r"], times, tolerance=check.get("tolerance", 0.1)
                )
            )
        elif name == "weighted-smoothing":
            results.append(
                regfit.weighted_smoothing_slope(
                    dec, check["rho_tilde"], times, tolerance=check.get("tolerance", 0.15)
                )
            )
        elif name == "gradient-smoothing":
            results.append(
                regfit.gradient_regularity_slope(
                    dec,
                    check["sigma"],
                    check.get("rho", doc["s"]),
                    check["p"],
                    times,
                    mode=check.get("mode", "data"),
                    tolerance=check.get("tolerance", 0.2),
                )
            )
        else:
            return _fail(f"unknown regfit check {name!r}", EXIT_BADMANIFEST)
    for i, res in enumerate(results):
        write_json(out / f"regfit_{i}_{results[i]['theorem_tag']}.json", res)
    write_json(
        out / "regfit_summary.json",
        {
            "kind": "regfit",
            "checks": [r["theorem_tag"] for r in results],
            "pass": bool(all(r["pass"] for r in results)),
        },
    )
    return EXIT_OK


def _run_kpz(doc, out: Path, cache_dir: Path, policy: str) -> int:
    import math

    from .kpz import KpzConfig, phase_scan, picard_solve, q_threshold
    from .solver import SourceSpec

    grid = _grid(doc["geometry"])
    s = doc["s"]
    if s <= 0.26:
        return _fail(
            f"fixed-point scans are restricted to s in (0.26, 1); got s={s} "
            "(the s > 1/4 restriction may be technical but is honoured here)",
            EXIT_REFUSED,
        )
    op, _, _ = _cached_operator(grid, 2 * s, cache_dir, policy)
    dec = _cached_decomposition(op, cache_dir, policy)
    if "q_values" in doc:
        res = phase_scan(
            dec,
            doc["q_values"],
            doc.get("amplitudes", [0.05]),
            doc.get("horizons", [0.05]),
            m=doc.get("m", 1.0),
        )
        rows = [
            [c["q"], c["amplitude"], c["T"], c["verdict"],
             "" if c["contraction"] is None else c["contraction"], c["iterations"]]
            for c in res["cells"]
        ]
        write_csv(
            out / "kpz_scan.csv",
            ["q", "amplitude", "T", "verdict", "contraction", "iterations"],
            rows,
        )
        res["kind"] = "kpz"
        res["pass"] = True
        write_json(out / "kpz_scan.json", res)
        return EXIT_OK
    amp = doc.get("amplitude", 0.05)
    spike = grid.spike(mass=1.0)
    cfg = KpzConfig(
        q=doc.get("q", 1.2),
        T=doc.get("T", 0.05),
        f=SourceSpec(source=lambda t: amp * spike.interior_values(), m=doc.get("m", 1.0)),
    )
    _, trace = picard_solve(cfg, dec)
    write_json(
        out / "kpz_case.json",
        {
            "kind": "kpz",
            "q": cfg.q,
            "T": cfg.T,
            "amplitude": amp,
            "threshold_q": q_threshold(s, grid.dim, m=doc.get("m", 1.0)),
            "verdict": trace.verdict,
            "contraction": None
            if math.isnan(trace.contraction_factor)
            else trace.contraction_factor,
            "iterations": trace.iterations,
            "pass": True,
        },
    )
    return EXIT_OK


def _classify(payload) -> tuple[str, bool]:
    tag = payload.get("theorem_tag") or payload.get("quantity") or payload.get("kind", "unknown")
    if "pass" in payload:
        return tag, bool(payload["pass"])
    if "stability_ratio" in payload and payload["stability_ratio"] is not None:
        return tag, bool(0.8 <= payload["stability_ratio"] <= 1.25)
    if "verdict" in payload:
        return tag, payload["verdict"] in ("converged",)
    return tag, True


def run_report(directory: Path, out: Path | None = None) -> int:
    rows = []
    for path in sorted(directory.rglob("*.json")):
        if path.name.endswith(".csv.json") or path.name == "report.json":
            continue
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        if not isinstance(payload, dict):
            continue
        tag, ok = _classify(payload)
        rows.append((str(path.relative_to(directory)), tag, ok))
    n_fail = sum(1 for _, _, ok in rows if not ok)
    table = {
        "kind": "report",
        "directory": directory.name,
        "checks": [{"file": f, "tag": t, "pass": ok} for f, t, ok in rows],
        "total": len(rows),
        "failed": n_fail,
        "pass": n_fail == 0,
    }
    target = (out or directory) / "report.json"
    write_json(target, table)
    for f, t, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {t:28s} {f}")
    print(f"{len(rows) - n_fail}/{len(rows)} checks passed")
    return EXIT_OK if n_fail == 0 else EXIT_FAILCHECK


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


_RUNNERS = {
    "assemble": _run_assemble,
    "kernel": _run_kernel,
    "certify": _run_certify,
    "solve": _run_solve,
    "hypersing": _run_hypersing,
    "regfit": _run_regfit,
    "kpz": _run_kpz,
}


def run_manifest(path: Path, out: Path | None, cache: str | None, cache_dir: Path | None) -> int:
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"cannot parse manifest {path}: {exc}", EXIT_BADMANIFEST)
    problems = validate_manifest(doc)
    if problems:
        for p in problems:
            print(f"manifest {path}: {p}", file=sys.stderr)
        return EXIT_BADMANIFEST
    if doc["kind"] == "report":
        return run_report(Path(doc["directory"]), out)
    out = out or Path(doc.get("out", "fracheat-out"))
    out.mkdir(parents=True, exist_ok=True)
    policy = cache or doc.get("cache", "use")
    cache_dir = cache_dir or Path(os.environ.get("FRACHEAT_CACHE", out / "cache"))
    from .bounds import SRestrictionError

    try:
        return _RUNNERS[doc["kind"]](doc, out, cache_dir, policy)
    except SRestrictionError as exc:
        return _fail(str(exc), EXIT_REFUSED)
    except ValueError as exc:
        return _fail(str(exc), EXIT_BADMANIFEST)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fracheat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute one experiment manifest")
    p_run.add_argument("manifest", type=Path)
    p_run.add_argument("--out", type=Path, default=None)
    p_run.add_argument("--cache", choices=["use", "rebuild"], default=None)
    p_run.add_argument("--cache-dir", type=Path, default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_rep = sub.add_parser("report", help="merge JSON reports in a directory")
    p_rep.add_argument("directory", type=Path)
    p_rep.add_argument("--out", type=Path, default=None)
    args = parser.parse_args(argv)

    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    if args.command == "run":
        return run_manifest(args.manifest, args.out, args.cache, args.cache_dir)
    return run_report(args.directory, args.out)


if __name__ == "__main__":
    sys.exit(main())
