"""Command line experiments.

Every run resolves flags and an optional flat JSON config into one dict,
writes it to manifest.json next to its CSV/JSON/OBJ outputs, and exits with

    0  every check of the run passed
    1  a check failed (results are still written)
    2  invalid configuration
    3  numerical divergence
"""
from __future__ import annotations

import argparse
import json
import math
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .energy import CSV_FIELDS, NonFiniteSample, gagliardo_seminorm_p, grad_energy
from .export import csv_text, pieces_obj, pieces_svg, polylines_obj, write_json, write_text
from .fields import (build_rigid_map, compose_with_diffeo, constant_field, radial_field, torus_vortex,
                     twisted_vortex, verify_class)
from .grid import Cubication
from .runtime import as_rng
from .targets import Sphere, Torus, target_from_name

EXPERIMENTS = ("project", "uncross", "energy", "retraction-demo", "class-verify")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# schema: key -> (type, default); "ladder" is a list of floats
SCHEMA = {
    "target": (str, "sphere:1"),
    "m": (int, None),
    "l": (int, 1),
    "s": (float, 1.0),
    "p": (float, 1.5),
    "eta": ("ladder", None),
    "mu": ("ladder", None),
    "field": (str, None),
    "tag": (str, None),
    "domain": (str, None),
    "estimator": (str, "monte-carlo"),
    "samples": (int, 50_000),
    "class_samples": (int, 1000),
    "n_shifts": (int, 16),
    "seed": (int, 0),
    "out": (str, "sobomap-out"),
}

DEFAULTS = {
    "project": {"m": 2, "eta": [0.2, 0.1, 0.05], "field": "twisted"},
    "uncross": {"m": 3, "eta": [0.5], "mu": [0.4, 0.2, 0.1, 0.05], "field": "rigid"},
    "energy": {"m": 2, "field": "vortex", "domain": "disk"},
    "retraction-demo": {"m": 3},
    "class-verify": {"m": 3, "eta": [0.5], "field": "rigid", "tag": "rig"},
}

FIELDS = {"twisted", "vortex", "constant", "rigid", "torus"}


def _coerce(key: str, kind, value):
    if kind == "ladder":
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if isinstance(value, (int, float)):
            value = [value]
        if not isinstance(value, list) or not value:
            raise ConfigError(key, "expected a non-empty list of numbers")
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(key, "expected a non-empty list of numbers") from None
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(key, "expected an integer")
        try:
            return int(value)
        except ValueError:
            raise ConfigError(key, "expected an integer") from None
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(key, "expected a number")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, "expected a number") from None
    if not isinstance(value, str):
        raise ConfigError(key, "expected a string")
    return value


def resolve(experiment: str, flags: dict, config: dict | None) -> dict:
    """Defaults, then flags, then the config file; validated."""
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {experiment!r}")
    out = {k: d for k, (_, d) in SCHEMA.items()}
    out.update(DEFAULTS[experiment])
    for src in (flags, config or {}):
        for key, value in src.items():
            if key == "experiment":
                if value != experiment:
                    raise ConfigError("experiment", f"config is for {value!r}, not {experiment!r}")
                continue
            if key not in SCHEMA:
                raise ConfigError(key, "unknown field")
            if value is None:
                continue
            out[key] = _coerce(key, SCHEMA[key][0], value)
    out["experiment"] = experiment
    validate(out)
    return out


def validate(cfg: dict) -> None:
    exp = cfg["experiment"]
    try:
        target_from_name(cfg["target"])
    except ValueError as e:
        raise ConfigError("target", str(e)) from None
    if cfg["p"] < 1:
        raise ConfigError("p", "p >= 1 required")
    if cfg["s"] <= 0:
        raise ConfigError("s", "s > 0 required")
    if cfg["samples"] < 100:
        raise ConfigError("samples", "samples >= 100 required")
    if cfg["field"] is not None and cfg["field"] not in FIELDS:
        raise ConfigError("field", f"expected one of {sorted(FIELDS)}")
    for i, mu in enumerate(cfg["mu"] or []):
        if not 0 < mu < 0.5:
            raise ConfigError(f"mu[{i}]", "mu < 1/2 and mu > 0 required")
    for i, eta in enumerate(cfg["eta"] or []):
        if eta <= 0:
            raise ConfigError(f"eta[{i}]", "eta > 0 required")
        if exp in ("uncross", "class-verify"):
            n = 1 / eta
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(f"eta[{i}]", "eta = 1/n required")
    if exp == "project":
        if cfg["n_shifts"] < 16:
            raise ConfigError("n_shifts", "n_shifts >= 16 required")
        if cfg["m"] not in (1, 2):
            raise ConfigError("m", "projection runs support m in {1, 2}")
    if exp == "uncross" and not 0 <= cfg["l"] < cfg["m"]:
        raise ConfigError("l", "0 <= l < m required")
    if exp == "class-verify" and cfg["tag"] not in ("rig", "cros", "uncr", "smooth"):
        raise ConfigError("tag", "expected one of rig, cros, uncr, smooth")


def version_string() -> str:
    """Package version plus `git describe` when run from a checkout."""
    try:
        here = Path(__file__).resolve().parent
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here, capture_output=True,
                              text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def _field(cfg: dict, m: int):
    name = cfg["field"]
    t = target_from_name(cfg["target"])
    if name == "twisted":
        return twisted_vortex()
    if name == "vortex":
        return radial_field(m)
    if name == "torus":
        return torus_vortex()
    if name == "constant":
        return constant_field(m, [1.0] + [0.0] * (t.ambient_dim - 1), t)
    c = Cubication(m, Fraction(1, round(1 / cfg["eta"][0])))
    return build_rigid_map(c, cfg["l"], t)


def _row(report, experiment_id: str, seed) -> dict:
    return report.csv_row(experiment_id, seed)


# experiments -------------------------------------------------------------------------

def run_project(cfg: dict, out: Path) -> bool:
    from .project import projection_pipeline

    t = target_from_name(cfg["target"])
    u = _field(cfg, cfg["m"])
    rows, summary = [], []

    def on_step(st):
        rows.append(_row(st.distance, f"project/eta={st.eta:g}", cfg["seed"]))
        pieces = st.field.singular
        write_text(out / f"preimage_eta{st.eta:g}.obj", pieces_obj(pieces, "preimage"))
        if cfg["m"] == 2:
            write_text(out / f"preimage_eta{st.eta:g}.svg", pieces_svg(pieces))
        summary.append({**st.row(), "shift": st.field.descriptor["shift"], "preimage": st.field.preimage.to_dict(),
                        "class_message": st.report.message})

    steps = projection_pipeline(u, t, cfg["s"], cfg["p"], cfg["eta"], n_shifts=cfg["n_shifts"],
                                samples=cfg["samples"], distance_samples=4 * cfg["samples"],
                                rng=cfg["seed"], on_step=on_step)
    write_text(out / "ladder.csv", csv_text(rows, list(CSV_FIELDS)))
    d = [st.distance.value for st in steps]
    e = [st.distance.stderr for st in steps]
    decreasing = all(d[i + 1] < d[i] + 2 * math.hypot(e[i], e[i + 1]) for i in range(len(d) - 1))
    classes = all(st.report.passed for st in steps)
    write_json(out / "steps.json", {"steps": summary, "decreasing": decreasing, "classes": classes})
    return decreasing and classes


def run_uncross(cfg: dict, out: Path) -> bool:
    from .shrink import ladder_decreasing, uncross_and_shrink_pipeline

    t = target_from_name(cfg["target"])
    c = Cubication(cfg["m"], Fraction(1, round(1 / cfg["eta"][0])))
    u = build_rigid_map(c, cfg["l"], t)
    rows, summary = [], []

    def on_step(st):
        rows.append(_row(st.distance, f"uncross/mu={st.mu:g}", cfg["seed"]))
        write_text(out / f"singular_mu{st.mu:g}.obj", pieces_obj(st.field.singular, "singular"))
        summary.append({**st.row(), "class_message": st.report.message, "band_sups": st.report.band_sups})

    steps = uncross_and_shrink_pipeline(u, c, cfg["l"], cfg["s"], cfg["p"], cfg["mu"], samples=cfg["samples"],
                                        class_samples=cfg["class_samples"], rng=cfg["seed"],
                                        on_step=on_step, strict=False)
    write_text(out / "ladder.csv", csv_text(rows, list(CSV_FIELDS)))
    d = [st.distance.value for st in steps]
    decreasing = ladder_decreasing(d, [st.distance.stderr for st in steps])
    classes = all(st.report.passed for st in steps)
    write_json(out / "pipeline.json", {"steps": summary, "decreasing": decreasing, "classes": classes})
    return decreasing and classes


def run_energy(cfg: dict, out: Path) -> bool:
    u = _field(cfg, cfg["m"])
    k = int(math.floor(cfg["s"]))
    sigma = cfg["s"] - k
    domain = cfg["domain"] or "cube"
    if sigma > 0:
        rep = gagliardo_seminorm_p(u, sigma, cfg["p"], domain, samples=cfg["samples"], rng=cfg["seed"], k=k)
    else:
        rep = grad_energy(u, k, cfg["p"], domain, estimator=cfg["estimator"], samples=cfg["samples"],
                          rng=cfg["seed"])
    if rep.diverged:
        raise ArithmeticError(f"{rep.quantity} diverged; stratum contributions {rep.strata}")
    write_text(out / "energy.csv", csv_text([_row(rep, f"energy/{cfg['field']}", cfg["seed"])], list(CSV_FIELDS)))
    write_json(out / "energy.json", rep.to_dict())
    return math.isfinite(rep.value)


def run_retraction(cfg: dict, out: Path) -> bool:
    from .uncross import edge_skeleton_points, model_retraction_g, singular_components

    g = model_retraction_g()
    edges = edge_skeleton_points()
    fix = float(np.abs(g(edges) - edges).max())
    comps = singular_components(g.singular)
    lines = []
    for ax in range(3):
        others = [i for i in range(3) if i != ax]
        for s1 in (-1, 1):
            for s2 in (-1, 1):
                a, b = np.zeros(3), np.zeros(3)
                a[ax], b[ax] = -1, 1
                a[others[0]] = b[others[0]] = s1
                a[others[1]] = b[others[1]] = s2
                lines.append((len(lines), np.stack([a, b])))
    write_text(out / "retraction_singular.obj", pieces_obj(g.singular, "segment"))
    write_text(out / "edge_skeleton.obj", polylines_obj(lines, "edge"))
    ok = comps == 5 and fix <= 1e-9
    write_json(out / "retraction.json", {"components": comps, "edge_fix_error": fix, "apex": g.apex})
    return ok


def run_class_verify(cfg: dict, out: Path) -> bool:
    from .uncross import build_phi_general

    u = _field(cfg, cfg["m"])
    rng = as_rng(cfg["seed"])
    info = {"field": cfg["field"]}
    if cfg["mu"]:
        c = Cubication(cfg["m"], Fraction(1, round(1 / cfg["eta"][0])))
        phi = build_phi_general(c, cfg["l"], cfg["mu"][0])
        u = compose_with_diffeo(u, phi)
        info["mu"] = cfg["mu"][0]
    rep = verify_class(u, cfg["tag"], samples_per_band=cfg["class_samples"], rng=rng)
    info.update({"tag": rep.class_tag, "passed": rep.passed, "constants": rep.constants,
                 "band_sups": rep.band_sups, "crossings": rep.crossing_count, "message": rep.message})
    write_json(out / "class.json", info)
    return rep.passed


RUNNERS = {"project": run_project, "uncross": run_uncross, "energy": run_energy,
           "retraction-demo": run_retraction, "class-verify": run_class_verify}


# entry point -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sobomap", description="Density experiments for manifold-valued maps.")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat JSON config; its values override flags")
        for key, (kind, _) in SCHEMA.items():
            flag = "--" + key.replace("_", "-")
            alias = ["--ell"] if key == "l" else []
            sp.add_argument(flag, *alias, dest=key, default=None,
                            help="comma separated list" if kind == "ladder" else None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("experiment", "config") and v is not None}
    try:
        config = None
        if args.config:
            try:
                config = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError("config", str(e)) from None
            if not isinstance(config, dict):
                raise ConfigError("config", "expected a JSON object")
        cfg = resolve(args.experiment, flags, config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    out = Path(cfg["out"])
    write_json(out / "manifest.json", {"config": cfg, "version": version_string()})
    try:
        ok = RUNNERS[cfg["experiment"]](cfg, out)
    except (ArithmeticError, NonFiniteSample) as e:
        write_json(out / "divergence.json", {"error": type(e).__name__, "detail": str(e)})
        print(f"numerical divergence: {e}", file=sys.stderr)
        return 3
    print(f"{cfg['experiment']}: {'PASS' if ok else 'FAIL'} ({out})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
