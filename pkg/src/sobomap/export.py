"""Geometry and table writers: OBJ, SVG, JSON and CSV."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .geometry import PieceSet, polyline_points


def _fmt(v: float) -> str:
    return f"{float(v):.10g}"


def pieces_obj(ps: PieceSet, name: str = "singular") -> str:
    """OBJ text with one group per piece label.

    Points become `p` elements, segments `l` elements and 2-dimensional
    pieces quads.  Coordinates are padded to 3 with zeros.
    """
    out = [f"# {name}"]
    n = 0
    by_label: dict[int, list] = {}
    for q in ps.pieces:
        by_label.setdefault(int(q.label), []).append(q)
    for lab in sorted(by_label):
        out.append(f"g {name}_{lab}")
        for q in by_label[lab]:
            if q.k == 0:
                verts = q.origin[None]
            elif q.k == 1:
                verts = polyline_points(q, 2)
            else:
                t, h = q.tangents[:2], q.half_extents[:2]
                corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
                verts = np.array([q.origin + a * h[0] * t[0] + b * h[1] * t[1] for a, b in corners])
            for v in verts:
                w = np.zeros(3)
                w[: min(3, len(v))] = v[:3]
                out.append("v " + " ".join(_fmt(c) for c in w))
            idx = list(range(n + 1, n + 1 + len(verts)))
            n += len(verts)
            tag = {1: "p", 2: "l"}.get(len(idx), "f")
            out.append(tag + " " + " ".join(map(str, idx)))
    return "\n".join(out) + "\n"


def polylines_obj(lines, name: str = "curve") -> str:
    """OBJ text for labelled polylines [(label, (n, m) array), ...]."""
    out = [f"# {name}"]
    n = 0
    for k, (lab, run) in enumerate(lines):
        out.append(f"g {name}_{lab}_{k}")
        for v in run:
            w = np.zeros(3)
            w[: min(3, len(v))] = v[:3]
            out.append("v " + " ".join(_fmt(c) for c in w))
        out.append("l " + " ".join(str(i) for i in range(n + 1, n + 1 + len(run))))
        n += len(run)
    return "\n".join(out) + "\n"


def pieces_svg(ps: PieceSet, size: int = 400, box: float = 1.0) -> str:
    """Planar cross-section drawing for m = 2: the square Q^2 and the pieces."""
    if ps.m != 2:
        raise ValueError("SVG export is for m = 2")

    def px(p):
        return (p[0] + box) / (2 * box) * size, (box - p[1]) / (2 * box) * size

    items = [f'<rect x="0" y="0" width="{size}" height="{size}" fill="none" stroke="black"/>']
    for q in ps.pieces:
        if q.k == 0:
            x, y = px(q.origin)
            items.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="3" fill="red"/>')
        else:
            a, b = polyline_points(q, 2)
            (x1, y1), (x2, y2) = px(a), px(b)
            items.append(f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" stroke="red"/>')
    body = "\n  ".join(items)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">\n  {body}\n</svg>\n')


def csv_text(rows: list[dict], fields: list[str]) -> str:
    """Deterministic CSV: fixed column order, unix line endings."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="raise")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k, "") for k in fields})
    return buf.getvalue()


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def write_json(path: Path, obj) -> Path:
    return write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)
