"""Deterministic JSON / CSV / SVG writers shared by the command line front end.

Floats are always written with 17 significant digits so that two runs with the
same configuration produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def fmt_float(v) -> str:
    v = float(v)
    if not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if v == 0.0:
        return "0.0"
    text = f"{v:.17g}"
    # keep floats recognizable as floats
    return text if any(c in text for c in ".e") else text + ".0"


def _plain(obj):
    """numpy containers and scalars to plain python."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _emit(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        # JSON has no NaN; null keeps the file parseable
        out.append(fmt_float(obj) if math.isfinite(obj) else "null")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        # flat numeric lists stay on one line
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            parts = []
            for v in obj:
                sub = []
                _emit(v, indent, level + 1, sub)
                parts.append("".join(sub))
            out.append("[" + ", ".join(parts) + "]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad)
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "]")
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for i, (k, v) in enumerate(items):
            out.append(pad + json.dumps(k) + ": ")
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(end + "}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=2) -> str:
    out = []
    _emit(_plain(obj), indent, 0, out)
    return "".join(out) + "\n"


def envelope(command, payload: dict) -> dict:
    return {"milnorlab": SCHEMA_VERSION, "command": command, **payload}


def write_json(path, obj):
    Path(path).write_text(dumps(obj), encoding="utf-8")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows):
    Path(path).write_text(csv_text(header, rows), encoding="utf-8")


# ---------------------------------------------------------------------------
# SVG (planar only)
# ---------------------------------------------------------------------------

_COLORS = ("#1f4e9c", "#b03a2e", "#1e8449", "#7d3c98", "#b9770e", "#117a65")


class _Frame:
    def __init__(self, pts, size=600, margin=40):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        lo = pts.min(axis=0) if len(pts) else np.array([-1.0, -1.0])
        hi = pts.max(axis=0) if len(pts) else np.array([1.0, 1.0])
        span = float(max(np.max(hi - lo), 1e-12))
        pad = 0.05 * span
        self.lo = lo - pad
        self.span = span + 2 * pad
        self.size = size
        self.margin = margin

    def __call__(self, p):
        inner = self.size - 2 * self.margin
        sx = self.margin + (p[0] - self.lo[0]) / self.span * inner
        sy = self.size - self.margin - (p[1] - self.lo[1]) / self.span * inner
        return sx, sy


def _num(v):
    return f"{v:.3f}"


def discriminant_svg(branches, samples, markers=(), title="") -> str:
    """branches: list of (name, (m, 2) array); samples: (m, 2); markers: (label, (u, v))."""
    every = [np.asarray(p).reshape(-1, 2) for _, p in branches] + [np.asarray(samples).reshape(-1, 2)]
    every += [np.array([m[1]]) for m in markers]
    fr = _Frame(np.concatenate(every) if every else np.zeros((0, 2)))
    s = fr.size
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">',
        f'<rect x="0" y="0" width="{s}" height="{s}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{s // 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>')
    ox, oy = fr((0.0, 0.0))
    out.append(f'<line x1="{_num(fr.margin)}" y1="{_num(oy)}" x2="{_num(s - fr.margin)}" y2="{_num(oy)}" stroke="#999" stroke-width="0.5"/>')
    out.append(f'<line x1="{_num(ox)}" y1="{_num(fr.margin)}" x2="{_num(ox)}" y2="{_num(s - fr.margin)}" stroke="#999" stroke-width="0.5"/>')
    for i, (name, pts) in enumerate(branches):
        pts = np.asarray(pts).reshape(-1, 2)
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        if len(pts) == 0:
            continue
        color = _COLORS[i % len(_COLORS)]
        if len(pts) == 1 or np.ptp(pts, axis=0).max() == 0:
            x, y = fr(pts[0])
            out.append(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="4" fill="none" stroke="{color}"><title>{name}</title></circle>')
            continue
        cells = []
        for p in pts:
            c = f"{_num(fr(p)[0])},{_num(fr(p)[1])}"
            if not cells or cells[-1] != c:
                cells.append(c)
        d = "M" + " L".join(cells)
        out.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"><title>{name}</title></path>')
    for p in np.asarray(samples).reshape(-1, 2):
        if not np.all(np.isfinite(p)):
            continue
        x, y = fr(p)
        out.append(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="1.2" fill="#333"/>')
    for label, p in markers:
        x, y = fr(p)
        out.append(f'<rect x="{_num(x - 3)}" y="{_num(y - 3)}" width="6" height="6" fill="#c0392b"/>')
        out.append(f'<text x="{_num(x + 6)}" y="{_num(y - 6)}" font-family="sans-serif" font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
