"""SVG rendering of a line map: occupied segments, free segments and the trajectory."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .geometry import LineParams, point_at
from .simulator import GroundTruthSegment


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def _map_segments(landmarks: Sequence[dict], key: str) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for lm in landmarks:
        line = LineParams(lm["r"], lm["alpha"])
        for t0, t1 in lm[key]:
            out.append((point_at(line, t0), point_at(line, t1)))
    return out


def render_svg(
    map_doc: dict,
    env: Sequence[GroundTruthSegment] | None = None,
    scale: float = 60.0,
    margin: float = 0.5,
) -> str:
    """Render a map document (as written by the ``slam`` command) to SVG text."""
    occ = _map_segments(map_doc.get("landmarks", []), "occupied")
    free = _map_segments(map_doc.get("landmarks", []), "free")
    traj = np.asarray([p[:2] for p in map_doc.get("trajectory", [])], dtype=float).reshape(-1, 2)
    truth = [(np.asarray(s.a), np.asarray(s.b)) for s in (env or [])]
    pts = [p for seg in occ + free + truth for p in seg] + list(traj)
    if pts:
        arr = np.asarray(pts)
        lo, hi = arr.min(axis=0) - margin, arr.max(axis=0) + margin
    else:
        lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    w, h = (hi - lo) * scale

    def xy(p):
        return _fmt((p[0] - lo[0]) * scale), _fmt((hi[1] - p[1]) * scale)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(w)}" height="{_fmt(h)}" viewBox="0 0 {_fmt(w)} {_fmt(h)}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    meta = map_doc.get("meta", {})
    if meta:
        out.append(f"<!-- config_hash={meta.get('config_hash', '')} seed={meta.get('seed', '')} -->")

    def lines(segs, style):
        out.append(f'<g {style}>')
        for a, b in segs:
            (x1, y1), (x2, y2) = xy(a), xy(b)
            out.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}"/>')
        out.append("</g>")

    lines(truth, 'stroke="#cccccc" stroke-width="5"')
    lines(free, 'stroke="#2e9d4a" stroke-width="2" stroke-dasharray="6 4"')
    lines(occ, 'stroke="black" stroke-width="2.5"')
    if len(traj):
        path = " ".join(",".join(xy(p)) for p in traj)
        out.append(f'<polyline points="{path}" fill="none" stroke="#1f5fbf" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
