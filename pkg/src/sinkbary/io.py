"""File formats: measures (JSON / CSV), grayscale images (PGM / PNG), FW traces,
propagation graphs and rasterized measures.

Floats are written with ``repr`` so a file round-trips exactly and two runs
with the same inputs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
import os
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, InvalidMeasure
from .measure import DiscreteMeasure, new_measure


def _num(x) -> str:
    return repr(float(x))


# ----------------------------------------------------------------------------
# measures
# ----------------------------------------------------------------------------

def measure_from_dict(d: dict) -> DiscreteMeasure:
    if "points" not in d:
        raise InvalidMeasure("measure JSON needs a 'points' field")
    pts = np.asarray(d["points"], dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if d.get("dim", 1) == 1 else pts.reshape(1, -1)
    if "dim" in d and pts.size and pts.shape[1] != int(d["dim"]):
        raise DimensionMismatch(f"declared dim {d['dim']} but points have {pts.shape[1]} columns")
    return new_measure(pts, d.get("weights"))


def measure_to_dict(m: DiscreteMeasure) -> dict:
    return {"dim": m.dim, "points": m.points.tolist(), "weights": m.weights.tolist()}


def read_measure(path: str) -> DiscreteMeasure:
    """Load a measure from ``.json`` or ``.csv`` (header ``x1..xd,w``)."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".json":
        with open(path) as fh:
            return measure_from_dict(json.load(fh))
    if ext == ".csv":
        pts, w = _read_point_csv(path, need_weights=True)
        return new_measure(pts, w)
    raise InvalidMeasure(f"unsupported measure file extension {ext!r}")


def _read_point_csv(path, need_weights):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidMeasure(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    wcol = header.index("w") if "w" in header else None
    if not xcols:
        raise InvalidMeasure(f"{path}: header must name coordinate columns x1..xd")
    if need_weights and wcol is None:
        raise InvalidMeasure(f"{path}: header must include a weight column w")
    try:
        data = np.array([[float(r[i]) for i in xcols] for r in rows[1:]], dtype=np.float64)
        w = None if wcol is None else np.array([float(r[wcol]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise InvalidMeasure(f"{path}: malformed row ({exc})") from exc
    return data.reshape(-1, len(xcols)), w


def read_points(path: str) -> np.ndarray:
    """Candidate points from a CSV with header ``x1..xd`` (a ``w`` column is ignored)."""
    pts, _ = _read_point_csv(path, need_weights=False)
    return pts


def write_measure(path: str, m: DiscreteMeasure) -> None:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(m.dim)] + ["w"])
            for p, wi in zip(m.points, m.weights):
                w.writerow([_num(c) for c in p] + [_num(wi)])
        return
    with open(path, "w") as fh:
        json.dump(measure_to_dict(m), fh)
        fh.write("\n")


def write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------------------
# images
# ----------------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int, start: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    i = start
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise InvalidMeasure("truncated PGM header")
        tokens.append(data[i:j])
        i = j
    return tokens, i


def read_pgm(path: str) -> np.ndarray:
    """8-bit grayscale PGM, ASCII (P2) or binary (P5), as a float (H, W) array."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise InvalidMeasure(f"{path}: not a P2/P5 PGM file")
    (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 256:
        raise InvalidMeasure(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    if magic == b"P5":
        raw = data[pos + 1:pos + 1 + w * h]
        if len(raw) < w * h:
            raise InvalidMeasure(f"{path}: truncated pixel data")
        arr = np.frombuffer(raw, dtype=np.uint8)
    else:
        vals, _ = _pgm_tokens(data, w * h, pos)
        arr = np.array([int(v) for v in vals])
    return arr.reshape(h, w).astype(np.float64)


def write_pgm(path: str, img) -> None:
    """Write a binary (P5) 8-bit PGM."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    arr = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_image(path: str) -> np.ndarray:
    """Grayscale image from PGM (P2/P5) or PNG as a float (H, W) array."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".png":
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64)
    raise InvalidMeasure(f"unsupported image extension {ext!r}")


def rasterize(m: DiscreteMeasure, shape, box: Optional[tuple] = None) -> np.ndarray:
    """Deposit atom weights on the nearest pixel and rescale to [0, 255].

    Pixel centres span ``box = (lo, hi)`` (default: the atoms' bounding box),
    column index along the first coordinate and row index along the second.
    A degenerate box axis maps every atom to the middle pixel of that axis.
    """
    if m.dim != 2:
        raise DimensionMismatch("rendering needs a 2-D measure")
    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1:
        raise ValueError("resolution must be positive")
    P = m.points
    if box is None:
        lo, hi = P.min(axis=0), P.max(axis=0)
    else:
        lo, hi = np.asarray(box[0], dtype=np.float64), np.asarray(box[1], dtype=np.float64)

    def index(coord, lo_, hi_, size):
        if hi_ <= lo_ or size == 1:
            return np.full(coord.shape, (size - 1) // 2)
        idx = np.rint((coord - lo_) / (hi_ - lo_) * (size - 1)).astype(int)
        return np.clip(idx, 0, size - 1)

    cols = index(P[:, 0], lo[0], hi[0], w)
    rows = index(P[:, 1], lo[1], hi[1], h)
    img = np.zeros((h, w))
    np.add.at(img, (rows, cols), m.weights)
    top = img.max()
    if top > 0:
        img = img / top * 255.0
    return np.rint(img)


# ----------------------------------------------------------------------------
# traces and graphs
# ----------------------------------------------------------------------------

def write_trace(path: str, state) -> None:
    """One row per FW step: k, objective (blank if not computed), gap, new point, total sweeps.

    A last row ``k = K`` carries the final objective when it was evaluated.
    """
    dim = len(state.selected_points[0]) if state.selected_points else 0
    objs = list(state.objective_trace)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "objective", "gap"] + [f"x{i + 1}" for i in range(dim)] + ["sinkhorn_iters_total"])
        total = 0
        for k, (gap, pt, it) in enumerate(zip(state.gap_trace, state.selected_points, state.sinkhorn_iters)):
            total += int(it)
            obj = objs[k] if k < len(objs) and objs[k] == objs[k] else ""
            w.writerow([k, "" if obj == "" else _num(obj), _num(gap)] + [_num(c) for c in pt] + [total])
        # closing row: objective of the final iterate, no step taken from it
        k = len(state.gap_trace)
        if k < len(objs) and objs[k] == objs[k]:
            w.writerow([k, _num(objs[k]), ""] + [""] * dim + [total])


def read_graph(path: str):
    """Load a propagation graph; measure paths resolve relative to the graph file."""
    from .tasks import PropagationGraph

    with open(path) as fh:
        g = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    try:
        known = {int(k): read_measure(os.path.join(base, v)) for k, v in g["known"].items()}
        return PropagationGraph(int(g["vertices"]), [tuple(e) for e in g["edges"]], known, list(g["unknown"]))
    except (KeyError, TypeError) as exc:
        raise InvalidMeasure(f"{path}: malformed graph ({exc})") from exc
