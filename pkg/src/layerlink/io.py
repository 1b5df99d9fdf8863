"""Plain-text file formats: edge lists, memberships, affinities, masks, reports.

Floats are written with ``repr`` so that every value re-parses exactly.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .evaluation import HoldoutMask
from .graph import MultilayerGraph


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based (0 for whole-file problems)."""

    def __init__(self, path, line: int, message: str):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")


def _fmt(x) -> str:
    return repr(float(x))


def _parse_bool(text: str, path, lineno: int) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ParseError(path, lineno, f"expected a boolean, got {text!r}")


def _check_label(label: str, what: str):
    if not label or any(c.isspace() for c in label) or "," in label:
        raise ValueError(f"{what} {label!r} must be nonempty without whitespace or commas")


# ---- edge lists --------------------------------------------------------

def _header_fields(line: str, path, lineno: int) -> dict:
    fields = {}
    for tok in line.lstrip("#").split():
        if "=" not in tok:
            return {}
        key, _, val = tok.partition("=")
        fields[key] = val
    return fields


def parse_edge_list(path) -> MultilayerGraph:
    """Read ``source target w_1 ... w_L`` lines into a graph.

    Recognised header comments: ``# directed=<bool> layers=<L> names=<a,b>``
    (optionally with ``self_loops=<bool>``) and ``# nodes=<a,b,...>``,
    which fixes node order and keeps nodes that have no edges. Without a
    header the graph is directed and layers are named by index.
    """
    path = Path(path)
    directed = True
    n_layers: Optional[int] = None
    names: Optional[list[str]] = None
    self_loops: Optional[bool] = None
    labels: dict[str, int] = {}
    src, dst, rows = [], [], []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                fields = _header_fields(line, path, lineno)
                if "directed" in fields:
                    directed = _parse_bool(fields["directed"], path, lineno)
                if "self_loops" in fields:
                    self_loops = _parse_bool(fields["self_loops"], path, lineno)
                if "layers" in fields:
                    try:
                        n_layers = int(fields["layers"])
                    except ValueError:
                        raise ParseError(path, lineno, "layers= must be an integer") from None
                if "names" in fields:
                    names = fields["names"].split(",")
                if "nodes" in fields:
                    if labels:
                        raise ParseError(path, lineno, "nodes= header must precede the edges")
                    for lab in fields["nodes"].split(","):
                        if lab in labels:
                            raise ParseError(path, lineno, f"duplicate node label {lab!r}")
                        labels[lab] = len(labels)
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ParseError(path, lineno, "need a source, a target and at least one weight")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(path, lineno,
                                 f"expected {width} columns like the first data line, got {len(parts)}")
            weights = []
            for tok in parts[2:]:
                try:
                    val = int(tok)
                except ValueError:
                    raise ParseError(path, lineno, f"weight {tok!r} is not an integer") from None
                if val < 0:
                    raise ParseError(path, lineno, f"weight {val} is negative")
                weights.append(val)
            for lab in parts[:2]:
                if lab not in labels:
                    labels[lab] = len(labels)
            src.append(labels[parts[0]])
            dst.append(labels[parts[1]])
            rows.append(weights)
    if not rows and not labels:
        raise ParseError(path, 0, "file contains no edges")
    L = width - 2 if width is not None else n_layers
    if L is None:
        raise ParseError(path, 0, "no data lines and no layers= header")
    if n_layers is not None and n_layers != L:
        raise ParseError(path, 0, f"header says layers={n_layers} but rows have {L} weight columns")
    if names is not None and len(names) != L:
        raise ParseError(path, 0, f"header names {len(names)} layers but rows have {L}")
    W = np.asarray(rows, dtype=np.int64).reshape(len(rows), L)
    s = np.repeat(np.asarray(src, dtype=np.int64), L)
    d = np.repeat(np.asarray(dst, dtype=np.int64), L)
    a = np.tile(np.arange(L), len(rows))
    return MultilayerGraph.from_arrays(
        len(labels), L, s, d, a, W.ravel(), directed=directed,
        node_labels=list(labels), layer_names=names, allow_self_loops=self_loops,
    )


def format_edge_list(graph: MultilayerGraph) -> str:
    names = graph.names
    for lab in names:
        _check_label(lab, "layer name")
    for lab in graph.labels:
        _check_label(lab, "node label")
    lines = [
        f"# directed={str(graph.directed).lower()} layers={graph.n_layers} "
        f"names={','.join(names)} self_loops={str(graph.allow_self_loops).lower()}",
        f"# nodes={','.join(graph.labels)}",
    ]
    n = graph.n_nodes
    key = graph.src * n + graph.dst
    pairs, inv = np.unique(key, return_inverse=True)
    W = np.zeros((len(pairs), graph.n_layers), dtype=np.int64)
    W[inv, graph.layer] = graph.weight_values
    labels = graph.labels
    for p, row in zip(pairs, W):
        i, j = divmod(int(p), n)
        lines.append(" ".join([labels[i], labels[j]] + [str(int(x)) for x in row]))
    return "\n".join(lines) + "\n"


def write_edge_list(graph: MultilayerGraph, path) -> None:
    _write_text(path, format_edge_list(graph))


# ---- memberships and affinities ----------------------------------------

def format_membership(values, labels: Sequence[str]) -> str:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or len(labels) != values.shape[0]:
        raise ValueError("need one label per membership row")
    return "".join(" ".join([str(lab)] + [_fmt(x) for x in row]) + "\n"
                   for lab, row in zip(labels, values))


def write_membership(values, labels: Sequence[str], path) -> None:
    _write_text(path, format_membership(values, labels))


def parse_membership(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    labels, rows = [], []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if width is None:
                width = len(parts)
            if len(parts) != width or width < 2:
                raise ParseError(path, lineno, "inconsistent number of membership columns")
            try:
                vals = [float(x) for x in parts[1:]]
            except ValueError:
                raise ParseError(path, lineno, "membership values must be numbers") from None
            if any(not np.isfinite(v) or v < 0 for v in vals):
                raise ParseError(path, lineno, "membership values must be finite and nonnegative")
            labels.append(parts[0])
            rows.append(vals)
    if not rows:
        raise ParseError(path, 0, "file contains no memberships")
    return labels, np.asarray(rows)


def format_affinities(w, layer_names: Sequence[str]) -> str:
    w = np.asarray(w, dtype=float)
    out = []
    for name, mat in zip(layer_names, w):
        out.append(f"# layer {name}\n")
        out.extend(" ".join(_fmt(x) for x in row) + "\n" for row in mat)
    return "".join(out)


def write_affinities(w, layer_names: Sequence[str], path) -> None:
    _write_text(path, format_affinities(w, layer_names))


def parse_affinities(path) -> tuple[list[str], np.ndarray]:
    """Read blocks of K rows, each block introduced by ``# layer <name>``."""
    path = Path(path)
    names, blocks = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.lstrip("#").split(maxsplit=1)
                if parts and parts[0] == "layer":
                    names.append(parts[1].strip() if len(parts) > 1 else str(len(names)))
                    blocks.append([])
                continue
            if not blocks:
                raise ParseError(path, lineno, "matrix row before any '# layer' line")
            try:
                blocks[-1].append([float(x) for x in line.split()])
            except ValueError:
                raise ParseError(path, lineno, "affinity values must be numbers") from None
    if not blocks:
        raise ParseError(path, 0, "file contains no layers")
    K = len(blocks[0])
    for name, b in zip(names, blocks):
        if len(b) != K or any(len(r) != K for r in b):
            raise ParseError(path, 0, f"layer {name!r} is not a {K}x{K} matrix")
    w = np.asarray(blocks, dtype=float)
    if (w < 0).any():
        raise ParseError(path, 0, "affinities must be nonnegative")
    return names, w


# ---- fold masks --------------------------------------------------------

MASK_HEADER = "layer\ti\tj\tfold"


def format_mask(mask: HoldoutMask) -> str:
    lines = [MASK_HEADER]
    for i, j, f in zip(mask.i, mask.j, mask.fold):
        lines.append(f"{mask.target_layer}\t{int(i)}\t{int(j)}\t{int(f)}")
    return "\n".join(lines) + "\n"


def write_mask(mask: HoldoutMask, path) -> None:
    _write_text(path, format_mask(mask))


def parse_mask(path, n_folds: int = 5) -> HoldoutMask:
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line == MASK_HEADER:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(path, lineno, "mask rows need layer, i, j and fold")
            try:
                rows.append([int(x) for x in parts])
            except ValueError:
                raise ParseError(path, lineno, "mask entries must be integers") from None
    if not rows:
        raise ParseError(path, 0, "mask file is empty")
    arr = np.asarray(rows, dtype=np.int64)
    if len(np.unique(arr[:, 0])) != 1:
        raise ParseError(path, 0, "a mask must cover a single target layer")
    if arr[:, 3].min() < 0 or arr[:, 3].max() >= n_folds:
        raise ParseError(path, 0, f"fold ids must lie in [0, {n_folds})")
    return HoldoutMask(int(arr[0, 0]), arr[:, 1], arr[:, 2], arr[:, 3], None, n_folds)


# ---- tables and reports ------------------------------------------------

def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return _fmt(x)
    if isinstance(x, (list, tuple, np.ndarray)):
        return ",".join(_cell(y) for y in x)
    return str(x)


def format_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = ["\t".join(header)]
    lines.extend("\t".join(_cell(x) for x in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_table(header: Sequence[str], rows: Iterable[Sequence], path) -> None:
    _write_text(path, format_table(header, rows))


def parse_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ParseError(path, 0, "table is empty")
    header = lines[0].split("\t")
    rows = [ln.split("\t") for ln in lines[1:]]
    for k, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ParseError(path, k, "row width differs from the header")
    return header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def format_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_report(report: dict, path) -> None:
    _write_text(path, format_report(report))


def read_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_text(path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        os.makedirs(path.parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
