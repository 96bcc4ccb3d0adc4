"""Dataset container I/O, synthetic graph generators and graph hashing.

Container layout (one directory per graph)::

    meta.json      {"n_nodes", "n_features", "n_classes", "name"}
    edges.csv      header "src,dst", one integer pair per line
    features.csv   N rows x F floats, no header
    labels.csv     N integers, one per line
    masks.csv      header "train,val,test", N rows of 0/1
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError, ParameterError, ValidationError
from .graph import GraphDataset, symmetrize

__all__ = [
    "SyntheticSpec",
    "load_dataset",
    "save_dataset",
    "generate",
    "graph_hash",
    "row_normalize",
    "planetoid_split",
]

KINDS = ("path", "cycle", "complete", "two_cliques", "sbm")
FEATURE_MODES = ("one_hot_block", "random_gaussian", "noisy_one_hot")


def _read_rows(path: Path, header: list[str] | None):
    if not path.exists():
        raise FormatError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    if header is not None:
        if not rows or [c.strip() for c in rows[0]] != header:
            raise FormatError(f"{path.name}: expected header {','.join(header)}")
        rows = rows[1:]
    # a trailing blank line is tolerated, blank lines elsewhere are not
    if rows and rows[-1] == []:
        rows = rows[:-1]
    return rows


def _parse(rows, conv, path: Path, width: int | None = None):
    out = []
    for i, row in enumerate(rows):
        if width is not None and len(row) != width:
            raise FormatError(f"{path.name}: line {i + 1} has {len(row)} columns, expected {width}")
        try:
            out.append([conv(c) for c in row])
        except ValueError as exc:
            raise FormatError(f"{path.name}: line {i + 1}: {exc}") from None
    return out


def _strict_int(text: str) -> int:
    text = text.strip()
    if not text or not text.lstrip("-").isdigit():
        raise ValueError(f"not an integer: {text!r}")
    return int(text)


def _strict_float(text: str) -> float:
    text = text.strip()
    if not text:
        raise ValueError("missing value")
    if "," in text or text.lower() in ("nan", "+nan", "-nan"):
        raise ValueError(f"not a decimal number: {text!r}")
    return float(text)


def load_dataset(directory, row_normalize_features: bool = False) -> GraphDataset:
    """Read and validate a graph container directory."""
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"missing file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        n = int(meta["n_nodes"])
        n_feat = int(meta["n_features"])
        n_cls = int(meta["n_classes"])
        name = str(meta.get("name", d.name))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"meta.json: {exc}") from None

    edges = _parse(_read_rows(d / "edges.csv", ["src", "dst"]), _strict_int, d / "edges.csv", 2)
    feats = _parse(_read_rows(d / "features.csv", None), _strict_float, d / "features.csv")
    labels = _parse(_read_rows(d / "labels.csv", None), _strict_int, d / "labels.csv", 1)
    masks = _parse(_read_rows(d / "masks.csv", ["train", "val", "test"]), _strict_int, d / "masks.csv", 3)

    for fname, rows in (("features.csv", feats), ("labels.csv", labels), ("masks.csv", masks)):
        if len(rows) != n:
            raise ConsistencyError(f"{fname} has {len(rows)} rows but meta.json says n_nodes={n}")
    if any(len(r) != n_feat for r in feats):
        raise ConsistencyError(f"features.csv rows must have n_features={n_feat} columns")
    edge_arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edge_arr) and (edge_arr.min() < 0 or edge_arr.max() >= n):
        raise ConsistencyError("edges.csv references a node outside [0, n_nodes)")
    label_arr = np.asarray(labels, dtype=np.int64).reshape(-1)
    if n and (label_arr.min() < 0 or label_arr.max() >= n_cls):
        raise ConsistencyError(f"labels must lie in [0, {n_cls})")
    mask_arr = np.asarray(masks, dtype=np.int64).reshape(-1, 3)
    if np.any((mask_arr != 0) & (mask_arr != 1)):
        raise FormatError("masks.csv entries must be 0 or 1")
    mask_arr = mask_arr.astype(bool)
    if np.any(mask_arr.sum(axis=1) > 1):
        raise ValidationError("a node appears in more than one of train/val/test")

    features = np.asarray(feats, dtype=np.float64).reshape(n, n_feat)
    if row_normalize_features:
        features = row_normalize(features)
    return GraphDataset(
        n_nodes=n,
        edges=edge_arr,
        features=features,
        labels=label_arr,
        train_mask=mask_arr[:, 0],
        val_mask=mask_arr[:, 1],
        test_mask=mask_arr[:, 2],
        name=name,
        meta={"n_classes": n_cls, "row_normalized": bool(row_normalize_features)},
    )


def save_dataset(dataset: GraphDataset, directory) -> Path:
    """Write ``dataset`` in the container layout; floats use 17 significant digits."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n_cls = int(dataset.meta.get("n_classes", dataset.n_classes))
    meta = {
        "n_nodes": dataset.n_nodes,
        "n_features": dataset.n_features,
        "n_classes": n_cls,
        "name": dataset.name,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    with open(d / "edges.csv", "w", newline="\n", encoding="utf-8") as fh:
        fh.write("src,dst\n")
        for u, v in dataset.edges:
            fh.write(f"{u},{v}\n")
    with open(d / "features.csv", "w", newline="\n", encoding="utf-8") as fh:
        for row in dataset.features:
            fh.write(",".join(format(x, ".17g") for x in row) + "\n")
    with open(d / "labels.csv", "w", newline="\n", encoding="utf-8") as fh:
        for y in dataset.labels:
            fh.write(f"{y}\n")
    with open(d / "masks.csv", "w", newline="\n", encoding="utf-8") as fh:
        fh.write("train,val,test\n")
        for a, b, c in zip(dataset.train_mask, dataset.val_mask, dataset.test_mask):
            fh.write(f"{int(a)},{int(b)},{int(c)}\n")
    return d


def row_normalize(features: np.ndarray) -> np.ndarray:
    sums = np.abs(features).sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return features / sums


def graph_hash(dataset: GraphDataset) -> int:
    """64-bit content hash of ``n_nodes`` and the canonical edge list."""
    edges = symmetrize(dataset.edges, dataset.n_nodes)
    h = hashlib.blake2b(digest_size=8)
    h.update(np.int64(dataset.n_nodes).astype("<i8").tobytes())
    h.update(np.ascontiguousarray(edges, dtype="<i8").tobytes())
    return int.from_bytes(h.digest(), "little")


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic graph.

    ``block_sizes`` defaults to two near-equal blocks.  Path, cycle and
    complete graphs use the same blocks for labels, so every kind is a
    classification problem.
    """

    kind: str
    n: int
    block_sizes: list[int] | None = None
    p_in: float = 0.5
    p_out: float = 0.05
    feature_mode: str = "one_hot_block"
    n_features: int = 16
    feature_noise: float = 1.0
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown kind {self.kind!r}; choose from {KINDS}")
        if self.feature_mode not in FEATURE_MODES:
            raise ParameterError(f"unknown feature mode {self.feature_mode!r}")
        if self.n < 1:
            raise ParameterError("n must be >= 1")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ParameterError("need 0 <= p_out <= p_in <= 1")
        if self.block_sizes is None:
            half = self.n // 2
            self.block_sizes = [self.n - half, half] if half else [self.n]
        self.block_sizes = [int(b) for b in self.block_sizes if int(b) > 0]
        if sum(self.block_sizes) != self.n:
            raise ParameterError("block sizes must sum to n")

    def to_dict(self) -> dict:
        return asdict(self)


def _block_ids(sizes) -> np.ndarray:
    return np.repeat(np.arange(len(sizes)), sizes)


def _complete_edges(nodes: np.ndarray) -> np.ndarray:
    iu, ju = np.triu_indices(len(nodes), k=1)
    return np.stack([nodes[iu], nodes[ju]], axis=1)


def _sbm_edges(sizes, p_in, p_out, rng) -> np.ndarray:
    starts = np.concatenate([[0], np.cumsum(sizes)])
    out = []
    # one uniform draw per unordered pair, block pair by block pair, row-major
    for a in range(len(sizes)):
        for b in range(a, len(sizes)):
            p = p_in if a == b else p_out
            ra = np.arange(starts[a], starts[a + 1])
            rb = np.arange(starts[b], starts[b + 1])
            if a == b:
                iu, ju = np.triu_indices(len(ra), k=1)
                cand = np.stack([ra[iu], ra[ju]], axis=1)
            else:
                cand = np.stack(np.meshgrid(ra, rb, indexing="ij"), axis=-1).reshape(-1, 2)
            draws = rng.random(len(cand))
            out.append(cand[draws < p])
    return np.concatenate(out) if out else np.zeros((0, 2), dtype=np.int64)


def _round_robin_masks(blocks: np.ndarray):
    """60/20/20 within each block: positions 0,1,2 -> train, 3 -> val, 4 -> test (mod 5)."""
    n = len(blocks)
    pos = np.zeros(n, dtype=np.int64)
    for b in np.unique(blocks):
        idx = np.flatnonzero(blocks == b)
        pos[idx] = np.arange(len(idx)) % 5
    return pos < 3, pos == 3, pos == 4


def generate(spec: SyntheticSpec) -> GraphDataset:
    """Build a synthetic dataset; identical specs give identical datasets."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    sizes = spec.block_sizes
    blocks = _block_ids(sizes)
    if spec.kind == "path":
        edges = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    elif spec.kind == "cycle":
        edges = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1) if n > 2 else (
            np.stack([np.arange(n - 1), np.arange(1, n)], axis=1))
    elif spec.kind == "complete":
        edges = _complete_edges(np.arange(n))
    elif spec.kind == "two_cliques":
        if len(sizes) != 2:
            raise ParameterError("two_cliques needs exactly two blocks")
        starts = np.concatenate([[0], np.cumsum(sizes)])
        edges = np.concatenate(
            [_complete_edges(np.arange(starts[b], starts[b + 1])) for b in range(2)]
        )
    else:
        edges = _sbm_edges(sizes, spec.p_in, spec.p_out, rng)

    n_blocks = len(sizes)
    if spec.feature_mode == "one_hot_block":
        feats = np.eye(n_blocks)[blocks]
    elif spec.feature_mode == "random_gaussian":
        feats = rng.standard_normal((n, spec.n_features))
    else:
        # block signal in the first n_blocks columns, gaussian noise everywhere
        width = max(spec.n_features, n_blocks)
        feats = spec.feature_noise * rng.standard_normal((n, width))
        feats[np.arange(n), blocks] += 1.0

    train, val, test = _round_robin_masks(blocks)
    return GraphDataset(
        n_nodes=n,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        features=feats,
        labels=blocks,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        name=spec.name or f"{spec.kind}{n}",
        meta={"n_classes": n_blocks, "synthetic": spec.to_dict()},
    )


def planetoid_split(dataset: GraphDataset, per_class: int = 20, n_val: int = 500, n_test: int = 1000,
                    seed: int = 0) -> GraphDataset:
    """Replace the masks by a Planetoid-style split.

    ``per_class`` training nodes are drawn from every class, then ``n_val``
    and ``n_test`` nodes from the remainder, all with a seeded shuffle.
    """
    rng = np.random.default_rng(seed)
    n = dataset.n_nodes
    labels = dataset.labels
    train = np.zeros(n, dtype=bool)
    for c in range(dataset.n_classes):
        members = np.flatnonzero(labels == c)
        if len(members) < per_class:
            raise ParameterError(f"class {c} has {len(members)} nodes, fewer than {per_class}")
        train[rng.permutation(members)[:per_class]] = True
    rest = rng.permutation(np.flatnonzero(~train))
    if len(rest) < n_val + n_test:
        raise ParameterError("not enough nodes left for the validation and test sets")
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:n_val]] = True
    test[rest[n_val : n_val + n_test]] = True
    return replace(dataset, train_mask=train, val_mask=val, test_mask=test)
