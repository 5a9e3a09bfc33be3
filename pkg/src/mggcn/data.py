"""Datasets: canonical plain-text format, converters and synthetic generators.

A canonical dataset directory holds five files::

    meta.txt      num_nodes=<n> / num_features=<F> / num_classes=<C> / name=<text>
    edges.txt     one "u v" pair per line (undirected, each edge once)
    features.txt  one row of F space-separated reals per node
    labels.txt    one class id per node, or "-" for unlabeled
    split.txt     "train <id>", "val <id>" or "test <id>" per line
"""
from __future__ import annotations

import gzip
import hashlib
import io
import os
import pickle
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import Graph, GraphError, build_graph

CANONICAL_FILES = ("meta.txt", "edges.txt", "features.txt", "labels.txt", "split.txt")
UNLABELED = -1


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        if not self.train:
            raise DatasetError("training split is empty")
        a, b, c = set(self.train), set(self.val), set(self.test)
        if len(a) != len(self.train) or len(b) != len(self.val) or len(c) != len(self.test):
            raise DatasetError("split contains duplicate ids")
        overlap = (a & b) | (a & c) | (b & c)
        if overlap:
            raise DatasetError(f"splits overlap on node {min(overlap)}")

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


@dataclass(eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    split: Split
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        validate(self)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def row_normalized(self) -> "Dataset":
        """Copy with each feature row scaled to sum to one (zero rows stay zero)."""
        sums = self.features.sum(axis=1, keepdims=True)
        feats = np.divide(self.features, sums, out=np.zeros_like(self.features), where=sums != 0)
        return Dataset(self.graph, feats, self.labels, self.split, self.num_classes, self.name)


def validate(ds: Dataset) -> None:
    n = ds.graph.num_nodes
    if ds.features.ndim != 2 or ds.features.shape[0] != n:
        raise DatasetError(f"features have {ds.features.shape[0]} rows for {n} nodes")
    if not np.all(np.isfinite(ds.features)):
        raise DatasetError("features contain non-finite values")
    if ds.labels.shape != (n,):
        raise DatasetError(f"{len(ds.labels)} labels for {n} nodes")
    if ds.num_classes < 1:
        raise DatasetError("num_classes must be positive")
    if ds.labels.size and ds.labels.max() >= ds.num_classes:
        raise DatasetError(f"label {ds.labels.max()} >= num_classes {ds.num_classes}")
    if ds.labels.size and ds.labels.min() < UNLABELED:
        raise DatasetError("negative class id")
    for name in ("train", "val", "test"):
        ids = getattr(ds.split, name)
        for i in ids:
            if not 0 <= i < n:
                raise DatasetError(f"{name} split id {i} outside [0, {n})")
            if ds.labels[i] == UNLABELED:
                raise DatasetError(f"{name} split id {i} has no label")


def _atomic_write(path: Path, write) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: Dataset, directory: str | Path) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)

    def meta(fh):
        fh.write(f"num_nodes={ds.num_nodes}\nnum_features={ds.num_features}\n"
                 f"num_classes={ds.num_classes}\nname={ds.name}\n")

    def edges(fh):
        fh.writelines(f"{u} {v}\n" for u, v in ds.graph.edges())

    def features(fh):
        # %.17g round-trips every float64 exactly.
        np.savetxt(fh, ds.features, fmt="%.17g", delimiter=" ")

    def labels(fh):
        fh.writelines("-\n" if y == UNLABELED else f"{y}\n" for y in ds.labels.tolist())

    def split(fh):
        for name, ids in (("train", ds.split.train), ("val", ds.split.val), ("test", ds.split.test)):
            fh.writelines(f"{name} {i}\n" for i in ids)

    for fname, writer in zip(CANONICAL_FILES, (meta, edges, features, labels, split)):
        _atomic_write(out / fname, writer)


def _read_lines(path: Path):
    if not path.exists():
        raise DatasetError(f"missing file {path}")
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            yield lineno, line.rstrip("\n")


def _read_meta(path: Path) -> dict:
    meta = {}
    for lineno, line in _read_lines(path):
        if not line.strip():
            continue
        if "=" not in line:
            raise DatasetError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    for key in ("num_nodes", "num_features", "num_classes"):
        if key not in meta:
            raise DatasetError(f"{path}: missing {key}")
        try:
            meta[key] = int(meta[key])
        except ValueError:
            raise DatasetError(f"{path}: {key} is not an integer") from None
    return meta


def _read_features(path: Path, n: int, f: int) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing file {path}")
    text = path.read_text()
    lines = text.splitlines()
    if len(lines) != n:
        raise DatasetError(f"{path}: {len(lines)} rows, expected {n} (one per node)")
    try:
        values = np.array(text.split(), dtype=np.float64)
    except ValueError:
        values = None
    if values is None or values.size != n * f:
        for lineno, line in enumerate(lines, 1):
            parts = line.split()
            if len(parts) != f:
                raise DatasetError(f"{path}:{lineno}: {len(parts)} values, expected {f}")
            try:
                [float(p) for p in parts]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric feature value") from None
        raise DatasetError(f"{path}: malformed feature matrix")
    return values.reshape(n, f)


def load_dataset(directory: str | Path, normalize_features: bool = False) -> Dataset:
    """Read and validate a canonical dataset directory.

    Errors name the offending file and, where it applies, the line.
    """
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"dataset directory {d} does not exist")
    meta = _read_meta(d / "meta.txt")
    n, f, c = meta["num_nodes"], meta["num_features"], meta["num_classes"]

    pairs = []
    for lineno, line in _read_lines(d / "edges.txt"):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        try:
            u, v = int(parts[0]), int(parts[1])
            if len(parts) != 2:
                raise ValueError
        except (ValueError, IndexError):
            raise DatasetError(f"{d / 'edges.txt'}:{lineno}: expected 'u v', got {line!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"{d / 'edges.txt'}:{lineno}: node id outside [0, {n})")
        pairs.append((u, v))
    try:
        graph = build_graph(pairs, n)
    except GraphError as exc:
        raise DatasetError(f"{d / 'edges.txt'}: {exc}") from None

    features = _read_features(d / "features.txt", n, f)

    labels = []
    for lineno, line in _read_lines(d / "labels.txt"):
        tok = line.strip()
        if tok == "-":
            labels.append(UNLABELED)
            continue
        try:
            y = int(tok)
        except ValueError:
            raise DatasetError(f"{d / 'labels.txt'}:{lineno}: bad label {tok!r}") from None
        if not 0 <= y < c:
            raise DatasetError(f"{d / 'labels.txt'}:{lineno}: label {y} outside [0, {c})")
        labels.append(y)
    if len(labels) != n:
        raise DatasetError(f"{d / 'labels.txt'}: {len(labels)} lines, expected {n}")

    parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    owner: dict[int, str] = {}
    for lineno, line in _read_lines(d / "split.txt"):
        if not line.strip():
            continue
        try:
            name, raw = line.split()
            i = int(raw)
        except ValueError:
            raise DatasetError(f"{d / 'split.txt'}:{lineno}: expected '<train|val|test> <id>'") from None
        if name not in parts:
            raise DatasetError(f"{d / 'split.txt'}:{lineno}: unknown split {name!r}")
        if not 0 <= i < n:
            raise DatasetError(f"{d / 'split.txt'}:{lineno}: node id {i} outside [0, {n})")
        if i in owner:
            raise DatasetError(f"{d / 'split.txt'}:{lineno}: node {i} already in {owner[i]} split")
        if labels[i] == UNLABELED:
            raise DatasetError(f"{d / 'split.txt'}:{lineno}: node {i} has no label")
        owner[i] = name
        parts[name].append(i)

    try:
        ds = Dataset(graph, features, np.array(labels, dtype=np.int64),
                     Split(parts["train"], parts["val"], parts["test"]), c, meta.get("name", d.name))
    except DatasetError as exc:
        raise DatasetError(f"{d}: {exc}") from None
    return ds.row_normalized() if normalize_features else ds


def content_hash(directory: str | Path) -> str:
    h = hashlib.sha256()
    for fname in CANONICAL_FILES:
        h.update(fname.encode())
        h.update((Path(directory) / fname).read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------- converters

def _open_text(path: Path):
    if path.exists():
        return open(path)
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return io.TextIOWrapper(gzip.open(gz), encoding="utf-8")
    raise DatasetError(f"missing file {path} (or {gz.name})")


def fixed_size_split(num_nodes: int, num_val: int, num_test: int, seed: int,
                     labeled: np.ndarray | None = None) -> Split:
    """Seeded split with fixed validation/test sizes; the rest is training."""
    pool = np.arange(num_nodes) if labeled is None else np.flatnonzero(labeled)
    perm = np.random.default_rng(seed).permutation(pool)
    test = np.sort(perm[:num_test])
    val = np.sort(perm[num_test:num_test + num_val])
    train = np.sort(perm[num_test + num_val:])
    return Split(train.tolist(), val.tolist(), test.tolist())


def convert_linqs(src: str | Path, name: str | None = None, num_val: int = 500,
                  num_test: int = 1000, split_seed: int = 0) -> Dataset:
    """Convert a LINQS-style ``<name>.content`` / ``<name>.cites`` pair.

    Nodes keep the order of the content file, class ids follow sorted class
    names, citations are symmetrized and citations to unknown papers dropped.
    """
    src = Path(src)
    name = name or src.name
    ids, rows, classes = {}, [], []
    with _open_text(src / f"{name}.content") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids[parts[0]] = len(ids)
            rows.append(np.array(parts[1:-1], dtype=np.float64))
            classes.append(parts[-1])
    class_names = sorted(set(classes))
    labels = np.array([class_names.index(c) for c in classes], dtype=np.int64)
    edges = []
    with _open_text(src / f"{name}.cites") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2 and parts[0] in ids and parts[1] in ids:
                edges.append((ids[parts[1]], ids[parts[0]]))
    n = len(ids)
    graph = build_graph(edges, n)
    split = fixed_size_split(n, num_val, num_test, split_seed)
    return Dataset(graph, np.vstack(rows), labels, split, len(class_names), name)


def _load_planetoid_part(src: Path, name: str, part: str):
    path = src / f"ind.{name}.{part}"
    if not path.exists():
        raise DatasetError(f"missing file {path}")
    if part == "test.index":
        return [int(line) for line in path.read_text().split()]
    with open(path, "rb") as fh, warnings.catch_warnings():
        # Planetoid ships python-2 pickles of scipy matrices and dicts; they
        # name deprecated scipy module paths.
        warnings.simplefilter("ignore", DeprecationWarning)
        return pickle.load(fh, encoding="latin1")


def convert_planetoid(src: str | Path, name: str, num_val: int = 500) -> Dataset:
    """Convert the ``ind.<name>.*`` files with the FastGCN-style split.

    Test ids are the published test indices, validation ids the ``num_val``
    nodes after the labeled training block, and every other labeled node is
    training data. Citeseer's test indices have gaps; those nodes are padded
    with zero features and left unlabeled.
    """
    src = Path(src)
    x, y, tx, ty, allx, ally, graph = (_load_planetoid_part(src, name, p)
                                       for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_index = _load_planetoid_part(src, name, "test.index")
    test_sorted = np.sort(test_index)
    hi = int(test_sorted[-1])
    num_nodes = max(len(graph), hi + 1, allx.shape[0])
    num_features = allx.shape[1]

    features = np.zeros((num_nodes, num_features))
    features[:allx.shape[0]] = allx.toarray()
    features[test_index] = tx.toarray()
    onehot = np.zeros((num_nodes, ally.shape[1]))
    onehot[:ally.shape[0]] = ally
    onehot[test_index] = ty
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), UNLABELED)

    edges = [(int(u), int(v)) for u, nbrs in graph.items() for v in nbrs
             if int(u) < num_nodes and int(v) < num_nodes]
    g = build_graph(edges, num_nodes)

    test = sorted(int(i) for i in test_index if labels[i] != UNLABELED)
    val = [i for i in range(len(y), len(y) + num_val) if labels[i] != UNLABELED]
    taken = set(test) | set(val)
    train = [i for i in range(num_nodes) if i not in taken and labels[i] != UNLABELED]
    return Dataset(g, features, labels, Split(train, val, test), int(ally.shape[1]), name)


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    kind: str
    num_nodes: int
    noise: float = 0.1
    seed: int = 0
    num_features: int = 8
    attach: int = 3
    p_in: float = 0.5
    p_out: float = 0.02
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("two_cluster", "power_law", "path", "star"):
            raise DatasetError(f"unknown synthetic kind {self.kind!r}")
        if self.num_nodes < 1 or self.num_features < 1:
            raise DatasetError("synthetic sizes must be >= 1")
        if self.noise < 0:
            raise DatasetError("noise must be non-negative")


def _ratio_split(n: int, rng: np.random.Generator, fractions=(0.6, 0.2)) -> Split:
    perm = rng.permutation(n)
    n_train = max(1, int(round(fractions[0] * n)))
    n_val = int(round(fractions[1] * n))
    return Split(np.sort(perm[:n_train]).tolist(), np.sort(perm[n_train:n_train + n_val]).tolist(),
                 np.sort(perm[n_train + n_val:]).tolist())


def _barabasi_albert(n: int, m: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    m = max(1, min(m, n - 1)) if n > 1 else 0
    edges = []
    # Seed with a clique on m+1 nodes, then attach preferentially.
    core = min(n, m + 1)
    for u in range(core):
        for v in range(u + 1, core):
            edges.append((u, v))
    endpoints = [x for e in edges for x in e]
    for v in range(core, n):
        chosen: set[int] = set()
        while len(chosen) < m:
            chosen.add(endpoints[int(rng.integers(len(endpoints)))])
        for u in sorted(chosen):
            edges.append((u, v))
            endpoints.extend((u, v))
    return edges


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Seeded toy datasets for tests and benchmarks."""
    rng = np.random.default_rng(spec.seed)
    n, f = spec.num_nodes, spec.num_features
    if spec.kind == "two_cluster":
        if n < 4:
            raise DatasetError("two_cluster needs at least 4 nodes")
        labels = (np.arange(n) >= n // 2).astype(np.int64)
        same = labels[:, None] == labels[None, :]
        prob = np.where(same, spec.p_in, spec.p_out)
        upper = np.triu(rng.random((n, n)) < prob, k=1)
        # Chain each cluster so no node is isolated.
        for lo, hi in ((0, n // 2), (n // 2, n)):
            for u in range(lo, hi - 1):
                upper[u, u + 1] = True
        edges = list(zip(*np.nonzero(upper)))
        centers = np.zeros((2, f))
        centers[0, : max(1, f // 2)] = 1.0
        centers[1, max(1, f // 2):] = 1.0
        if f == 1:
            centers[1, 0] = -1.0
        features = centers[labels] + spec.noise * rng.standard_normal((n, f))
        return Dataset(build_graph(edges, n), features, labels, _ratio_split(n, rng), 2,
                       f"two_cluster-{n}")
    if spec.kind == "power_law":
        edges = _barabasi_albert(n, spec.attach, rng)
        labels = rng.integers(0, 2, size=n)
        features = np.eye(2)[labels] @ rng.standard_normal((2, f)) + spec.noise * rng.standard_normal((n, f))
        return Dataset(build_graph(edges, n), features, labels, _ratio_split(n, rng), 2,
                       f"power_law-{n}")
    if spec.kind == "path":
        edges = [(i, i + 1) for i in range(n - 1)]
        name = f"path-{n}"
    else:
        edges = [(0, i) for i in range(1, n)]
        name = f"star-{n}"
    labels = np.arange(n) % 2
    features = np.eye(2)[labels] @ np.eye(2, f) + spec.noise * rng.standard_normal((n, f))
    split = _ratio_split(n, rng) if n >= 3 else Split([0], [], list(range(1, n)))
    return Dataset(build_graph(edges, n), features, labels, split, 2, name)


def toy_p4() -> Dataset:
    """Path 0-1-2-3 with one-hot features and two classes."""
    g = build_graph([(0, 1), (1, 2), (2, 3)], 4)
    return Dataset(g, np.eye(4), np.array([0, 0, 1, 1]), Split([0, 3], [1], [2]), 2, "toy-p4")


def subset_labels(labels: np.ndarray, ids: Sequence[int]) -> np.ndarray:
    out = labels[np.asarray(ids, dtype=np.int64)]
    if (out == UNLABELED).any():
        raise DatasetError("requested ids include unlabeled nodes")
    return out
