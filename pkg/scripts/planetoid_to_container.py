"""Convert the raw Planetoid files (``ind.<name>.*``) into a laplora graph container.

    python scripts/planetoid_to_container.py RAW_DIR cora data/cora

RAW_DIR holds the eight files distributed with the Planetoid benchmark:
``x, y, tx, ty, allx, ally, graph`` (pickles) and ``test.index`` (text).
The standard public split is kept: the first ``len(y)`` nodes train, the
next 500 validate, and the nodes listed in ``test.index`` test.  Test rows
are put back in graph order, and missing test ids (citeseer) become
all-zero, unlabeled, unassigned nodes.  Self-loops in the raw graph are dropped.
"""

from __future__ import annotations

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from laplora.datasets import save_dataset
from laplora.graph import GraphDataset

PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def _dense(m) -> np.ndarray:
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def read_planetoid(raw_dir, name: str) -> GraphDataset:
    raw_dir = Path(raw_dir)
    objs = {}
    for part in PARTS:
        with open(raw_dir / f"ind.{name}.{part}", "rb") as fh:
            objs[part] = pickle.load(fh, encoding="latin1")
    test_idx = np.array(
        [int(line) for line in (raw_dir / f"ind.{name}.test.index").read_text().split()], dtype=np.int64
    )
    test_sorted = np.sort(test_idx)

    allx, tx = _dense(objs["allx"]), _dense(objs["tx"])
    ally, ty = _dense(objs["ally"]), _dense(objs["ty"])
    n_train = len(_dense(objs["y"]))

    # citeseer has test ids with no row in tx: pad to a contiguous range
    lo, hi = test_sorted[0], test_sorted[-1]
    full_tx = np.zeros((hi - lo + 1, tx.shape[1]))
    full_ty = np.zeros((hi - lo + 1, ty.shape[1]))
    full_tx[test_idx - lo] = tx
    full_ty[test_idx - lo] = ty

    features = np.vstack([allx, full_tx])
    onehot = np.vstack([ally, full_ty])
    n = features.shape[0]
    graph = objs["graph"]
    n = max(n, max(graph) + 1)
    if n > features.shape[0]:
        pad = n - features.shape[0]
        features = np.vstack([features, np.zeros((pad, features.shape[1]))])
        onehot = np.vstack([onehot, np.zeros((pad, onehot.shape[1]))])

    labels = onehot.argmax(axis=1)
    labelled = onehot.sum(axis=1) > 0
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[:n_train] = True
    val[n_train : n_train + 500] = True
    test[test_sorted] = True
    test &= labelled
    val &= ~test

    edges = [(u, v) for u, nbrs in graph.items() for v in nbrs if u != v]
    return GraphDataset(
        n_nodes=n,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        features=features,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        name=name,
        meta={"n_classes": onehot.shape[1]},
    )


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("raw_dir")
    p.add_argument("name", help="dataset prefix, e.g. cora, citeseer, pubmed")
    p.add_argument("out")
    a = p.parse_args(argv)
    ds = read_planetoid(a.raw_dir, a.name)
    save_dataset(ds, a.out)
    print(f"{a.name}: {ds.n_nodes} nodes, {len(ds.edges)} edges, {ds.n_features} features, "
          f"{ds.n_classes} classes, train/val/test {ds.train_mask.sum()}/{ds.val_mask.sum()}/{ds.test_mask.sum()}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
