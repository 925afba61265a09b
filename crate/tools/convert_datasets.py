#!/usr/bin/env python3
"""Convert public Planetoid and WebKB dumps into GraphText directories.

Planetoid (cora, citeseer, pubmed): the `ind.<name>.*` pickles. Edges are
written in both directions without duplicates or self-loops.

WebKB (texas, wisconsin, cornell) and similar: `out1_node_feature_label.txt`
and `out1_graph_edges.txt`. Edge lines are copied as given.

    python tools/convert_datasets.py planetoid RAW_DIR cora data/cora
    python tools/convert_datasets.py webkb RAW_DIR texas data/texas
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def write_graphtext(dest, name, features, labels, edges, num_classes, undirected):
    dest = Path(dest)
    if dest.exists() and any(dest.iterdir()):
        sys.exit(f"refusing to overwrite non-empty {dest}")
    dest.mkdir(parents=True, exist_ok=True)
    n, dim = features.shape
    meta = {
        "name": name,
        "num_nodes": int(n),
        "num_classes": int(num_classes),
        "feature_dim": int(dim),
        "undirected": undirected,
    }
    (dest / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    with open(dest / "features.txt", "w") as f:
        for row in features:
            f.write(" ".join(f"{v:g}" for v in row) + "\n")
    with open(dest / "labels.txt", "w") as f:
        f.writelines(f"{int(y)}\n" for y in labels)
    with open(dest / "edges.txt", "w") as f:
        f.writelines(f"{s} {d}\n" for s, d in edges)
    print(f"{name}: {n} nodes, {len(edges)} edge lines, {dim} features, {num_classes} classes -> {dest}")


def load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def planetoid(raw, name, dest):
    raw = Path(raw)
    parts = {k: load_pickle(raw / f"ind.{name}.{k}") for k in ("x", "y", "tx", "ty", "allx", "ally", "graph")}
    test_index = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    ordered = np.sort(test_index)

    tx, ty = parts["tx"], parts["ty"]
    if name == "citeseer":
        # some test ids are missing; pad them as featureless, unlabeled rows
        full = range(min(test_index), max(test_index) + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[ordered - min(ordered), :] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[ordered - min(ordered), :] = ty
        tx, ty = tx_ext, ty_ext

    features = sp.vstack((parts["allx"], tx)).tolil()
    features[test_index, :] = features[ordered, :]
    onehot = np.vstack((parts["ally"], ty))
    onehot[test_index, :] = onehot[ordered, :]
    labels = onehot.argmax(axis=1)
    features = np.asarray(features.todense())

    n = features.shape[0]
    pairs = set()
    for s, neighbors in parts["graph"].items():
        for d in neighbors:
            if s != d and s < n and d < n:
                pairs.add((s, d))
                pairs.add((d, s))
    write_graphtext(dest, name, features, labels, sorted(pairs), onehot.shape[1], True)


def webkb(raw, name, dest):
    raw = Path(raw)
    rows = {}
    with open(raw / "out1_node_feature_label.txt") as f:
        next(f)
        for line in f:
            node, feats, label = line.rstrip("\n").split("\t")
            rows[int(node)] = ([float(v) for v in feats.split(",")], int(label))
    n = len(rows)
    if sorted(rows) != list(range(n)):
        sys.exit("node ids are not 0..n-1")
    features = np.array([rows[i][0] for i in range(n)])
    labels = np.array([rows[i][1] for i in range(n)])
    edges = []
    with open(raw / "out1_graph_edges.txt") as f:
        next(f)
        for line in f:
            s, d = line.split()
            edges.append((int(s), int(d)))
    write_graphtext(dest, name, features, labels, edges, int(labels.max()) + 1, False)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("format", choices=["planetoid", "webkb"])
    parser.add_argument("raw_dir")
    parser.add_argument("name")
    parser.add_argument("dest")
    args = parser.parse_args()
    convert = planetoid if args.format == "planetoid" else webkb
    convert(args.raw_dir, args.name, args.dest)


if __name__ == "__main__":
    main()
