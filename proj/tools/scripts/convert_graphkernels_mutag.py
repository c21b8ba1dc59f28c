#!/usr/bin/env python3
"""Write MUTAG in TUDataset text layout from the copy bundled with graphkernels.

    pip download --no-deps --no-binary :all: graphkernels==0.2.1
    python3 convert_graphkernels_mutag.py graphkernels-0.2.1.tar.gz --out $ASOT_DATA_ROOT/MUTAG

The bundled file is a numpy object array of pickled igraph graphs. igraph is
not needed: the pickle is read with a stand-in class.
"""

import argparse
import io
import pickle
import tarfile
from pathlib import Path


class _Graph:
    def __init__(self, *args):
        self.args = args

    def __setstate__(self, state):
        self.state = state


class _Unpickler(pickle.Unpickler):
    def find_class(self, module, name):
        if module == "igraph" and name == "Graph":
            return _Graph
        return super().find_class(module, name)


def load_graphs(raw: bytes):
    header_len = int.from_bytes(raw[8:10], "little")
    body = raw[10 + header_len:]
    return _Unpickler(io.BytesIO(body), encoding="latin1").load()


def read_source(path: Path) -> bytes:
    if path.suffix == ".gz" or path.name.endswith(".tar.gz"):
        with tarfile.open(path) as tar:
            member = next(m for m in tar.getmembers() if m.name.endswith("data.mutag"))
            return tar.extractfile(member).read()
    return path.read_bytes()


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source", type=Path, help="graphkernels sdist (.tar.gz) or the extracted data.mutag")
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    graphs = load_graphs(read_source(args.source))
    edges, indicator, labels = [], [], []
    offset = 0
    for gi, g in enumerate(graphs, start=1):
        n, pairs, vertex_attrs = g.args[0], g.args[1], g.args[4]
        for u, v in pairs:
            edges.append((u + offset + 1, v + offset + 1))
            edges.append((v + offset + 1, u + offset + 1))
        indicator += [gi] * n
        labels += [int(x) for x in vertex_attrs["label"]]
        offset += n
    edges.sort()

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "MUTAG_A.txt").write_text("".join(f"{u}, {v}\n" for u, v in edges))
    (args.out / "MUTAG_graph_indicator.txt").write_text("".join(f"{i}\n" for i in indicator))
    (args.out / "MUTAG_node_labels.txt").write_text("".join(f"{x}\n" for x in labels))
    print(f"{len(graphs)} graphs, {offset} nodes, {len(edges) // 2} edges, labels {sorted(set(labels))}")


if __name__ == "__main__":
    main()
