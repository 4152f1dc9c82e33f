"""Convert a BIF network file into the JSON network format used by mtdisco.

Usage: python scripts/convert_bif.py input.bif output.json [name]
"""
import itertools
import json
import re
import sys

import numpy as np


def parse_bif(text):
    variables = {}
    order = []
    for m in re.finditer(r"variable\s+(\S+)\s*\{\s*type\s+discrete\s*\[\s*(\d+)\s*\]\s*\{([^}]*)\}", text):
        name, arity, states = m.group(1), int(m.group(2)), [s.strip() for s in m.group(3).split(",")]
        assert len(states) == arity, name
        variables[name] = states
        order.append(name)

    cpts = {}
    for m in re.finditer(r"probability\s*\(\s*([^)]*)\)\s*\{([^}]*)\}", text):
        head, body = m.group(1), m.group(2)
        if "|" in head:
            child, parents = head.split("|")
            parents = [p.strip() for p in parents.split(",")]
        else:
            child, parents = head, []
        child = child.strip()
        rows = {}
        for line in body.strip().split(";"):
            line = line.strip()
            if not line:
                continue
            if line.startswith("table"):
                rows[()] = [float(x) for x in line[len("table"):].split(",")]
            else:
                lm = re.match(r"\(([^)]*)\)\s*(.*)", line)
                key = tuple(s.strip() for s in lm.group(1).split(","))
                rows[key] = [float(x) for x in lm.group(2).split(",")]
        cpts[child] = (parents, rows)
    return order, variables, cpts


def convert(text, name):
    order, variables, cpts = parse_bif(text)
    index = {v: i for i, v in enumerate(order)}
    out_vars = [{"name": v, "arity": len(variables[v]), "states": variables[v]} for v in order]
    edges = []
    out_cpts = {}
    for child in order:
        parents, rows = cpts[child]
        for p in parents:
            edges.append([p, child])
        sorted_parents = sorted(parents, key=index.get)
        table = []
        # mixed radix, lowest-index parent most significant
        for config in itertools.product(*[range(len(variables[p])) for p in sorted_parents]):
            by_name = dict(zip(sorted_parents, config))
            if parents:
                key = tuple(variables[p][by_name[p]] for p in parents)
            else:
                key = ()
            row = np.asarray(rows[key], dtype=float)
            table.append((row / row.sum()).tolist())
        out_cpts[child] = table
    edges.sort(key=lambda e: (index[e[1]], index[e[0]]))
    return {"format": "mtdisco-network/1", "name": name, "variables": out_vars,
            "edges": edges, "cpts": out_cpts}


if __name__ == "__main__":
    src, dst = sys.argv[1], sys.argv[2]
    name = sys.argv[3] if len(sys.argv) > 3 else src.rsplit("/", 1)[-1].split(".")[0]
    with open(src) as fh:
        net = convert(fh.read(), name)
    with open(dst, "w") as fh:
        json.dump(net, fh, indent=1)
        fh.write("\n")
