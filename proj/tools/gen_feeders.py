#!/usr/bin/env python3
"""Writes the shipped synthetic feeders f34 and r300 into data/feeders/.

Both are radial 24.9 kV feeders of roughly 12 MW with ten PV plants each.
Layout is seeded so the files are reproducible: python3 tools/gen_feeders.py
"""

import argparse
import pathlib
import random

LINECODES = {
    "trunk": {"r": 0.19, "x": 0.41, "r_mutual": 0.06, "x_mutual": 0.19, "ampacity": 600},
    "lat3": {"r": 0.39, "x": 0.47, "r_mutual": 0.10, "x_mutual": 0.21, "ampacity": 300},
    "lat1": {"r": 0.59, "x": 0.52, "r_mutual": 0.0, "x_mutual": 0.0, "ampacity": 200},
}


def linecodes_yaml():
    out = ["linecodes:"]
    for name, lc in LINECODES.items():
        fields = ", ".join(f"{k}: {v}" for k, v in lc.items())
        out.append(f"  {name}: {{{fields}}}")
    return out


def emit(path, name, tap, nodes, branches, loads, ders, comment):
    lines = [f"# {comment}", "# Generated by tools/gen_feeders.py; edit the generator, not this file.",
             f"name: {name}", "base_kv: 24.9", "base_kva: 10000",
             f"substation: {{node: sub, tap: {tap}}}"]
    lines += linecodes_yaml()
    lines.append("nodes:")
    for nid, phases in nodes:
        lines.append(f"  - {{id: {nid}, phases: {phases}}}")
    lines.append("branches:")
    for frm, to, code, length, phases in branches:
        lines.append(f"  - {{from: {frm}, to: {to}, phases: {phases}, linecode: {code}, length: {length:.3f}}}")
    lines.append("loads:")
    for node, phases, kw, kvar in loads:
        if isinstance(kw, list):
            kws = ", ".join(f"{v:.1f}" for v in kw)
            kvars = ", ".join(f"{v:.1f}" for v in kvar)
            lines.append(f"  - {{node: {node}, phases: {phases}, kw: [{kws}], kvar: [{kvars}]}}")
        else:
            lines.append(f"  - {{node: {node}, phases: {phases}, kw: {kw:.1f}, kvar: {kvar:.1f}}}")
    lines.append("ders:")
    for did, node in ders:
        lines.append(f"  - {{id: {did}, node: {node}, p_caps_mw: 0.9, p_ref_mw: 0.5}}")
    path.write_text("\n".join(lines) + "\n")


def build(rng, n_nodes, trunk_len, target_kw, n_single):
    """Trunk of trunk_len nodes with three-phase and single-phase laterals hanging off it."""
    nodes = [("sub", "abc")]
    branches = []
    trunk = []
    prev = "sub"
    for k in range(1, trunk_len + 1):
        nid = f"t{k}"
        nodes.append((nid, "abc"))
        branches.append((prev, nid, "trunk", rng.uniform(0.4, 0.8), "abc"))
        trunk.append(nid)
        prev = nid
    remaining = n_nodes - 1 - trunk_len
    lateral = 0
    singles_left = n_single
    while remaining > 0:
        lateral += 1
        root = rng.choice(trunk[1:])
        single = singles_left > 0 and rng.random() < 0.5
        phases = rng.choice("abc") if single else "abc"
        if single:
            singles_left -= 1
        depth = min(remaining, rng.randint(2, 8))
        parent = root
        for d in range(1, depth + 1):
            nid = f"l{lateral}_{d}"
            nodes.append((nid, phases))
            code = "lat1" if single else "lat3"
            branches.append((parent, nid, code, rng.uniform(0.15, 0.45), phases))
            parent = nid
        remaining -= depth

    load_nodes = [n for n in nodes[1:]]
    weights = [rng.uniform(0.5, 1.5) for _ in load_nodes]
    scale = target_kw / sum(weights)
    loads = []
    for (nid, phases), w in zip(load_nodes, weights):
        kw = w * scale
        pf_q = rng.uniform(0.25, 0.4)
        if phases == "abc":
            split = [rng.uniform(0.8, 1.2) for _ in range(3)]
            s = sum(split)
            per = [kw * x / s for x in split]
            loads.append((nid, "abc", per, [p * pf_q for p in per]))
        else:
            loads.append((nid, phases, kw, kw * pf_q))
    return nodes, branches, loads, trunk


def pick_ders(rng, prefix, nodes, count):
    three_phase = [n for n, ph in nodes[1:] if ph == "abc"]
    chosen = sorted(rng.sample(three_phase, count), key=lambda n: [n for n, _ in nodes].index(n))
    return [(f"{prefix}{k + 1}", n) for k, n in enumerate(chosen)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "feeders"))
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = random.Random(34)
    nodes, branches, loads, _ = build(rng, 34, 12, 12000.0, 4)
    emit(out / "f34.yaml", "f34", 1.0, nodes, branches, loads, pick_ders(rng, "pv34_", nodes, 10),
         "34-node radial feeder with single-phase laterals, about 12 MW.")

    rng = random.Random(300)
    nodes, branches, loads, _ = build(rng, 300, 30, 12000.0, 12)
    emit(out / "r300.yaml", "r300", 0.97, nodes, branches, loads, pick_ders(rng, "pv300_", nodes, 10),
         "Reduced 300-node radial feeder, about 12 MW.")


if __name__ == "__main__":
    main()
