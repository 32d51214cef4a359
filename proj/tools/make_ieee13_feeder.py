#!/usr/bin/env python3
"""Writes data/ieee13_res.json: the IEEE 13 node test feeder at half load with
two wind units and two solar units attached.

Line configurations are the published ohm/mile and uS/mile matrices. The
regulator is left out (source held at 0.98 p.u.), the 633-634
transformer is rated 533 kVA, delta loads are modelled as
wye loads (646 on b, 692 on c, 671 per phase), and the distributed 632-671 load is lumped at
632. Each of the eight load buses is one random growth input.
"""
import argparse
import json
import math
import pathlib

MILE = 5280.0

# phase order of every matrix is ascending (a, b, c)
CONFIG = {
    "601": {
        "phases": "abc",
        "z": [[(0.3465, 1.0179), (0.1560, 0.5017), (0.1580, 0.4236)],
              [(0.1560, 0.5017), (0.3375, 1.0478), (0.1535, 0.3849)],
              [(0.1580, 0.4236), (0.1535, 0.3849), (0.3414, 1.0348)]],
        "b": [[6.2998, -1.9958, -1.2595], [-1.9958, 5.9597, -0.7417], [-1.2595, -0.7417, 5.6386]],
        "amp": 730.0,
    },
    "602": {
        "phases": "abc",
        "z": [[(0.7526, 1.1814), (0.1580, 0.4236), (0.1560, 0.5017)],
              [(0.1580, 0.4236), (0.7475, 1.1983), (0.1535, 0.3849)],
              [(0.1560, 0.5017), (0.1535, 0.3849), (0.7436, 1.2112)]],
        "b": [[5.6990, -1.0817, -1.6905], [-1.0817, 5.1795, -0.6588], [-1.6905, -0.6588, 5.4246]],
        "amp": 340.0,
    },
    "603": {
        "phases": "bc",
        "z": [[(1.3238, 1.3569), (0.2066, 0.4591)], [(0.2066, 0.4591), (1.3294, 1.3471)]],
        "b": [[4.6658, -0.8999], [-0.8999, 4.7097]],
        "amp": 230.0,
    },
    "604": {
        "phases": "ac",
        "z": [[(1.3238, 1.3569), (0.2066, 0.4591)], [(0.2066, 0.4591), (1.3294, 1.3471)]],
        "b": [[4.6658, -0.8999], [-0.8999, 4.7097]],
        "amp": 230.0,
    },
    "605": {"phases": "c", "z": [[(1.3292, 1.3475)]], "b": [[4.5193]], "amp": 230.0},
    "606": {
        "phases": "abc",
        "z": [[(0.7982, 0.4463), (0.3192, 0.0328), (0.2849, -0.0143)],
              [(0.3192, 0.0328), (0.7891, 0.4041), (0.3192, 0.0328)],
              [(0.2849, -0.0143), (0.3192, 0.0328), (0.7982, 0.4463)]],
        "b": [[96.8897, 0.0, 0.0], [0.0, 96.8897, 0.0], [0.0, 0.0, 96.8897]],
        "amp": 260.0,
    },
    "607": {"phases": "a", "z": [[(1.3425, 0.5124)]], "b": [[88.9912]], "amp": 200.0},
}

LINES = [  # from, to, feet, config
    ("650", "632", 2000, "601"),
    ("632", "633", 500, "602"),
    ("632", "645", 500, "603"),
    ("645", "646", 300, "603"),
    ("632", "671", 2000, "601"),
    ("671", "684", 300, "604"),
    ("684", "611", 300, "605"),
    ("684", "652", 800, "607"),
    ("671", "680", 1000, "601"),
    ("692", "675", 500, "606"),
]

BUS_PHASES = {
    "650": "abc", "632": "abc", "633": "abc", "634": "abc", "645": "bc", "646": "bc",
    "671": "abc", "680": "abc", "684": "ac", "611": "c", "652": "a", "692": "abc", "675": "abc",
}

# full IEEE 13 spot loads: bus, phase, kW, kvar, model
LOADS = [
    ("634", "a", 160, 110, "PQ"), ("634", "b", 120, 90, "PQ"), ("634", "c", 120, 90, "PQ"),
    ("645", "b", 170, 125, "PQ"),
    ("646", "b", 230, 132, "Z"),
    ("652", "a", 128, 86, "Z"),
    ("671", "a", 385, 220, "PQ"), ("671", "b", 385, 220, "PQ"), ("671", "c", 385, 220, "PQ"),
    ("675", "a", 485, 190, "PQ"), ("675", "b", 68, 60, "PQ"), ("675", "c", 290, 212, "PQ"),
    ("692", "c", 170, 151, "I"),
    ("611", "c", 170, 80, "I"),
]
DISTRIBUTED = [("632", "a", 17, 10), ("632", "b", 66, 38), ("632", "c", 117, 68)]
ZIP = {"PQ": [1.0, 0.0, 0.0], "I": [0.0, 1.0, 0.0], "Z": [0.0, 0.0, 1.0]}


def matrix(rows, scale, key_re, key_im, imag_only=False):
    out = []
    for row in rows:
        if imag_only:
            out.append([{key_re: 0.0, key_im: v * scale} for v in row])
        else:
            out.append([{key_re: r * scale, key_im: x * scale} for r, x in row])
    return out


def build(args):
    buses = []
    for bus, ph in BUS_PHASES.items():
        b = {"id": bus, "phases": ph}
        if bus == "650":
            b["kind"] = "slack"
            b["v0"] = args.source_pu
        if bus == "634":
            b["base_kv"] = 0.48
        buses.append(b)
    for b in buses:
        if b["id"] == "675":
            b["shunt_kvar"] = [200.0, 200.0, 200.0]
        if b["id"] == "611":
            b["shunt_kvar"] = 100.0

    branches = []
    for frm, to, feet, cfg in LINES:
        c = CONFIG[cfg]
        miles = feet / MILE
        branches.append({
            "from": frm, "to": to, "phases": c["phases"],
            "z": matrix(c["z"], miles, "r", "x"),
            "y_shunt": matrix(c["b"], miles * 1e-6, "g", "b", imag_only=True),
            "ampacity": c["amp"],
        })
    # 633-634 transformer, 4.16/0.48 kV, z = 1.1 + j2 % on its own rating, referred to the 4.16 kV side
    zb = 4.16 ** 2 / (args.xfm_kva / 1000.0)
    zt = [[(0.011 * zb, 0.02 * zb) if r == c else (0.0, 0.0) for c in range(3)] for r in range(3)]
    branches.append({
        "id": "XFM-1", "from": "633", "to": "634", "phases": "abc", "z": matrix(zt, 1.0, "r", "x"),
        "ampacity": round(args.xfm_kva / 3.0 / (4.16 / math.sqrt(3.0)), 3), "base_kv": 4.16,
    })
    # 671-692 switch as a short 601 section
    c = CONFIG["601"]
    branches.append({
        "id": "SW-671-692", "from": "671", "to": "692", "phases": "abc",
        "z": matrix(c["z"], 10.0 / MILE, "r", "x"), "ampacity": c["amp"],
    })

    loads = []
    for bus, ph, kw, kvar, model in LOADS:
        loads.append({
            "bus": bus, "phase": ph, "p_kw": kw / 2.0, "q_kvar": kvar / 2.0, "zip": ZIP[model],
            "growth": {"family": "normal", "stdev_frac": args.stdev_frac, "input": "L" + bus},
        })
    for bus, ph, kw, kvar in DISTRIBUTED:
        loads.append({"id": "dist" + ph, "bus": bus, "phase": ph, "p_kw": kw / 2.0, "q_kvar": kvar / 2.0})

    res = [
        {"id": "W680", "kind": "wind", "bus": "680", "phases": "abc", "p_rated_kw": 450.0,
         "v_in": 4.0, "v_rated": 15.0, "v_out": 25.0, "pf": 0.85},
        {"id": "W634", "kind": "wind", "bus": "634", "phases": "abc", "p_rated_kw": 300.0,
         "v_in": 4.0, "v_rated": 15.0, "v_out": 25.0, "pf": 0.85},
        {"id": "PV675", "kind": "solar", "bus": "675", "phases": "abc", "p_rated_kw": 180.0,
         "r_c": 150.0, "r_std": 1000.0},
        {"id": "PV692", "kind": "solar", "bus": "692", "phases": "abc", "p_rated_kw": 240.0,
         "r_c": 150.0, "r_std": 1000.0},
    ]
    return {"name": "ieee13_res", "baseMVA": 3.0, "baseKV": 4.16, "buses": buses, "branches": branches,
            "loads": loads, "res": res}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "ieee13_res.json"))
    ap.add_argument("--source-pu", type=float, default=0.98)
    ap.add_argument("--xfm-kva", type=float, default=533.0)
    ap.add_argument("--stdev-frac", type=float, default=0.05)
    args = ap.parse_args()
    with open(args.out, "w") as fh:
        json.dump(build(args), fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main()
