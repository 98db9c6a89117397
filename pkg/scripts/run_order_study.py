#!/usr/bin/env python3
"""Sweep the empirical convergence order over both schemes and all families.

Writes one CSV + JSON pair per combination under results/order/.
"""
import pathlib
import sys

from hovic.cli import run

OUT = pathlib.Path("results/order")

CASES = [
    ("sprk", "gauss", 2), ("sprk", "radau", 2), ("sprk", "lobatto", 3),
    ("sprk", "chebyshev", 3),
    ("sg", "gauss", 3), ("sg", "lobatto", 3), ("sg", "radau", 3),
    ("sg", "chebyshev", 3),
]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    worst = 0
    for scheme, family, s in CASES:
        out = OUT / f"{scheme}_{family}_s{s}.csv"
        code = run(["--out", str(out), "order-study", "--model", "harmonic",
                    "--scheme", scheme, "--family", family,
                    "--stages", str(s)])
        print(f"{scheme}/{family} s={s}: exit {code} -> {out}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
