#!/usr/bin/env python3
"""Run the multiplier/adjoint commutation check across step counts."""
import pathlib
import sys

from hovic.cli import run

OUT = pathlib.Path("results/commutation")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    out = OUT / "lobatto_s3.csv"
    code = run(["--out", str(out), "commutation-check",
                "--N-list", "8,16,32", "--family", "lobatto", "--stages", "3"])
    print(f"commutation-check: exit {code} -> {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
