#!/usr/bin/env python3
"""Writes the synthetic copy-task corpus used by the bundled configs."""

import argparse
import random
import string
from pathlib import Path


def sentences(rng, count, symbols, lo, hi):
    return [" ".join(rng.choice(symbols) for _ in range(rng.randint(lo, hi))) for _ in range(count)]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "configs" / "data")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--symbols", type=int, default=20)
    parser.add_argument("--train", type=int, default=200)
    parser.add_argument("--dev", type=int, default=50)
    parser.add_argument("--min-len", type=int, default=12)
    parser.add_argument("--max-len", type=int, default=24)
    parser.add_argument("--prefix", default="copy")
    parser.add_argument("--mono", type=int, default=0, help="extra monolingual lines for LM pretraining")
    args = parser.parse_args()

    rng = random.Random(args.seed)
    symbols = list(string.ascii_lowercase[: args.symbols])
    args.out.mkdir(parents=True, exist_ok=True)
    splits = [("train", args.train), ("dev", args.dev)]
    if args.mono:
        splits.append(("mono", args.mono))
    for split, count in splits:
        lines = sentences(rng, count, symbols, args.min_len, args.max_len)
        (args.out / f"{args.prefix}.{split}").write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
