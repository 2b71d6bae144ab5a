#!/usr/bin/env python3
"""Counting throughput benchmark over a generated corpus.

Generates a flat jsonl corpus of the requested size, counts it under
several shard partitions, verifies the outputs are byte-identical, and
reports aggregate MB/s.
"""

import argparse
import tempfile
import time
from pathlib import Path

from freqgap.corpus import count_corpus
from freqgap.counting import CounterConfig
from freqgap.demo import generate_throughput_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size-mb", type=int, default=1000)
    parser.add_argument("--shards", type=int, nargs="+", default=[1, 4, 8])
    parser.add_argument("--window", type=int, default=5)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory(prefix="freqgap-bench-") as tmp:
        tmp = Path(tmp)
        corpus = generate_throughput_corpus(
            tmp / "corpus.jsonl", size_bytes=args.size_mb * 1_000_000, seed=args.seed
        )
        size = corpus.stat().st_size
        print(f"corpus: {size / 1e6:.0f} MB")
        reference = None
        for shards in args.shards:
            out = tmp / f"shards{shards}" / "counts.tsv"
            started = time.perf_counter()
            meta = count_corpus(
                corpus, "jsonl", CounterConfig(window=args.window), out, shards=shards
            )
            elapsed = time.perf_counter() - started
            blob = out.read_bytes()
            if reference is None:
                reference = blob
            agreement = "ok" if blob == reference else "MISMATCH"
            print(
                f"shards={shards}: {elapsed:6.1f}s  {size / 1e6 / elapsed:6.1f} MB/s  "
                f"{meta.tokens / elapsed / 1e6:5.1f} Mtok/s  output {agreement}"
            )


if __name__ == "__main__":
    main()
