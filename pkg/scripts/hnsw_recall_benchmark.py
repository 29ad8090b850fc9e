#!/usr/bin/env python3
"""Measure HNSW recall and latency against the exact scan.

Builds an index over seeded hashed-n-gram vectors and sweeps ef_search,
printing recall@k and mean query latency per setting.
"""

import argparse
import random
import time

from docfoundry.embeddings import HashedNgramEmbedder
from docfoundry.hnsw import HnswIndex, brute_force_knn

WORDS = ["budget", "fiscal", "solar", "panel", "energy", "grid", "policy",
         "review", "audit", "report", "committee", "agency", "fund", "march"]


def seeded_vectors(n: int, seed: int):
    embedder = HashedNgramEmbedder()
    rng = random.Random(seed)
    out = {}
    for i in range(n):
        text = " ".join(rng.choice(WORDS) + str(rng.randint(0, 99))
                        for _ in range(rng.randint(3, 10)))
        out[f"v{i:05d}"] = embedder.embed(text)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--queries", type=int, default=50)
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--ef", type=int, nargs="+",
                        default=[10, 25, 50, 100, 200])
    args = parser.parse_args()

    vectors = seeded_vectors(args.n, args.seed)
    index = HnswIndex(dim=256, seed=5)
    start = time.perf_counter()
    for i, (ref, vec) in enumerate(vectors.items()):
        index.insert(i, vec, chunk_ref=ref)
    build_s = time.perf_counter() - start
    print(f"built index: n={args.n} layers={len(index.layers)} "
          f"in {build_s:.2f}s")

    queries = list(seeded_vectors(args.queries, args.seed + 1).values())
    exact = [set(h.chunk_ref for h in brute_force_knn(vectors, q, args.k))
             for q in queries]

    for ef in args.ef:
        found = 0
        start = time.perf_counter()
        for q, truth in zip(queries, exact):
            hits = index.search(q, k=args.k, ef=max(ef, args.k))
            found += len({h.chunk_ref for h in hits} & truth)
        elapsed = time.perf_counter() - start
        recall = found / (args.k * len(queries))
        print(f"ef={ef:4d}  recall@{args.k}={recall:.3f}  "
              f"{1000 * elapsed / len(queries):.2f} ms/query")


if __name__ == "__main__":
    main()
