#!/usr/bin/env python3
"""End-to-end walkthrough on a tiny generated corpus, fully offline.

Ingests three small documents into a dual store, runs keyword / semantic /
hybrid searches, asks a cited question against a scripted backend, and
verifies grounding. Mirrors the library quick start in the README.
"""

import tempfile
from pathlib import Path

from docfoundry.dual import DualStore
from docfoundry.ingest import load_directory
from docfoundry.llm import BackendConfig, LlmClient
from docfoundry.pipelines import ask, verify_grounding

DOCS = {
    "solar.txt": "The solar array produces clean energy. Panels convert "
                 "sunlight into electric power. Inverters feed the grid.",
    "budget.txt": "Budget figures for the fiscal year were revised upward. "
                  "The committee approved new spending limits in March.",
    "policy.txt": "Energy policy review recommends grid modernization and "
                  "storage incentives for solar adoption.",
}


def main():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        for name, text in DOCS.items():
            (root / name).write_text(text)

        records, failures = load_directory(root)
        store = DualStore()
        chunks = store.add_documents(records)
        print(f"ingested {len(records)} documents -> {len(chunks)} chunks "
              f"({len(failures)} failures)")

        for mode in ("sparse", "dense", "hybrid"):
            hits = store.hybrid_search("solar energy", k=3, mode=mode)
            ranked = ", ".join(f"{h.chunk_ref}:{h.fused_score:.4f}"
                               for h in hits)
            print(f"{mode:>6}: {ranked}")

        client = LlmClient(
            BackendConfig(kind="scripted", model="demo"),
            script=[("Question:", ["Solar panels convert sunlight into "
                                   "electric power [1]."])])
        answer = ask(client, store, "solar energy", k=2)
        print(f"\nanswer: {answer.answer}")
        for i, source in enumerate(answer.sources, start=1):
            print(f"  [{i}] {source.chunk_ref} score={source.score:.4f}")

        report = verify_grounding(answer, store)
        print(f"grounding ok: {report.ok} "
              f"(unsupported: {list(report.unsupported)})")
        print(f"backend calls logged: {len(client.call_log)}")


if __name__ == "__main__":
    main()
