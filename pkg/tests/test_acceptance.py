"""Acceptance suite: one test per release criterion.

Each criterion runs at its stated tolerance, is held to its runtime
budget, and prints one pass/fail line (visible with pytest -s; pytest -v
also gives one line per criterion).
"""

import random
import shutil
import time
from contextlib import contextmanager

import numpy as np
import pytest
from fastapi.testclient import TestClient

from docfoundry import query as q
from docfoundry.config import ServiceConfig
from docfoundry.dual import DualStore, rrf_fuse
from docfoundry.embeddings import HashedNgramEmbedder
from docfoundry.hnsw import HnswIndex, brute_force_knn
from docfoundry.ingest import ChunkingConfig, chunk_document
from docfoundry.llm import BackendConfig, LlmClient
from docfoundry.pipelines import (AnswerWithSources, SourceCitation, ask,
                                  fewshot_predict, fewshot_train,
                                  summarize_concept, summarize_map_reduce,
                                  verify_grounding)
from docfoundry.service import create_app
from docfoundry.sparse import index_chunks, search
from docfoundry.structured import (ExtractionFailedError, FieldSpec, RecordSchema,
                                   extract_structured)

from conftest import make_chunks, make_doc
from oracles import bm25_scores, boolean_scan, rrf, tokenize
from test_service import _mask, _replay_script, _replay_sequence


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[acceptance] FAIL {name}")
        raise
    elapsed = time.perf_counter() - start
    assert elapsed < budget_s, \
        f"{name}: runtime {elapsed:.2f}s exceeds budget {budget_s}s"
    print(f"[acceptance] PASS {name} ({elapsed:.2f}s)")


def scripted(script) -> LlmClient:
    return LlmClient(BackendConfig(kind="scripted", model="t"), script=script)


# --- 1. quick-start conformance -----------------------------------------------------

def test_quickstart_structured_extraction_conformance():
    with criterion("quickstart structured-extraction conformance", 1.0):
        schema = RecordSchema(
            name="MeasuredQuantity",
            fields=(FieldSpec("value", "string", "numerical value"),
                    FieldSpec("unit", "string", "unit of measurement")))
        client = scripted([("He was going 35 mph.",
                            ['{"value": "35", "unit": "mph"}'])])
        record, attempts = extract_structured(client, "He was going 35 mph.",
                                              schema, attempt_fix=True)
        assert record["value"] == "35"
        assert record["unit"] == "mph"
        assert attempts == 1


# --- 2. BM25 oracle equivalence ------------------------------------------------------

VOCAB = ["budget", "fiscal", "year", "draft", "solar", "panel", "energy",
         "grid", "policy", "review", "audit", "march", "report", "committee",
         "agency", "fund"]


def _seeded_corpus(seed: int, n_chunks: int):
    rng = random.Random(seed)
    chunks = []
    for i in range(n_chunks):
        words = [rng.choice(VOCAB) for _ in range(rng.randint(4, 60))]
        chunks.append(make_chunks([" ".join(words)], doc_id=f"d{seed}x{i}")[0])
    return chunks


def test_bm25_oracle_equivalence():
    with criterion("BM25 oracle equivalence (5 corpora, 1e-9)", 5.0):
        for seed in range(5):
            chunks = _seeded_corpus(seed, 20 + seed * 20)  # up to 100 chunks
            index = index_chunks(chunks)
            corpus_tokens = {c.chunk_ref: tokenize(c.text) for c in chunks}
            rng = random.Random(seed + 1000)
            queries = [rng.choice(VOCAB) for _ in range(4)] + \
                [f"{rng.choice(VOCAB)} OR {rng.choice(VOCAB)}" for _ in range(4)]
            for query_text in queries:
                ast = q.parse_query(query_text)
                terms = query_text.replace(" OR ", " ").split()
                _, hits = search(index, ast, k=len(chunks))
                oracle = bm25_scores(corpus_tokens, terms)
                expected = sorted(
                    ((ref, score) for ref, score in oracle.items()
                     if any(t in corpus_tokens[ref] for t in terms)),
                    key=lambda item: (-item[1], item[0]))
                assert [h.chunk_ref for h in hits] == \
                    [ref for ref, _ in expected]
                for hit, (_, score) in zip(hits, expected):
                    assert abs(hit.score - score) < 1e-9


# --- 3. boolean evaluation equivalence --------------------------------------------------

def _random_ast(rng: random.Random, depth: int = 0) -> q.Node:
    roll = rng.random()
    if depth >= 2 or roll < 0.4:
        kind = rng.random()
        if kind < 0.6:
            return q.Term(rng.choice(VOCAB))
        if kind < 0.8:
            return q.Phrase(tuple(rng.choice(VOCAB)
                                  for _ in range(rng.randint(1, 2))))
        return q.FieldFilter("doc_id", f"d7x{rng.randint(0, 49)}")
    children = tuple(_random_ast(rng, depth + 1)
                     for _ in range(rng.randint(2, 3)))
    if roll < 0.65:
        return q.Or(children)
    if roll < 0.9:
        return q.And(children)
    return q.And((children[0], q.Not(children[1])))


def test_boolean_evaluation_equivalence():
    with criterion("boolean evaluation vs naive scan (200 ASTs)", 10.0):
        chunks = _seeded_corpus(7, 50)
        index = index_chunks(chunks)
        scan_input = {c.chunk_ref: {"tokens": tokenize(c.text),
                                    "fields": {**c.metadata, "doc_id": c.doc_id}}
                      for c in chunks}
        rng = random.Random(4242)
        for _ in range(200):
            ast = _random_ast(rng)
            assert index.evaluate(ast) == boolean_scan(scan_input, ast)


# --- 4 & 5. HNSW recall and graph invariants ----------------------------------------------

def _seeded_ngram_vectors(n: int, seed: int) -> dict[str, np.ndarray]:
    embedder = HashedNgramEmbedder()
    rng = random.Random(seed)
    out = {}
    for i in range(n):
        words = [rng.choice(VOCAB) + str(rng.randint(0, 99))
                 for _ in range(rng.randint(3, 10))]
        out[f"v{i:04d}"] = embedder.embed(" ".join(words))
    return out


def test_hnsw_recall_and_exactness():
    with criterion("HNSW recall@10 >= 0.9 and ef=N exactness", 60.0):
        vectors = _seeded_ngram_vectors(1000, seed=11)
        index = HnswIndex(dim=256, M=16, ef_construction=200, ef_search=50,
                          seed=5)
        for i, (ref, vec) in enumerate(vectors.items()):
            index.insert(i, vec, chunk_ref=ref)

        queries = list(_seeded_ngram_vectors(50, seed=99).values())
        found = 0
        for query_vec in queries:
            approx = {h.chunk_ref for h in index.search(query_vec, k=10, ef=50)}
            exact = {h.chunk_ref for h in brute_force_knn(vectors, query_vec, 10)}
            found += len(approx & exact)
        recall = found / (10 * len(queries))
        assert recall >= 0.9, f"recall@10 = {recall:.3f}"

        small = dict(list(vectors.items())[:200])
        small_index = HnswIndex(dim=256, seed=3)
        for i, (ref, vec) in enumerate(small.items()):
            small_index.insert(i, vec, chunk_ref=ref)
        for query_vec in queries[:20]:
            approx_hits = small_index.search(query_vec, k=10, ef=len(small))
            exact_hits = brute_force_knn(small, query_vec, 10)
            assert {h.chunk_ref for h in approx_hits} == \
                {h.chunk_ref for h in exact_hits}


def test_hnsw_graph_invariants_and_persistence(tmp_path):
    with criterion("HNSW per-insert invariants + persistence round-trip", 60.0):
        vectors = _seeded_ngram_vectors(1000, seed=23)
        index = HnswIndex(dim=256, seed=9)
        for i, (ref, vec) in enumerate(vectors.items()):
            index.insert(i, vec, chunk_ref=ref)
            # nodes whose adjacency this insert can touch: the new node
            # and its direct neighbors at every layer
            changed = {i}
            for graph in index.layers:
                changed.update(graph.get(i, []))
            index.check_invariants(node_ids=changed)
            if (i + 1) % 200 == 0:
                index.check_invariants()
        index.check_invariants()

        path = tmp_path / "hnsw.json"
        index.save(path)
        loaded = HnswIndex.load(path)
        assert loaded.to_json() == index.to_json()
        for query_vec in list(_seeded_ngram_vectors(20, seed=31).values()):
            assert loaded.search(query_vec, k=10) == \
                index.search(query_vec, k=10)


# --- 6. RRF correctness ----------------------------------------------------------------------

def test_rrf_correctness():
    with criterion("RRF worked example + 100 random configs + rescaling", 5.0):
        fused = dict(rrf_fuse([["A", "B"], ["X", "B", "A"]]))
        assert fused["A"] == pytest.approx(1 / 61 + 1 / 63)
        assert fused["B"] == pytest.approx(2 / 62)
        assert fused["A"] > fused["B"]

        rng = random.Random(17)
        universe = [f"c{i}" for i in range(40)]
        for _ in range(100):
            rankings = [rng.sample(universe, rng.randint(1, 25))
                        for _ in range(rng.randint(1, 4))]
            assert rrf_fuse(rankings) == rrf(rankings)

        # invariance under positive rescaling of sub-store scores: fusion
        # reads only ranks, so scoring the same ranked lists suffices
        store = DualStore()
        store.ingest(make_chunks(
            ["solar panel energy", "budget fiscal year", "energy grid audit",
             "solar grid report"], doc_id="d"))
        baseline = store.hybrid_search("solar OR energy", k=4, mode="hybrid")
        sparse_hits = store._sparse_ranking("solar OR energy", 16, None)
        scaled_order = [h.chunk_ref for h in sorted(
            sparse_hits, key=lambda h: (-h.score * 1234.5, h.chunk_ref))]
        assert scaled_order == [h.chunk_ref for h in sparse_hits]
        dense_refs = [h.chunk_ref
                      for h in store._dense_ranking("solar OR energy", 16, None)]
        refused = rrf_fuse([scaled_order, dense_refs])[:4]
        assert [h.chunk_ref for h in baseline] == [ref for ref, _ in refused]
        assert [h.fused_score for h in baseline] == \
            pytest.approx([score for _, score in refused])


# --- 7. repair-loop contract ---------------------------------------------------------------------

def test_repair_loop_contract():
    with criterion("repair-loop attempts and CallLog audit", 5.0):
        schema = RecordSchema("Gist", (FieldSpec("gist", "string", "g"),))
        client = scripted([("", ["not json", '{"gist": "fixed"}'])])
        record, attempts = extract_structured(client, "input", schema,
                                              attempt_fix=True)
        assert attempts == 2
        assert record == {"gist": "fixed"}
        assert len(client.call_log) == 2

        client = scripted([("", ["not json", '{"gist": "fixed"}'])])
        with pytest.raises(ExtractionFailedError) as err:
            extract_structured(client, "input", schema, attempt_fix=False)
        assert err.value.attempts_used == 1
        assert len(client.call_log) == 1

        for responses, expected_attempts in ((['{"gist": "ok"}'], 1),
                                             (["junk", '{"gist": "ok"}'], 2),
                                             (["j", "k", '{"gist": "ok"}'], 3)):
            client = scripted([("", list(responses))])
            _, attempts = extract_structured(client, "input", schema,
                                             attempt_fix=True, max_attempts=3)
            assert attempts == expected_attempts
            assert len(client.call_log) == attempts


# --- 8. map-reduce audit ---------------------------------------------------------------------------

def test_map_reduce_audit():
    with criterion("map-reduce call audit + concept threshold 0", 5.0):
        cfg = ChunkingConfig(chunk_size_words=10, overlap_words=0)
        doc = make_doc(" ".join(f"w{i}" for i in range(40)))
        client = scripted([("Summarize the following passage",
                            ["m1", "m2", "m3", "m4"]),
                           ("Combine", ["combined"])])
        result = summarize_map_reduce(client, doc, cfg, word_budget=20)
        assert result.map_call_count == 4
        assert result.reduce_call_count == 1
        assert len(client.call_log) == 5

        plain_client = scripted([("Summarize the following passage", ["m"] * 4),
                                 ("Combine", ["r"])])
        focus_client = scripted([("Summarize the following passage", ["m"] * 4),
                                 ("Combine", ["r"])])
        plain = summarize_map_reduce(plain_client, doc, cfg)
        focused = summarize_concept(focus_client, HashedNgramEmbedder(), doc,
                                    "anything", cfg, min_similarity=0.0)
        assert focused.chunk_refs == plain.chunk_refs
        assert focused.map_call_count == plain.map_call_count
        assert focused.reduce_call_count == plain.reduce_call_count
        assert len(focus_client.call_log) == len(plain_client.call_log)


# --- 9. grounding check -----------------------------------------------------------------------------

def test_grounding_check():
    with criterion("grounding verdicts + verbatim snippets e2e", 5.0):
        store = DualStore()
        store.add_documents([make_doc(
            "The solar array produces clean energy for the local grid.",
            source_path="solar.txt")])
        ref = next(iter(store.chunks))
        chunk_text = store.chunks[ref].text

        verbatim = AnswerWithSources(
            answer=chunk_text,
            sources=(SourceCitation(ref, 1.0, chunk_text[:50]),),
            retrieval_mode="sparse")
        report = verify_grounding(verbatim, store)
        assert report.snippets_verbatim
        assert all(v.supported for v in report.sentences)

        injected = AnswerWithSources(
            answer=chunk_text + " Zebras juggle kumquats overnight.",
            sources=(SourceCitation(ref, 1.0, chunk_text[:50]),),
            retrieval_mode="sparse")
        report = verify_grounding(injected, store)
        assert report.unsupported == ("Zebras juggle kumquats overnight.",)

        # e2e ask across modes: every snippet is a verbatim substring
        for mode in ("sparse", "dense", "hybrid"):
            client = scripted([("", ["answer text"])])
            answer = ask(client, store, "solar OR energy", k=2, mode=mode)
            checked = verify_grounding(answer, store)
            assert checked.snippets_verbatim
            texts = store.chunk_texts()
            for source in answer.sources:
                assert source.snippet in texts[source.chunk_ref]


# --- 10. few-shot classifier ---------------------------------------------------------------------------

def test_fewshot_classifier():
    with criterion("few-shot 2-cluster accuracy + centroid equality", 5.0):
        embedder = HashedNgramEmbedder()
        alpha_vocab = ["alpha", "bravo", "charlie", "delta", "echo"]
        omega_vocab = ["xray", "yankee", "zulu", "whiskey", "victor"]
        rng = random.Random(3)
        examples = []
        for i in range(10):
            examples.append((" ".join(rng.sample(alpha_vocab, 3)), "alpha"))
            examples.append((" ".join(rng.sample(omega_vocab, 3)), "omega"))
        assert len(examples) == 20
        model = fewshot_train(embedder, examples)

        for label in ("alpha", "omega"):
            vectors = [embedder.embed(t) for t, l in examples if l == label]
            mean = np.mean(vectors, axis=0)
            expected = mean / np.linalg.norm(mean)
            assert np.allclose(model.centroids[label], expected, atol=1e-9)

        correct = sum(1 for text, label in examples
                      if fewshot_predict(model, embedder, text)[0] == label)
        assert correct == 20


# --- 11. service replay determinism ------------------------------------------------------------------------

def test_service_replay_determinism(tmp_path, fixture_corpus):
    with criterion("service replay determinism + session restart", 30.0):
        def make_client():
            cfg = ServiceConfig(stores_root=tmp_path / "data",
                                allowlist=[fixture_corpus],
                                backend=BackendConfig(kind="scripted",
                                                      model="t"))
            llm = LlmClient(cfg.backend, script=_replay_script())
            return TestClient(create_app(cfg, client=llm))

        client_a = make_client()
        responses_a = _replay_sequence(client_a, fixture_corpus)
        assert len(responses_a) == 25

        # chat history survives a server restart on the same state dir
        restarted = make_client()
        history = restarted.get("/api/sessions/s000001")
        assert history.status_code == 200
        assert [m["content"] for m in history.json()["history"]][:2] == \
            ["hello", "chat1"]

        shutil.rmtree(tmp_path / "data")
        client_b = make_client()
        responses_b = _replay_sequence(client_b, fixture_corpus)
        assert [_mask(r) for r in responses_a] == [_mask(r) for r in responses_b]
