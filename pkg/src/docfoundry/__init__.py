"""Offline-first document intelligence engine.

Ingests document collections into sparse (BM25), dense (HNSW), and dual
vector stores and runs LLM-powered pipelines (summarization, classification,
extraction, cited question answering) with auditable, schema-validated
outputs. Exposed as a library, CLI (``docfoundry``), and HTTP service.
"""

__version__ = "0.1.0"
