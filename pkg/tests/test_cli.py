import csv
import io
import json
import socket
import subprocess
import sys
import time

import httpx
import pytest
from click.testing import CliRunner

from docfoundry.cli import main


@pytest.fixture
def runner():
    return CliRunner()  # click >= 8.2 separates stderr by default


@pytest.fixture
def cli_env(tmp_path, fixture_corpus, monkeypatch):
    data = tmp_path / "data"
    monkeypatch.setenv("DOCFOUNDRY_STORES_ROOT", str(data))
    monkeypatch.delenv("DOCFOUNDRY_SCRIPT", raising=False)
    return {"data": data, "corpus": fixture_corpus, "tmp": tmp_path}


def _script_env(tmp_path, monkeypatch, script):
    path = tmp_path / "script.json"
    path.write_text(json.dumps(script))
    monkeypatch.setenv("DOCFOUNDRY_SCRIPT", str(path))


# --- ingest ------------------------------------------------------------------------

def test_ingest_prints_counts(runner, cli_env):
    result = runner.invoke(main, ["ingest", str(cli_env["corpus"])])
    assert result.exit_code == 0, result.output
    assert "2 documents" in result.output


def test_ingest_missing_directory_is_fatal(runner, cli_env):
    result = runner.invoke(main, ["ingest", "/no/such/dir"])
    assert result.exit_code == 2
    assert "error" in result.stderr


def test_ingest_rerun_warns_and_exits_partial(runner, cli_env):
    assert runner.invoke(main, ["ingest", str(cli_env["corpus"])]).exit_code == 0
    result = runner.invoke(main, ["ingest", str(cli_env["corpus"])])
    assert result.exit_code == 1
    assert "already ingested" in result.stderr


def test_ingest_json_output(runner, cli_env):
    result = runner.invoke(main, ["ingest", str(cli_env["corpus"]), "--json"])
    body = json.loads(result.output)
    assert body["documents"] == 2
    assert list(body) == sorted(body)


# --- search -------------------------------------------------------------------------

def test_search_finds_known_term(runner, cli_env):
    runner.invoke(main, ["ingest", str(cli_env["corpus"])])
    result = runner.invoke(main, ["search", "solar", "--mode", "sparse"])
    assert result.exit_code == 0
    assert "solar" in result.output.lower()


def test_search_syntax_error_shows_caret(runner, cli_env):
    runner.invoke(main, ["ingest", str(cli_env["corpus"])])
    result = runner.invoke(main, ["search", "a AND", "--mode", "sparse"])
    assert result.exit_code == 2
    assert "^" in result.stderr


def test_search_json_hit_shape(runner, cli_env):
    runner.invoke(main, ["ingest", str(cli_env["corpus"])])
    result = runner.invoke(main, ["search", "solar", "--mode", "sparse",
                                  "--json"])
    body = json.loads(result.output)
    assert set(body) == {"total", "hits"}
    for hit in body["hits"]:
        assert set(hit) == {"chunk_ref", "score", "highlights", "snippet"}
        assert isinstance(hit["score"], float)


# --- ask / prompt ---------------------------------------------------------------------

def test_ask_prints_sources_and_grounding(runner, cli_env, monkeypatch):
    runner.invoke(main, ["ingest", str(cli_env["corpus"])])
    _script_env(cli_env["tmp"], monkeypatch,
                [["Question:", ["Panels convert sunlight."]]])
    result = runner.invoke(main, ["ask", "solar energy",
                                  "--backend", "scripted/test"])
    assert result.exit_code == 0, result.output
    assert "Panels convert sunlight." in result.output
    assert "[1]" in result.output
    assert "Sources:" in result.output
    assert "Grounding:" in result.output


def test_prompt_echo_backend(runner):
    result = runner.invoke(main, ["prompt", "say this back",
                                  "--backend", "echo/x"])
    assert result.exit_code == 0
    assert result.output.strip() == "say this back"


def test_prompt_unknown_provider(runner):
    result = runner.invoke(main, ["prompt", "x", "--backend", "bogus/x"])
    assert result.exit_code == 2


# --- summarize ---------------------------------------------------------------------------

def test_summarize_document(runner, cli_env, monkeypatch):
    runner.invoke(main, ["ingest", str(cli_env["corpus"])])
    listing = runner.invoke(main, ["search", "solar", "--mode", "sparse",
                                   "--json"])
    doc_id = json.loads(listing.output)["hits"][0]["chunk_ref"].rsplit(":", 1)[0]
    _script_env(cli_env["tmp"], monkeypatch,
                [["Summarize the following document", ["a short summary"]]])
    result = runner.invoke(main, ["summarize", doc_id,
                                  "--backend", "scripted/test"])
    assert result.exit_code == 0, result.output
    assert "a short summary" in result.output


def test_summarize_unknown_doc(runner, cli_env):
    result = runner.invoke(main, ["summarize", "ghost"])
    assert result.exit_code == 2


# --- extract ----------------------------------------------------------------------------

def test_extract_writes_parseable_csv(runner, cli_env, monkeypatch):
    runner.invoke(main, ["ingest", str(cli_env["corpus"])])
    listing = runner.invoke(main, ["search", "budget", "--mode", "sparse",
                                   "--json"])
    doc_id = json.loads(listing.output)["hits"][0]["chunk_ref"].rsplit(":", 1)[0]
    schema_path = cli_env["tmp"] / "schema.json"
    schema_path.write_text(json.dumps(
        {"name": "Gist", "fields": [
            {"name": "gist", "type": "string", "description": "the gist"}]}))
    template_path = cli_env["tmp"] / "template.txt"
    template_path.write_text("Extract the gist of: {unit_text}")
    _script_env(cli_env["tmp"], monkeypatch, [["", ['{"gist": "g"}'] * 10]])
    out_csv = cli_env["tmp"] / "rows.csv"
    result = runner.invoke(main, [
        "extract", doc_id, "--schema", str(schema_path),
        "--template", str(template_path), "--csv", str(out_csv),
        "--backend", "scripted/test"])
    assert result.exit_code == 0, result.output
    parsed = list(csv.DictReader(io.StringIO(out_csv.read_text())))
    assert len(parsed) == 2  # two sentences in budget.md
    assert all(row["gist"] == "g" for row in parsed)


# --- classify ---------------------------------------------------------------------------------

def test_classify_two_labels(runner, cli_env):
    examples = cli_env["tmp"] / "examples.csv"
    with open(examples, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["text", "label"])
        writer.writerow(["alpha bravo charlie", "letters"])
        writer.writerow(["one two three four", "numbers"])
    target = cli_env["tmp"] / "input.txt"
    target.write_text("alpha charlie bravo")
    result = runner.invoke(main, ["classify", "--examples", str(examples),
                                  "--input", str(target)])
    assert result.exit_code == 0, result.output
    assert "letters" in result.output


def test_classify_single_label_is_fatal(runner, cli_env):
    examples = cli_env["tmp"] / "examples.csv"
    with open(examples, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["text", "label"])
        writer.writerow(["alpha", "only"])
    target = cli_env["tmp"] / "input.txt"
    target.write_text("alpha")
    result = runner.invoke(main, ["classify", "--examples", str(examples),
                                  "--input", str(target)])
    assert result.exit_code == 2


# --- serve -------------------------------------------------------------------------------------

def test_serve_bad_config_names_key(runner, cli_env):
    config = cli_env["tmp"] / "docfoundry.toml"
    config.write_text("[service]\nbogus_key = 1\n")
    result = runner.invoke(main, ["serve", "--config", str(config)])
    assert result.exit_code == 2
    assert "bogus_key" in result.stderr


def test_serve_port_in_use_is_fatal(tmp_path, fixture_corpus):
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.listen(1)
    env = {"DOCFOUNDRY_STORES_ROOT": str(tmp_path / "data"), "PATH": "/usr/bin:/bin"}
    proc = subprocess.run(
        [sys.executable, "-m", "docfoundry.cli", "serve", "--port", str(port)],
        capture_output=True, text=True, timeout=30, env=env)
    sock.close()
    assert proc.returncode == 2
    assert "error" in proc.stderr


def test_serve_health_endpoint(tmp_path):
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    env = {"DOCFOUNDRY_STORES_ROOT": str(tmp_path / "data"), "PATH": "/usr/bin:/bin"}
    proc = subprocess.Popen(
        [sys.executable, "-m", "docfoundry.cli", "serve", "--port", str(port)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, env=env)
    try:
        deadline = time.time() + 15
        last_error = None
        while time.time() < deadline:
            try:
                response = httpx.get(f"http://127.0.0.1:{port}/api/health",
                                     timeout=1.0)
                assert response.status_code == 200
                assert response.json()["version"]
                break
            except (httpx.HTTPError, AssertionError) as exc:
                last_error = exc
                time.sleep(0.3)
        else:
            raise AssertionError(f"server never came up: {last_error}")
    finally:
        proc.terminate()
        proc.wait(timeout=10)
