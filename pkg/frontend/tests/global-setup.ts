/**
 * Boot the real HTTP service (scripted backend, fixture corpus) once for
 * the whole test run; tests reach it via inject("baseUrl").
 */

import { type ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync, mkdirSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import type { TestProject } from "vitest/node";

const FIXTURE_DOCS: Record<string, string> = {
  "solar.txt":
    "The solar array produces clean energy. Panels convert sunlight " +
    "into electric power. Inverters feed the grid.",
  "budget.md":
    "Budget figures for the fiscal year were revised upward. The " +
    "committee approved new spending limits in March.",
};

const SCRIPT: [string, string[]][] = [
  [
    "Question:",
    [
      "The solar array produces clean energy. Pixies certify the arithmetic.",
      "Budget figures for the fiscal year were revised upward.",
    ],
  ],
  ["Summarize the following document", ["a direct summary"]],
  ["Summarize the following passage", ["m", "m", "m", "m"]],
  ["Combine", ["combined summary"]],
  ["user:", ["chat reply one", "chat reply two", "chat reply three"]],
  ["", Array(40).fill('{"finding": "noted"}')],
];

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

async function waitForHealth(base: string, proc: ChildProcess): Promise<void> {
  const deadline = Date.now() + 45_000;
  let lastError: unknown = null;
  while (Date.now() < deadline) {
    if (proc.exitCode !== null) {
      throw new Error(`server exited early with code ${proc.exitCode}`);
    }
    try {
      const response = await fetch(`${base}/api/health`);
      if (response.ok) return;
    } catch (error) {
      lastError = error;
    }
    await new Promise((r) => setTimeout(r, 300));
  }
  throw new Error(`server never became healthy: ${lastError}`);
}

export default async function setup(project: TestProject): Promise<() => void> {
  const root = mkdtempSync(join(tmpdir(), "docfoundry-ui-"));
  const corpus = join(root, "corpus");
  mkdirSync(corpus);
  for (const [name, text] of Object.entries(FIXTURE_DOCS)) {
    writeFileSync(join(corpus, name), text);
  }
  writeFileSync(join(root, "script.json"), JSON.stringify(SCRIPT));
  const config = join(root, "docfoundry.toml");
  writeFileSync(
    config,
    `[stores]\nroot = "${join(root, "data")}"\n\n` +
      `[backend]\nkind = "scripted"\nmodel = "ui-test"\n\n` +
      `[service]\nallowlist = ["${corpus}"]\n`,
  );

  const port = await freePort();
  const proc = spawn(
    "python3",
    ["-m", "docfoundry.cli", "serve", "--port", String(port),
     "--config", config],
    {
      // repo root, so `serve` can also find frontend/dist when built
      cwd: import.meta.dirname
        ? join(import.meta.dirname, "..", "..")
        : join(process.cwd(), ".."),
      env: { ...process.env, DOCFOUNDRY_SCRIPT: join(root, "script.json") },
      stdio: ["ignore", "pipe", "pipe"],
    },
  );
  const stderr: string[] = [];
  proc.stderr?.on("data", (chunk: Buffer) => stderr.push(chunk.toString()));

  const base = `http://127.0.0.1:${port}`;
  try {
    await waitForHealth(base, proc);
  } catch (error) {
    proc.kill();
    throw new Error(`${error}\nserver stderr:\n${stderr.join("")}`);
  }

  const ingest = await fetch(`${base}/api/ingest`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ path: corpus }),
  });
  if (!ingest.ok) {
    proc.kill();
    throw new Error(`fixture ingest failed: ${await ingest.text()}`);
  }

  project.provide("baseUrl", base);
  project.provide("corpusDir", corpus);

  return () => {
    proc.kill();
    rmSync(root, { recursive: true, force: true });
  };
}

declare module "vitest" {
  export interface ProvidedContext {
    baseUrl: string;
    corpusDir: string;
  }
}
