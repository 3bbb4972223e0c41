/**
 * Test helper: boot the real chat service (scripted backend, no trained
 * models) in a child python process and wait until it answers health
 * checks.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { fileURLToPath } from "node:url";

const HERE = fileURLToPath(new URL(".", import.meta.url));
const REPO_ROOT = resolve(HERE, "..", "..");
const TESTS_DATA = join(REPO_ROOT, "tests", "data");

const BOOT_SCRIPT = `
import sys
from moldassist.config import ServiceConfig
from moldassist.service import create_app
import uvicorn
config = ServiceConfig.load(sys.argv[1])
uvicorn.run(create_app(config), host="127.0.0.1", port=int(sys.argv[2]),
            log_level="warning")
`;

export interface TestServer {
  baseUrl: string;
  stateDir: string;
  stop(): Promise<void>;
  restart(): Promise<void>;
}

async function waitForHealth(baseUrl: string, child: ChildProcess): Promise<void> {
  for (let attempt = 0; attempt < 100; attempt += 1) {
    if (child.exitCode !== null) {
      throw new Error(`service exited early with code ${child.exitCode}`);
    }
    try {
      const response = await fetch(`${baseUrl}/api/health`);
      if (response.ok) {
        return;
      }
    } catch {
      // not up yet
    }
    await new Promise((done) => setTimeout(done, 100));
  }
  throw new Error(`service at ${baseUrl} did not become healthy`);
}

export async function startServer(port: number): Promise<TestServer> {
  const workDir = mkdtempSync(join(tmpdir(), "moldassist-frontend-"));
  const stateDir = join(workDir, "state");
  const configPath = join(workDir, "config.json");
  writeFileSync(
    configPath,
    JSON.stringify({
      backend: "scripted",
      fixture_path: join(TESTS_DATA, "fixtures.json"),
      direction_csv: join(TESTS_DATA, "directions.csv"),
      priority_csv: join(TESTS_DATA, "priorities.csv"),
      manual_pages: join(TESTS_DATA, "manual_pages.jsonl"),
      price_table_path: join(TESTS_DATA, "price_table.json"),
      search_fixture_path: join(TESTS_DATA, "search_fixture.json"),
      state_dir: stateDir,
    }),
  );

  const baseUrl = `http://127.0.0.1:${port}`;
  let child: ChildProcess | null = null;

  const boot = async () => {
    child = spawn("python3", ["-c", BOOT_SCRIPT, configPath, String(port)], {
      cwd: REPO_ROOT,
      env: { ...process.env, PYTHONPATH: join(REPO_ROOT, "src") },
      stdio: ["ignore", "inherit", "inherit"],
    });
    await waitForHealth(baseUrl, child);
  };

  const stop = async () => {
    if (child === null) {
      return;
    }
    const proc = child;
    child = null;
    const exited = new Promise((done) => proc.once("exit", done));
    proc.kill("SIGTERM");
    await exited;
  };

  await boot();
  return {
    baseUrl,
    stateDir,
    stop,
    restart: async () => {
      await stop();
      await boot();
    },
  };
}
