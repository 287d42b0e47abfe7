// UI contract acceptance: a scripted 10-cluster session against a live
// annotation server completes through the UI's submission path with exactly
// ten POSTs, survives one page reload mid-session, and produces a session
// log identical to an oracle run answering with the same labels.

import { spawn } from "node:child_process";
import { once } from "node:events";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, describe, expect, it } from "vitest";

import { AnnoClient } from "../src/api.js";
import { AnnotatorController } from "../src/controller.js";

const FIXTURES = fileURLToPath(new URL("./fixtures", import.meta.url));

function pickLabel(clusterId: number): number {
  return (clusterId % 5) + 1;
}

function startServer(logPath: string) {
  const child = spawn("python3", [join(FIXTURES, "serve_fixture.py"), logPath], {
    stdio: ["ignore", "pipe", "inherit"],
  });
  const ready = new Promise<number>((resolve, reject) => {
    let buffer = "";
    child.stdout.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const line = buffer.split("\n")[0];
      if (line) resolve((JSON.parse(line) as { port: number }).port);
    });
    child.on("error", reject);
    child.on("exit", (code) => reject(new Error(`server exited early (${code})`)));
  });
  return { child, ready };
}

function compareLogs(logPath: string): Promise<string> {
  return new Promise((resolve, reject) => {
    const child = spawn("python3", [join(FIXTURES, "compare_logs.py"), logPath], {
      stdio: ["ignore", "pipe", "inherit"],
    });
    let out = "";
    child.stdout.on("data", (chunk: Buffer) => { out += chunk.toString(); });
    child.on("error", reject);
    child.on("exit", () => resolve(out.trim()));
  });
}

let cleanup: (() => void) | null = null;
afterAll(() => cleanup?.());

describe("annotator UI against a live server", () => {
  it("labels all ten clusters with exactly ten POSTs across one reload", async () => {
    const logPath = join(mkdtempSync(join(tmpdir(), "annoui-")), "session.log");
    const { child, ready } = startServer(logPath);
    cleanup = () => { child.kill(); };
    const port = await ready;
    const baseUrl = `http://127.0.0.1:${port}`;

    let postCount = 0;
    const countingFetch: typeof fetch = (input, init) => {
      if (init?.method === "POST") postCount += 1;
      return fetch(input, init);
    };

    // first page load: label five clusters, with a double click on the first
    const first = new AnnotatorController(new AnnoClient(baseUrl, countingFetch));
    await first.start();
    expect(first.state.session?.totalClusters).toBe(10);
    expect(first.state.current?.clusterId).toBe(0);
    expect(first.state.current?.mediaHint).toBe("clips/cluster0.mp4");
    await Promise.all([
      first.chooseLabel(pickLabel(0)),
      first.chooseLabel(pickLabel(0)),
    ]);
    while (first.state.current && first.state.current.clusterId < 5) {
      await first.chooseLabel(pickLabel(first.state.current.clusterId));
    }
    expect(first.state.session?.labeled).toBe(5);

    // page reload: fresh client and controller, state restored from the server
    const second = new AnnotatorController(new AnnoClient(baseUrl, countingFetch));
    await second.start();
    expect(second.state.session?.labeled).toBe(5);
    expect(second.state.current?.clusterId).toBe(5);
    while (!second.state.done && second.state.current) {
      await second.chooseLabel(pickLabel(second.state.current.clusterId));
    }
    expect(second.state.done).toBe(true);
    expect(second.state.session?.labeled).toBe(10);
    expect(postCount).toBe(10);

    const [exitCode] = (await once(child, "exit")) as [number];
    cleanup = null;
    expect(exitCode).toBe(0);

    expect(await compareLogs(logPath)).toBe("IDENTICAL");
  }, 90_000);
});
