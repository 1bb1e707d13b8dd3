/**
 * Promise wrapper around run polling: resolve once the run reaches a
 * terminal state, surfacing every intermediate envelope to the caller so
 * progress can be rendered while waiting.
 */

import type { ApiClient } from "./api.js";
import type { RunEnvelope, RunState } from "./types.js";

const TERMINAL_STATES: ReadonlySet<RunState> = new Set(["done", "partial", "failed"]);

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onUpdate?: (run: RunEnvelope) => void;
  /** Injectable for tests; defaults to setTimeout. */
  sleep?: (ms: number) => Promise<void>;
}

/**
 * Poll GET /runs/{id} until the run settles. Resolves with the terminal
 * envelope (including "failed"; deciding how to present a failure is the
 * caller's job). Rejects only on timeout or transport errors.
 */
export async function pollRun(
  client: ApiClient, runId: string, options: PollOptions = {},
): Promise<RunEnvelope> {
  const intervalMs = options.intervalMs ?? 500;
  const timeoutMs = options.timeoutMs ?? 120_000;
  const sleep = options.sleep ??
    ((ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms)));
  const startedAt = Date.now();
  for (;;) {
    const run = await client.getRun(runId);
    options.onUpdate?.(run);
    if (TERMINAL_STATES.has(run.state)) {
      return run;
    }
    if (Date.now() - startedAt >= timeoutMs) {
      throw new Error(
        `run ${runId} still ${run.state} after ${timeoutMs}ms`);
    }
    await sleep(intervalMs);
  }
}
