/**
 * Orchestrates one review session: loads a run, tracks reviewer decisions,
 * pushes accepted pairs to the server, drives reruns, and diffs results.
 *
 * Deliberately DOM-free. html() returns the full view as a string; app.ts
 * injects it and routes click events back into the methods here, and tests
 * exercise the same surface against a mock client.
 */

import { ApiError } from "./api.js";
import { diffManifests } from "./diff.js";
import { pollRun } from "./poll.js";
import { renderBanner, renderGuidancePanel, renderRunView } from "./render.js";
import { ReviewState, SubmissionQueue, attrKey } from "./state.js";
import type { ApiClient } from "./api.js";
import type { DiffEntry } from "./diff.js";
import type { BannerKind } from "./render.js";
import type { Decision } from "./state.js";
import type {
  EvalReport,
  GuidancePairBody,
  GuidanceTuple,
  ManifestRow,
  ProjectSummary,
  RunEnvelope,
  RunRequest,
} from "./types.js";

export interface ControllerOptions {
  pollIntervalMs?: number;
  pollTimeoutMs?: number;
  /** Injectable clock for tests; used by both polling and retry backoff. */
  sleep?: (ms: number) => Promise<void>;
  onUpdate?: (run: RunEnvelope) => void;
}

export class ReviewController {
  project: ProjectSummary | null = null;
  run: RunEnvelope | null = null;
  state: ReviewState | null = null;
  guidance: GuidanceTuple[] = [];
  diff: DiffEntry[] | undefined;
  evalReport: EvalReport | undefined;
  banner: { kind: BannerKind; message: string } | undefined;
  rerunBlocked: string | undefined;
  readonly docs = new Map<string, string>();
  readonly inlineErrors = new Map<string, string>();

  private readonly client: ApiClient;
  private readonly projectId: string;
  private readonly options: ControllerOptions;
  private readonly queue: SubmissionQueue;
  /** Last pair pushed to the server per attribute, for clean replacement. */
  private readonly submitted = new Map<string, GuidancePairBody>();

  constructor(client: ApiClient, projectId: string, options: ControllerOptions = {}) {
    this.client = client;
    this.projectId = projectId;
    this.options = options;
    this.queue = new SubmissionQueue(3, 250, options.sleep);
  }

  /**
   * Load the project and one of its runs (the given id, else the newest
   * reviewable one). 404 and backend failures become banners instead of
   * exceptions so the page always renders something.
   */
  async load(runId?: string): Promise<void> {
    this.banner = undefined;
    this.run = null;
    this.state = null;
    this.diff = undefined;
    this.evalReport = undefined;
    this.inlineErrors.clear();
    this.submitted.clear();
    try {
      this.project = await this.client.getProject(this.projectId);
      this.guidance = this.project.guidance;
      const chosen = runId ?? pickRun(this.project);
      if (chosen === null) {
        this.banner = {
          kind: "info",
          message: "project has no runs yet; start one to review suggestions",
        };
        return;
      }
      this.run = await this.client.getRun(chosen);
    } catch (err) {
      this.banner = bannerFor(err);
      return;
    }
    this.state = new ReviewState(Math.max(1, this.run.config.k));
    this.state.restore(this.run.result?.rows ?? [], this.guidance);
    this.rememberSubmitted(this.guidance);
  }

  /** Full page HTML for the current controller state. */
  html(): string {
    if (this.run === null || this.state === null) {
      const parts: string[] = [];
      if (this.banner !== undefined) {
        parts.push(renderBanner(this.banner.kind, this.banner.message));
      }
      parts.push(renderGuidancePanel(this.guidance));
      return parts.join("\n");
    }
    const state = this.state;
    const viewContext: Parameters<typeof renderRunView>[0] = {
      run: this.run,
      decisionFor: (t, a) => state.decisionFor(t, a),
      isDirty: (t) => state.isDirty(t),
      docs: this.docs,
      inlineErrors: this.inlineErrors,
      guidance: this.guidance,
    };
    if (this.diff !== undefined) {
      viewContext.diff = this.diff;
    }
    if (this.evalReport !== undefined) {
      viewContext.evalReport = this.evalReport;
    }
    if (this.banner !== undefined) {
      viewContext.banner = this.banner;
    }
    if (this.rerunBlocked !== undefined) {
      viewContext.rerunBlocked = this.rerunBlocked;
    }
    return renderRunView(viewContext);
  }

  /**
   * Accept the suggestion at the given 1-based rank. The decision lands
   * immediately (optimistic); the guidance POST is queued, and a rejected
   * submission reverts the decision with an inline message.
   */
  async accept(srcTable: string, srcAttr: string, rank: number): Promise<void> {
    const row = this.rowFor(srcTable, srcAttr);
    const state = this.mustState();
    const decision: Decision = { kind: "accepted", rank };
    state.decide(srcTable, srcAttr, decision);
    const pair = state.guidanceFor(row, decision);
    if (pair === null) {
      // Rank points at the NA placeholder; nothing to teach the server.
      state.decide(srcTable, srcAttr, { kind: "marked-na" });
      await this.retireSubmitted(srcTable, srcAttr);
      return;
    }
    await this.submitPair(srcTable, srcAttr, pair, decision);
  }

  /** Record a hand-typed mapping; validated server-side like any guidance. */
  async manual(
    srcTable: string, srcAttr: string,
    tgtTable: string, tgtAttr: string,
  ): Promise<void> {
    const row = this.rowFor(srcTable, srcAttr);
    const state = this.mustState();
    const decision: Decision = { kind: "manual", tgtTable, tgtAttr };
    state.decide(srcTable, srcAttr, decision);
    const pair = state.guidanceFor(row, decision);
    if (pair !== null) {
      await this.submitPair(srcTable, srcAttr, pair, decision);
    }
  }

  /** Reject every suggestion; no pair is sent, existing guidance is pulled. */
  async rejectAll(srcTable: string, srcAttr: string): Promise<void> {
    this.mustState().decide(srcTable, srcAttr, { kind: "rejected-all" });
    await this.retireSubmitted(srcTable, srcAttr);
  }

  /** Declare the attribute unmatched; no pair is sent. */
  async markNa(srcTable: string, srcAttr: string): Promise<void> {
    this.mustState().decide(srcTable, srcAttr, { kind: "marked-na" });
    await this.retireSubmitted(srcTable, srcAttr);
  }

  /** Remove one stored guidance pair and reset the matching decision. */
  async removeGuidance(tuple: GuidanceTuple): Promise<void> {
    const [srcTable, srcAttr, tgtTable, tgtAttr] = tuple;
    const pair: GuidancePairBody = {
      src_table: srcTable, src_attr: srcAttr,
      tgt_table: tgtTable, tgt_attr: tgtAttr,
    };
    const key = attrKey(srcTable, srcAttr);
    this.guidance = this.guidance.filter(
      (g) => attrKey(g[0], g[1]) !== key ||
        `${g[2]}.${g[3]}`.toLowerCase() !== `${tgtTable}.${tgtAttr}`.toLowerCase());
    this.submitted.delete(key);
    this.state?.decide(srcTable, srcAttr, { kind: "undecided" });
    await this.queue.push({
      label: `remove ${srcTable}.${srcAttr}`,
      send: async () => {
        try {
          this.guidance = await this.client.removeGuidance(this.projectId, pair);
        } catch (err) {
          if (err instanceof ApiError && err.status === 404) {
            return; // already gone on the server; local view is correct
          }
          throw err;
        }
      },
    });
  }

  /** Fetch and cache the source-attribute document for one card. */
  async loadDoc(srcTable: string, srcAttr: string): Promise<void> {
    const run = this.mustRun();
    if (run.result === null) {
      return;
    }
    const key = attrKey(srcTable, srcAttr);
    if (this.docs.has(key)) {
      return;
    }
    const origin = `${run.result.source_schema}__${srcTable}__${srcAttr}`;
    try {
      this.docs.set(key, await this.client.getDocument(this.projectId, origin));
    } catch (err) {
      this.inlineErrors.set(key, messageOf(err));
    }
  }

  /** Populate the accuracy summary when the project has ground truth. */
  async loadEval(kValues?: number[]): Promise<void> {
    const run = this.mustRun();
    if (this.project === null || !this.project.has_truth) {
      return;
    }
    const ks = kValues ??
      Array.from({ length: run.config.k }, (_, i) => i + 1);
    try {
      this.evalReport = await this.client.getEval(run.id, ks);
    } catch (err) {
      this.banner = bannerFor(err);
    }
  }

  /**
   * Start a fresh run with the same configuration plus all stored guidance,
   * wait for it to settle, and diff it against the run on screen. A 409
   * (another run executing) flips rerunBlocked instead of throwing.
   */
  async rerun(overrides: RunRequest = {}): Promise<DiffEntry[]> {
    const previous = this.mustRun();
    this.rerunBlocked = undefined;
    this.banner = undefined;
    await this.queue.idle();
    const cfg = previous.config;
    const request: RunRequest = {
      j: cfg.j, k: cfg.k, mode: cfg.mode, retrieval: cfg.retrieval,
      tag: cfg.tag, wait: false, ...overrides,
    };
    if (cfg.embedder !== undefined && request.embedder === undefined) {
      request.embedder = cfg.embedder;
    }
    if (cfg.ranker !== undefined && request.ranker === undefined) {
      request.ranker = cfg.ranker;
    }
    let ref;
    try {
      ref = await this.client.createRun(this.projectId, request);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.rerunBlocked = err.message;
        return [];
      }
      this.banner = bannerFor(err);
      return [];
    }
    const pollOptions: Parameters<typeof pollRun>[2] = {
      intervalMs: this.options.pollIntervalMs ?? 500,
      timeoutMs: this.options.pollTimeoutMs ?? 120_000,
    };
    if (this.options.sleep !== undefined) {
      pollOptions.sleep = this.options.sleep;
    }
    if (this.options.onUpdate !== undefined) {
      pollOptions.onUpdate = this.options.onUpdate;
    }
    const settled = await pollRun(this.client, ref.id, pollOptions);
    if (settled.state === "failed" || settled.result === null) {
      this.banner = {
        kind: "error",
        message: `run ${settled.id} ${settled.state}: ${settled.error ?? "no results"}`,
      };
      return [];
    }
    this.diff = previous.result === null
      ? []
      : diffManifests(previous.result, settled.result);
    this.run = settled;
    this.evalReport = undefined;
    const state = new ReviewState(Math.max(1, settled.config.k));
    state.restore(settled.result.rows, this.guidance);
    this.state = state;
    this.submitted.clear();
    this.rememberSubmitted(this.guidance);
    return this.diff;
  }

  /** Settles once queued guidance writes have drained. */
  idle(): Promise<void> {
    return this.queue.idle();
  }

  get submissionFailures() {
    return this.queue.failures;
  }

  private submitPair(
    srcTable: string, srcAttr: string,
    pair: GuidancePairBody, decision: Decision,
  ): Promise<void> {
    const key = attrKey(srcTable, srcAttr);
    this.inlineErrors.delete(key);
    const previous = this.submitted.get(key);
    this.submitted.set(key, pair);
    return this.queue.push({
      label: `guidance ${srcTable}.${srcAttr}`,
      send: async () => {
        try {
          if (previous !== undefined && !samePair(previous, pair)) {
            await this.removeQuietly(previous);
          }
          this.guidance = await this.client.addGuidance(this.projectId, pair);
        } catch (err) {
          if (err instanceof ApiError && err.status >= 400 && err.status < 500) {
            // Validation rejected the pair: undo the optimistic decision.
            this.inlineErrors.set(key, err.message);
            this.state?.decide(srcTable, srcAttr, { kind: "undecided" });
            if (this.submitted.get(key) === pair) {
              this.submitted.delete(key);
            }
            return;
          }
          throw err;
        }
      },
    });
  }

  private async removeQuietly(pair: GuidancePairBody): Promise<void> {
    try {
      this.guidance = await this.client.removeGuidance(this.projectId, pair);
    } catch (err) {
      if (!(err instanceof ApiError && err.status === 404)) {
        throw err;
      }
    }
  }

  /** Drop any server-side pair for this attribute (decision became pairless). */
  private retireSubmitted(srcTable: string, srcAttr: string): Promise<void> {
    const key = attrKey(srcTable, srcAttr);
    const previous = this.submitted.get(key);
    if (previous === undefined) {
      return Promise.resolve();
    }
    this.submitted.delete(key);
    this.guidance = this.guidance.filter((g) => attrKey(g[0], g[1]) !== key);
    return this.queue.push({
      label: `retract ${srcTable}.${srcAttr}`,
      send: () => this.removeQuietly(previous),
    });
  }

  private rememberSubmitted(guidance: GuidanceTuple[]): void {
    for (const [st, sa, tt, ta] of guidance) {
      this.submitted.set(attrKey(st, sa), {
        src_table: st, src_attr: sa, tgt_table: tt, tgt_attr: ta,
      });
    }
  }

  private rowFor(srcTable: string, srcAttr: string): ManifestRow {
    const run = this.mustRun();
    const key = attrKey(srcTable, srcAttr);
    const row = run.result?.rows.find(
      (r) => attrKey(r.src_table, r.src_attr) === key);
    if (row === undefined) {
      throw new Error(`no prediction row for ${srcTable}.${srcAttr}`);
    }
    return row;
  }

  private mustRun(): RunEnvelope {
    if (this.run === null) {
      throw new Error("no run loaded");
    }
    return this.run;
  }

  private mustState(): ReviewState {
    if (this.state === null) {
      throw new Error("no run loaded");
    }
    return this.state;
  }
}

/** Newest run worth reviewing: prefer done/partial, else the latest. */
function pickRun(project: ProjectSummary): string | null {
  const runs = [...project.runs].sort((a, b) => b.created - a.created);
  const newest = runs[0];
  if (newest === undefined) {
    return null;
  }
  const reviewable = runs.find((r) => r.state === "done" || r.state === "partial");
  return (reviewable ?? newest).id;
}

function samePair(a: GuidancePairBody, b: GuidancePairBody): boolean {
  return a.src_table.toLowerCase() === b.src_table.toLowerCase() &&
    a.src_attr.toLowerCase() === b.src_attr.toLowerCase() &&
    a.tgt_table.toLowerCase() === b.tgt_table.toLowerCase() &&
    a.tgt_attr.toLowerCase() === b.tgt_attr.toLowerCase();
}

function messageOf(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

function bannerFor(err: unknown): { kind: BannerKind; message: string } {
  if (err instanceof ApiError) {
    if (err.status === 404) {
      return { kind: "error", message: err.message };
    }
    if (err.status >= 500) {
      return { kind: "error", message: `backend unavailable: ${err.message}` };
    }
    return { kind: "error", message: err.message };
  }
  return { kind: "error", message: `request failed: ${messageOf(err)}` };
}
