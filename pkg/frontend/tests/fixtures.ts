/**
 * In-memory stand-in for the matching service, plus canned manifests.
 *
 * The mock reproduces the parts of the HTTP contract the UI depends on:
 * guidance validation order and messages, 409 while a run is executing,
 * staged run states while polling, and reruns whose results improve once
 * guidance exists. Everything runs offline.
 */

import { ApiError } from "../src/api.js";
import type { ApiClient } from "../src/api.js";
import type {
  EvalReport,
  GuidancePairBody,
  GuidanceTuple,
  Manifest,
  ManifestRow,
  ProjectSummary,
  RunConfig,
  RunEnvelope,
  RunListing,
  RunRef,
  RunRequest,
  RunState,
  TargetPair,
} from "../src/types.js";

export const PROJECT_ID = "proj-demo";
export const SOURCE_SCHEMA = "demo_source";
export const TARGET_SCHEMA = "demo_target";

/** Canonical-cased schemas used for guidance validation. */
export const SOURCE_TABLES: Record<string, string[]> = {
  flux_readings: ["pulse_height", "drift_angle"],
  crate_manifests: ["lading_code", "seal_count"],
};

export const TARGET_TABLES: Record<string, string[]> = {
  flux_vault: ["pulse_height", "drift_angle"],
  crate_ledger: ["lading_code", "seal_count"],
  swamp_decoy: ["murk_level", "lading_hint"],
};

/** True mapping used by the mock eval endpoint. */
const TRUTH: Record<string, [string, string]> = {
  "flux_readings.pulse_height": ["flux_vault", "pulse_height"],
  "flux_readings.drift_angle": ["flux_vault", "drift_angle"],
  "crate_manifests.lading_code": ["crate_ledger", "lading_code"],
  "crate_manifests.seal_count": ["crate_ledger", "seal_count"],
};

export function runConfig(guidance: GuidanceTuple[]): RunConfig {
  return {
    j: 1,
    k: 2,
    mode: "full",
    retrieval: true,
    guidance: guidance.map((g) => [...g] as GuidanceTuple),
    tag: "",
    embedder: { kind: "local-hash-trigram", dim: 64, model: "", base_url: null },
    ranker: { kind: "local-similarity-oracle", model: "", base_url: null },
  };
}

/**
 * First run: lading_code is led astray by the decoy table and seal_count
 * never resolved. Diagnostics cover several parser failure kinds so badge
 * rendering can be checked against a realistic manifest.
 */
export function baselineManifest(guidance: GuidanceTuple[] = []): Manifest {
  return {
    source_schema: SOURCE_SCHEMA,
    target_schema: TARGET_SCHEMA,
    config: runConfig(guidance),
    candidate_counts: {
      flux_readings: 1,
      crate_manifests: 2,
    },
    avg_candidate_tables: 1.5,
    timings: { flux_readings: 0.01, crate_manifests: 0.01, total: 0.03 },
    diagnostics: [
      { kind: "short-row", src_table: "flux_readings", src_attr: "drift_angle",
        detail: "1 of 2 targets" },
      { kind: "hallucinated-target", src_table: "crate_manifests",
        src_attr: "lading_code", detail: "swamp_decoy.lading_hint" },
      { kind: "missing-row", src_table: "crate_manifests",
        src_attr: "seal_count", detail: "" },
      { kind: "duplicate-na", src_table: "crate_manifests",
        src_attr: "seal_count", detail: "2 NA pairs" },
    ],
    rows: [
      { src_table: "flux_readings", src_attr: "pulse_height",
        targets: [["flux_vault", "pulse_height"], ["flux_vault", "drift_angle"]],
        flags: [] },
      { src_table: "flux_readings", src_attr: "drift_angle",
        targets: [["flux_vault", "drift_angle"], [null, null]],
        flags: [] },
      { src_table: "crate_manifests", src_attr: "lading_code",
        targets: [["swamp_decoy", "lading_hint"], ["crate_ledger", "lading_code"]],
        flags: [] },
      { src_table: "crate_manifests", src_attr: "seal_count",
        targets: [[null, null], [null, null]],
        flags: ["unresolved"] },
    ],
  };
}

/** Rerun after guidance: the decoy loses and seal_count resolves. */
export function guidedManifest(guidance: GuidanceTuple[]): Manifest {
  const base = baselineManifest(guidance);
  return {
    ...base,
    candidate_counts: { flux_readings: 1, crate_manifests: 2 },
    diagnostics: [],
    rows: [
      { src_table: "flux_readings", src_attr: "pulse_height",
        targets: [["flux_vault", "pulse_height"], ["flux_vault", "drift_angle"]],
        flags: [] },
      { src_table: "flux_readings", src_attr: "drift_angle",
        targets: [["flux_vault", "drift_angle"], [null, null]],
        flags: [] },
      { src_table: "crate_manifests", src_attr: "lading_code",
        targets: [["crate_ledger", "lading_code"], ["swamp_decoy", "lading_hint"]],
        flags: [] },
      { src_table: "crate_manifests", src_attr: "seal_count",
        targets: [["crate_ledger", "seal_count"], [null, null]],
        flags: [] },
    ],
  };
}

interface StoredRun {
  id: string;
  manifest: Manifest;
  /** getRun calls answered with "running" before the run settles. */
  pollsUntilDone: number;
  state: RunState;
  error: string | null;
  created: number;
}

const DOCS: Record<string, string> = {
  [`${SOURCE_SCHEMA}__flux_readings__pulse_height`]:
    "pulse_height is an attribute in table flux_readings.\n" +
    "Peak sensor amplitude per sampling window.",
  [`${SOURCE_SCHEMA}__flux_readings__drift_angle`]:
    "drift_angle is an attribute in table flux_readings.\n" +
    "Angular drift of the probe during capture.",
  [`${SOURCE_SCHEMA}__crate_manifests__lading_code`]:
    "lading_code is an attribute in table crate_manifests.\n" +
    "Registry code stamped on the bill of lading.",
  [`${SOURCE_SCHEMA}__crate_manifests__seal_count`]:
    "seal_count is an attribute in table crate_manifests.\n" +
    "Number of customs seals applied at origin.",
};

export class MockApiClient implements ApiClient {
  guidance: GuidanceTuple[] = [];
  /** When true, createRun answers 409 like a busy project. */
  busy = false;
  /** getRun calls that report "running" before a new run settles. */
  pollsUntilDone = 0;
  hasTruth = true;
  addGuidanceCalls = 0;
  removeGuidanceCalls = 0;
  createRunCalls: RunRequest[] = [];
  private readonly runs = new Map<string, StoredRun>();
  private counter = 0;

  /** Seed a finished run, as if the pipeline ran before the page opened. */
  seedRun(manifest?: Manifest): string {
    const id = this.nextRunId();
    this.runs.set(id, {
      id,
      manifest: manifest ?? baselineManifest(),
      pollsUntilDone: 0,
      state: "done",
      error: null,
      created: this.counter,
    });
    return id;
  }

  async getProject(projectId: string): Promise<ProjectSummary> {
    if (projectId !== PROJECT_ID) {
      throw new ApiError(404, `project '${projectId}' not found`);
    }
    const runs: RunListing[] = [...this.runs.values()].map((run) => ({
      id: run.id,
      state: this.settle(run).state,
      j: run.manifest.config.j,
      k: run.manifest.config.k,
      created: run.created,
    }));
    return {
      id: PROJECT_ID,
      name: "demo",
      source: { name: SOURCE_SCHEMA, n_tables: 2, n_attributes: 4 },
      target: { name: TARGET_SCHEMA, n_tables: 3, n_attributes: 6 },
      has_truth: this.hasTruth,
      guidance: this.guidance.map((g) => [...g] as GuidanceTuple),
      runs,
    };
  }

  async createRun(projectId: string, request: RunRequest): Promise<RunRef> {
    if (projectId !== PROJECT_ID) {
      throw new ApiError(404, `project '${projectId}' not found`);
    }
    if (this.busy) {
      throw new ApiError(
        409, "run 'run-busy' is already executing on this project");
    }
    this.createRunCalls.push(request);
    const id = this.nextRunId();
    const manifest = this.guidance.length > 0
      ? guidedManifest(this.guidance)
      : baselineManifest();
    this.runs.set(id, {
      id,
      manifest,
      pollsUntilDone: request.wait ? 0 : this.pollsUntilDone,
      state: request.wait ? "done" : "queued",
      error: null,
      created: this.counter,
    });
    return { id, project_id: PROJECT_ID, state: request.wait ? "done" : "queued" };
  }

  async getRun(runId: string): Promise<RunEnvelope> {
    const run = this.runs.get(runId);
    if (run === undefined) {
      throw new ApiError(404, `run '${runId}' not found`);
    }
    const current = this.settle(run);
    const allTables = run.manifest.rows
      .map((row) => row.src_table)
      .filter((name, i, names) => names.indexOf(name) === i);
    const running = current.state === "running" || current.state === "queued";
    return {
      id: run.id,
      project_id: PROJECT_ID,
      state: current.state,
      config: run.manifest.config,
      error: run.error,
      created: run.created,
      updated: run.created,
      n_tables: allTables.length,
      completed_tables: running ? allTables.slice(0, 1) : allTables,
      partial: current.state === "partial",
      result: running ? null : run.manifest,
    };
  }

  async getEval(runId: string, kValues: number[]): Promise<EvalReport> {
    const run = this.runs.get(runId);
    if (run === undefined) {
      throw new ApiError(404, `run '${runId}' not found`);
    }
    if (!this.hasTruth) {
      throw new ApiError(400, "project has no ground truth to evaluate against");
    }
    const accuracy: Record<string, number> = {};
    for (const k of kValues) {
      let hits = 0;
      for (const row of run.manifest.rows) {
        const want = TRUTH[`${row.src_table}.${row.src_attr}`];
        if (want !== undefined && hitWithin(row, want, k)) {
          hits += 1;
        }
      }
      accuracy[String(k)] = hits / run.manifest.rows.length;
    }
    const accAt1 = accuracy["1"] ?? 0;
    return {
      k_values: kValues,
      accuracy_at_k: accuracy,
      n_evaluated: run.manifest.rows.length,
      n_excluded: 0,
      excluded: [],
      avg_candidate_tables: run.manifest.avg_candidate_tables,
      precision: accAt1,
      recall: accAt1,
      f1: accAt1,
      per_attribute: [],
    };
  }

  async addGuidance(
    projectId: string, pair: GuidancePairBody): Promise<GuidanceTuple[]> {
    if (projectId !== PROJECT_ID) {
      throw new ApiError(404, `project '${projectId}' not found`);
    }
    this.addGuidanceCalls += 1;
    const canonical = validatePair(pair);
    const exists = this.guidance.some((g) =>
      g.every((part, i) => part.toLowerCase() === canonical[i]?.toLowerCase()));
    if (!exists) {
      this.guidance = [...this.guidance, canonical];
    }
    return this.guidance.map((g) => [...g] as GuidanceTuple);
  }

  async removeGuidance(
    projectId: string, pair: GuidancePairBody): Promise<GuidanceTuple[]> {
    if (projectId !== PROJECT_ID) {
      throw new ApiError(404, `project '${projectId}' not found`);
    }
    this.removeGuidanceCalls += 1;
    const wanted = [pair.src_table, pair.src_attr, pair.tgt_table, pair.tgt_attr]
      .map((part) => part.trim().toLowerCase());
    const kept = this.guidance.filter((g) =>
      !g.every((part, i) => part.toLowerCase() === wanted[i]));
    if (kept.length === this.guidance.length) {
      throw new ApiError(404, "no such guidance pair");
    }
    this.guidance = kept;
    return this.guidance.map((g) => [...g] as GuidanceTuple);
  }

  async getDocument(projectId: string, origin: string): Promise<string> {
    if (projectId !== PROJECT_ID) {
      throw new ApiError(404, `project '${projectId}' not found`);
    }
    const doc = DOCS[origin];
    if (doc === undefined) {
      throw new ApiError(404, `document '${origin}' not found`);
    }
    return doc;
  }

  private nextRunId(): string {
    this.counter += 1;
    return `run-${this.counter}`;
  }

  /** Advance staged runs: each getProject/getRun observation burns a poll. */
  private settle(run: StoredRun): StoredRun {
    if (run.state === "queued" || run.state === "running") {
      if (run.pollsUntilDone > 0) {
        run.pollsUntilDone -= 1;
        run.state = "running";
      } else {
        run.state = "done";
      }
    }
    return run;
  }
}

function hitWithin(row: ManifestRow, want: [string, string], k: number): boolean {
  return row.targets.slice(0, k).some((pair: TargetPair) =>
    pair[0] !== null && pair[1] !== null &&
    pair[0].toLowerCase() === want[0].toLowerCase() &&
    pair[1].toLowerCase() === want[1].toLowerCase());
}

/** Mirror the server's guidance checks: NA first, then each name in turn. */
function validatePair(pair: GuidancePairBody): GuidanceTuple {
  const parts = [pair.src_table, pair.src_attr, pair.tgt_table, pair.tgt_attr];
  if (parts.some((part) => part.trim().toUpperCase() === "NA")) {
    throw new ApiError(400, "NA is not a guidance mapping", "tgt_table");
  }
  const srcTable = findName(Object.keys(SOURCE_TABLES), pair.src_table);
  if (srcTable === null) {
    throw new ApiError(
      400, `unknown source table '${pair.src_table}'`, "src_table");
  }
  const srcAttr = findName(SOURCE_TABLES[srcTable] ?? [], pair.src_attr);
  if (srcAttr === null) {
    throw new ApiError(
      400, `unknown source attribute ${pair.src_table}.${pair.src_attr}`,
      "src_attr");
  }
  const tgtTable = findName(Object.keys(TARGET_TABLES), pair.tgt_table);
  if (tgtTable === null) {
    throw new ApiError(
      400, `unknown target table '${pair.tgt_table}'`, "tgt_table");
  }
  const tgtAttr = findName(TARGET_TABLES[tgtTable] ?? [], pair.tgt_attr);
  if (tgtAttr === null) {
    throw new ApiError(
      400, `unknown target attribute ${pair.tgt_table}.${pair.tgt_attr}`,
      "tgt_attr");
  }
  return [srcTable, srcAttr, tgtTable, tgtAttr];
}

function findName(names: string[], wanted: string): string | null {
  const lower = wanted.trim().toLowerCase();
  return names.find((name) => name.toLowerCase() === lower) ?? null;
}
