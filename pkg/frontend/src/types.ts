/**
 * Wire types for the /api/v1 JSON surface.
 *
 * Field names use snake_case because they mirror the server payloads
 * verbatim; nothing here is invented by the UI.
 */

/** One schema side of a project, as summarized by GET /projects/{id}. */
export interface SchemaInfo {
  name: string;
  n_tables: number;
  n_attributes: number;
}

/** A stored guidance pair: [src_table, src_attr, tgt_table, tgt_attr]. */
export type GuidanceTuple = [string, string, string, string];

/** Body for POST/DELETE /projects/{id}/guidance. */
export interface GuidancePairBody {
  src_table: string;
  src_attr: string;
  tgt_table: string;
  tgt_attr: string;
}

export type RunState = "queued" | "running" | "partial" | "done" | "failed";

/** Entry in ProjectSummary.runs. */
export interface RunListing {
  id: string;
  state: RunState;
  j: number | null;
  k: number | null;
  created: number;
}

export interface ProjectSummary {
  id: string;
  name: string;
  source: SchemaInfo;
  target: SchemaInfo;
  has_truth: boolean;
  guidance: GuidanceTuple[];
  runs: RunListing[];
}

/** Serialized run configuration (subset the UI cares about). */
export interface RunConfig {
  j: number;
  k: number;
  mode: string;
  retrieval: boolean;
  guidance: GuidanceTuple[];
  tag: string;
  embedder?: Record<string, unknown>;
  ranker?: Record<string, unknown>;
}

/** A ranked prediction: [tgt_table, tgt_attr], both null for NA. */
export type TargetPair = [string | null, string | null];

export interface ManifestRow {
  src_table: string;
  src_attr: string;
  targets: TargetPair[];
  flags: string[];
}

/** Parser/pipeline diagnostic attached to a run manifest. */
export interface Diagnostic {
  kind: string;
  src_table: string;
  src_attr: string;
  detail: string;
}

/** Full result manifest of a finished (or partially finished) run. */
export interface Manifest {
  source_schema: string;
  target_schema: string;
  config: RunConfig;
  candidate_counts: Record<string, number>;
  avg_candidate_tables: number;
  timings: Record<string, number>;
  diagnostics: Diagnostic[];
  rows: ManifestRow[];
}

/** Envelope returned by GET /runs/{id}. */
export interface RunEnvelope {
  id: string;
  project_id: string;
  state: RunState;
  config: RunConfig;
  error: string | null;
  created: number;
  updated: number;
  n_tables: number;
  completed_tables: string[];
  partial: boolean;
  result: Manifest | null;
}

/** Stub returned by POST /projects/{id}/runs when wait is false. */
export interface RunRef {
  id: string;
  project_id: string;
  state: RunState;
}

/** Body for POST /projects/{id}/runs. */
export interface RunRequest {
  j?: number;
  k?: number;
  mode?: string;
  retrieval?: boolean;
  tag?: string;
  resume?: string;
  wait?: boolean;
  embedder?: Record<string, unknown>;
  ranker?: Record<string, unknown>;
}

export interface EvalReport {
  k_values: number[];
  accuracy_at_k: Record<string, number>;
  n_evaluated: number;
  n_excluded: number;
  excluded: string[];
  avg_candidate_tables: number;
  precision: number;
  recall: number;
  f1: number;
  per_attribute: Array<{
    src_table: string;
    src_attr: string;
    hit_rank: number | null;
    true_target: [string | null, string | null];
    flags: string[];
  }>;
}

/** Diagnostic kinds the pipeline can emit; used for badge styling. */
export const DIAGNOSTIC_KINDS = [
  "missing-row",
  "extra-row",
  "hallucinated-target",
  "duplicate-na",
  "short-row",
  "unresolved",
] as const;

/** True when a target pair is the NA placeholder. */
export function isNaPair(pair: TargetPair): boolean {
  return pair[0] === null || pair[1] === null;
}
