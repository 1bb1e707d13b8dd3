/**
 * End-to-end review flows against the in-memory mock service. The global
 * fetch is disabled for the duration, so a pass here demonstrates the UI
 * works with zero outbound network.
 */

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiError } from "../src/api.js";
import { ReviewController } from "../src/controller.js";
import { MockApiClient, PROJECT_ID } from "./fixtures.js";

const instant = async (): Promise<void> => {};

function makeController(client: MockApiClient): ReviewController {
  return new ReviewController(client, PROJECT_ID, {
    pollIntervalMs: 1,
    pollTimeoutMs: 5_000,
    sleep: instant,
  });
}

beforeEach(() => {
  vi.stubGlobal("fetch", () => {
    throw new Error("outbound network is disabled in this suite");
  });
});

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("review flow", () => {
  it("loads, accepts rank 1, sees guidance via GET, reruns, and diffs", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);

    // Load: newest finished run renders table-grouped cards.
    await controller.load();
    expect(controller.run?.state).toBe("done");
    let html = controller.html();
    expect(html.match(/<article class="card"/g)).toHaveLength(4);
    expect(html).toContain('data-section="flux_readings"');
    expect(html).toContain('data-section="crate_manifests"');
    // The first run was led astray by the decoy table.
    expect(html).toContain("swamp_decoy.lading_hint");

    // Accept a rank-1 suggestion.
    await controller.accept("flux_readings", "pulse_height", 1);
    await controller.idle();
    expect(controller.submissionFailures).toEqual([]);

    // The pair is visible through a plain GET, not just locally.
    const project = await client.getProject(PROJECT_ID);
    expect(project.guidance).toContainEqual(
      ["flux_readings", "pulse_height", "flux_vault", "pulse_height"]);
    html = controller.html();
    expect(html).toContain("accepted #1");
    expect(html).toContain("Guidance (1)");

    // Rerun with that guidance, polling through the staged states.
    client.pollsUntilDone = 2;
    const diff = await controller.rerun();
    expect(controller.run?.id).not.toBe("run-1");
    expect(controller.run?.state).toBe("done");

    // The diff view shows the corrected attribute at its new rank 1.
    const corrected = diff.find(
      (e) => e.srcTable === "crate_manifests" && e.srcAttr === "lading_code");
    expect(corrected).toBeDefined();
    expect(corrected?.beforeTop).toBe("swamp_decoy.lading_hint");
    expect(corrected?.afterTop).toBe("crate_ledger.lading_code");
    expect(corrected?.topChanged).toBe(true);
    html = controller.html();
    expect(html).toContain("Changes (");
    expect(html).toContain("crate_ledger.lading_code");
  });

  it("renders every manifest diagnostic badge and at most k suggestions", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();
    const html = controller.html();
    const manifest = controller.run?.result;
    expect(manifest).toBeDefined();
    for (const diag of manifest?.diagnostics ?? []) {
      expect(html).toContain(`badge-${diag.kind}`);
    }
    const k = manifest?.config.k ?? 0;
    for (const card of html.split('<article class="card"').slice(1)) {
      const list = card.split("</ol>")[0] ?? "";
      expect((list.match(/<li class="target/g) ?? []).length)
        .toBeLessThanOrEqual(k);
    }
  });

  it("restores decisions from stored guidance after a reload", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const first = makeController(client);
    await first.load();
    await first.accept("flux_readings", "pulse_height", 1);
    await first.idle();

    const reloaded = makeController(client);
    await reloaded.load();
    expect(reloaded.state?.decisionFor("flux_readings", "pulse_height"))
      .toEqual({ kind: "accepted", rank: 1 });
    expect(reloaded.html()).toContain("accepted #1");
  });

  it("blocks rerun with a notice while another run is executing", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();

    client.busy = true;
    const diff = await controller.rerun();
    expect(diff).toEqual([]);
    expect(controller.rerunBlocked).toContain("already executing");
    expect(controller.html()).toContain("already executing");

    client.busy = false;
    await controller.rerun();
    expect(controller.rerunBlocked).toBeUndefined();
  });

  it("reports no changes when guidance did not alter the result", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();
    await controller.accept("flux_readings", "pulse_height", 1);
    await controller.idle();

    const firstDiff = await controller.rerun();
    expect(firstDiff.length).toBeGreaterThan(0);
    const secondDiff = await controller.rerun();
    expect(secondDiff).toEqual([]);
    expect(controller.html()).toContain("No changes between runs");
  });

  it("surfaces validation errors inline and reverts the decision", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();

    await controller.manual(
      "crate_manifests", "seal_count", "no_such_table", "nope");
    await controller.idle();
    expect(client.guidance).toEqual([]);
    expect(controller.state?.decisionFor("crate_manifests", "seal_count").kind)
      .toBe("undecided");
    const html = controller.html();
    expect(html).toContain("inline-error");
    expect(html).toContain("unknown target table");
  });

  it("accepts manual pairs that validate, with canonical casing", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();

    await controller.manual(
      "crate_manifests", "seal_count", "CRATE_LEDGER", "SEAL_COUNT");
    await controller.idle();
    expect(client.guidance).toContainEqual(
      ["crate_manifests", "seal_count", "crate_ledger", "seal_count"]);
    expect(controller.guidance).toHaveLength(1);
  });

  it("replaces a previous acceptance instead of stacking pairs", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();

    await controller.accept("crate_manifests", "lading_code", 1);
    await controller.accept("crate_manifests", "lading_code", 2);
    await controller.idle();
    const pairs = client.guidance.filter(
      (g) => g[0] === "crate_manifests" && g[1] === "lading_code");
    expect(pairs).toEqual(
      [["crate_manifests", "lading_code", "crate_ledger", "lading_code"]]);
  });

  it("retracts the stored pair when the reviewer marks NA", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();

    await controller.accept("flux_readings", "pulse_height", 1);
    await controller.idle();
    expect(client.guidance).toHaveLength(1);

    await controller.markNa("flux_readings", "pulse_height");
    await controller.idle();
    expect(client.guidance).toEqual([]);
    expect(controller.state?.decisionFor("flux_readings", "pulse_height").kind)
      .toBe("marked-na");
    expect(client.removeGuidanceCalls).toBeGreaterThanOrEqual(1);
  });

  it("removes pairs from the guidance panel", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();
    await controller.accept("flux_readings", "pulse_height", 1);
    await controller.idle();

    await controller.removeGuidance(
      ["flux_readings", "pulse_height", "flux_vault", "pulse_height"]);
    await controller.idle();
    expect(client.guidance).toEqual([]);
    expect(controller.html()).toContain("No guidance recorded yet");
  });

  it("loads document snippets into the owning card", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();
    expect(controller.html()).toContain('data-action="load-doc"');

    await controller.loadDoc("flux_readings", "pulse_height");
    const html = controller.html();
    expect(html).toContain("doc-snippet");
    expect(html).toContain("Peak sensor amplitude per sampling window.");
  });

  it("computes accuracy before and after guidance via the eval endpoint", async () => {
    const client = new MockApiClient();
    client.seedRun();
    const controller = makeController(client);
    await controller.load();

    await controller.loadEval([1, 2]);
    expect(controller.evalReport?.accuracy_at_k["1"]).toBe(0.5);
    expect(controller.html()).toContain("acc@1 0.500");

    await controller.accept("flux_readings", "pulse_height", 1);
    await controller.idle();
    await controller.rerun();
    await controller.loadEval([1, 2]);
    expect(controller.evalReport?.accuracy_at_k["1"]).toBe(1);
    expect(controller.html()).toContain("acc@1 1.000");
  });

  it("shows a banner instead of throwing when the project is missing", async () => {
    const client = new MockApiClient();
    const controller = new ReviewController(client, "proj-ghost", {
      sleep: instant,
    });
    await controller.load();
    expect(controller.banner?.kind).toBe("error");
    expect(controller.html()).toContain("not found");
    expect(controller.html()).toContain("banner-error");
  });

  it("shows a backend banner when the service answers 5xx", async () => {
    const client = new MockApiClient();
    client.seedRun();
    client.getRun = async () => {
      throw new ApiError(502, "chat backend unreachable");
    };
    const controller = makeController(client);
    await controller.load();
    expect(controller.banner?.message).toContain("backend unavailable");
    expect(controller.html()).toContain("banner-error");
  });

  it("points the reviewer at runs even when none are finished", async () => {
    const client = new MockApiClient();
    const controller = makeController(client);
    await controller.load();
    expect(controller.run).toBeNull();
    expect(controller.html()).toContain("no runs yet");
  });

  it("renders partial runs with completed tables and progress", async () => {
    const client = new MockApiClient();
    const id = client.seedRun();
    const original = client.getRun.bind(client);
    client.getRun = async (runId: string) => {
      const envelope = await original(runId);
      const manifest = envelope.result;
      if (manifest === null) {
        return envelope;
      }
      return {
        ...envelope,
        state: "partial" as const,
        partial: true,
        error: "poisoned table",
        completed_tables: ["flux_readings"],
        result: {
          ...manifest,
          rows: manifest.rows.filter((r) => r.src_table === "flux_readings"),
        },
      };
    };
    const controller = makeController(client);
    await controller.load(id);
    const html = controller.html();
    expect(html.match(/<article class="card"/g)).toHaveLength(2);
    expect(html).toContain("1 of 2 tables completed");
    expect(html).toContain("last error: poisoned table");
  });
});
