/**
 * Browser entry point. Reads ?project= (and optional &run=) from the URL,
 * builds the controller against the same-origin API, and wires one
 * delegated click listener that maps data-action buttons to controller
 * calls, re-rendering after each.
 */

import { HttpApiClient } from "./api.js";
import { ReviewController } from "./controller.js";
import { renderBanner } from "./render.js";
import type { GuidanceTuple } from "./types.js";

const container = document.getElementById("app");
if (container === null) {
  throw new Error("missing #app container");
}

const params = new URLSearchParams(window.location.search);
const projectId = params.get("project");
const runId = params.get("run");

if (projectId === null || projectId === "") {
  container.innerHTML = renderBanner(
    "info",
    "open this page as /?project=<project-id> (optionally &run=<run-id>)");
} else {
  const controller = new ReviewController(new HttpApiClient(""), projectId);

  const render = () => {
    container.innerHTML = controller.html();
  };

  const dispatch = async (action: string, data: DOMStringMap): Promise<void> => {
    switch (action) {
      case "accept":
        await controller.accept(
          data.table ?? "", data.attr ?? "", Number(data.rank ?? "0"));
        await controller.idle();
        break;
      case "reject-all":
        await controller.rejectAll(data.table ?? "", data.attr ?? "");
        break;
      case "mark-na":
        await controller.markNa(data.table ?? "", data.attr ?? "");
        break;
      case "manual": {
        const tgtTable = window.prompt("Target table:");
        if (tgtTable === null || tgtTable === "") {
          return;
        }
        const tgtAttr = window.prompt("Target attribute:");
        if (tgtAttr === null || tgtAttr === "") {
          return;
        }
        await controller.manual(
          data.table ?? "", data.attr ?? "", tgtTable, tgtAttr);
        await controller.idle();
        break;
      }
      case "remove-guidance": {
        const tuple: GuidanceTuple = [
          data.srcTable ?? "", data.srcAttr ?? "",
          data.tgtTable ?? "", data.tgtAttr ?? ""];
        await controller.removeGuidance(tuple);
        await controller.idle();
        break;
      }
      case "load-doc":
        await controller.loadDoc(data.table ?? "", data.attr ?? "");
        break;
      case "rerun":
        render(); // show the header state before the wait
        await controller.rerun();
        if (controller.project?.has_truth) {
          await controller.loadEval();
        }
        break;
      default:
        return;
    }
    render();
  };

  container.addEventListener("click", (event) => {
    const target = event.target as HTMLElement | null;
    const button = target?.closest<HTMLElement>("[data-action]");
    if (button === null || button === undefined) {
      return;
    }
    const action = button.dataset.action;
    if (action === undefined) {
      return;
    }
    void dispatch(action, button.dataset).catch((err: unknown) => {
      container.innerHTML = renderBanner(
        "error", err instanceof Error ? err.message : String(err));
    });
  });

  void controller.load(runId ?? undefined).then(async () => {
    if (controller.run?.state === "done" && controller.project?.has_truth) {
      await controller.loadEval();
    }
    render();
  });
}
