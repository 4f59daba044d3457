import assert from "node:assert/strict";
import { test } from "node:test";

import { ApiError, ReviewApi } from "../src/api.js";
import { applyVerdictLocally, submitVerdictOptimistic } from "../src/optimistic.js";
import type { SessionDetail } from "../src/types.js";

function detail(): SessionDetail {
  return {
    session_id: "qa_s1",
    study_id: "s1",
    status: "open",
    n_candidates: 2,
    n_reviewed: 0,
    cell_geometry: null,
    candidates: [
      { candidate_id: "c00", score: 0.9, box: [0, 0, 0, 2, 2, 2], phase: "A",
        key_z: 3, verdict: "unreviewed" },
      { candidate_id: "c01", score: 0.5, box: [5, 5, 0, 7, 7, 2], phase: "V",
        key_z: 4, verdict: "unreviewed" },
    ],
  };
}

function jsonResponse(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status, headers: { "Content-Type": "application/json" },
  });
}

test("local projection updates the verdict and the reviewed count", () => {
  const next = applyVerdictLocally(detail(), "c00", "true_positive");
  assert.equal(next.candidates[0].verdict, "true_positive");
  assert.equal(next.n_reviewed, 1);
  assert.equal(next.candidates[1].verdict, "unreviewed");
});

test("successful submit renders optimistic state then the server truth", async () => {
  const serverDetail = { ...detail(), n_reviewed: 1 };
  serverDetail.candidates = serverDetail.candidates.map((c) =>
    c.candidate_id === "c00" ? { ...c, verdict: "true_positive" as const } : c);
  const calls: string[] = [];
  const api = new ReviewApi("", async (url, init) => {
    calls.push(`${init?.method ?? "GET"} ${url}`);
    return jsonResponse(serverDetail);
  });

  const rendered: number[] = [];
  const outcome = await submitVerdictOptimistic(api, detail(), "c00",
    "true_positive", (d) => rendered.push(d.n_reviewed));

  assert.deepEqual(calls, ["POST /api/sessions/qa_s1/verdicts"]);
  assert.deepEqual(rendered, [1, 1]);       // optimistic, then authoritative
  assert.equal(outcome.notice, null);
  assert.equal(outcome.detail.n_reviewed, 1);
});

test("server failure rolls the view back to the previous state", async () => {
  const api = new ReviewApi("", async () =>
    jsonResponse({ error: "bad-request", message: "nope" }, 400));
  const rendered: string[] = [];
  const before = detail();
  const outcome = await submitVerdictOptimistic(api, before, "c00",
    "true_positive", (d) => rendered.push(d.candidates[0].verdict));

  assert.deepEqual(rendered, ["true_positive", "unreviewed"]);
  assert.match(outcome.notice ?? "", /verdict failed/);
  assert.equal(outcome.detail.candidates[0].verdict, "unreviewed");
});

test("409 on a finalized session reloads authoritative state", async () => {
  const finalized = { ...detail(), status: "finalized" as const, n_reviewed: 2 };
  const api = new ReviewApi("", async (url, init) => {
    if (init?.method === "POST") {
      return jsonResponse({ error: "conflict", message: "session is finalized" }, 409);
    }
    return jsonResponse(finalized);
  });
  const outcome = await submitVerdictOptimistic(api, detail(), "c00",
    "true_positive", () => undefined);
  assert.equal(outcome.conflict, true);
  assert.equal(outcome.detail.status, "finalized");
  assert.match(outcome.notice ?? "", /finalized/);
});

test("api surfaces structured errors", async () => {
  const api = new ReviewApi("", async () =>
    jsonResponse({ error: "unknown-session", message: "no such session" }, 404));
  await assert.rejects(api.getSession("nope"), (err: unknown) => {
    assert.ok(err instanceof ApiError);
    assert.equal(err.status, 404);
    assert.equal(err.code, "unknown-session");
    return true;
  });
});

test("montage path carries the windowing query", () => {
  const api = new ReviewApi("");
  assert.equal(api.montagePath("qa_s1"), "/api/sessions/qa_s1/montage");
  assert.equal(api.montagePath("qa_s1", 60, 350),
    "/api/sessions/qa_s1/montage?level=60&width=350");
});
