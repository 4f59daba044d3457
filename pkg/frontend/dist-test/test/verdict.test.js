import assert from "node:assert/strict";
import { test } from "node:test";
import { canFinalize, cycleVerdict, keyToVerdict } from "../src/verdict.js";
function detail(overrides = {}) {
    return {
        session_id: "qa_s1",
        study_id: "s1",
        status: "open",
        n_candidates: 2,
        n_reviewed: 0,
        candidates: [],
        cell_geometry: null,
        ...overrides,
    };
}
test("three clicks return a candidate to unreviewed", () => {
    let v = "unreviewed";
    v = cycleVerdict(v);
    assert.equal(v, "true_positive");
    v = cycleVerdict(v);
    assert.equal(v, "false_positive");
    v = cycleVerdict(v);
    assert.equal(v, "unreviewed");
});
test("finalize enabled exactly when every candidate is reviewed", () => {
    assert.equal(canFinalize(detail({ n_reviewed: 0 })), false);
    assert.equal(canFinalize(detail({ n_reviewed: 1 })), false);
    assert.equal(canFinalize(detail({ n_reviewed: 2 })), true);
});
test("finalize never offered on closed sessions", () => {
    assert.equal(canFinalize(detail({ status: "finalized", n_reviewed: 2 })), false);
    assert.equal(canFinalize(detail({ status: "needs_manual", n_reviewed: 2 })), false);
});
test("keyboard shortcuts map to the same verdicts as clicks", () => {
    assert.equal(keyToVerdict("t"), "true_positive");
    assert.equal(keyToVerdict("f"), "false_positive");
    assert.equal(keyToVerdict("u"), "unreviewed");
    assert.equal(keyToVerdict("x"), null);
});
