/** One click advances a candidate's verdict around the 3-state cycle. */
export function cycleVerdict(current) {
    switch (current) {
        case "unreviewed":
            return "true_positive";
        case "true_positive":
            return "false_positive";
        case "false_positive":
            return "unreviewed";
    }
}
/** Finalize is available exactly when every candidate has been reviewed. */
export function canFinalize(detail) {
    return detail.status === "open" && detail.n_reviewed === detail.n_candidates;
}
/** Keyboard shortcuts map to the same verdict submissions as clicks. */
export function keyToVerdict(key) {
    switch (key) {
        case "t":
            return "true_positive";
        case "f":
            return "false_positive";
        case "u":
            return "unreviewed";
        default:
            return null;
    }
}
export function verdictLabel(v) {
    switch (v) {
        case "unreviewed":
            return "— unreviewed";
        case "true_positive":
            return "✓ true positive";
        case "false_positive":
            return "✗ false positive";
    }
}
