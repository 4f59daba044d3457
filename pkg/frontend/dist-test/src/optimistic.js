import { ApiError } from "./api.js";
/** Local projection of a verdict change, shown while the request is in
 * flight. Never persisted: the server's response always replaces it. */
export function applyVerdictLocally(detail, candidateId, verdict) {
    const candidates = detail.candidates.map((c) => c.candidate_id === candidateId ? { ...c, verdict } : c);
    const n_reviewed = candidates.filter((c) => c.verdict !== "unreviewed").length;
    return { ...detail, candidates, n_reviewed };
}
/** Optimistically apply, then reconcile with the server. On rejection the
 * previous state is restored; a 409 (session already finalized) reloads
 * the authoritative state and surfaces a non-blocking notice. */
export async function submitVerdictOptimistic(api, current, candidateId, verdict, render) {
    render(applyVerdictLocally(current, candidateId, verdict));
    try {
        const fresh = await api.submitVerdict(current.session_id, candidateId, verdict);
        render(fresh);
        return { detail: fresh, notice: null, conflict: false };
    }
    catch (err) {
        if (err instanceof ApiError && err.status === 409) {
            const fresh = await api.getSession(current.session_id);
            render(fresh);
            return { detail: fresh, conflict: true,
                notice: `session is ${fresh.status}; verdict not recorded` };
        }
        render(current); // rollback
        const message = err instanceof Error ? err.message : String(err);
        return { detail: current, notice: `verdict failed: ${message}`, conflict: false };
    }
}
