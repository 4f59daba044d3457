export class ApiError extends Error {
    constructor(status, code, message) {
        super(message);
        this.status = status;
        this.code = code;
    }
}
/** Thin client for the review API. The server is the source of truth:
 * every mutation returns the fresh session detail. */
export class ReviewApi {
    constructor(base = "", fetchFn = (...a) => fetch(...a)) {
        this.base = base;
        this.fetchFn = fetchFn;
    }
    async json(path, init) {
        const resp = await this.fetchFn(this.base + path, init);
        const body = await resp.json().catch(() => ({}));
        if (!resp.ok) {
            throw new ApiError(resp.status, body.error ?? "unknown", body.message ?? resp.statusText);
        }
        return body;
    }
    async listSessions() {
        const body = await this.json("/api/sessions");
        return body.sessions;
    }
    getSession(id) {
        return this.json(`/api/sessions/${id}`);
    }
    montagePath(id, level, width) {
        const params = new URLSearchParams();
        if (level !== undefined)
            params.set("level", String(level));
        if (width !== undefined)
            params.set("width", String(width));
        const q = params.toString();
        return `${this.base}/api/sessions/${id}/montage${q ? "?" + q : ""}`;
    }
    async fetchMontage(id, level, width) {
        const resp = await this.fetchFn(this.montagePath(id, level, width));
        if (!resp.ok) {
            throw new ApiError(resp.status, "montage", `montage fetch failed (${resp.status})`);
        }
        return resp.arrayBuffer();
    }
    submitVerdict(id, candidateId, verdict) {
        return this.json(`/api/sessions/${id}/verdicts`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ candidate_id: candidateId, verdict }),
        });
    }
    finalize(id) {
        return this.json(`/api/sessions/${id}/finalize`, { method: "POST" });
    }
    report() {
        return this.json("/api/report");
    }
}
