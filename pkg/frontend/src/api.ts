import type { LaborReport, SessionDetail, SessionSummary, Verdict } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin client for the review API. The server is the source of truth:
 * every mutation returns the fresh session detail. */
export class ReviewApi {
  constructor(private base: string = "",
              private fetchFn: FetchFn = (...a) => fetch(...a)) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      throw new ApiError(resp.status, body.error ?? "unknown",
                         body.message ?? resp.statusText);
    }
    return body as T;
  }

  async listSessions(): Promise<SessionSummary[]> {
    const body = await this.json<{ sessions: SessionSummary[] }>("/api/sessions");
    return body.sessions;
  }

  getSession(id: string): Promise<SessionDetail> {
    return this.json<SessionDetail>(`/api/sessions/${id}`);
  }

  montagePath(id: string, level?: number, width?: number): string {
    const params = new URLSearchParams();
    if (level !== undefined) params.set("level", String(level));
    if (width !== undefined) params.set("width", String(width));
    const q = params.toString();
    return `${this.base}/api/sessions/${id}/montage${q ? "?" + q : ""}`;
  }

  async fetchMontage(id: string, level?: number, width?: number): Promise<ArrayBuffer> {
    const resp = await this.fetchFn(this.montagePath(id, level, width));
    if (!resp.ok) {
      throw new ApiError(resp.status, "montage", `montage fetch failed (${resp.status})`);
    }
    return resp.arrayBuffer();
  }

  submitVerdict(id: string, candidateId: string, verdict: Verdict): Promise<SessionDetail> {
    return this.json<SessionDetail>(`/api/sessions/${id}/verdicts`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ candidate_id: candidateId, verdict }),
    });
  }

  finalize(id: string): Promise<SessionDetail> {
    return this.json<SessionDetail>(`/api/sessions/${id}/finalize`, { method: "POST" });
  }

  report(): Promise<LaborReport> {
    return this.json<LaborReport>("/api/report");
  }
}
