export type Verdict = "unreviewed" | "true_positive" | "false_positive";

export type SessionStatus = "open" | "finalized" | "needs_manual";

export interface SessionSummary {
  session_id: string;
  study_id: string;
  status: SessionStatus;
  n_candidates: number;
  n_reviewed: number;
}

export interface CandidateInfo {
  candidate_id: string;
  score: number;
  box: number[];
  phase: string;
  key_z: number;
  verdict: Verdict;
}

export interface CellGeometry {
  cell_w: number;
  cell_h: number;
  phases: string[];
  rows: { row: number; candidate_id: string }[];
}

export interface SessionDetail extends SessionSummary {
  candidates: CandidateInfo[];
  cell_geometry: CellGeometry | null;
}

export interface LaborReport {
  n_studies: number;
  n_qa_minutes: number;
  n_manual_studies: number;
  n_manual_minutes: number;
  total_minutes: number;
  baseline_minutes: number;
  savings_fraction: number;
}
