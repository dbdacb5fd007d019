// Wire types for the /v1 session API.

export type SessionStatus =
  | "fitting"
  | "awaiting_labels"
  | "awaiting_keywords"
  | "stopped";

export interface SessionRecord {
  session_id: string;
  status: SessionStatus;
  iteration: number;
  n_labeled: number;
  batch_size: number;
  pending_queries: number;
  strategy: string;
  keywords_enabled: boolean;
  class_names: string[];
  stop_reason: string | null;
  created_at: string;
  updated_at: string;
}

export interface QueryItem {
  doc_id: string;
  raw_text: string | null;
  class_probabilities: number[] | null;
  entropy: number | null;
}

export interface KeywordCandidates {
  class_index: number;
  class_name: string;
  terms: string[];
  log_ratios: number[];
}

export interface MetricRow {
  iteration: number;
  n_labeled: number;
  objective: number;
  wall_clock_seconds: number;
  precision?: number;
  recall?: number;
  f1?: number;
  accuracy?: number;
  macro_f1?: number;
}

export interface KeywordDecision {
  term: string;
  class_index: number;
  accept: boolean;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  field?: string;
}
