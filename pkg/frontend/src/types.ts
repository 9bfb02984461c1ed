/** Wire types mirroring the risk-monitor service JSON payloads. */

export type Phase =
  | "RUNNING"
  | "PAUSED_AWAITING_LABEL"
  | "RESUMED"
  | "COMPLETED";

/** One server-sent event: a per-frame verdict or a phase transition. */
export interface VerdictEvent {
  frame_index: number;
  phase: Phase;
  r?: number;
  mu?: number;
  sigma?: number;
  flag?: number;
  recon_unreliable?: boolean;
  label?: string;
  final?: boolean;
}

export interface SessionInfo {
  session_id: string;
  skill: string;
  source: { type: string; episode_id?: string; expected_frames?: number };
  model_version: number;
  phase: Phase;
  cursor: number;
  pending_frame: number | null;
}

export interface ModelVersionInfo {
  version: number;
  skills: string[];
  trained_on: Record<string, string[]>;
  created: number;
}

export interface ModelsInfo {
  current_version: number | null;
  retrain_running: boolean;
  versions: ModelVersionInfo[];
}

export interface EpisodeInfo {
  episode_id: string;
  skill: string;
  n: number;
  provenance: string;
  fault_kind: string;
}

export type RiskLabel = "safe" | "risky";

export const TAU = 0.5;
