/** Wire types matching the gateway's JSON payloads. */

export interface StateRow {
  tick: number;
  t: number;
  target: number;
  T: number;
  T_amb: number;
  u_h: number;
  u_f: number;
  card_ref: string;
  fallback: boolean;
  controller?: string;
}

export interface ToolUse {
  round: number;
  call_id: string;
  tool: string;
  arguments: Record<string, unknown>;
  result: Record<string, unknown>;
  ok: boolean;
}

export interface DecisionCard {
  prompt: string;
  tool_log: ToolUse[];
  evidence: string;
  decision: { u_h: number; u_f: number } | null;
  applied: { u_h: number; u_f: number } | null;
  rationale: string;
  verdict: 'pass' | 'violation' | 'fallback';
  warnings: string[];
  duration_s: number;
}

export interface CardEvent {
  tick: number;
  card: DecisionCard;
}

export interface RunLogResponse {
  run_id: string;
  controller: string;
  status: string;
  rows: StateRow[];
}

export interface RunMetrics {
  name: string;
  mae: number;
  heater_mean: number;
  fan_fraction: number;
  fallback_fraction: number;
}

export interface StartRunRequest {
  controller: string;
  backend?: string;
  seed?: number;
  ticks?: number;
  schedule?: [number, number][];
  duration_s?: number;
  penalty?: boolean;
  tick_interval_s?: number;
}

export type CommandKind =
  | 'set_target'
  | 'set_penalty'
  | 'set_objective_text'
  | 'set_variant'
  | 'stop';

export interface OperatorCommand {
  kind: CommandKind;
  target?: number;
  enabled?: boolean;
  text?: string;
  controller?: string;
}

export interface CommandAck {
  queued: boolean;
  tick: number;
}

export type GatewayEvent =
  | { type: 'state'; data: StateRow }
  | { type: 'card'; data: CardEvent }
  | { type: 'gap'; data: { dropped: number } }
  | { type: 'status'; data: { run_id: string; status: string } };

export function isStateRow(value: unknown): value is StateRow {
  const row = value as StateRow;
  return (
    typeof row === 'object' && row !== null &&
    typeof row.tick === 'number' && typeof row.T === 'number' &&
    typeof row.target === 'number'
  );
}
