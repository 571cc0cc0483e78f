/** Console state derived purely from gateway data.
 *
 * All control logic lives server-side; this store only accumulates events
 * (with tick-based deduplication so replays and resyncs are idempotent),
 * tracks pending operator commands until their effect shows up in the
 * stream, and derives chart-ready series.
 */

import type {
  CardEvent,
  DecisionCard,
  GatewayEvent,
  OperatorCommand,
  StateRow,
} from './types.js';

export type ConnectionState = 'idle' | 'connecting' | 'connected' | 'reconnecting' | 'closed';

export interface PendingCommand {
  command: OperatorCommand;
  ackTick: number;
  sentAt: number;
}

export interface Series {
  ticks: number[];
  t: number[];
  target: number[];
  temperature: number[];
  heaterDuty: number[];
  heaterMean: number[];
  fanOn: number[];
}

export interface CardEntry {
  tick: number;
  card: DecisionCard;
  flagged: boolean;
}

const PENALTY_PHRASE = 'minimal usage of the fan';

export class ConsoleStore {
  runId: string | null = null;
  controller = '';
  status = 'idle';
  connection: ConnectionState = 'idle';
  droppedNotices = 0;

  private rows = new Map<number, StateRow>();
  private cards = new Map<number, DecisionCard>();
  private pendingList: PendingCommand[] = [];
  private listeners: Array<() => void> = [];

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  reset(runId: string, controller: string): void {
    this.runId = runId;
    this.controller = controller;
    this.status = 'running';
    this.rows.clear();
    this.cards.clear();
    this.pendingList = [];
    this.droppedNotices = 0;
    this.notify();
  }

  setConnection(state: ConnectionState): void {
    if (this.connection !== state) {
      this.connection = state;
      this.notify();
    }
  }

  apply(event: GatewayEvent): void {
    switch (event.type) {
      case 'state':
        this.applyRow(event.data);
        break;
      case 'card':
        this.applyCard(event.data);
        break;
      case 'gap':
        this.droppedNotices += event.data.dropped;
        break;
      case 'status':
        this.status = event.data.status;
        this.settlePending();
        break;
    }
    this.notify();
  }

  /** Merge a full log snapshot (reconnect resync); idempotent per tick.
   * A stale 'running' from an in-flight fetch never regresses a terminal
   * status: runs do not resume. */
  resync(rows: StateRow[], status?: string): void {
    for (const row of rows) this.applyRow(row);
    if (status !== undefined && !(this.isTerminal() && status === 'running')) {
      this.status = status;
    }
    this.notify();
  }

  private isTerminal(): boolean {
    return this.status !== 'running' && this.status !== 'idle';
  }

  private applyRow(row: StateRow): void {
    if (this.rows.has(row.tick)) return;
    this.rows.set(row.tick, row);
    if (row.controller) this.controller = row.controller;
    this.settlePending();
  }

  private applyCard(event: CardEvent): void {
    if (this.cards.has(event.tick)) return;
    this.cards.set(event.tick, event.card);
    this.settlePending();
  }

  commandSent(command: OperatorCommand, ackTick: number): void {
    this.pendingList.push({ command, ackTick, sentAt: Date.now() });
    this.notify();
  }

  get pending(): PendingCommand[] {
    return [...this.pendingList];
  }

  private settlePending(): void {
    if (this.pendingList.length === 0) return;
    this.pendingList = this.pendingList.filter((p) => !this.effectVisible(p));
  }

  private effectVisible(p: PendingCommand): boolean {
    const cmd = p.command;
    if (cmd.kind === 'stop') return this.status !== 'running';
    for (const [tick, row] of this.rows) {
      if (tick <= p.ackTick) continue;
      if (cmd.kind === 'set_target' && row.target === cmd.target) return true;
      if (cmd.kind === 'set_variant' && row.controller === cmd.controller) return true;
    }
    for (const [tick, card] of this.cards) {
      if (tick <= p.ackTick) continue;
      if (cmd.kind === 'set_penalty') {
        const has = card.prompt.includes(PENALTY_PHRASE);
        if (has === cmd.enabled) return true;
      }
      if (cmd.kind === 'set_objective_text' && cmd.text && card.prompt.includes(cmd.text)) {
        return true;
      }
    }
    return false;
  }

  /** Ordered ticks present in the store (stream order is not guaranteed). */
  get ticks(): number[] {
    return [...this.rows.keys()].sort((a, b) => a - b);
  }

  get series(): Series {
    const ticks = this.ticks;
    const series: Series = {
      ticks, t: [], target: [], temperature: [], heaterDuty: [], heaterMean: [], fanOn: [],
    };
    let dutySum = 0;
    ticks.forEach((tick, i) => {
      const row = this.rows.get(tick)!;
      series.t.push(row.t);
      series.target.push(row.target);
      series.temperature.push(row.T);
      series.heaterDuty.push(row.u_h);
      dutySum += row.u_h;
      series.heaterMean.push(dutySum / (i + 1));
      series.fanOn.push(row.u_f);
    });
    return series;
  }

  /** Card feed, most recent first, guardrail problems flagged. */
  get cardFeed(): CardEntry[] {
    return [...this.cards.entries()]
      .sort((a, b) => b[0] - a[0])
      .map(([tick, card]) => ({ tick, card, flagged: card.verdict !== 'pass' }));
  }

  get rowCount(): number {
    return this.rows.size;
  }

  /** Contiguity check against an authoritative log row list. */
  matchesLog(logRows: StateRow[]): { ok: boolean; missing: number[]; extra: number[] } {
    const logTicks = new Set(logRows.map((r) => r.tick));
    const missing = [...logTicks].filter((t) => !this.rows.has(t)).sort((a, b) => a - b);
    const extra = this.ticks.filter((t) => !logTicks.has(t));
    return { ok: missing.length === 0 && extra.length === 0, missing, extra };
  }
}
