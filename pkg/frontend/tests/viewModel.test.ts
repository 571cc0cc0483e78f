import { describe, expect, it } from 'vitest';

import { ConsoleStore } from '../src/viewModel.js';
import type { DecisionCard, StateRow } from '../src/types.js';

function row(tick: number, over: Partial<StateRow> = {}): StateRow {
  return {
    tick,
    t: tick * 60,
    target: 27,
    T: 26 + 0.1 * tick,
    T_amb: 22.6,
    u_h: 0.1 * (tick % 5),
    u_f: tick % 2,
    card_ref: `cards.jsonl:${tick}`,
    fallback: false,
    controller: 'LLM-Te0',
    ...over,
  };
}

function card(over: Partial<DecisionCard> = {}): DecisionCard {
  return {
    prompt: 'maintain a temperature of 27 degrees',
    tool_log: [],
    evidence: 'prompt-only decision',
    decision: { u_h: 0.2, u_f: 0 },
    applied: { u_h: 0.2, u_f: 0 },
    rationale: 'hold',
    verdict: 'pass',
    warnings: [],
    duration_s: 0.01,
    ...over,
  };
}

describe('ConsoleStore', () => {
  it('maps events 1:1 into series points and card feed entries', () => {
    const store = new ConsoleStore();
    store.reset('run-1', 'LLM-Te0');
    for (let i = 0; i < 10; i++) {
      store.apply({ type: 'state', data: row(i) });
      store.apply({ type: 'card', data: { tick: i, card: card() } });
    }
    expect(store.rowCount).toBe(10);
    expect(store.series.ticks).toEqual([...Array(10).keys()]);
    expect(store.series.temperature).toHaveLength(10);
    expect(store.cardFeed).toHaveLength(10);
    expect(store.cardFeed[0]!.tick).toBe(9); // most recent first
  });

  it('keeps the series monotone in time even when events arrive out of order', () => {
    const store = new ConsoleStore();
    store.reset('run-1', 'LLM-Te0');
    for (const tick of [4, 0, 2, 1, 3]) store.apply({ type: 'state', data: row(tick) });
    expect(store.series.ticks).toEqual([0, 1, 2, 3, 4]);
    const times = store.series.t;
    expect([...times].sort((a, b) => a - b)).toEqual(times);
  });

  it('deduplicates replayed ticks (resync is idempotent)', () => {
    const store = new ConsoleStore();
    store.reset('run-1', 'LLM-Te0');
    store.apply({ type: 'state', data: row(0) });
    store.apply({ type: 'state', data: row(1) });
    store.resync([row(0), row(1), row(2)], 'running');
    store.resync([row(0), row(1), row(2)], 'running');
    expect(store.rowCount).toBe(3);
    store.apply({ type: 'card', data: { tick: 0, card: card() } });
    store.apply({ type: 'card', data: { tick: 0, card: card({ rationale: 'dup' }) } });
    expect(store.cardFeed).toHaveLength(1);
    expect(store.cardFeed[0]!.card.rationale).toBe('hold'); // first write wins
  });

  it('computes the running heater mean', () => {
    const store = new ConsoleStore();
    store.reset('run-1', 'LLM-Te0');
    [0.2, 0.4, 0.6].forEach((u_h, i) => store.apply({ type: 'state', data: row(i, { u_h }) }));
    expect(store.series.heaterMean[0]).toBeCloseTo(0.2, 12);
    expect(store.series.heaterMean[1]).toBeCloseTo(0.3, 12);
    expect(store.series.heaterMean[2]).toBeCloseTo(0.4, 12);
  });

  it('flags guardrail violations and fallbacks in the card feed', () => {
    const store = new ConsoleStore();
    store.reset('run-1', 'LLM-SQL-Te0');
    store.apply({ type: 'card', data: { tick: 0, card: card({ verdict: 'violation', decision: null }) } });
    store.apply({ type: 'card', data: { tick: 1, card: card() } });
    const feed = store.cardFeed;
    expect(feed.find((e) => e.tick === 0)!.flagged).toBe(true);
    expect(feed.find((e) => e.tick === 1)!.flagged).toBe(false);
  });

  it('tracks a pending set_target until its effect appears after the ack tick', () => {
    const store = new ConsoleStore();
    store.reset('run-1', 'LLM-Te0');
    store.apply({ type: 'state', data: row(0) });
    store.commandSent({ kind: 'set_target', target: 24 }, 1);
    expect(store.pending).toHaveLength(1);
    // same target seen AT the ack tick does not count
    store.apply({ type: 'state', data: row(1, { target: 27 }) });
    expect(store.pending).toHaveLength(1);
    store.apply({ type: 'state', data: row(2, { target: 24 }) });
    expect(store.pending).toHaveLength(0);
  });

  it('tracks pending prompt-affecting commands via the card text', () => {
    const store = new ConsoleStore();
    store.reset('run-1', 'LLM-Te0');
    store.commandSent({ kind: 'set_penalty', enabled: true }, 0);
    store.commandSent({ kind: 'set_objective_text', text: 'prefer heater over fan' }, 0);
    expect(store.pending).toHaveLength(2);
    store.apply({
      type: 'card',
      data: {
        tick: 1,
        card: card({
          prompt:
            'maintain a temperature of 27 degrees ... minimal usage of the fan. prefer heater over fan',
        }),
      },
    });
    expect(store.pending).toHaveLength(0);
  });

  it('clears pending stop when the run leaves the running state', () => {
    const store = new ConsoleStore();
    store.reset('run-1', 'LLM-Te0');
    store.commandSent({ kind: 'stop' }, 3);
    store.apply({ type: 'status', data: { run_id: 'run-1', status: 'stopped by operator' } });
    expect(store.pending).toHaveLength(0);
    expect(store.status).toBe('stopped by operator');
  });

  it('accumulates gap notices and reports log mismatches', () => {
    const store = new ConsoleStore();
    store.reset('run-1', 'LLM-Te0');
    store.apply({ type: 'gap', data: { dropped: 4 } });
    expect(store.droppedNotices).toBe(4);
    store.apply({ type: 'state', data: row(0) });
    store.apply({ type: 'state', data: row(2) });
    const check = store.matchesLog([row(0), row(1), row(2)]);
    expect(check.ok).toBe(false);
    expect(check.missing).toEqual([1]);
    store.apply({ type: 'state', data: row(1) });
    expect(store.matchesLog([row(0), row(1), row(2)]).ok).toBe(true);
  });
});
