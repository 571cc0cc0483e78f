/** Reconnect/resync behavior against a scripted fake gateway: the first
 * stream dies mid-run and even the second stream omits some ticks, so only
 * the resync-from-log path can make the store complete. */

import { createServer, type Server } from 'node:http';
import { AddressInfo } from 'node:net';
import { afterEach, describe, expect, it } from 'vitest';

import { GatewayClient } from '../src/gatewayClient.js';
import { ConsoleStore } from '../src/viewModel.js';
import type { StateRow } from '../src/types.js';

function row(tick: number): StateRow {
  return {
    tick, t: tick * 60, target: 27, T: 26 + tick * 0.05, T_amb: 22.6,
    u_h: 0.25, u_f: 0, card_ref: `cards.jsonl:${tick}`, fallback: false,
    controller: 'LLM-Te0',
  };
}

const ALL_ROWS = [...Array(10).keys()].map(row);

function sse(event: string, data: unknown, id?: number): string {
  const idLine = id === undefined ? '' : `id: ${id}\n`;
  return `event: ${event}\n${idLine}data: ${JSON.stringify(data)}\n\n`;
}

let server: Server | null = null;

afterEach(() => {
  server?.close();
  server = null;
});

function startFakeGateway(): Promise<string> {
  let streamConnections = 0;
  server = createServer((req, res) => {
    if (req.url?.endsWith('/events')) {
      streamConnections += 1;
      res.writeHead(200, { 'Content-Type': 'text/event-stream' });
      if (streamConnections === 1) {
        // ticks 0..3, then the connection drops without a terminal event
        for (const r of ALL_ROWS.slice(0, 4)) res.write(sse('state', r, r.tick));
        setTimeout(() => res.destroy(), 20);
      } else {
        // replay skips ticks 4 and 5 entirely: resync must heal the hole
        for (const r of ALL_ROWS.slice(6)) res.write(sse('state', r, r.tick));
        res.write(sse('status', { run_id: 'run-x', status: 'completed' }));
        res.end();
      }
      return;
    }
    if (req.url?.endsWith('/log')) {
      const done = streamConnections >= 2;
      res.writeHead(200, { 'Content-Type': 'application/json' });
      res.end(JSON.stringify({
        run_id: 'run-x',
        controller: 'LLM-Te0',
        status: done ? 'completed' : 'running',
        rows: done ? ALL_ROWS : ALL_ROWS.slice(0, 4),
      }));
      return;
    }
    res.writeHead(404).end();
  });
  return new Promise((resolve) => {
    server!.listen(0, '127.0.0.1', () => {
      const { port } = server!.address() as AddressInfo;
      resolve(`http://127.0.0.1:${port}`);
    });
  });
}

describe('GatewayClient.subscribe', () => {
  it('reconnects after a dropped stream and resyncs so no ticks are missing', async () => {
    const base = await startFakeGateway();
    const client = new GatewayClient(base);
    const store = new ConsoleStore();
    store.reset('run-x', 'LLM-Te0');
    const states: string[] = [];

    const sub = client.subscribe('run-x', {
      onEvent: (event) => store.apply(event),
      onResync: (rows, status) => store.resync(rows, status),
      onConnection: (state) => {
        store.setConnection(state);
        states.push(state);
      },
    });
    await sub.done;

    expect(store.status).toBe('completed');
    expect(store.ticks).toEqual([...Array(10).keys()]); // gap 4..5 healed from /log
    expect(store.matchesLog(ALL_ROWS).ok).toBe(true);
    expect(states).toContain('reconnecting');
    expect(states[states.length - 1]).toBe('closed');
  }, 15000);

  it('stop() ends the subscription without retries', async () => {
    const base = await startFakeGateway();
    const client = new GatewayClient(base);
    const sub = client.subscribe('run-x', { onEvent: () => undefined });
    sub.stop();
    await sub.done;
  });

  it('surfaces REST errors with the gateway detail message', async () => {
    const base = await startFakeGateway();
    const client = new GatewayClient(base);
    await expect(client.fetchMetrics('missing')).rejects.toThrow(/404/);
  });
});
