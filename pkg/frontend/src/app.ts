/** Browser entry point: wires the store, client, charts and command forms. */

import { drawCharts } from './charts.js';
import { GatewayClient, type Subscription } from './gatewayClient.js';
import { ConsoleStore } from './viewModel.js';
import type { OperatorCommand } from './types.js';

const store = new ConsoleStore();
const client = new GatewayClient(location.origin.replace(/\/$/, ''));
let subscription: Subscription | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function render(): void {
  el<HTMLSpanElement>('status').textContent = `${store.status}`;
  el<HTMLSpanElement>('controller').textContent = store.controller || '-';
  el<HTMLSpanElement>('tick-count').textContent = String(store.rowCount);

  const banner = el<HTMLDivElement>('connection-banner');
  banner.textContent =
    store.connection === 'connected' ? '' :
    store.connection === 'reconnecting' ? 'connection lost - reconnecting and resyncing' :
    store.connection === 'connecting' ? 'connecting' :
    store.connection === 'closed' && store.status === 'running' ? 'stream closed' : '';
  banner.style.display = banner.textContent ? 'block' : 'none';

  const pending = el<HTMLDivElement>('pending');
  pending.innerHTML = '';
  for (const p of store.pending) {
    const chip = document.createElement('span');
    chip.className = 'chip';
    chip.textContent = `${p.command.kind} pending (ack tick ${p.ackTick})`;
    pending.appendChild(chip);
  }

  drawCharts(
    el<HTMLCanvasElement>('chart-temperature'),
    el<HTMLCanvasElement>('chart-fan'),
    el<HTMLCanvasElement>('chart-heater'),
    store.series,
  );

  const feed = el<HTMLDivElement>('cards');
  feed.innerHTML = '';
  for (const entry of store.cardFeed.slice(0, 50)) {
    const div = document.createElement('div');
    div.className = entry.flagged ? 'card flagged' : 'card';
    const decision = entry.card.applied
      ? `heater ${entry.card.applied.u_h.toFixed(2)}, fan ${entry.card.applied.u_f ? 'ON' : 'OFF'}`
      : 'none';
    div.innerHTML = `
      <div class="card-head">tick ${entry.tick} - ${entry.card.verdict} - ${decision}</div>
      <details>
        <summary>prompt / evidence / rationale</summary>
        <pre>${escapeHtml(entry.card.prompt)}</pre>
        <p><b>Tool use:</b> ${entry.card.tool_log.map((t) => `${t.tool}${t.ok ? '' : ' (failed)'}`).join(', ') || 'none'}</p>
        <p><b>Evidence:</b> ${escapeHtml(entry.card.evidence)}</p>
        <p><b>Rationale:</b> ${escapeHtml(entry.card.rationale)}</p>
      </details>`;
    feed.appendChild(div);
  }
}

function escapeHtml(text: string): string {
  return text.replace(/[&<>]/g, (c) => ({ '&': '&amp;', '<': '&lt;', '>': '&gt;' }[c]!));
}

async function startRun(): Promise<void> {
  const controller = el<HTMLInputElement>('start-controller').value.trim();
  const ticks = parseInt(el<HTMLInputElement>('start-ticks').value, 10) || 60;
  subscription?.stop();
  const started = await client.startRun({
    controller,
    ticks,
    tick_interval_s: parseFloat(el<HTMLInputElement>('start-interval').value) || 0.5,
  });
  store.reset(started.run_id, started.controller);
  el<HTMLSpanElement>('run-id').textContent = started.run_id;
  subscription = client.subscribe(started.run_id, {
    onEvent: (event) => store.apply(event),
    onResync: (rows, status) => store.resync(rows, status),
    onConnection: (state) => store.setConnection(state),
  });
}

async function send(command: OperatorCommand): Promise<void> {
  if (!store.runId) return;
  try {
    const ack = await client.sendCommand(store.runId, command);
    store.commandSent(command, ack.tick);
  } catch (err) {
    const banner = el<HTMLDivElement>('connection-banner');
    banner.textContent = `command rejected: ${(err as Error).message}`;
    banner.style.display = 'block';
  }
}

export function wireUi(): void {
  store.onChange(render);
  el<HTMLButtonElement>('start').addEventListener('click', () => void startRun());
  el<HTMLButtonElement>('send-target').addEventListener('click', () =>
    void send({ kind: 'set_target', target: parseFloat(el<HTMLInputElement>('target').value) }));
  el<HTMLInputElement>('penalty').addEventListener('change', (e) =>
    void send({ kind: 'set_penalty', enabled: (e.target as HTMLInputElement).checked }));
  el<HTMLButtonElement>('send-objective').addEventListener('click', () =>
    void send({ kind: 'set_objective_text', text: el<HTMLInputElement>('objective').value }));
  el<HTMLButtonElement>('send-variant').addEventListener('click', () =>
    void send({ kind: 'set_variant', controller: el<HTMLInputElement>('variant').value.trim() }));
  el<HTMLButtonElement>('stop').addEventListener('click', () => void send({ kind: 'stop' }));
  render();
}

declare global {
  interface Window {
    greenloopConsole?: { store: ConsoleStore; client: GatewayClient };
  }
}

if (typeof document !== 'undefined' && document.getElementById('start')) {
  wireUi();
  window.greenloopConsole = { store, client };
}
