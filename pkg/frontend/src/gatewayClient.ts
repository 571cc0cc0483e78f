/** REST + event-stream access to the gateway.
 *
 * Subscriptions auto-reconnect with exponential backoff and resync from
 * GET /runs/{id}/log after every (re)connect and on server-announced gaps,
 * so a dropped stream never leaves holes in the tick series.
 */

import { readSseStream } from './sse.js';
import type {
  CommandAck,
  GatewayEvent,
  OperatorCommand,
  RunLogResponse,
  RunMetrics,
  StartRunRequest,
  StateRow,
} from './types.js';

export interface SubscriptionHandlers {
  onEvent: (event: GatewayEvent) => void;
  onResync?: (rows: StateRow[], status: string) => void;
  onConnection?: (state: 'connecting' | 'connected' | 'reconnecting' | 'closed') => void;
}

export interface Subscription {
  stop: () => void;
  done: Promise<void>;
}

const BACKOFF_INITIAL_MS = 300;
const BACKOFF_MAX_MS = 8000;

export class GatewayClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        /* keep the status code */
      }
      throw new Error(`gateway request ${path} failed: ${detail}`);
    }
    return (await response.json()) as T;
  }

  startRun(req: StartRunRequest): Promise<{ run_id: string; controller: string; ticks: number }> {
    return this.json('/runs', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(req),
    });
  }

  sendCommand(runId: string, command: OperatorCommand): Promise<CommandAck> {
    return this.json(`/runs/${encodeURIComponent(runId)}/commands`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(command),
    });
  }

  fetchLog(runId: string): Promise<RunLogResponse> {
    return this.json(`/runs/${encodeURIComponent(runId)}/log`);
  }

  fetchMetrics(runId: string): Promise<RunMetrics> {
    return this.json(`/runs/${encodeURIComponent(runId)}/metrics`);
  }

  /** Subscribe to a run's event stream; returns a handle to stop it. */
  subscribe(runId: string, handlers: SubscriptionHandlers): Subscription {
    let stopped = false;
    let controller: AbortController | null = null;
    let finished = false; // status event seen: stream is complete

    const resync = async (): Promise<void> => {
      try {
        const log = await this.fetchLog(runId);
        handlers.onResync?.(log.rows, log.status);
        if (log.status !== 'running') finished = true;
      } catch {
        /* transient; the next reconnect retries */
      }
    };

    const done = (async () => {
      let backoff = BACKOFF_INITIAL_MS;
      let attempt = 0;
      while (!stopped && !finished) {
        handlers.onConnection?.(attempt === 0 ? 'connecting' : 'reconnecting');
        controller = new AbortController();
        try {
          const response = await this.fetchImpl(
            `${this.baseUrl}/runs/${encodeURIComponent(runId)}/events`,
            { signal: controller.signal, headers: { Accept: 'text/event-stream' } },
          );
          if (!response.ok || !response.body) throw new Error(`stream HTTP ${response.status}`);
          handlers.onConnection?.('connected');
          backoff = BACKOFF_INITIAL_MS;
          // heal anything missed while disconnected (and dedupe handles overlap)
          void resync();
          await readSseStream(
            response.body,
            (msg) => {
              const event = { type: msg.event, data: JSON.parse(msg.data) } as GatewayEvent;
              if (event.type === 'gap') void resync();
              if (event.type === 'status') finished = true;
              handlers.onEvent(event);
            },
            controller.signal,
          );
          if (!finished && !stopped) {
            // server closed without a terminal status: confirm via the log
            await resync();
          }
        } catch (err) {
          if (stopped) break;
        }
        attempt += 1;
        if (!stopped && !finished) {
          await sleep(backoff);
          backoff = Math.min(backoff * 2, BACKOFF_MAX_MS);
        }
      }
      // final authoritative snapshot so late ticks are never missing
      if (!stopped) await resync();
      handlers.onConnection?.('closed');
    })();

    return {
      stop: () => {
        stopped = true;
        controller?.abort();
      },
      done,
    };
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
