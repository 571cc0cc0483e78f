/** Minimal server-sent-events reader over fetch body streams.
 *
 * Works identically in browsers and Node 20+ (both expose web streams on
 * fetch responses), which keeps one code path for the app and its tests.
 */

export interface SseMessage {
  event: string;
  id?: string;
  data: string;
}

/** Incremental parser: feed raw chunks, get complete SSE messages out. */
export class SseParser {
  private buffer = '';
  private current: Partial<SseMessage> & { dataLines: string[] } = { dataLines: [] };

  push(chunk: string): SseMessage[] {
    this.buffer += chunk;
    const out: SseMessage[] = [];
    let idx: number;
    while ((idx = this.buffer.indexOf('\n')) >= 0) {
      const line = this.buffer.slice(0, idx).replace(/\r$/, '');
      this.buffer = this.buffer.slice(idx + 1);
      const msg = this.line(line);
      if (msg) out.push(msg);
    }
    return out;
  }

  private line(line: string): SseMessage | null {
    if (line === '') {
      const { event, id, dataLines } = this.current;
      this.current = { dataLines: [] };
      if (event === undefined && dataLines.length === 0) return null;
      return { event: event ?? 'message', id, data: dataLines.join('\n') };
    }
    if (line.startsWith(':')) return null; // comment / keepalive
    const colon = line.indexOf(':');
    const field = colon < 0 ? line : line.slice(0, colon);
    let value = colon < 0 ? '' : line.slice(colon + 1);
    if (value.startsWith(' ')) value = value.slice(1);
    if (field === 'event') this.current.event = value;
    else if (field === 'id') this.current.id = value;
    else if (field === 'data') this.current.dataLines.push(value);
    return null;
  }
}

/** Read an SSE response body to completion, invoking onMessage per event. */
export async function readSseStream(
  body: ReadableStream<Uint8Array>,
  onMessage: (msg: SseMessage) => void,
  signal?: AbortSignal,
): Promise<void> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  const parser = new SseParser();
  try {
    for (;;) {
      if (signal?.aborted) return;
      const { done, value } = await reader.read();
      if (done) return;
      for (const msg of parser.push(decoder.decode(value, { stream: true }))) {
        onMessage(msg);
      }
    }
  } finally {
    reader.releaseLock();
  }
}
