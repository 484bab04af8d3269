// Island HTTP client: statements, ad-hoc queries, feed intake, and the
// server-sent event stream. Works in the browser and under node (both have
// fetch and ReadableStream), so the console logic stays testable headless.

export interface StatementResult {
  status: string;
  subscriptionId?: string;
  results?: unknown[];
  inserted?: number;
}

export class IslandClient {
  constructor(readonly base: string) {}

  async statements(text: string): Promise<StatementResult[]> {
    const res = await fetch(`${this.base}/statements`, {
      method: "POST",
      headers: { "Content-Type": "text/plain" },
      body: text,
    });
    const body = await res.json();
    if (!res.ok) {
      throw new Error(`statement failed: ${(body as { error?: string }).error ?? res.status}`);
    }
    return body as StatementResult[];
  }

  async query(text: string): Promise<unknown[]> {
    const res = await fetch(`${this.base}/query`, { method: "POST", body: text });
    const body = await res.json();
    if (!res.ok) {
      throw new Error(`query failed: ${(body as { error?: string }).error ?? res.status}`);
    }
    return (body as { results: unknown[] }).results;
  }

  async status(): Promise<Record<string, unknown>> {
    const res = await fetch(`${this.base}/status`);
    if (!res.ok) throw new Error(`status: HTTP ${res.status}`);
    return (await res.json()) as Record<string, unknown>;
  }

  // Feed intake takes one typed-text record per POST; the island's declared
  // OfficerLocation type wants a point literal.
  async postLocation(feedUrl: string, oid: number, x: number, y: number): Promise<void> {
    const body = `{"oid": ${oid}, "location": point("${x},${y}")}`;
    const res = await fetch(feedUrl, { method: "POST", body });
    if (!res.ok) throw new Error(`location intake: HTTP ${res.status}`);
  }
}

export interface SseOptions {
  initialBackoffMs?: number;
  maxBackoffMs?: number;
  onStatus?: (state: "connected" | "reconnecting") => void;
}

/** Minimal text/event-stream consumer with exponential-backoff reconnect. */
export class SseClient {
  private stopped = false;
  private abort: AbortController | null = null;

  constructor(
    private readonly url: string,
    private readonly onEvent: (type: string, data: unknown) => void,
    private readonly opts: SseOptions = {},
  ) {}

  start(): void {
    this.stopped = false;
    void this.run();
  }

  stop(): void {
    this.stopped = true;
    this.abort?.abort();
  }

  private async run(): Promise<void> {
    let backoff = this.opts.initialBackoffMs ?? 500;
    while (!this.stopped) {
      try {
        this.abort = new AbortController();
        const res = await fetch(this.url, {
          signal: this.abort.signal,
          headers: { Accept: "text/event-stream" },
        });
        if (!res.ok || !res.body) throw new Error(`events: HTTP ${res.status}`);
        this.opts.onStatus?.("connected");
        backoff = this.opts.initialBackoffMs ?? 500;
        await this.consume(res.body);
      } catch {
        // fall through to reconnect
      }
      if (this.stopped) return;
      this.opts.onStatus?.("reconnecting");
      await new Promise((resolve) => setTimeout(resolve, backoff));
      backoff = Math.min(backoff * 2, this.opts.maxBackoffMs ?? 10_000);
    }
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let split;
      while ((split = buffer.indexOf("\n\n")) >= 0) {
        this.dispatch(buffer.slice(0, split));
        buffer = buffer.slice(split + 2);
      }
    }
  }

  dispatch(chunk: string): void {
    let type = "message";
    const data: string[] = [];
    for (const line of chunk.split("\n")) {
      if (line.startsWith("event:")) type = line.slice(6).trim();
      else if (line.startsWith("data:")) data.push(line.slice(5).trim());
      // lines starting with ':' are heartbeats
    }
    if (!data.length) return;
    try {
      this.onEvent(type, JSON.parse(data.join("\n")));
    } catch {
      // malformed payloads are dropped
    }
  }
}
