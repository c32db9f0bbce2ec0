/**
 * Client session for the dataengine socket service.
 *
 * connect() opens the TCP connection and captures the destination key the
 * server sends as its first line. request() encodes one SRC/RQST line and
 * returns an async-iterable stream of documents; heartbeats are skipped,
 * the end sentinel terminates iteration, and in-band error Responses are
 * raised as EngineRequestError. A session is single-owner: one request (or
 * readDocument loop) at a time.
 */

import net from "node:net";

import { ConnectionError, StreamError, UsageError } from "./errors.js";
import { documentStream, type Document, type OutcomeBox } from "./stream.js";
import { classifyLine, DEFAULT_DELIMITER, encodeRequest, LineSplitter, type Outcome } from "./wire.js";

export interface ConnectOptions {
  /** Connection establishment timeout. */
  connectTimeoutMs?: number;
  /** Server heartbeat interval; the read timeout defaults to 3x this. */
  heartbeatIntervalMs?: number;
  /** Per-line read timeout; overrides the heartbeat-derived default. */
  readTimeoutMs?: number;
  delimiter?: string;
}

export interface RequestOptions {
  params?: Record<string, string>;
  startDate?: string;
  endDate?: string;
  /** Stream to another connection's key instead of this session's. */
  destination?: string;
}

export interface RequestStream extends AsyncIterable<Document> {
  /** Response envelope once the stream finished (OK or the in-band error). */
  outcome(): Outcome | null;
  /** Convenience: exhaust the stream into an array. */
  collect(): Promise<Document[]>;
}

class LineReader {
  private splitter = new LineSplitter();
  private lines: string[] = [];
  private waiter: { resolve: (line: string | null) => void; timer: NodeJS.Timeout | null } | null = null;
  private eof = false;

  constructor(private readonly timeoutMs: number) {}

  feed(chunk: Buffer): void {
    this.lines.push(...this.splitter.push(chunk));
    this.wake();
  }

  finish(): void {
    this.eof = true;
    this.wake();
  }

  private wake(): void {
    if (!this.waiter) return;
    if (this.lines.length > 0) {
      const { resolve, timer } = this.waiter;
      this.waiter = null;
      if (timer) clearTimeout(timer);
      resolve(this.lines.shift()!);
    } else if (this.eof) {
      const { resolve, timer } = this.waiter;
      this.waiter = null;
      if (timer) clearTimeout(timer);
      resolve(null);
    }
  }

  next(timeoutMs?: number): Promise<string | null> {
    if (this.lines.length > 0) return Promise.resolve(this.lines.shift()!);
    if (this.eof) return Promise.resolve(null);
    if (this.waiter) return Promise.reject(new UsageError("concurrent reads on one session"));
    return new Promise((resolve, reject) => {
      const limit = timeoutMs ?? this.timeoutMs;
      const timer = setTimeout(() => {
        this.waiter = null;
        reject(new StreamError(`no line within ${limit} ms`));
      }, limit);
      this.waiter = { resolve, timer };
    });
  }
}

export class ClientSession {
  private busy = false;
  private closed = false;

  constructor(
    private readonly socket: net.Socket,
    private readonly reader: LineReader,
    readonly destinationKey: string,
    private readonly delimiter: string,
  ) {}

  /**
   * Request a protocol's documents. The returned stream yields each DATA
   * frame as a parsed object; with a destination override it yields nothing
   * and completes when the engine signals the job is done.
   */
  request(protocol: string, options: RequestOptions = {}): RequestStream {
    if (this.closed) throw new UsageError("session is closed");
    if (this.busy) throw new UsageError("a request is already in flight on this session");
    const fields: Record<string, string> = { protocol, ...(options.params ?? {}) };
    if (options.startDate !== undefined) fields.start_date = options.startDate;
    if (options.endDate !== undefined) fields.end_date = options.endDate;
    if (options.destination !== undefined) fields.destination = options.destination;
    const line = encodeRequest("SRC", "RQST", fields, this.delimiter);

    this.busy = true;
    this.socket.write(line + "\n");
    const box: OutcomeBox = { outcome: null };
    const inner = documentStream(() => this.reader.next(), box);
    const release = () => {
      this.busy = false;
    };

    async function* run(): AsyncGenerator<Document, void, void> {
      try {
        yield* inner;
      } finally {
        release();
      }
    }

    const iterate = run;
    return {
      [Symbol.asyncIterator]: () => iterate(),
      outcome: () => box.outcome,
      collect: async () => {
        const docs: Document[] = [];
        for await (const doc of iterate()) docs.push(doc);
        return docs;
      },
    };
  }

  /**
   * Read one unsolicited document (cross-destination streams, live feeds).
   * Skips heartbeats; returns null when an end sentinel arrives.
   */
  async readDocument(timeoutMs?: number): Promise<Document | null> {
    if (this.closed) throw new UsageError("session is closed");
    if (this.busy) throw new UsageError("a request is already in flight on this session");
    for (;;) {
      const line = await this.reader.next(timeoutMs);
      if (line === null) throw new StreamError("connection lost");
      switch (classifyLine(line)) {
        case "heartbeat":
          continue;
        case "end":
          return null;
        case "data":
          return JSON.parse(line) as Document;
      }
    }
  }

  /** Close the connection; idempotent. The key is invalid afterwards. */
  close(): void {
    if (this.closed) return;
    this.closed = true;
    this.socket.destroy();
  }
}

export async function connect(host: string, port: number, options: ConnectOptions = {}): Promise<ClientSession> {
  const heartbeat = options.heartbeatIntervalMs ?? 5000;
  const readTimeout = options.readTimeoutMs ?? 3 * heartbeat;
  const connectTimeout = options.connectTimeoutMs ?? 10_000;

  const socket = await new Promise<net.Socket>((resolve, reject) => {
    const candidate = net.createConnection({ host, port });
    const timer = setTimeout(() => {
      candidate.destroy();
      reject(new ConnectionError(`connect to ${host}:${port} timed out`));
    }, connectTimeout);
    candidate.once("connect", () => {
      clearTimeout(timer);
      resolve(candidate);
    });
    candidate.once("error", (error) => {
      clearTimeout(timer);
      reject(new ConnectionError(`connect to ${host}:${port} failed: ${error.message}`));
    });
  });

  socket.setNoDelay(true);
  const reader = new LineReader(readTimeout);
  socket.on("data", (chunk) => reader.feed(chunk));
  socket.on("close", () => reader.finish());
  socket.on("error", () => reader.finish());

  let key: string | null;
  try {
    key = await reader.next(connectTimeout);
  } catch (error) {
    socket.destroy();
    throw new ConnectionError(`no destination key received: ${String(error)}`);
  }
  if (key === null) {
    socket.destroy();
    throw new ConnectionError("connection closed before the destination key arrived");
  }
  return new ClientSession(socket, reader, key, options.delimiter ?? DEFAULT_DELIMITER);
}
