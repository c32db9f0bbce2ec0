/**
 * Wire codec for the engine's line-oriented protocol: delimiter-joined
 * request lines, one compact JSON object per DATA line, whole-line
 * heartbeat/end sentinels. No escaping exists; fields containing the
 * delimiter or a line break are rejected.
 */

export const DEFAULT_DELIMITER = "&&&";
export const HEARTBEAT_LINE = "<<<heartbeat>>>";
export const END_LINE = "<<<end>>>";

export type LineKind = "data" | "heartbeat" | "end";

/** Outcome of a request, mirroring the engine's Response envelope. */
export interface Outcome {
  code: number;
  message: string;
  data: string | null;
}

export const OK_OUTCOME: Outcome = { code: 200, message: "OK", data: null };

export class EncodeError extends Error {}

export function classifyLine(line: string): LineKind {
  if (line === HEARTBEAT_LINE) return "heartbeat";
  if (line === END_LINE) return "end";
  return "data";
}

function checkField(value: string, delimiter: string): string {
  if (value.includes(delimiter)) {
    throw new EncodeError(`field ${JSON.stringify(value)} contains the delimiter ${delimiter}`);
  }
  if (value.includes("\n") || value.includes("\r")) {
    throw new EncodeError(`field ${JSON.stringify(value)} contains a line break`);
  }
  return value;
}

export function encodeRequest(
  tag: string,
  subTag: string,
  params: Record<string, string> = {},
  delimiter: string = DEFAULT_DELIMITER,
): string {
  const tokens = [checkField(tag, delimiter), checkField(subTag, delimiter)];
  for (const [key, value] of Object.entries(params)) {
    tokens.push(checkField(key, delimiter), checkField(value, delimiter));
  }
  return tokens.join(delimiter);
}

/**
 * Incremental byte-to-line splitter. Splits on \n at the byte level so
 * multi-byte UTF-8 sequences crossing chunk boundaries stay intact; a lone
 * \r before the terminator is stripped.
 */
export class LineSplitter {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): string[] {
    this.buffer = this.buffer.length ? Buffer.concat([this.buffer, chunk]) : chunk;
    const lines: string[] = [];
    let index: number;
    while ((index = this.buffer.indexOf(0x0a)) !== -1) {
      let line = this.buffer.subarray(0, index);
      this.buffer = this.buffer.subarray(index + 1);
      if (line.length > 0 && line[line.length - 1] === 0x0d) {
        line = line.subarray(0, line.length - 1);
      }
      lines.push(line.toString("utf-8"));
    }
    return lines;
  }
}

/** True when a frame looks like the engine's error Response envelope. */
export function isErrorEnvelope(doc: Record<string, unknown>): boolean {
  const keys = Object.keys(doc);
  return (
    keys.length === 3 &&
    typeof doc.code === "number" &&
    doc.code !== 200 &&
    typeof doc.message === "string" &&
    "data" in doc
  );
}
