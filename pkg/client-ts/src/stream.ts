/**
 * Pure frame-stream consumption, independent of the socket: pull lines,
 * skip heartbeats, yield parsed documents, stop at the end sentinel, and
 * surface in-band error envelopes as typed errors.
 */

import { EngineRequestError, StreamError } from "./errors.js";
import { classifyLine, isErrorEnvelope, OK_OUTCOME, type Outcome } from "./wire.js";

export type Document = Record<string, unknown>;

/** Pull-based line source: resolves null at end of input. */
export type NextLine = () => Promise<string | null>;

export interface OutcomeBox {
  outcome: Outcome | null;
}

function parseFrame(line: string): Document {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch {
    throw new StreamError(`malformed DATA frame: ${line.slice(0, 80)}`);
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new StreamError(`DATA frame is not a JSON object: ${line.slice(0, 80)}`);
  }
  return parsed as Document;
}

async function drainToEnd(nextLine: NextLine): Promise<void> {
  for (;;) {
    const line = await nextLine().catch(() => null);
    if (line === null || classifyLine(line) === "end") return;
  }
}

/**
 * Consume one response stream. Heartbeats are transparent: injecting them
 * anywhere between frames never changes the yielded documents.
 */
export async function* documentStream(nextLine: NextLine, box: OutcomeBox): AsyncGenerator<Document, void, void> {
  for (;;) {
    const line = await nextLine();
    if (line === null) {
      throw new StreamError("connection lost before end sentinel");
    }
    switch (classifyLine(line)) {
      case "heartbeat":
        continue;
      case "end":
        box.outcome = OK_OUTCOME;
        return;
      case "data": {
        const doc = parseFrame(line);
        if (isErrorEnvelope(doc)) {
          const outcome = doc as unknown as Outcome;
          box.outcome = outcome;
          await drainToEnd(nextLine); // envelope is followed by END
          throw new EngineRequestError(outcome);
        }
        yield doc;
      }
    }
  }
}
