import type { Outcome } from "./wire.js";

/** Connection could not be established (refused, unreachable, timed out). */
export class ConnectionError extends Error {}

/** Stream broke before the end sentinel, or a frame could not be parsed. */
export class StreamError extends Error {}

/** Session misuse: request after close, or overlapping requests. */
export class UsageError extends Error {}

/** In-band error Response from the engine, surfaced as a typed error. */
export class EngineRequestError extends Error {
  readonly code: number;
  readonly data: string | null;

  constructor(outcome: Outcome) {
    super(outcome.message);
    this.name = "EngineRequestError";
    this.code = outcome.code;
    this.data = outcome.data;
  }
}
