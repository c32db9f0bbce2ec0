export { connect, ClientSession } from "./client.js";
export type { ConnectOptions, RequestOptions, RequestStream } from "./client.js";
export { ConnectionError, EngineRequestError, StreamError, UsageError } from "./errors.js";
export { documentStream } from "./stream.js";
export type { Document, NextLine, OutcomeBox } from "./stream.js";
export {
  classifyLine,
  encodeRequest,
  isErrorEnvelope,
  DEFAULT_DELIMITER,
  END_LINE,
  HEARTBEAT_LINE,
  LineSplitter,
} from "./wire.js";
export type { Outcome } from "./wire.js";
