/** Wire protocol message shapes. One JSON object per websocket frame, each
 * tagged by "type". Board rows travel top-first. */

export interface LegalEntry {
  rot: number;
  col: number;
}

export interface StateMessage {
  type: "state";
  board: number[][];
  piece: number;
  legal: LegalEntry[];
  deadline_ms: number;
  seq: number;
}

export interface ClearedMessage {
  type: "cleared";
  rows: number;
}

export interface MimicActionMessage {
  type: "mimic_action";
  rot: number;
  col: number;
  seq: number;
}

export interface RejectedMessage {
  type: "rejected";
  reason: "deadline" | "illegal";
}

export interface EndMessage {
  type: "end";
  reason: string;
}

export interface DatasetMessage {
  type: "dataset";
  mode: string;
  dim: number;
  metadata: Record<string, unknown>;
  observations: Array<{
    t: number;
    state: { piece: number; board: string[] };
    legal_actions: Array<[number, number]>;
    action: number;
    R: number[][];
  }>;
}

export type ServerMessage =
  | StateMessage
  | ClearedMessage
  | MimicActionMessage
  | RejectedMessage
  | EndMessage
  | DatasetMessage;

export type SessionMode = "record" | "mimic";

export interface StartMessage {
  type: "start";
  mode: SessionMode;
  tau_s: number;
  blocks: number;
}

export interface ActionMessage {
  type: "action";
  rot: number;
  col: number;
  seq: number;
}

export interface DownloadMessage {
  type: "download";
}

export type ClientMessage = StartMessage | ActionMessage | DownloadMessage;

export function parseServerMessage(data: string): ServerMessage {
  const msg = JSON.parse(data) as { type?: string };
  if (typeof msg.type !== "string") throw new Error("untyped server message");
  return msg as ServerMessage;
}
