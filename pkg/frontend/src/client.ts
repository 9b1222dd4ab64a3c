/**
 * Transport-agnostic session state machine for the record/mimic protocol.
 *
 * The client never invents state: the board shown is always the last server
 * state, or a pure local animation of a server-provided action. Local
 * simulation exists only to smooth animation and to detect desync; on any
 * mismatch the server board wins.
 */

import {
  Grid,
  PlacementAction,
  boardFromWire,
  boardsEqual,
  cloneBoard,
  isTerminal,
  legalActions,
  step,
  untouchedFall,
} from "./engine.js";
import {
  DatasetMessage,
  LegalEntry,
  SessionMode,
  StateMessage,
  parseServerMessage,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
}

export interface SessionView {
  mode: SessionMode;
  board: Grid;
  piece: number;
  legal: LegalEntry[];
  seq: number;
  deadlineMs: number;
  receivedAt: number;
  selected: PlacementAction | null;
  clearedRows: number;
  decisionLog: PlacementAction[];
  desyncCount: number;
  ended: string | null;
}

export interface ClientHooks {
  onState?: (view: SessionView) => void;
  onMimicAction?: (action: PlacementAction) => void;
  onRejected?: (reason: string) => void;
  onEnd?: (reason: string) => void;
  onDataset?: (doc: DatasetMessage) => void;
  onDesync?: (seq: number) => void;
}

export class GameClient {
  readonly view: SessionView;
  private socket: SocketLike;
  private hooks: ClientHooks;
  private now: () => number;
  // what the server will have applied to the last board: our committed
  // action if it arrived in time, otherwise the centered untouched fall
  private committed: PlacementAction | null = null;
  private lastBoard: Grid | null = null;
  private lastPiece = 0;

  constructor(socket: SocketLike, mode: SessionMode, hooks: ClientHooks = {},
              now: () => number = () => Date.now()) {
    this.socket = socket;
    this.hooks = hooks;
    this.now = now;
    this.view = {
      mode,
      board: [],
      piece: 0,
      legal: [],
      seq: -1,
      deadlineMs: 0,
      receivedAt: 0,
      selected: null,
      clearedRows: 0,
      decisionLog: [],
      desyncCount: 0,
      ended: null,
    };
  }

  start(tauS: number, blocks: number): void {
    this.socket.send(JSON.stringify({
      type: "start", mode: this.view.mode, tau_s: tauS, blocks,
    }));
  }

  /** Milliseconds left for the current decision, from deadline_ms alone. */
  countdownMs(at: number = this.now()): number {
    if (this.view.seq < 0 || this.view.ended !== null) return 0;
    return Math.max(0, this.view.deadlineMs - (at - this.view.receivedAt));
  }

  /** Feed one raw websocket frame from the server. */
  handleMessage(data: string): void {
    const msg = parseServerMessage(data);
    switch (msg.type) {
      case "state":
        this.handleState(msg);
        break;
      case "cleared":
        this.view.clearedRows += msg.rows;
        break;
      case "mimic_action": {
        const action = { rot: msg.rot, col: msg.col };
        this.committed = action;
        this.view.decisionLog.push(action);
        this.hooks.onMimicAction?.(action);
        break;
      }
      case "rejected":
        if (msg.reason === "deadline") this.committed = null;
        this.hooks.onRejected?.(msg.reason);
        break;
      case "end":
        this.view.ended = msg.reason;
        this.hooks.onEnd?.(msg.reason);
        break;
      case "dataset":
        this.hooks.onDataset?.(msg);
        break;
    }
  }

  requestDownload(): void {
    this.socket.send(JSON.stringify({ type: "download" }));
  }

  // -- input model: arrows cycle placement, rotate cycles rotation ---------

  cycleColumn(delta: 1 | -1): void {
    const picks = this.view.legal;
    if (picks.length === 0) return;
    const current = this.selectedIndex();
    const rot = picks[current].rot;
    const sameRot = picks
      .map((a, i) => ({ a, i }))
      .filter(({ a }) => a.rot === rot);
    const pos = sameRot.findIndex(({ i }) => i === current);
    const next = sameRot[(pos + delta + sameRot.length) % sameRot.length];
    this.view.selected = { ...picks[next.i] };
  }

  cycleRotation(): void {
    const picks = this.view.legal;
    if (picks.length === 0) return;
    const current = picks[this.selectedIndex()];
    const rots = [...new Set(picks.map((a) => a.rot))].sort((a, b) => a - b);
    const nextRot = rots[(rots.indexOf(current.rot) + 1) % rots.length];
    const candidates = picks.filter((a) => a.rot === nextRot);
    // keep the closest legal column under the new rotation
    const best = candidates.reduce((acc, a) =>
      Math.abs(a.col - current.col) < Math.abs(acc.col - current.col) ? a : acc);
    this.view.selected = { ...best };
  }

  /** Send the selected placement for the current block. */
  commit(): void {
    const pick = this.view.selected;
    if (pick === null || this.view.seq < 0) return;
    this.socket.send(JSON.stringify({
      type: "action", rot: pick.rot, col: pick.col, seq: this.view.seq,
    }));
    this.committed = { ...pick };
    this.view.decisionLog.push({ ...pick });
  }

  /** Commit an arbitrary legal action (scripted/automated play). */
  commitAction(action: PlacementAction): void {
    this.view.selected = { ...action };
    this.commit();
  }

  private selectedIndex(): number {
    const { legal, selected } = this.view;
    if (selected !== null) {
      const idx = legal.findIndex(
        (a) => a.rot === selected.rot && a.col === selected.col);
      if (idx >= 0) return idx;
    }
    return 0;
  }

  private handleState(msg: StateMessage): void {
    const board = boardFromWire(msg.board);
    this.checkSync(board, msg);
    this.view.board = board;
    this.view.piece = msg.piece;
    this.view.legal = msg.legal.map((a) => ({ ...a }));
    this.view.seq = msg.seq;
    this.view.deadlineMs = msg.deadline_ms;
    this.view.receivedAt = this.now();
    this.view.selected = msg.legal.length > 0 ? { ...msg.legal[0] } : null;
    this.lastBoard = cloneBoard(board);
    this.lastPiece = msg.piece;
    this.committed = null;
    this.hooks.onState?.(this.view);
  }

  private checkSync(board: Grid, msg: StateMessage): void {
    if (this.lastBoard === null) return;
    // the server applied either our in-time action or the untouched fall
    const candidates: Grid[] = [];
    if (this.committed !== null) {
      try {
        candidates.push(step(this.lastBoard, this.lastPiece, this.committed).board);
      } catch {
        // committed action was never legal; fall through to untouched fall
      }
    }
    candidates.push(untouchedFall(this.lastBoard, this.lastPiece).board);
    for (const predicted of candidates) {
      if (boardsEqual(predicted, board)) return;
      // dead boards restart fresh server-side
      const dead = isTerminal(predicted)
        || legalActions(predicted, msg.piece).length === 0;
      if (dead && board.every((row) => row.every((c) => c === 0))) return;
    }
    this.view.desyncCount += 1;
    this.hooks.onDesync?.(msg.seq);
  }
}
