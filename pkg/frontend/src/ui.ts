/**
 * Browser shell: canvas board rendering, keyboard input, countdown bar.
 *
 * Keys: ArrowLeft/ArrowRight cycle the placement column, ArrowUp cycles the
 * rotation, ArrowDown or Enter commits. Space pauses/steps mimic playback.
 * The countdown is driven only by the server's deadline_ms.
 */

import { GameClient, SessionView, SocketLike } from "./client.js";
import { ROTATIONS, StepResult, step } from "./engine.js";
import { SessionMode } from "./protocol.js";

const CELL_PX = 18;

export interface MountOptions {
  serverUrl: string;
  mode: SessionMode;
  tauS: number;
  blocks: number;
}

class BrowserSocket implements SocketLike {
  constructor(private ws: WebSocket) {}
  send(data: string): void { this.ws.send(data); }
  close(): void { this.ws.close(); }
}

export function mount(root: HTMLElement, options: MountOptions): GameClient {
  const canvas = document.createElement("canvas");
  const status = document.createElement("div");
  const countdown = document.createElement("div");
  countdown.className = "countdown";
  status.className = "status";
  root.append(canvas, countdown, status);

  const ws = new WebSocket(options.serverUrl);
  let paused = false;
  let pendingAnimation: StepResult | null = null;

  const client = new GameClient(new BrowserSocket(ws), options.mode, {
    onState: (view) => draw(canvas, view),
    onMimicAction: (action) => {
      const view = client.view;
      try {
        pendingAnimation = step(view.board, view.piece, action);
      } catch {
        pendingAnimation = null;
      }
      if (!paused && pendingAnimation !== null) {
        animate(canvas, pendingAnimation);
        pendingAnimation = null;
      }
    },
    onRejected: (reason) => { status.textContent = `rejected: ${reason}`; },
    onEnd: (reason) => { status.textContent = `session over: ${reason}`; },
    onDesync: () => { status.textContent = "resynced from server state"; },
  });

  ws.addEventListener("open", () => client.start(options.tauS, options.blocks));
  ws.addEventListener("message", (ev) => client.handleMessage(String(ev.data)));
  ws.addEventListener("close", () => {
    if (client.view.ended === null) {
      status.textContent = "disconnected; sessions cannot be resumed";
    }
  });

  window.addEventListener("keydown", (ev) => {
    if (options.mode === "mimic") {
      if (ev.key === " ") {
        paused = !paused;
        if (!paused && pendingAnimation !== null) {
          animate(canvas, pendingAnimation);
          pendingAnimation = null;
        }
      }
      return;
    }
    switch (ev.key) {
      case "ArrowLeft": client.cycleColumn(-1); break;
      case "ArrowRight": client.cycleColumn(1); break;
      case "ArrowUp": client.cycleRotation(); break;
      case "ArrowDown":
      case "Enter": client.commit(); break;
      default: return;
    }
    draw(canvas, client.view);
  });

  const tick = window.setInterval(() => {
    if (client.view.ended !== null) { window.clearInterval(tick); return; }
    const ms = client.countdownMs();
    countdown.textContent = options.mode === "record"
      ? `${(ms / 1000).toFixed(1)} s`
      : "";
  }, 100);

  return client;
}

function draw(canvas: HTMLCanvasElement, view: SessionView): void {
  const board = view.board;
  if (board.length === 0) return;
  const height = board.length;
  const width = board[0].length;
  canvas.width = width * CELL_PX;
  canvas.height = height * CELL_PX;
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#4a4";
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      if (board[r][c]) {
        ctx.fillRect(c * CELL_PX, (height - 1 - r) * CELL_PX,
                     CELL_PX - 1, CELL_PX - 1);
      }
    }
  }
  // ghost of the selected placement at its spawn row
  const pick = view.selected;
  if (pick !== null && view.piece >= 1) {
    const cells = ROTATIONS[view.piece][pick.rot];
    const top = Math.max(...cells.map(([, r]) => r));
    ctx.fillStyle = "rgba(220, 220, 80, 0.6)";
    for (const [c, r] of cells) {
      const row = height - 1 - top + r;
      ctx.fillRect((pick.col + c) * CELL_PX, (height - 1 - row) * CELL_PX,
                   CELL_PX - 1, CELL_PX - 1);
    }
  }
}

function animate(canvas: HTMLCanvasElement, result: StepResult): void {
  // single-frame animation step: draw the settled board
  const view: Pick<SessionView, "board" | "selected" | "piece"> = {
    board: result.board,
    selected: null,
    piece: 0,
  };
  draw(canvas, view as SessionView);
}
