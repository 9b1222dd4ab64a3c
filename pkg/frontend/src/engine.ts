/**
 * Read-only Tetris rules mirroring the game server, used purely for
 * animation smoothing and desync detection. The server stays authoritative;
 * nothing in here ever feeds back into protocol messages except the
 * (rotation, column) pair the user committed.
 *
 * Boards are binary grids with row 0 at the BOTTOM. The wire protocol sends
 * rows top-first; use boardFromWire/boardToWire at the boundary.
 */

export type Cell = 0 | 1;
export type Grid = Cell[][]; // [row][col], row 0 at the bottom

export interface PlacementAction {
  rot: number;
  col: number;
}

export const NUM_PIECES = 7;

type Offset = readonly [number, number]; // (col, row), row 0 at piece bottom

const BASE_SHAPES: Record<number, readonly Offset[]> = {
  1: [[0, 0], [1, 0], [2, 0], [3, 0]], // I
  2: [[0, 0], [1, 0], [0, 1], [1, 1]], // O
  3: [[0, 0], [1, 0], [2, 0], [1, 1]], // T
  4: [[0, 0], [1, 0], [1, 1], [2, 1]], // S
  5: [[1, 0], [2, 0], [0, 1], [1, 1]], // Z
  6: [[0, 0], [1, 0], [2, 0], [0, 1]], // J
  7: [[0, 0], [1, 0], [2, 0], [2, 1]], // L
};

function sortCells(cells: Offset[]): Offset[] {
  return cells.slice().sort((a, b) => (a[0] - b[0]) || (a[1] - b[1]));
}

function rotateQuarter(cells: readonly Offset[]): Offset[] {
  // 90 degrees clockwise: (c, r) -> (r, -c), shifted back to non-negative
  const rot: Offset[] = cells.map(([c, r]) => [r, -c] as Offset);
  const minC = Math.min(...rot.map(([c]) => c));
  const minR = Math.min(...rot.map(([, r]) => r));
  return sortCells(rot.map(([c, r]) => [c - minC, r - minR] as Offset));
}

function makeRotations(): Record<number, readonly (readonly Offset[])[]> {
  const table: Record<number, readonly (readonly Offset[])[]> = {};
  for (let pid = 1; pid <= NUM_PIECES; pid++) {
    const rots: (readonly Offset[])[] = [sortCells(BASE_SHAPES[pid].slice())];
    for (let i = 0; i < 3; i++) rots.push(rotateQuarter(rots[rots.length - 1]));
    table[pid] = rots;
  }
  return table;
}

// All four rotations kept even for symmetric pieces: actions are
// (rotation, translation) pairs and deduplication would change the menu.
export const ROTATIONS = makeRotations();

export function emptyBoard(height: number, width: number): Grid {
  return Array.from({ length: height }, () => Array<Cell>(width).fill(0));
}

export function cloneBoard(board: Grid): Grid {
  return board.map((row) => row.slice());
}

export function boardFromWire(rows: number[][]): Grid {
  // wire rows are top-first
  return rows.slice().reverse().map((row) => row.map((c) => (c ? 1 : 0)));
}

export function boardToWire(board: Grid): number[][] {
  return board.slice().reverse().map((row) => row.slice());
}

export function boardsEqual(a: Grid, b: Grid): boolean {
  if (a.length !== b.length) return false;
  return a.every((row, i) =>
    row.length === b[i].length && row.every((c, j) => c === b[i][j]));
}

export function isTerminal(board: Grid): boolean {
  return board[board.length - 1].some((c) => c !== 0);
}

export function columnHeights(board: Grid): number[] {
  const width = board[0].length;
  const heights = Array(width).fill(0);
  for (let col = 0; col < width; col++) {
    for (let row = board.length - 1; row >= 0; row--) {
      if (board[row][col]) { heights[col] = row + 1; break; }
    }
  }
  return heights;
}

function footprintWidth(cells: readonly Offset[]): number {
  return Math.max(...cells.map(([c]) => c)) + 1;
}

function spawnFits(board: Grid, cells: readonly Offset[], col: number): boolean {
  const baseRow = board.length - 1 - Math.max(...cells.map(([, r]) => r));
  if (baseRow < 0) return false;
  return cells.every(([c, r]) => board[baseRow + r][col + c] === 0);
}

/** All (rotation, column) pairs whose footprint fits at spawn, in canonical
 * rotation-major order. Terminal boards have none. */
export function legalActions(board: Grid, piece: number): PlacementAction[] {
  if (isTerminal(board)) return [];
  const width = board[0].length;
  const out: PlacementAction[] = [];
  for (let rot = 0; rot < 4; rot++) {
    const cells = ROTATIONS[piece][rot];
    for (let col = 0; col <= width - footprintWidth(cells); col++) {
      if (spawnFits(board, cells, col)) out.push({ rot, col });
    }
  }
  return out;
}

export interface StepResult {
  board: Grid;
  cleared: number;
}

/** Deterministic board update: spawn, drop, clear full rows. Throws on an
 * illegal action; terminal boards are returned unchanged. */
export function step(board: Grid, piece: number, action: PlacementAction): StepResult {
  if (isTerminal(board)) return { board: cloneBoard(board), cleared: 0 };
  const cells = ROTATIONS[piece][action.rot];
  const width = board[0].length;
  if (action.col < 0 || action.col > width - footprintWidth(cells)
      || !spawnFits(board, cells, action.col)) {
    throw new Error(`illegal action rot=${action.rot} col=${action.col}`);
  }
  const baseRow = board.length - 1 - Math.max(...cells.map(([, r]) => r));
  let drop = 0;
  for (;;) {
    const nd = drop + 1;
    const ok = cells.every(([c, r]) =>
      baseRow + r - nd >= 0 && board[baseRow + r - nd][action.col + c] === 0);
    if (!ok) break;
    drop = nd;
  }
  const grid = cloneBoard(board);
  for (const [c, r] of cells) grid[baseRow + r - drop][action.col + c] = 1;
  const kept = grid.filter((row) => !row.every((c) => c === 1));
  const cleared = grid.length - kept.length;
  for (let i = 0; i < cleared; i++) kept.push(Array<Cell>(width).fill(0));
  return { board: kept, cleared };
}

/** The deadline-missed fallback: the block falls centered and unrotated; a
 * jammed spawn leaves the board untouched. */
export function untouchedFall(board: Grid, piece: number): StepResult {
  if (isTerminal(board)) return { board: cloneBoard(board), cleared: 0 };
  const cells = ROTATIONS[piece][0];
  const col = Math.floor((board[0].length - footprintWidth(cells)) / 2);
  try {
    return step(board, piece, { rot: 0, col });
  } catch {
    return { board: cloneBoard(board), cleared: 0 };
  }
}
