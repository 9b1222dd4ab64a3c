"""Tetris as a finite MDP with feature-based value functions.

The board is an H x W binary occupancy grid (row 0 at the bottom, default
30 x 10).  An action picks a rotation and the leftmost column of the rotated
footprint; the piece then falls until it rests and fully occupied rows are
cleared.  A state whose top row is occupied is terminal and absorbing.

Three board features drive the basis-mode value function: maximum column
height, covered-hole count and the sum of squared adjacent height
differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from noisymdp.choice import Dataset, Observation, sample_action
from noisymdp.mdp import RMatrix

DEFAULT_HEIGHT = 30
DEFAULT_WIDTH = 10
NUM_PIECES = 7
NUM_FEATURES = 3

# Base footprints as (col, row) offsets, row 0 at the bottom of the piece.
_BASE_SHAPES = {
    1: ((0, 0), (1, 0), (2, 0), (3, 0)),  # I
    2: ((0, 0), (1, 0), (0, 1), (1, 1)),  # O
    3: ((0, 0), (1, 0), (2, 0), (1, 1)),  # T
    4: ((0, 0), (1, 0), (1, 1), (2, 1)),  # S
    5: ((1, 0), (2, 0), (0, 1), (1, 1)),  # Z
    6: ((0, 0), (1, 0), (2, 0), (0, 1)),  # J
    7: ((0, 0), (1, 0), (2, 0), (2, 1)),  # L
}


def _rotate_quarter(cells):
    # 90 degrees clockwise: (c, r) -> (r, -c), then shift to non-negative offsets
    rot = [(r, -c) for c, r in cells]
    min_c = min(c for c, _ in rot)
    min_r = min(r for _, r in rot)
    return tuple(sorted((c - min_c, r - min_r) for c, r in rot))


def _make_rotations():
    table = {}
    for pid, base in _BASE_SHAPES.items():
        rots = [tuple(sorted(base))]
        for _ in range(3):
            rots.append(_rotate_quarter(rots[-1]))
        table[pid] = tuple(rots)
    return table


# All four rotations are kept even for symmetric pieces: an action is a
# (rotation, translation) pair and deduplication would change M_t.
ROTATIONS = _make_rotations()


class IllegalActionError(ValueError):
    """Action is not legal in the given state."""


@dataclass(frozen=True)
class TetrisAction:
    rotation: int  # quarter turns, 0..3
    col: int       # leftmost column of the rotated footprint

    def __post_init__(self):
        if not 0 <= self.rotation <= 3:
            raise ValueError("rotation must be in 0..3")


@dataclass
class Board:
    grid: np.ndarray  # (H, W) of {0, 1}, row 0 at the bottom

    def __post_init__(self):
        g = np.asarray(self.grid)
        if g.ndim != 2:
            raise ValueError("grid must be 2-D")
        if not np.isin(g, (0, 1)).all():
            raise ValueError("grid entries must be 0 or 1")
        self.grid = g.astype(np.uint8)
        self._heights = None

    @classmethod
    def empty(cls, height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH) -> "Board":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def heights(self) -> np.ndarray:
        """Per-column height: 1-based row of the topmost occupied cell, 0 if empty."""
        if self._heights is None:
            occ = self.grid != 0
            top = self.height - np.argmax(occ[::-1, :], axis=0)
            self._heights = np.where(occ.any(axis=0), top, 0)
        return self._heights

    def occupied(self) -> int:
        return int(self.grid.sum())

    def to_text(self) -> list[str]:
        """Rows of '.'/'#', top row first."""
        return ["".join("#" if c else "." for c in row) for row in self.grid[::-1]]

    @classmethod
    def from_text(cls, lines: Sequence[str]) -> "Board":
        grid = np.array([[1 if ch == "#" else 0 for ch in line] for line in lines],
                        dtype=np.uint8)[::-1]
        return cls(grid)


@dataclass
class GameState:
    board: Board
    piece: int
    terminated: bool = False

    def __post_init__(self):
        if not 1 <= self.piece <= NUM_PIECES:
            raise ValueError("piece id must be in 1..7")
        # terminal iff the top row has an occupied square
        self.terminated = bool(self.board.grid[-1].any())

    @classmethod
    def new(cls, piece: int, height: int = DEFAULT_HEIGHT,
            width: int = DEFAULT_WIDTH) -> "GameState":
        return cls(Board.empty(height, width), piece)


def _spawn_fits(board: Board, cells, col: int) -> bool:
    base_row = board.height - 1 - max(r for _, r in cells)
    if base_row < 0:
        return False
    grid = board.grid
    return all(grid[base_row + r, col + c] == 0 for c, r in cells)


def legal_actions(state: GameState) -> list[TetrisAction]:
    """All (rotation, column) pairs whose footprint fits at spawn.

    Canonical order: rotation-major, then column.  Terminal states have no
    legal actions.
    """
    if state.terminated:
        return []
    out = []
    width = state.board.width
    for rot in range(4):
        cells = ROTATIONS[state.piece][rot]
        fp_width = max(c for c, _ in cells) + 1
        for col in range(width - fp_width + 1):
            if _spawn_fits(state.board, cells, col):
                out.append(TetrisAction(rot, col))
    return out


def step(state: GameState, action: TetrisAction, next_piece: int) -> GameState:
    """Deterministic board update: rotate/translate, drop, clear full rows.

    Terminal states absorb: the board is returned unchanged regardless of the
    action.  The next piece is supplied by the caller (drawn uniformly in the
    game dynamics).
    """
    if state.terminated:
        return GameState(state.board, next_piece)
    cells = ROTATIONS[state.piece][action.rotation]
    fp_width = max(c for c, _ in cells) + 1
    board = state.board
    if not (0 <= action.col <= board.width - fp_width
            and _spawn_fits(board, cells, action.col)):
        raise IllegalActionError(f"{action} is illegal for the current board")
    grid = board.grid
    base_row = board.height - 1 - max(r for _, r in cells)
    col = action.col
    drop = 0
    while True:
        nd = drop + 1
        ok = all(base_row + r - nd >= 0 and grid[base_row + r - nd, col + c] == 0
                 for c, r in cells)
        if not ok:
            break
        drop = nd
    new_grid = grid.copy()
    for c, r in cells:
        new_grid[base_row + r - drop, col + c] = 1
    full = new_grid.all(axis=1)
    if full.any():
        kept = new_grid[~full]
        new_grid = np.vstack([kept, np.zeros((int(full.sum()), board.width),
                                             dtype=np.uint8)])
    return GameState(Board(new_grid), next_piece)


def features(board: Board) -> np.ndarray:
    """(max height, covered holes, sum of squared adjacent height differences)."""
    h = board.heights
    phi1 = float(h.max())
    phi2 = float(h.sum() - board.occupied())
    diffs = np.diff(h.astype(float))
    phi3 = float(np.square(diffs).sum())
    return np.array([phi1, phi2, phi3])


def feature_r_matrix(state: GameState) -> RMatrix:
    """Row i: features of the board after taking legal action i."""
    if state.terminated:
        raise ValueError("terminal state has no feature matrix")
    actions = legal_actions(state)
    rows = np.empty((len(actions), NUM_FEATURES))
    for i, a in enumerate(actions):
        rows[i] = features(step(state, a, next_piece=1).board)
    return RMatrix(state=None, rows=rows,
                   action_labels=tuple((a.rotation, a.col) for a in actions))


def _state_record(state: GameState) -> dict:
    return {"piece": state.piece, "board": state.board.to_text()}


def generate_data(v, num_steps: int, rng: np.random.Generator,
                  restart_on_termination: bool = True,
                  height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH,
                  metadata: dict | None = None) -> Dataset:
    """Play `num_steps` moves of the noisy action model and record observations.

    Actions are the argmax of feature scores plus unit Gaussian noise.  On
    termination the game restarts immediately when flagged, so the record is
    a concatenation of games.
    """
    state = GameState.new(int(rng.integers(1, NUM_PIECES + 1)), height, width)
    observations = []
    pieces = [state.piece]
    chosen = []
    while len(observations) < num_steps:
        # a live board with no legal placement is as dead as a terminal one
        if state.terminated or not legal_actions(state):
            if not restart_on_termination:
                break
            state = GameState.new(int(rng.integers(1, NUM_PIECES + 1)), height, width)
            pieces.append(state.piece)
        rm = feature_r_matrix(state)
        action_idx, _ = sample_action(v, rm, rng)
        observations.append(Observation(
            state=_state_record(state),
            action=action_idx,
            legal_actions=rm.action_labels,
            r_matrix=rm.rows,
        ))
        label = rm.action_labels[action_idx]
        chosen.append(list(label))
        next_piece = int(rng.integers(1, NUM_PIECES + 1))
        state = step(state, TetrisAction(*label), next_piece)
        pieces.append(state.piece)
    meta = {"source": "synthetic", "height": height, "width": width,
            "piece_sequence": pieces, "actions": chosen}
    if metadata:
        meta.update(metadata)
    return Dataset(observations, mode="basis", dim=NUM_FEATURES, metadata=meta)


def replay_game(piece_sequence: Sequence[int], actions: Sequence,
                height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH) -> Board:
    """Re-run a recorded game bit-exactly; restarts mirror generate_data."""
    idx = 0
    state = GameState.new(piece_sequence[idx], height, width)
    for rot, col in actions:
        # same restart rule as generate_data: terminal or jammed
        if state.terminated or not legal_actions(state):
            idx += 1
            state = GameState.new(piece_sequence[idx], height, width)
        idx += 1
        state = step(state, TetrisAction(rot, col), piece_sequence[idx])
    return state.board


def map_predicted_action(posterior, obs_context, rng: np.random.Generator,
                         noise_scale: float = 1.0) -> int:
    """Modal noisy argmax over posterior draws; returns a legal-action index.

    Each stored draw gets fresh unit noise; noise_scale=0 is a test hook that
    reduces the prediction to the exact argmax.  Ties break low.
    """
    rows = obs_context.rows if isinstance(obs_context, RMatrix) else \
        np.atleast_2d(np.asarray(obs_context, dtype=float))
    draws = posterior.draws if hasattr(posterior, "draws") else np.atleast_2d(posterior)
    if draws.shape[0] == 0:
        raise ValueError("empty posterior")
    scores = draws @ rows.T
    if noise_scale:
        scores = scores + noise_scale * rng.standard_normal(scores.shape)
    picks = np.argmax(scores, axis=1)
    counts = np.bincount(picks, minlength=rows.shape[0])
    return int(np.argmax(counts))


def predict_dataset(posterior, dataset: Dataset, rng: np.random.Generator) -> list[int]:
    """MAP predicted action index for every observation of a holdout set."""
    return [map_predicted_action(posterior, obs.r_matrix, rng)
            for obs in dataset.observations]


def action_error(predictions: Sequence[int], dataset_or_actions) -> float:
    """Empirical action error: fraction of mismatched predictions."""
    if isinstance(dataset_or_actions, Dataset):
        truth = [obs.action for obs in dataset_or_actions.observations]
    else:
        truth = list(dataset_or_actions)
    if len(predictions) != len(truth):
        raise ValueError("predictions and reference actions differ in length")
    if not truth:
        raise ValueError("cannot score an empty holdout")
    mism = sum(1 for p, a in zip(predictions, truth) if p != a)
    return mism / len(truth)


def self_play_survival(posterior, max_steps: int, rng: np.random.Generator,
                       height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH) -> int:
    """Steps survived when playing MAP predicted actions from an empty board."""
    state = GameState.new(int(rng.integers(1, NUM_PIECES + 1)), height, width)
    for t in range(max_steps):
        if state.terminated or not legal_actions(state):
            return t
        rm = feature_r_matrix(state)
        idx = map_predicted_action(posterior, rm, rng)
        rot, col = rm.action_labels[idx]
        state = step(state, TetrisAction(rot, col), int(rng.integers(1, NUM_PIECES + 1)))
    return max_steps


def untouched_fall(state: GameState, next_piece: int) -> GameState:
    """Let the block fall centered with no rotation or translation.

    Used when a decision deadline passes.  If even the centered spawn is
    blocked the board is jammed and the state is returned as terminal-like by
    placing nothing.
    """
    if state.terminated:
        return GameState(state.board, next_piece)
    cells = ROTATIONS[state.piece][0]
    fp_width = max(c for c, _ in cells) + 1
    col = (state.board.width - fp_width) // 2
    action = TetrisAction(0, col)
    try:
        return step(state, action, next_piece)
    except IllegalActionError:
        # jammed spawn: board unchanged, play continues with the next piece
        return GameState(state.board, next_piece)
