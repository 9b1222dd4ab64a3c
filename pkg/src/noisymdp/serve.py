"""WebSocket game service for time-pressured Tetris recording and playback.

The server is authoritative: it owns the board, pushes state messages with a
per-move deadline, and records an observation only when a legal action
arrives in time.  A missed deadline drops the block centered and unrotated
and records nothing.  Mimic mode streams modal posterior-predicted actions
for a client to animate.

Wire protocol (JSON objects with a "type" field, one per message):
  server -> client:
    {"type":"state","board":[[0/1..]],"piece":n,"legal":[{"rot":r,"col":c}..],
     "deadline_ms":ms,"seq":k}        board rows are top-first
    {"type":"cleared","rows":n}
    {"type":"mimic_action","rot":r,"col":c,"seq":k}
    {"type":"rejected","reason":"deadline"|"illegal"}
    {"type":"end","reason":..}
    {"type":"dataset", ...}           reply to "download"
  client -> server:
    {"type":"start","mode":"record"|"mimic","tau_s":s,"blocks":n}
    {"type":"action","rot":r,"col":c,"seq":k}   seq echoes the state message
    {"type":"download"}
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field

import websockets

from noisymdp.choice import Dataset, Observation
from noisymdp.probability import RngStream
from noisymdp.sampler import PosteriorSamples
from noisymdp.tetris import (
    NUM_FEATURES,
    NUM_PIECES,
    GameState,
    TetrisAction,
    feature_r_matrix,
    legal_actions,
    map_predicted_action,
    step,
    untouched_fall,
)

DEFAULT_PORT = 8765


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    seed: int = 0
    out_dir: str | None = None
    posterior: PosteriorSamples | None = None
    height: int = 30
    width: int = 10
    # Wall-clock seconds per advertised second of deadline.  1.0 for humans;
    # scripted replications shrink it so tau keeps its relative meaning while
    # the run finishes in test time.
    time_scale: float = 1.0

    def __post_init__(self):
        if self.time_scale <= 0.0:
            raise ValueError("time_scale must be positive")


def _state_message(state: GameState, labels, deadline_ms: int, seq: int) -> str:
    return json.dumps({
        "type": "state",
        "board": state.board.grid[::-1].tolist(),
        "piece": state.piece,
        "legal": [{"rot": r, "col": c} for r, c in labels],
        "deadline_ms": deadline_ms,
        "seq": seq,
    })


def _dataset_message(dataset: Dataset) -> str:
    return json.dumps({
        "type": "dataset",
        "mode": dataset.mode,
        "dim": dataset.dim,
        "metadata": dataset.metadata,
        "observations": [
            {
                "t": t,
                "state": obs.state,
                "legal_actions": [list(a) for a in obs.legal_actions],
                "action": obs.action,
                "R": obs.r_matrix.tolist(),
            }
            for t, obs in enumerate(dataset.observations)
        ],
    })


@dataclass
class ServeSession:
    """One live game: board, recording buffer, per-move deadline."""

    session_id: int
    mode: str
    tau_s: float
    blocks: int
    state: GameState
    observations: list = field(default_factory=list)
    seq: int = 0


class GameServer:
    """Serves record and mimic sessions over a single listening socket."""

    def __init__(self, config: ServeConfig):
        self.config = config
        self._server = None
        self._sessions = 0
        self.completed: list[Dataset] = []

    async def start(self) -> None:
        self._server = await websockets.serve(
            self._handler, self.config.host, self.config.port)

    @property
    def port(self) -> int:
        # actual bound port (config.port may be 0 for an ephemeral choice)
        return next(iter(self._server.sockets)).getsockname()[1]

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def serve_forever(self) -> None:
        await self.start()
        await self._server.wait_closed()

    # -- session plumbing ---------------------------------------------------

    async def _handler(self, ws) -> None:
        try:
            await self._run_session(ws)
        except websockets.ConnectionClosed:
            pass

    async def _run_session(self, ws) -> None:
        raw = await ws.recv()
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError:
            msg = {}
        if msg.get("type") != "start" or msg.get("mode") not in ("record", "mimic"):
            await ws.send(json.dumps({"type": "end", "reason": "protocol-error"}))
            await ws.close()
            return
        self._sessions += 1
        sid = self._sessions
        rng = RngStream(self.config.seed, stream=sid).generator()
        session = ServeSession(
            session_id=sid,
            mode=msg["mode"],
            tau_s=float(msg.get("tau_s", 10.0)),
            blocks=int(msg.get("blocks", 100)),
            state=GameState.new(int(rng.integers(1, NUM_PIECES + 1)),
                                self.config.height, self.config.width),
        )
        if session.mode == "mimic":
            if self.config.posterior is None:
                await ws.send(json.dumps({"type": "end", "reason": "no-posterior"}))
                await ws.close()
                return
            await self._mimic_loop(ws, session, rng)
        else:
            await self._record_loop(ws, session, rng)

    def _next_piece(self, rng) -> int:
        return int(rng.integers(1, NUM_PIECES + 1))

    async def _record_loop(self, ws, session: ServeSession, rng) -> None:
        loop = asyncio.get_running_loop()
        for seq in range(session.blocks):
            # restart on termination or on a live board with no legal placement
            if session.state.terminated or not legal_actions(session.state):
                session.state = GameState.new(self._next_piece(rng),
                                              self.config.height, self.config.width)
            rm = feature_r_matrix(session.state)
            labels = rm.action_labels
            deadline_ms = int(round(session.tau_s * 1000))
            await ws.send(_state_message(session.state, labels, deadline_ms, seq))
            deadline = loop.time() + session.tau_s * self.config.time_scale
            chosen = None
            while chosen is None:
                remaining = deadline - loop.time()
                if remaining <= 0.0:
                    break
                try:
                    raw = await asyncio.wait_for(ws.recv(), timeout=remaining)
                except asyncio.TimeoutError:
                    break
                m = json.loads(raw)
                if m.get("type") != "action":
                    await ws.send(json.dumps({"type": "end",
                                              "reason": "protocol-error"}))
                    await ws.close()
                    return
                if m.get("seq", seq) != seq:
                    # answer to an already-expired state message
                    await ws.send(json.dumps({"type": "rejected",
                                              "reason": "deadline"}))
                    continue
                pair = (int(m["rot"]), int(m["col"]))
                if pair not in labels:
                    await ws.send(json.dumps({"type": "rejected",
                                              "reason": "illegal"}))
                    continue
                chosen = pair
            before = session.state.board.occupied()
            if chosen is not None:
                session.observations.append(Observation(
                    state={"piece": session.state.piece,
                           "board": session.state.board.to_text()},
                    action=labels.index(chosen),
                    legal_actions=labels,
                    r_matrix=rm.rows,
                ))
                session.state = step(session.state, TetrisAction(*chosen),
                                     self._next_piece(rng))
            else:
                session.state = untouched_fall(session.state,
                                               self._next_piece(rng))
            placed = session.state.board.occupied() - before
            if placed < 4 and not session.state.terminated:
                cleared = (before + 4 - session.state.board.occupied()) // \
                    self.config.width
                if cleared > 0:
                    await ws.send(json.dumps({"type": "cleared",
                                              "rows": cleared}))
            session.seq = seq + 1
        dataset = self._finish_dataset(session)
        await ws.send(json.dumps({"type": "end", "reason": "complete"}))
        await self._answer_downloads(ws, dataset)

    async def _mimic_loop(self, ws, session: ServeSession, rng) -> None:
        posterior = self.config.posterior
        for seq in range(session.blocks):
            if session.state.terminated or not legal_actions(session.state):
                session.state = GameState.new(self._next_piece(rng),
                                              self.config.height, self.config.width)
            rm = feature_r_matrix(session.state)
            labels = rm.action_labels
            await ws.send(_state_message(session.state, labels, 0, seq))
            idx = map_predicted_action(posterior, rm, rng)
            rot, col = labels[idx]
            await ws.send(json.dumps({"type": "mimic_action", "rot": rot,
                                      "col": col, "seq": seq}))
            before = session.state.board.occupied()
            session.state = step(session.state, TetrisAction(rot, col),
                                 self._next_piece(rng))
            cleared = (before + 4 - session.state.board.occupied()) // \
                self.config.width
            if cleared > 0 and not session.state.terminated:
                await ws.send(json.dumps({"type": "cleared", "rows": cleared}))
        await ws.send(json.dumps({"type": "end", "reason": "complete"}))
        await self._answer_downloads(ws, None)

    def _finish_dataset(self, session: ServeSession) -> Dataset:
        dataset = Dataset(
            session.observations,
            mode="basis",
            dim=NUM_FEATURES,
            metadata={
                "source": "serve",
                "session_id": session.session_id,
                "tau_s": session.tau_s,
                "blocks": session.blocks,
                "time_scale": self.config.time_scale,
                "seed": self.config.seed,
            },
        )
        self.completed.append(dataset)
        if self.config.out_dir:
            path = f"{self.config.out_dir}/session_{session.session_id:04d}.jsonl"
            dataset.save(path)
        return dataset

    async def _answer_downloads(self, ws, dataset: Dataset | None) -> None:
        # post-game: serve download requests until the client hangs up
        try:
            while True:
                m = json.loads(await ws.recv())
                if m.get("type") == "download" and dataset is not None:
                    await ws.send(_dataset_message(dataset))
                elif m.get("type") == "download":
                    await ws.send(json.dumps({"type": "end",
                                              "reason": "nothing-recorded"}))
        except websockets.ConnectionClosed:
            pass


def run_server(config: ServeConfig) -> None:
    """Blocking entry point used by the command line."""
    server = GameServer(config)

    async def main():
        await server.serve_forever()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
