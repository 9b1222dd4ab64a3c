"""Scripted experiment pipelines at desk or paper scale.

Four pipelines:
  toy           7-state tabular problem; DA vs PX-DA autocorrelation export
  exp1          Tetris synthetic data; recovery, prediction error, self play
  exp2-protocol record a session through the wire protocol, then infer
  exp3-protocol scripted noisy client under time pressure tau in {10,5,3,1}

Desk scale keeps every run in minutes; paper scale restores the published
iteration counts.
"""

from __future__ import annotations

import asyncio
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from noisymdp.choice import Dataset, Observation, sample_action
from noisymdp.diagnostics import acf_to_csv, autocorrelation, summarize
from noisymdp.mdp import TransitionModel, transition_matrix
from noisymdp.probability import (
    InverseGammaParams,
    RngStream,
    SumZeroGaussianPrior,
    sample_sum_zero_gaussian,
)
from noisymdp.sampler import PosteriorSamples, SamplerConfig, run_chain
from noisymdp.serve import GameServer, ServeConfig
from noisymdp.tetris import (
    NUM_FEATURES,
    action_error,
    generate_data,
    predict_dataset,
    self_play_survival,
)

EXPERIMENTS = ("toy", "exp1", "exp2-protocol", "exp3-protocol")
SCALES = ("desk", "paper")

DESK_ITERATIONS = 20_000
DESK_BURN_IN = 5_000
PAPER_ITERATIONS = 500_000
PAPER_BURN_IN = 10_000

TETRIS_KAPPA = 2500.0
TETRIS_IG = InverseGammaParams(3.0, 1e5)
TOY_KAPPA = 2500.0
TOY_IG = InverseGammaParams(1.0, 1.0)

EXP1_VALUE_FUNCTIONS = ((-3.0, -15.0, -1.0), (0.0, 5.0, 0.0), (-20.0, 0.0, 1.0))
EXP1_INFERENCE_SIZES = (10, 20, 50, 100)
EXP1_TOTAL_OBSERVATIONS = 500
EXP1_TRAIN_SPLIT = 100

# posterior draws are thinned to at most this many for MAP prediction
PREDICTION_MAX_DRAWS = 500


def _scale_iterations(scale: str) -> tuple[int, int]:
    if scale == "paper":
        return PAPER_ITERATIONS, PAPER_BURN_IN
    return DESK_ITERATIONS, DESK_BURN_IN


def thin_for_prediction(posterior: PosteriorSamples,
                        max_draws: int = PREDICTION_MAX_DRAWS) -> np.ndarray:
    stride = max(1, len(posterior) // max_draws)
    return posterior.draws[::stride]


# ---------------------------------------------------------------------------
# Toy tabular problem
# ---------------------------------------------------------------------------

def toy_problem(seed: int, num_obs: int = 20, num_states: int = 7,
                num_actions: int = 3, kappa: float = TOY_KAPPA):
    """Random transition model, prior-drawn true v, simulated state process."""
    rng = RngStream(seed, stream=901).generator()
    kernels = rng.dirichlet(np.ones(num_states), size=(num_actions, num_states))
    model = TransitionModel(kernels)
    v_true = sample_sum_zero_gaussian(SumZeroGaussianPrior(num_states, kappa), rng)
    state = int(rng.integers(num_states))
    observations = []
    for _ in range(num_obs):
        rm = transition_matrix(model, state)
        action, _ = sample_action(v_true, rm, rng)
        observations.append(Observation(
            state=state, action=action,
            legal_actions=rm.action_labels, r_matrix=rm.rows))
        state = int(rng.choice(num_states, p=model.kernels[action, state]))
    dataset = Dataset(observations, mode="tabular", dim=num_states,
                      metadata={"source": "toy", "seed": seed,
                                "v_true": v_true.values.tolist()})
    return dataset, v_true, model


def toy_config(moves: str, iterations: int, burn_in: int,
               seed: int) -> SamplerConfig:
    return SamplerConfig(
        mode="tabular", moves=moves, kappa=TOY_KAPPA, ig=TOY_IG,
        iterations=iterations, burn_in=burn_in, step1="mh", seed=seed)


def replicate_toy(scale: str, seed: int, out_dir: str,
                  max_lag: int = 50) -> dict:
    """DA vs PX-DA autocorrelation comparison on the toy problem."""
    iterations, burn_in = _scale_iterations(scale)
    dataset, v_true, _ = toy_problem(seed)
    variants = {"da": "none", "pxda_scale": "scale",
                "pxda_scale_translate": "scale+translate"}
    results = {}
    report = {"experiment": "toy", "scale": scale, "seed": seed,
              "iterations": iterations, "burn_in": burn_in,
              "v_true": v_true.values.tolist(), "variants": {}}
    for name, moves in variants.items():
        posterior = run_chain(dataset, toy_config(moves, iterations, burn_in, seed))
        posterior.save(os.path.join(out_dir, f"posterior_{name}.jsonl"))
        results[name] = posterior
        for comp in range(dataset.dim):
            acf = autocorrelation(posterior.draws[:, comp], max_lag, comp)
            acf_to_csv(acf, os.path.join(out_dir, f"acf_{name}_v{comp + 1}.csv"))
        report["variants"][name] = {
            "acceptance_mean": float(posterior.acceptance.mean()),
            "posterior_mean": posterior.mean().tolist(),
        }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    return {"report": report, "posteriors": results, "dataset": dataset}


# ---------------------------------------------------------------------------
# Experiment 1: synthetic Tetris
# ---------------------------------------------------------------------------

def tetris_config(iterations: int, burn_in: int, seed: int) -> SamplerConfig:
    return SamplerConfig(
        mode="basis", moves="scale", kappa=TETRIS_KAPPA, ig=TETRIS_IG,
        iterations=iterations, burn_in=burn_in, step1="mh", seed=seed)


def subset(dataset: Dataset, start: int, stop: int) -> Dataset:
    return Dataset(dataset.observations[start:stop], mode=dataset.mode,
                   dim=dataset.dim, metadata=dict(dataset.metadata))


def exp1_single(v_true, seed: int, iterations: int, burn_in: int,
                sizes=EXP1_INFERENCE_SIZES,
                survival_seeds: int = 0, survival_steps: int = 250) -> dict:
    """Inference and prediction for one generating value function."""
    rng = RngStream(seed, stream=911).generator()
    data = generate_data(np.asarray(v_true, dtype=float),
                         EXP1_TOTAL_OBSERVATIONS, rng,
                         metadata={"v_true": list(v_true), "seed": seed})
    holdout = subset(data, EXP1_TRAIN_SPLIT, EXP1_TOTAL_OBSERVATIONS)
    out = {"v_true": list(v_true), "sizes": {}, "posteriors": {},
           "dataset": data, "holdout": holdout}
    for n in sizes:
        train = subset(data, 0, n)
        posterior = run_chain(train, tetris_config(iterations, burn_in, seed))
        draws = thin_for_prediction(posterior)
        pred_rng = RngStream(seed, stream=912 + n).generator()
        preds = predict_dataset(draws, holdout, pred_rng)
        out["sizes"][n] = {
            "error": action_error(preds, holdout),
            "acceptance_mean": float(posterior.acceptance.mean()),
            "posterior_mean": posterior.mean().tolist(),
        }
        out["posteriors"][n] = posterior
    if survival_seeds:
        draws = thin_for_prediction(out["posteriors"][max(sizes)])
        survived = []
        for i in range(survival_seeds):
            play_rng = RngStream(seed, stream=2_000 + i).generator()
            survived.append(self_play_survival(draws, survival_steps, play_rng))
        out["survival"] = survived
    return out


def replicate_exp1(scale: str, seed: int, out_dir: str,
                   survival_seeds: int = 100) -> dict:
    iterations, burn_in = _scale_iterations(scale)
    report = {"experiment": "exp1", "scale": scale, "seed": seed,
              "iterations": iterations, "burn_in": burn_in, "runs": []}
    results = []
    for k, v_true in enumerate(EXP1_VALUE_FUNCTIONS):
        res = exp1_single(v_true, seed + k, iterations, burn_in,
                          survival_seeds=survival_seeds if k == 0 else 0)
        res["dataset"].save(os.path.join(out_dir, f"dataset_v{k}.jsonl"))
        for n, posterior in res["posteriors"].items():
            posterior.save(os.path.join(out_dir, f"posterior_v{k}_n{n}.jsonl"))
        entry = {"v_true": list(v_true),
                 "errors": {str(n): res["sizes"][n]["error"]
                            for n in res["sizes"]}}
        if "survival" in res:
            entry["survival_over_250"] = int(
                sum(1 for s in res["survival"] if s >= 250))
            entry["survival"] = res["survival"]
        report["runs"].append(entry)
        results.append(res)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    return {"report": report, "results": results}


# ---------------------------------------------------------------------------
# Protocol experiments: scripted clients against a live server
# ---------------------------------------------------------------------------

@dataclass
class ScriptedClient:
    """Headless protocol client: noisy policy with a latency distribution.

    Latency is drawn per move in advertised (unscaled) seconds and compared
    against the server deadline after the same time scaling, so tau keeps its
    meaning at any time_scale.
    """

    v: np.ndarray
    seed: int
    latency_median_s: float = 0.0
    latency_sigma: float = 0.55
    time_scale: float = 1.0

    async def run(self, uri: str, tau_s: float, blocks: int) -> dict:
        import websockets

        rng = RngStream(self.seed, stream=7_777).generator()
        answered = 0
        async with websockets.connect(uri) as ws:
            await ws.send(json.dumps({"type": "start", "mode": "record",
                                      "tau_s": tau_s, "blocks": blocks}))
            dataset_doc = None
            while True:
                msg = json.loads(await ws.recv())
                if msg["type"] == "state":
                    if self.latency_median_s > 0.0:
                        latency = self.latency_median_s * math.exp(
                            self.latency_sigma * rng.standard_normal())
                        if latency * 1000.0 > msg["deadline_ms"]:
                            # too slow for this move: stay silent
                            continue
                        await asyncio.sleep(latency * self.time_scale)
                    legal = msg["legal"]
                    rows = np.array([_client_features(msg, a) for a in legal])
                    scores = rows @ self.v + rng.standard_normal(len(legal))
                    pick = legal[int(np.argmax(scores))]
                    await ws.send(json.dumps({
                        "type": "action", "rot": pick["rot"],
                        "col": pick["col"], "seq": msg["seq"]}))
                    answered += 1
                elif msg["type"] == "end":
                    if msg["reason"] != "complete":
                        return {"answered": answered, "dataset": None,
                                "reason": msg["reason"]}
                    await ws.send(json.dumps({"type": "download"}))
                elif msg["type"] == "dataset":
                    dataset_doc = msg
                    break
            return {"answered": answered, "dataset": dataset_doc,
                    "reason": "complete"}


def _client_features(state_msg: dict, action: dict) -> np.ndarray:
    """Recompute successor features client-side from the state message."""
    from noisymdp.tetris import Board, GameState, TetrisAction, features, step

    board = Board(np.array(state_msg["board"], dtype=np.uint8)[::-1])
    state = GameState(board, state_msg["piece"])
    nxt = step(state, TetrisAction(action["rot"], action["col"]), next_piece=1)
    return features(nxt.board)


def dataset_from_doc(doc: dict) -> Dataset:
    observations = [Observation(
        state=rec["state"], action=rec["action"],
        legal_actions=tuple(tuple(a) for a in rec["legal_actions"]),
        r_matrix=np.asarray(rec["R"], dtype=float),
    ) for rec in doc["observations"]]
    return Dataset(observations, mode=doc["mode"], dim=doc["dim"],
                   metadata=doc["metadata"])


async def _run_protocol_session(server_config: ServeConfig, client: ScriptedClient,
                                tau_s: float, blocks: int) -> dict:
    server = GameServer(server_config)
    await server.start()
    try:
        uri = f"ws://{server_config.host}:{server.port}"
        return await client.run(uri, tau_s, blocks)
    finally:
        await server.close()


def replicate_exp2_protocol(scale: str, seed: int, out_dir: str,
                            blocks: int = 60, tau_s: float = 10.0,
                            time_scale: float = 0.01) -> dict:
    """Record a full session over the wire, then infer from the recording."""
    iterations, burn_in = _scale_iterations(scale)
    v_play = np.array([-3.0, -15.0, -1.0])
    config = ServeConfig(port=0, seed=seed, out_dir=out_dir,
                         time_scale=time_scale)
    client = ScriptedClient(v=v_play, seed=seed, time_scale=time_scale)
    result = asyncio.run(_run_protocol_session(config, client, tau_s, blocks))
    dataset = dataset_from_doc(result["dataset"])
    dataset.save(os.path.join(out_dir, "recorded.jsonl"))
    posterior = run_chain(dataset, tetris_config(iterations, burn_in, seed))
    posterior.save(os.path.join(out_dir, "posterior.jsonl"))
    summary = summarize(posterior.draws, posterior.acceptance)
    report = {"experiment": "exp2-protocol", "scale": scale, "seed": seed,
              "blocks": blocks, "tau_s": tau_s,
              "recorded": len(dataset),
              "posterior_mean": summary.mean.tolist(),
              "acceptance_mean": float(posterior.acceptance.mean())}
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    return {"report": report, "dataset": dataset, "posterior": posterior}


EXP3_TAUS = (10.0, 5.0, 3.0, 1.0)

# Small time-pressured recordings lose scale identification (the likelihood
# is flat along rays through v), so their chains mix far more slowly along
# that ridge; they get proportionally longer runs to compensate.
EXP3_MIXING_FACTOR = 5


def replicate_exp3_protocol(scale: str, seed: int, out_dir: str,
                            blocks: int = 120, time_scale: float = 0.02,
                            latency_median_s: float = 3.0,
                            infer: bool = True) -> dict:
    """Time-pressure sweep: one scripted session per tau, then inference.

    The client's latency distribution is fixed across sessions, so shrinking
    tau strictly reduces how many moves beat the deadline; posterior
    interquartile ranges then widen as the recordings shrink.
    """
    iterations, burn_in = _scale_iterations(scale)
    v_play = np.array([-3.0, -15.0, -1.0])
    report = {"experiment": "exp3-protocol", "scale": scale, "seed": seed,
              "blocks": blocks, "taus": list(EXP3_TAUS), "sessions": []}
    datasets, posteriors = {}, {}
    for tau in EXP3_TAUS:
        config = ServeConfig(port=0, seed=seed, out_dir=None,
                             time_scale=time_scale)
        client = ScriptedClient(v=v_play, seed=seed,
                                latency_median_s=latency_median_s,
                                time_scale=time_scale)
        result = asyncio.run(_run_protocol_session(config, client, tau, blocks))
        dataset = dataset_from_doc(result["dataset"])
        dataset.save(os.path.join(out_dir, f"recorded_tau{tau:g}.jsonl"))
        datasets[tau] = dataset
        report["sessions"].append({"tau_s": tau, "recorded": len(dataset)})
    largest = max(len(ds) for ds in datasets.values())
    for tau, entry in zip(EXP3_TAUS, report["sessions"]):
        dataset = datasets[tau]
        if not (infer and len(dataset) >= 2):
            continue
        factor = 1 if len(dataset) == largest else EXP3_MIXING_FACTOR
        posterior = run_chain(dataset, tetris_config(
            iterations * factor, burn_in * factor, seed))
        posterior.save(os.path.join(out_dir, f"posterior_tau{tau:g}.jsonl"))
        posteriors[tau] = posterior
        q75, q25 = np.percentile(posterior.draws, [75, 25], axis=0)
        entry["iqr"] = (q75 - q25).tolist()
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    return {"report": report, "datasets": datasets, "posteriors": posteriors}


def run_replicate(experiment: str, scale: str, seed: int, out_dir: str,
                  **kwargs) -> dict:
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment: {experiment!r}")
    if scale not in SCALES:
        raise ValueError(f"unknown scale: {scale!r}")
    os.makedirs(out_dir, exist_ok=True)
    if experiment == "toy":
        return replicate_toy(scale, seed, out_dir, **kwargs)
    if experiment == "exp1":
        return replicate_exp1(scale, seed, out_dir, **kwargs)
    if experiment == "exp2-protocol":
        return replicate_exp2_protocol(scale, seed, out_dir, **kwargs)
    return replicate_exp3_protocol(scale, seed, out_dir, **kwargs)
