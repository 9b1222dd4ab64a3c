"""Command-line front end: generate, infer, predict, serve, replicate, diag."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from noisymdp.choice import Dataset
from noisymdp.diagnostics import acf_to_csv, autocorrelation, summarize
from noisymdp.probability import InverseGammaParams, RngStream
from noisymdp.replicate import (
    DESK_BURN_IN,
    DESK_ITERATIONS,
    EXPERIMENTS,
    SCALES,
    run_replicate,
    thin_for_prediction,
)
from noisymdp.sampler import MOVES, PosteriorSamples, SamplerConfig, run_chain
from noisymdp.serve import ServeConfig, run_server
from noisymdp.tetris import action_error, generate_data, predict_dataset

DEFAULT_KAPPA = 2500.0
DEFAULT_IG_A = 3.0
DEFAULT_IG_B = 1e5


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text!r}") from exc


def _load_config_file(args: argparse.Namespace) -> None:
    """Fill unset args from a JSON config file; explicit flags win."""
    if not getattr(args, "config", None):
        return
    with open(args.config) as fh:
        doc = json.load(fh)
    for key, value in doc.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None and hasattr(args, attr):
            setattr(args, attr, value)


def _ensure_out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_generate(args) -> int:
    v = args.v if isinstance(args.v, np.ndarray) else _parse_vector(str(args.v))
    rng = RngStream(args.seed).generator()
    dataset = generate_data(
        v, args.steps, rng, height=args.height, width=args.width,
        metadata={"command": "generate", "v_true": v.tolist(),
                  "seed": args.seed, "steps": args.steps})
    dataset.save(args.out)
    print(f"wrote {len(dataset)} observations to {args.out}")
    return 0


def _sampler_config(args, mode: str) -> SamplerConfig:
    moves = args.moves
    if moves is None:
        moves = "scale+translate" if mode == "tabular" else "scale"
    return SamplerConfig(
        mode=mode,
        moves=moves,
        kappa=args.kappa if args.kappa is not None else DEFAULT_KAPPA,
        ig=InverseGammaParams(
            args.ig_a if args.ig_a is not None else DEFAULT_IG_A,
            args.ig_b if args.ig_b is not None else DEFAULT_IG_B),
        iterations=args.iterations,
        burn_in=args.burn_in,
        thinning=args.thinning,
        step1=args.step1,
        seed=args.seed,
    )


def cmd_infer(args) -> int:
    dataset = Dataset.load(args.data)
    config = _sampler_config(args, dataset.mode)
    posterior = run_chain(dataset, config)
    out = _ensure_out_dir(args.out)
    posterior.save(os.path.join(out, "posterior.jsonl"))
    summary = summarize(posterior.draws, posterior.acceptance)
    max_lag = min(args.max_lag, len(posterior) // 2 - 1)
    for comp in range(posterior.draws.shape[1]):
        acf = autocorrelation(posterior.draws[:, comp], max_lag, comp)
        acf_to_csv(acf, os.path.join(out, f"acf_v{comp + 1}.csv"))
    doc = {
        "config": config.to_dict(),
        "data": args.data,
        "draws": len(posterior),
        "posterior_mean": summary.mean.tolist(),
        "posterior_std": summary.std.tolist(),
        "ess": summary.ess.tolist(),
        "acceptance_mean": summary.acceptance_mean,
        "acceptance_min": summary.acceptance_min,
        "wall_time_s": posterior.wall_time,
        "divergence_warning": posterior.divergence_warning,
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    print(f"acceptance mean {summary.acceptance_mean:.3f}, "
          f"draws {len(posterior)}, output in {out}")
    return 0


def uniform_guess_baseline(dataset: Dataset) -> float:
    """Expected error of guessing uniformly over each legal set: 1 - E[1/M_t]."""
    dims = dataset.dims()
    return 1.0 - float(np.mean([1.0 / m for m in dims]))


def cmd_predict(args) -> int:
    holdout = Dataset.load(args.data)
    if len(holdout) == 0:
        print("error: empty holdout dataset", file=sys.stderr)
        return 1
    if args.posterior:
        posterior = PosteriorSamples.load(args.posterior)
        if posterior.mode != holdout.mode:
            print("error: posterior mode does not match holdout mode",
                  file=sys.stderr)
            return 1
        draws = thin_for_prediction(posterior)
    elif args.value_function:
        # synthetic single-draw posterior, mostly for baselines
        draws = _parse_vector(args.value_function)[None, :]
    else:
        print("error: need --posterior or --value-function", file=sys.stderr)
        return 1
    rng = RngStream(args.seed, stream=31).generator()
    predictions = predict_dataset(draws, holdout, rng)
    error = action_error(predictions, holdout)
    doc = {
        "posterior": args.posterior,
        "value_function": args.value_function,
        "data": args.data,
        "seed": args.seed,
        "holdout_size": len(holdout),
        "error": error,
        "uniform_baseline": uniform_guess_baseline(holdout),
        "predictions": predictions,
    }
    out = _ensure_out_dir(args.out)
    with open(os.path.join(out, "predictions.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    print(f"action error {error:.4f} over {len(holdout)} holdout observations")
    return 0


def cmd_serve(args) -> int:
    posterior = PosteriorSamples.load(args.posterior) if args.posterior else None
    config = ServeConfig(
        host=args.host, port=args.port, seed=args.seed,
        out_dir=_ensure_out_dir(args.out) if args.out else None,
        posterior=posterior, time_scale=args.time_scale)
    print(f"serving on ws://{config.host}:{config.port}")
    run_server(config)
    return 0


def cmd_replicate(args) -> int:
    out = _ensure_out_dir(args.out)
    result = run_replicate(args.experiment, args.scale, args.seed, out)
    print(json.dumps(result["report"], indent=2))
    return 0


def cmd_diag(args) -> int:
    posterior = PosteriorSamples.load(args.posterior)
    out = _ensure_out_dir(args.out)
    summary = summarize(posterior.draws, posterior.acceptance)
    max_lag = min(args.max_lag, len(posterior) // 2 - 1)
    for comp in range(posterior.draws.shape[1]):
        acf = autocorrelation(posterior.draws[:, comp], max_lag, comp)
        acf_to_csv(acf, os.path.join(out, f"acf_v{comp + 1}.csv"))
    doc = {
        "posterior": args.posterior,
        "draws": len(posterior),
        "mean": summary.mean.tolist(),
        "std": summary.std.tolist(),
        "ess": summary.ess.tolist(),
        "acceptance_mean": summary.acceptance_mean,
        "acceptance_min": summary.acceptance_min,
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    print(json.dumps(doc["ess"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisymdp",
        description="Bayesian inference of optimal value functions from "
                    "noisy state-action records")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a Tetris state-action record")
    p.add_argument("--v", required=True, type=_parse_vector,
                   help="feature weights, e.g. '-3,-15,-1'")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--height", type=int, default=30)
    p.add_argument("--width", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset file (JSONL)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("infer", help="run the sampler on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON file supplying unset flags")
    p.add_argument("--iterations", type=int, default=DESK_ITERATIONS)
    p.add_argument("--burn-in", type=int, default=DESK_BURN_IN)
    p.add_argument("--thinning", type=int, default=1)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--ig-a", type=float, default=None)
    p.add_argument("--ig-b", type=float, default=None)
    p.add_argument("--moves", choices=MOVES, default=None)
    p.add_argument("--step1", choices=("mh", "exact"), default="mh")
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("predict", help="score MAP predictions on a holdout set")
    p.add_argument("--posterior")
    p.add_argument("--value-function",
                   help="comma-separated single-draw posterior")
    p.add_argument("--data", required=True, help="holdout dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the record/mimic game server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--posterior", help="posterior file for mimic mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-scale", type=float, default=1.0)
    p.add_argument("--out", help="directory for recorded sessions")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replicate", help="run a scripted experiment pipeline")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--scale", choices=SCALES, default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("diag", help="diagnostics for a stored posterior")
    p.add_argument("--posterior", required=True)
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_diag)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _load_config_file(args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
