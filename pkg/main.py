#!/usr/bin/python3
# -*- coding: utf-8 -*-

"""
Command-line entry point.

    python main.py simulate --steps 50 --error-scale 0.001 --mode both --out trace.csv
    python main.py study --trials 10 --error-scale 0 --error-scale 0.001 --out study.csv --summary stats.csv
    python main.py export --horizon 20 --out cartpole.json
"""

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from bnb import BnbConfig
from cartpole_bench import CartPoleParams, build_controller, terminal_facet_report
from config import logger
from models import StudyRequest
from simulator import (
    CSV_COLUMNS,
    ErrorModel,
    collect,
    run_closed_loop,
    run_study,
    state_scale,
    summarize,
    trace_summary,
    write_csv,
)
from terminal_offline import Controller
from utils import controller_document, load_controller, save_document

CARTPOLE_X0 = (0.0, 0.0, 1.0, 0.0)


def _x0(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Warm-started branch and bound for hybrid MPC of MLD systems"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="controller or MLD model JSON file (default: cart-pole)")
    common.add_argument("--horizon", type=int, default=20)
    common.add_argument("--verbose", action="store_true")

    run = argparse.ArgumentParser(add_help=False, parents=[common])
    run.add_argument("--steps", type=int, default=50)
    run.add_argument("--error-scale", dest="error_scales", type=float, action="append")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--mode", choices=["warm", "cold", "both"], default="both")
    run.add_argument("--epsilon", type=float, default=0.0)
    run.add_argument("--upper-bound", type=_on_off, default=False, metavar="on|off")
    run.add_argument("--x0", type=_x0, help="initial state, comma separated")
    run.add_argument("--out", help="trace CSV path")
    run.add_argument("--summary", help="summary CSV path")
    run.add_argument("--no-timings", dest="timings", action="store_false")

    simulate = sub.add_parser("simulate", parents=[run], help="one closed loop per error scale and mode")
    simulate.add_argument("--trials", type=int, default=1)
    study = sub.add_parser("study", parents=[run], help="many trials, percentile statistics")
    study.add_argument("--trials", type=int, default=10)

    export = sub.add_parser("export", parents=[common], help="write the controller file")
    export.add_argument("--out", required=True)
    return parser


def request_from_args(args: argparse.Namespace) -> StudyRequest:
    return StudyRequest(
        command=args.command,
        model=args.model,
        horizon=args.horizon,
        steps=args.steps,
        trials=args.trials,
        error_scales=args.error_scales or [0.0],
        seed=args.seed,
        mode=args.mode,
        epsilon=args.epsilon,
        upper_bound=args.upper_bound,
        x0=args.x0,
        out=args.out,
        summary=args.summary,
        timings=args.timings,
        verbose=args.verbose,
    )


def get_controller(model: Optional[str], horizon: int) -> Controller:
    if model:
        return load_controller(model, horizon)
    return build_controller(CartPoleParams(), horizon)


def initial_state(req: StudyRequest, controller: Controller) -> np.ndarray:
    n_x = controller.stage.model.n_x
    if req.x0 is not None:
        x0 = np.asarray(req.x0, dtype=float)
    elif req.model is None:
        x0 = np.asarray(CARTPOLE_X0)
    else:
        x0 = np.zeros(n_x)
    if x0.shape != (n_x,):
        raise ValueError(f"x0 needs {n_x} entries, got {x0.size}")
    return x0


def simulate(req: StudyRequest, controller: Controller) -> int:
    cfg = BnbConfig(epsilon=req.epsilon, verbose=req.verbose)
    x0 = initial_state(req, controller)
    scale = state_scale(controller.stage.model)
    traces = []
    for c in req.error_scales:
        for mode in req.modes:
            for trial in range(req.trials):
                trace = run_closed_loop(
                    controller, x0, req.steps, ErrorModel(c, scale, req.seed), mode, cfg, trial, req.upper_bound
                )
                traces.append(trace)
                print(f"c={c:g} mode={mode} trial={trial}: {trace_summary(trace)}")
    frame = collect(traces, req.timings)
    if req.out:
        write_csv(frame, req.out, CSV_COLUMNS)
    if req.summary:
        write_csv(summarize(frame), req.summary)
    return 0


def study(req: StudyRequest, controller: Controller) -> int:
    cfg = BnbConfig(epsilon=req.epsilon, verbose=req.verbose)
    result = run_study(
        controller,
        initial_state(req, controller),
        req.steps,
        req.error_scales,
        req.trials,
        req.seed,
        req.modes,
        cfg,
        req.upper_bound,
        req.timings,
    )
    print(result.counts.to_string(index=False))
    if result.failed:
        logger.error(f"{len(result.failed)} trial(s) failed: {result.failed}")
    if req.out:
        write_csv(result.traces, req.out, CSV_COLUMNS)
    if req.summary:
        write_csv(result.summary, req.summary)
    return 0 if not result.failed else 1


def export(args: argparse.Namespace) -> int:
    controller = get_controller(args.model, args.horizon)
    save_document(controller_document(controller), args.out)
    if args.model is None:
        print(terminal_facet_report(controller))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logger.setLevel(logging.DEBUG)
    try:
        if args.command == "export":
            return export(args)
        req = request_from_args(args)
        controller = get_controller(req.model, req.horizon)
        if req.command == "simulate":
            return simulate(req, controller)
        return study(req, controller)
    except ValidationError as e:
        logger.error(f"Invalid arguments: {e}")
        return 2
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
