#!/usr/bin/env python3
"""Ablate the learning controller's state representation.

Trains one Q-learner per state kind (raw vehicle counts, pressure over
those counts, queue-only pressure, and efficient pressure) on the same
single-intersection scenario, and compares the evaluation travel time of
each against the efficient-max-pressure controller.
"""

import argparse

from pressim.bench import (
    ControllerSpec,
    ExperimentPlan,
    Scenario,
    Sweep,
    parse_demand_spec,
    run_experiment,
)
from pressim.network import build_grid
from pressim.pressure import StateKind
from pressim.rl import QLearnerConfig
from pressim.sim import SimConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--demand", default="asymmetric:0.125,0.05")
    ap.add_argument("--episode-length", type=float, default=600.0)
    ap.add_argument("--episodes", type=int, default=60)
    ap.add_argument("--eval-episodes", type=int, default=10)
    ap.add_argument("--seeds", type=lambda s: tuple(int(v) for v in s.split(",")),
                    default=(0,))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results/state_ablation")
    args = ap.parse_args()

    net = build_grid(1, 1, 300.0, 300.0)
    scenario = Scenario(
        id="single",
        net=net,
        sim=SimConfig(episode_length=args.episode_length),
        demand=parse_demand_spec(args.demand),
    )
    learner = QLearnerConfig(
        episodes=args.episodes,
        eval_episodes=min(args.eval_episodes, args.episodes),
    )
    controllers = (
        ControllerSpec(name="efficient-mp"),
        ControllerSpec(name="mp"),
        ControllerSpec(name="rl", learner=learner),
    )
    plan = ExperimentPlan(
        scenarios=(scenario,),
        controllers=controllers,
        seeds=args.seeds,
        sweep=Sweep(param="state", values=tuple(k.value for k in StateKind)),
        out_dir=args.out,
        jobs=args.jobs,
    )
    result = run_experiment(plan)
    print(result.summary_text, end="")
    print(f"artifacts in {args.out}/")
    return 1 if result.failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
