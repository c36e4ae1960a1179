#!/usr/bin/env python3
"""Sweep the minimum green duration for the pressure controllers.

Each controller runs the same uniform-demand grid scenario with the signal
hold time set to each value in the sweep; the summary pivot has one column
per t_duration value.
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
from pressim.sim import SimConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=2)
    ap.add_argument("--cols", type=int, default=2)
    ap.add_argument("--road-m", type=float, default=300.0)
    ap.add_argument("--demand", default="uniform:0.08")
    ap.add_argument("--episode-length", type=float, default=3600.0)
    ap.add_argument("--values", type=lambda s: tuple(float(v) for v in s.split(",")),
                    default=(10.0, 15.0, 20.0))
    ap.add_argument("--seeds", type=lambda s: tuple(int(v) for v in s.split(",")),
                    default=(0, 1, 2))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results/duration_sweep")
    args = ap.parse_args()

    net = build_grid(args.rows, args.cols, args.road_m, args.road_m)
    scenario = Scenario(
        id="grid",
        net=net,
        sim=SimConfig(episode_length=args.episode_length),
        demand=parse_demand_spec(args.demand),
    )
    controllers = tuple(
        ControllerSpec(name=name) for name in ("fixedtime", "mp", "efficient-mp")
    )
    plan = ExperimentPlan(
        scenarios=(scenario,),
        controllers=controllers,
        seeds=args.seeds,
        sweep=Sweep(param="t_duration", values=args.values),
        out_dir=args.out,
        jobs=args.jobs,
    )
    result = run_experiment(plan)
    print(result.summary_text, end="")
    print(f"artifacts in {args.out}/")
    return 1 if result.failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
