#!/usr/bin/env python3
"""Ablate the phase scheme: four movement-pair phases versus eight.

The eight-slot scheme adds the four same-approach (through plus left)
combinations, giving the pressure controllers more ways to serve an
imbalanced approach. Uniform and asymmetric demand are both included so
the effect of the extra phases under skewed load is visible in one table.
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
    ap.add_argument("--episode-length", type=float, default=3600.0)
    ap.add_argument("--seeds", type=lambda s: tuple(int(v) for v in s.split(",")),
                    default=(0, 1, 2))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results/phase_ablation")
    args = ap.parse_args()

    net = build_grid(args.rows, args.cols, args.road_m, args.road_m)
    sim = SimConfig(episode_length=args.episode_length)
    scenarios = (
        Scenario(id="uniform", net=net, sim=sim, demand=parse_demand_spec("uniform:0.08")),
        Scenario(id="asymmetric", net=net, sim=sim,
                 demand=parse_demand_spec("asymmetric:0.12,0.04")),
    )
    controllers = (
        ControllerSpec(name="mp"),
        ControllerSpec(name="efficient-mp"),
    )
    plan = ExperimentPlan(
        scenarios=scenarios,
        controllers=controllers,
        seeds=args.seeds,
        sweep=Sweep(param="phases", values=(4, 8)),
        out_dir=args.out,
        jobs=args.jobs,
    )
    result = run_experiment(plan)
    print(result.summary_text, end="")
    print(f"artifacts in {args.out}/")
    return 1 if result.failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
