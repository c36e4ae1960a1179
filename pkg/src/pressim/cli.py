"""Command-line front end.

Subcommands: ``run`` (one controller-vs-scenario matrix), ``gen-grid``
(write a grid network file), ``gen-demand`` (write a flow file from a
synthetic profile), and ``sweep`` (parameter sweep over t_duration, state
representation, or phase scheme).

Every flag can also be supplied through an environment variable named after
it with the ``PRESSIM_`` prefix (``--t-duration`` becomes
``PRESSIM_T_DURATION``); explicit flags win over the environment.

Exit codes: 0 when every cell succeeded, 1 when any cell failed, 2 on
configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from pressim.bench import (
    ControllerSpec,
    ExperimentPlan,
    Scenario,
    Sweep,
    generate_synthetic_demand,
    parse_demand_spec,
    run_experiment,
)
from pressim.control import ControllerConfig
from pressim.network import (
    PhaseScheme,
    RoadNetwork,
    build_grid,
    load_network,
    save_network,
    validate,
    with_phase_scheme,
)
from pressim.pressure import RewardKind, StateKind
from pressim.sim import ConfigurationError, SimConfig, load_flows, save_flows

ENV_PREFIX = "PRESSIM_"

CONTROLLER_CHOICES = ("fixedtime", "mp", "efficient-mp", "rl")
STATE_CHOICES = tuple(k.value for k in StateKind)
REWARD_CHOICES = tuple(k.value for k in RewardKind)


def _env_value(flag: str) -> Optional[str]:
    name = ENV_PREFIX + flag.lstrip("-").upper().replace("-", "_")
    return os.environ.get(name)


def _add(
    parser: argparse.ArgumentParser,
    flag: str,
    *,
    type: Callable = str,
    default=None,
    choices: Optional[Sequence] = None,
    required: bool = False,
    help: str = "",
) -> None:
    """add_argument with an environment-variable fallback for the default."""
    env = _env_value(flag)
    if env is not None:
        try:
            default = type(env)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for {flag} in environment: {exc}")
        if choices is not None and default not in choices:
            raise ConfigurationError(
                f"environment value {default!r} for {flag} not in {list(choices)}"
            )
        required = False
    parser.add_argument(
        flag, type=type, default=default, choices=choices, required=required, help=help
    )


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v != "")


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _load_net(args) -> RoadNetwork:
    net = load_network(args.network)
    problems = validate(net)
    if problems:
        raise ConfigurationError(
            f"{args.network}: " + "; ".join(str(p) for p in problems[:5])
        )
    if getattr(args, "phases", None) is not None:
        scheme = PhaseScheme.FOUR if args.phases == 4 else PhaseScheme.EIGHT
        net = with_phase_scheme(net, scheme)
    return net


def _scenario(args) -> Scenario:
    net = _load_net(args)
    sim = SimConfig(episode_length=args.episode_length)
    name = Path(args.network).stem
    if args.flows and args.demand:
        raise ConfigurationError("give either --flows or --demand, not both")
    if args.flows:
        return Scenario(id=name, net=net, sim=sim, flows=tuple(load_flows(args.flows)))
    if args.demand:
        return Scenario(id=name, net=net, sim=sim, demand=parse_demand_spec(args.demand))
    raise ConfigurationError("a scenario needs --flows or --demand")


def _controller_spec(name: str, args) -> ControllerSpec:
    control = ControllerConfig(t_duration=args.t_duration)
    if name == "rl":
        from pressim.rl import QLearnerConfig

        learner = QLearnerConfig(
            episodes=args.episodes,
            eval_episodes=min(args.eval_episodes, args.episodes),
            state_kind=StateKind(args.state),
            reward_kind=RewardKind(args.reward),
        )
        return ControllerSpec(name=name, control=control, learner=learner)
    if name not in CONTROLLER_CHOICES:
        raise ConfigurationError(f"unknown controller {name!r}")
    return ControllerSpec(name=name, control=control)


def _execute(plan: ExperimentPlan) -> int:
    result = run_experiment(plan)
    print(result.summary_text, end="")
    if result.detail_path is not None:
        print(f"detail: {result.detail_path}")
        print(f"summary: {result.summary_path}")
    if result.failures:
        for f in result.failures:
            print(
                f"FAILED cell {f.scenario} / {f.controller} / seed {f.seed}:\n{f.error}",
                file=sys.stderr,
            )
        return 1
    return 0


# -- subcommands ------------------------------------------------------------


def cmd_run(args) -> int:
    plan = ExperimentPlan(
        scenarios=(_scenario(args),),
        controllers=(_controller_spec(args.controller, args),),
        seeds=args.seeds,
        out_dir=args.out,
        jobs=args.jobs,
    )
    return _execute(plan)


def cmd_sweep(args) -> int:
    if args.param == "t_duration":
        values: tuple = tuple(float(v) for v in args.values.split(","))
    elif args.param == "phases":
        values = tuple(int(v) for v in args.values.split(","))
        if any(v not in (4, 8) for v in values):
            raise ConfigurationError("phase scheme values must be 4 or 8")
    elif args.param == "state":
        values = tuple(StateKind(v).value for v in args.values.split(","))
    else:
        raise ConfigurationError(f"unknown sweep parameter {args.param!r}")
    plan = ExperimentPlan(
        scenarios=(_scenario(args),),
        controllers=tuple(_controller_spec(n, args) for n in args.controllers),
        seeds=args.seeds,
        sweep=Sweep(param=args.param, values=values),
        out_dir=args.out,
        jobs=args.jobs,
    )
    return _execute(plan)


def cmd_gen_grid(args) -> int:
    scheme = PhaseScheme.FOUR if args.scheme == 4 else PhaseScheme.EIGHT
    net = build_grid(
        args.rows,
        args.cols,
        args.ew_m,
        args.sn_m,
        scheme,
        speed_mps=args.speed,
        lanes_per_approach=args.lanes,
    )
    save_network(net, args.out)
    print(f"wrote {args.out}: {len(net.intersections)} intersections, {len(net.roads)} roads")
    return 0


def cmd_gen_demand(args) -> int:
    net = _load_net(args)
    profile = parse_demand_spec(args.profile)
    flows = generate_synthetic_demand(net, profile, args.seed, args.horizon)
    save_flows(flows, args.out)
    print(f"wrote {args.out}: {len(flows)} flows")
    return 0


# -- parser -----------------------------------------------------------------


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    _add(p, "--network", required=True, help="network file (JSON)")
    _add(p, "--flows", help="flow file; omit when using --demand")
    _add(p, "--demand", help="synthetic profile, e.g. uniform:0.1")
    _add(p, "--phases", type=int, choices=(4, 8), help="override the phase scheme")
    _add(p, "--episode-length", type=float, default=3600.0)
    _add(p, "--t-duration", type=float, default=15.0, help="minimum green seconds")
    _add(p, "--state", default="ep", choices=STATE_CHOICES)
    _add(p, "--reward", default="pressure", choices=REWARD_CHOICES)
    _add(p, "--episodes", type=int, default=200, help="training episodes (rl)")
    _add(p, "--eval-episodes", type=int, default=10)
    _add(p, "--seeds", type=_int_list, default=(0, 1, 2))
    _add(p, "--out", help="output directory for CSV artifacts")
    _add(p, "--jobs", type=int, default=1, help="parallel cells")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pressim",
        description="Queue-based traffic simulation with pressure-driven signal control",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one controller on one scenario")
    _scenario_flags(p_run)
    _add(p_run, "--controller", default="mp", choices=CONTROLLER_CHOICES)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep a parameter over a scenario")
    _scenario_flags(p_sweep)
    _add(p_sweep, "--param", required=True, choices=("t_duration", "state", "phases"))
    _add(p_sweep, "--values", required=True, help="comma-separated sweep values")
    _add(p_sweep, "--controllers", type=_str_list, default=("mp",))
    p_sweep.set_defaults(func=cmd_sweep)

    p_grid = sub.add_parser("gen-grid", help="write a grid network file")
    _add(p_grid, "--rows", type=int, required=True)
    _add(p_grid, "--cols", type=int, required=True)
    _add(p_grid, "--ew-m", type=float, required=True, help="east-west road length")
    _add(p_grid, "--sn-m", type=float, required=True, help="south-north road length")
    _add(p_grid, "--scheme", type=int, default=4, choices=(4, 8))
    _add(p_grid, "--lanes", type=int, default=3, choices=(1, 3))
    _add(p_grid, "--speed", type=float, default=10.0)
    _add(p_grid, "--out", required=True)
    p_grid.set_defaults(func=cmd_gen_grid)

    p_dem = sub.add_parser("gen-demand", help="write a flow file from a profile")
    _add(p_dem, "--network", required=True)
    _add(p_dem, "--profile", required=True, help="uniform:R | asymmetric:MAJ,MIN | peaked:BASE,PEAK,LO-HI")
    _add(p_dem, "--seed", type=int, default=0)
    _add(p_dem, "--horizon", type=float, default=3600.0)
    _add(p_dem, "--out", required=True)
    p_dem.set_defaults(func=cmd_gen_demand)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
