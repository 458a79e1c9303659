"""Command-line entry point: ``hillroute {simulate,poa,fit,hybrid}``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, default_seed, load_config
from .core import ContractViolation
from .mdp import NonConvergence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3

POA_DEFAULT_MECHANISMS = {
    "prop1": ("sharing",),
    "prop2": ("hiding", "sharing"),
    "prop3": ("upr",),
}


def _default_threads() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _seed(args) -> int:
    return default_seed() if args.seed is None else args.seed


def cmd_simulate(args) -> int:
    from .mechanisms import make_mechanism
    from .simulate import run_batch

    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = {}
    for name in cfg.mechanisms:
        keep = cfg.traces is not None
        summaries[name] = run_batch(cfg.network, make_mechanism(name), cfg.x0, cfg.T, cfg.M, seed,
                                    threads=args.threads, keep_traces=keep, discounted=cfg.discounted)
        if keep:
            trace_path = out / cfg.traces
            mode = "w" if name == cfg.mechanisms[0] else "a"
            with open(trace_path, mode) as fh:
                for tr in summaries[name].traces:
                    tr.write_ndjson(fh, cfg.network, {"mechanism": name, "episode": tr.episode})
    opt = summaries.get("optimum")
    rows = []
    for name, s in summaries.items():
        ratio = s.mean / opt.mean if opt is not None and opt.mean > 0 else None
        rows.append([name, s.mean, s.stderr, ratio, s.episodes, s.horizon, seed])
    summary_path = out / cfg.summary
    _write_csv(summary_path, ["mechanism", "mean_cost", "stderr", "ratio_to_optimum", "episodes", "horizon", "seed"],
               rows)
    if cfg.figures and not args.no_figures:
        from .plotting import plot_mechanism_costs

        names = list(summaries)
        plot_mechanism_costs(names, [summaries[n].mean for n in names], [summaries[n].stderr for n in names],
                             summary_path.with_suffix(".png"))
    print(f"wrote {summary_path}")
    return EXIT_OK


def cmd_poa(args) -> int:
    from .mechanisms import make_mechanism
    from .poa import poa_estimate, worst_case_scenario

    seed = _seed(args)
    mechs = tuple(args.mechanisms.split(",")) if args.mechanisms else POA_DEFAULT_MECHANISMS[args.scenario]
    rows, series = [], {m: ([], [], []) for m in mechs}
    for dial in args.dial:
        sc = worst_case_scenario(args.scenario, dial, args.paths, args.delta)
        for m in mechs:
            est = poa_estimate(sc.config, make_mechanism(m), sc.x0, None, args.episodes, seed, threads=args.threads)
            bound = sc.bound(m)
            rows.append([args.scenario, dial, args.paths, m, est.ratio, est.stderr, bound, est.mechanism_cost,
                         est.optimum_cost, est.episodes, est.horizon, seed, args.delta])
            series[m][0].append(est.ratio)
            series[m][1].append(est.stderr)
            series[m][2].append(bound)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ["scenario", "dial", "paths", "mechanism", "ratio", "stderr", "bound", "mechanism_cost",
                     "optimum_cost", "episodes", "horizon", "seed", "delta"], rows)
    if not args.no_figures:
        from .plotting import plot_poa_sweep

        plot_poa_sweep(list(args.dial), series, out.with_suffix(".png"), f"{args.scenario}, N={args.paths}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    from .datafit import fit_csv, load_fixture

    if args.fixture:
        payload = {"matrices": load_fixture()["matrices"]}
    else:
        if args.csv is None or args.threshold is None:
            raise ConfigError("fit needs a CSV path and --threshold (or --fixture)")
        payload = {road: chain.to_dict() for road, chain in fit_csv(args.csv, args.threshold).items()}
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_hybrid(args) -> int:
    from .hybrid import HYBRID_MECHANISMS, build_shanghai_fixture, run_hybrid_experiment

    seed = _seed(args)
    net = build_shanghai_fixture()
    if args.no_noise:
        net = net.without_noise()
    mechs = HYBRID_MECHANISMS if args.mechanisms == "all" else tuple(args.mechanisms.split(","))
    res = run_hybrid_experiment(net, mechs, args.horizon, args.episodes, seed, not args.undiscounted, args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        res.write_csv(fh)
    if all(m in mechs for m in HYBRID_MECHANISMS):
        print(f"ordering optimum <= upr <= sharing <= hiding held in {res.ordering_count()}/{args.episodes} episodes")
    if not args.no_figures and "optimum" in mechs:
        from .plotting import plot_hybrid_ratios

        plot_hybrid_ratios(list(mechs), [res.ratio(m) for m in mechs], out.with_suffix(".png"))
    print(f"wrote {out}")
    return EXIT_OK


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hillroute", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="defaults to $HILLROUTE_SEED or 0")
        p.add_argument("--threads", type=_positive_int, default=_default_threads())
        p.add_argument("--no-figures", action="store_true", help="skip the PNG next to the CSV")

    p = sub.add_parser("simulate", help="run mechanisms on a configured network")
    p.add_argument("config")
    p.add_argument("--out", default=".", help="directory for the summary, traces and figure")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("poa", help="price-of-anarchy report on a worst-case scenario")
    p.add_argument("--scenario", choices=sorted(POA_DEFAULT_MECHANISMS), required=True)
    p.add_argument("--dial", type=_unit_interval, nargs="+", default=[0.99])
    p.add_argument("--paths", type=_positive_int, default=1)
    p.add_argument("--delta", type=_unit_interval, default=1e-3)
    p.add_argument("--episodes", type=_positive_int, default=200)
    p.add_argument("--mechanisms", default=None, help="comma-separated; defaults depend on the scenario")
    p.add_argument("--out", default="poa.csv")
    common(p)
    p.set_defaults(func=cmd_poa)

    p = sub.add_parser("fit", help="fit two-state chains from a speed-band CSV")
    p.add_argument("csv", nargs="?")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--fixture", action="store_true", help="print the shipped published matrices")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("hybrid", help="two-origin experiment")
    p.add_argument("--episodes", type=_positive_int, default=100)
    p.add_argument("--horizon", type=_positive_int, default=30)
    p.add_argument("--mechanisms", default="all")
    p.add_argument("--no-noise", action="store_true", help="fix arrivals at their means")
    p.add_argument("--undiscounted", action="store_true")
    p.add_argument("--out", default="hybrid.csv")
    common(p)
    p.set_defaults(func=cmd_hybrid)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractViolation, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
