"""Command-line entry point: ``covdrive <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .catalog import AbstractScenario, CatalogError, load_catalog
from .concretize import ConcreteScenario, NoMatchingSubMap, ParameterMap, PlacementExhausted, instantiate
from .covgen import GenerationState, next_scenario
from .kpi import KpiThresholds, evaluate
from .simcore import TimedTrace, controller_from_spec, resolve_map, run


def _limit(text: str):
    if text == "full":
        return None
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("--num must be >= 1 or 'full'")
    return n


def cmd_generate(args) -> int:
    catalog = load_catalog(args.catalog)
    state = GenerationState.fresh(catalog, args.k, greedy=args.greedy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gains = []
    while args.num is None or len(state.emitted) < args.num:
        s = next_scenario(state)
        if s is None:
            break
        i = len(state.emitted) - 1
        (out / f"abstract_{i:03d}.json").write_text(json.dumps(s.to_dict(), indent=1) + "\n")
        gains.append(state.last_gain)
        print(f"{i:3d}  gain={state.last_gain:3d}  {s}")
    model = state.model
    cov = {
        "k": args.k,
        "feasible": len(model.feasible_tuples),
        "covered": len(model.covered_tuples),
        "ratio": float(model.ratio()),
        "gains": gains,
        "subsets": [{"categories": list(c), "covered": v[0], "feasible": v[1]}
                    for c, v in sorted(model.per_subset().items())],
    }
    (out / "coverage.json").write_text(json.dumps(cov, indent=1) + "\n")
    print(f"coverage {cov['covered']}/{cov['feasible']}")
    return 0


def cmd_instantiate(args) -> int:
    catalog = load_catalog(args.catalog)
    with open(args.abstract) as fh:
        a = AbstractScenario.from_mapping(catalog, json.load(fh))
    g = resolve_map(args.map)
    pmap = ParameterMap.load(args.parameters)
    sc = instantiate(a, g, pmap, args.seed, map_ref=args.map, scenario_id=args.id)
    Path(args.out).write_text(sc.to_json())
    return 0


def cmd_simulate(args) -> int:
    sc = ConcreteScenario.load(args.scenario)
    g = resolve_map(args.map) if args.map else resolve_map(sc.map_ref)
    tr = run(sc, controller_from_spec(args.controller), budget=args.budget, g=g)
    Path(args.trace_out).write_text(tr.to_jsonl())
    print(f"{sc.id}: {tr.termination} after {tr.duration:.1f} s ({len(tr.frames)} frames)")
    return 0


def cmd_evaluate(args) -> int:
    sc = ConcreteScenario.load(args.scenario)
    tr = TimedTrace.load(args.trace)
    th = KpiThresholds.load(args.thresholds) if args.thresholds else KpiThresholds()
    g = resolve_map(args.map) if args.map else None
    rep = evaluate(tr, sc, th, g)
    text = rep.to_json()
    if args.report_out:
        Path(args.report_out).write_text(text)
    else:
        sys.stdout.write(text)
    flags = [n for n, f in (("safety-critical", rep.safety_critical), ("performance", rep.performance)) if f]
    print(f"{sc.id}: {', '.join(rep.violations) or 'no violations'} [{', '.join(flags) or 'clean'}]", file=sys.stderr)
    return 0


def cmd_perturb(args) -> int:
    from .perturb import SearchConfig, meta_search

    sc = ConcreteScenario.load(args.scenario)
    g = resolve_map(args.map) if args.map else resolve_map(sc.map_ref)
    th = KpiThresholds.load(args.thresholds) if args.thresholds else KpiThresholds()
    st = meta_search(sc, controller_from_spec(args.controller), args.budget, th, g,
                     SearchConfig(sim_budget=args.sim_budget), keep_artifacts=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "search.log").write_text("point\td\tt_npc\tt_ego\toutcome\n" + "".join(r.log_line() + "\n" for r in st.runs))
    found = 0
    for psc, ptr, prep in st.artifacts:
        if not prep.problematic:
            continue
        found += 1
        (out / f"{psc.id}.scenario.json").write_text(psc.to_json())
        (out / f"{psc.id}.trace.jsonl").write_text(ptr.to_jsonl())
        (out / f"{psc.id}.report.json").write_text(prep.to_json())
    print(f"{st.used}/{st.budget} simulations, {found} violating scenario(s), "
          f"safety-critical: {'yes' if st.safety_critical_found else 'no'}")
    return 0


def cmd_campaign(args) -> int:
    from .campaign import CampaignConfig, run_campaign

    cfg = CampaignConfig.load(args.config)
    if args.out:
        cfg.output_dir = str(Path(args.out).resolve())
    report = run_campaign(cfg)
    sys.stdout.write(report.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covdrive", description="Coverage-driven scenario testing for driving stacks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="emit abstract scenarios maximizing k-way coverage")
    g.add_argument("--catalog", required=True)
    g.add_argument("--k", type=int, default=2)
    g.add_argument("--num", type=_limit, default=None, help="scenario count or 'full' (default)")
    g.add_argument("--greedy", action="store_true", help="greedy instead of exact maximization")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    i = sub.add_parser("instantiate", help="turn one abstract scenario into a concrete one")
    i.add_argument("--abstract", required=True)
    i.add_argument("--catalog", required=True)
    i.add_argument("--map", required=True)
    i.add_argument("--parameters", required=True)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--id", default=None)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_instantiate)

    s = sub.add_parser("simulate", help="run a concrete scenario and record its trace")
    s.add_argument("--scenario", required=True)
    s.add_argument("--map", default=None)
    s.add_argument("--controller", default="baseline")
    s.add_argument("--budget", type=float, default=40.0)
    s.add_argument("--trace-out", required=True)
    s.set_defaults(fn=cmd_simulate)

    e = sub.add_parser("evaluate", help="compute KPIs of a trace")
    e.add_argument("--trace", required=True)
    e.add_argument("--scenario", required=True)
    e.add_argument("--map", default=None)
    e.add_argument("--thresholds", default=None)
    e.add_argument("--report-out", default=None)
    e.set_defaults(fn=cmd_evaluate)

    q = sub.add_parser("perturb", help="search NPC spawns around a scenario")
    q.add_argument("--scenario", required=True)
    q.add_argument("--map", default=None)
    q.add_argument("--controller", default="baseline")
    q.add_argument("--budget", type=int, default=50, help="simulation count")
    q.add_argument("--sim-budget", type=float, default=40.0, help="seconds per simulation")
    q.add_argument("--thresholds", default=None)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_perturb)

    c = sub.add_parser("campaign", help="generate, simulate, evaluate and perturb; write the report")
    c.add_argument("--config", required=True)
    c.add_argument("--out", default=None, help="override the configured output directory")
    c.set_defaults(fn=cmd_campaign)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (OSError, ValueError, CatalogError, NoMatchingSubMap, PlacementExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
