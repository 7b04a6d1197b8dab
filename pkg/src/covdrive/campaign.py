"""End-to-end campaigns: abstract suite, concrete instances, simulation, KPIs, perturbation, report.

Output layout under ``output_dir``::

    base/<id>.scenario.json  base/<id>.trace.jsonl  base/<id>.report.json
    perturbed/<id>.*         perturbed/<base id>.log
    report.json  report.csv  report.txt  counts.png  kpis.png  manifest.json
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from . import DATA_DIR
from .catalog import load_catalog
from .concretize import NoMatchingSubMap, ParameterMap, PlacementExhausted, child_seed, instantiate
from .covgen import GenerationState, add_blocking_constraint, next_scenario
from .kpi import KPIS, KpiReport, KpiThresholds, evaluate
from .perturb import SearchConfig, meta_search
from .plotting import counts_figure, kpi_figure
from .simcore import controller_from_spec, resolve_map, run

log = logging.getLogger(__name__)

ROWS = ("base", "perturbed")


class CampaignError(RuntimeError):
    pass


@dataclass
class CampaignConfig:
    catalog: str = "town_catalog.json"
    map: str = "town"
    parameters: str = "town_parameters.json"
    k: int = 2
    num_abstract: int = 15
    instantiations: int = 3
    seed: int = 0
    sim_budget: float = 40.0
    perturb_budget: int = 8
    perturb_all: bool = True
    controller: str = "baseline"
    thresholds: Optional[str] = None
    output_dir: str = "campaign_out"
    figures: bool = True
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        for name in ("k", "num_abstract", "instantiations", "perturb_budget"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.sim_budget <= 0:
            raise ValueError("sim_budget must be positive")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "CampaignConfig":
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config key(s): {sorted(extra)}")
        return cls(**d, base_dir=base_dir)

    @classmethod
    def load(cls, path) -> "CampaignConfig":
        p = Path(path)
        with open(p) as fh:
            return cls.from_dict(json.load(fh), str(p.parent))

    def resolve(self, ref: str) -> Path:
        """A path relative to the config file, falling back to the bundled data directory."""
        p = Path(ref)
        if not p.is_absolute():
            local = Path(self.base_dir) / p
            if local.exists():
                return local
            bundled = DATA_DIR / p
            if bundled.exists():
                return bundled
        if not p.exists():
            raise FileNotFoundError(f"{ref} not found")
        return p

    def map_ref(self) -> str:
        p = Path(self.base_dir) / self.map
        return str(p) if p.suffix == ".json" and p.exists() else self.map

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        d.pop("output_dir")  # keeps reports comparable across output locations
        return d


@dataclass
class ScenarioEntry:
    id: str
    set: str
    abstract: str
    parent: Optional[str]
    safety_critical: bool
    performance: bool
    violations: List[str]
    termination: str
    scenario: str
    trace: str
    report: str


@dataclass
class CampaignReport:
    rows: Dict[str, Dict[str, int]]
    scenarios: List[ScenarioEntry]
    abstract: List[str]
    blocked: List[str]
    failures: List[dict]
    kpi_counts: Dict[str, Dict[str, int]]
    config: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "rows": self.rows,
            "kpi_counts": self.kpi_counts,
            "abstract": self.abstract,
            "blocked": self.blocked,
            "failures": self.failures,
            "scenarios": [asdict(s) for s in self.scenarios],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["set", "total", "problematic", "safety-critical", "performance"])
        for name in ROWS:
            r = self.rows[name]
            w.writerow([name, r["total"], r["problematic"], r["safety-critical"], r["performance"]])
        return buf.getvalue()

    def to_text(self) -> str:
        head = ("", "total", "problematic", "safety-critical", "performance")
        lines = ["".join(h.rjust(16) if i else h.ljust(10) for i, h in enumerate(head))]
        for name in ROWS:
            r = self.rows[name]
            vals = [r["total"], r["problematic"], r["safety-critical"], r["performance"]]
            lines.append(name.ljust(10) + "".join(str(v).rjust(16) for v in vals))
        if self.failures:
            lines.append(f"instantiation failures: {len(self.failures)}")
        if self.blocked:
            lines.append(f"blocked abstract scenarios: {len(self.blocked)}")
        return "\n".join(lines) + "\n"


def count_rows(entries: List[ScenarioEntry]) -> Dict[str, Dict[str, int]]:
    rows = {}
    for name in ROWS:
        es = [e for e in entries if e.set == name]
        rows[name] = {
            "total": len(es),
            "problematic": sum(1 for e in es if e.safety_critical or e.performance),
            "safety-critical": sum(1 for e in es if e.safety_critical),
            "performance": sum(1 for e in es if e.performance),
        }
    return rows


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def build_suite(cfg: CampaignConfig, catalog, pmap, g):
    """First ``num_abstract`` abstract scenarios that some sub-map realizes.

    An abstract scenario with no matching sub-map is excluded with a blocking
    constraint and generation continues.
    """
    state = GenerationState.fresh(catalog, cfg.k)
    blocked = []
    while len(state.emitted) < cfg.num_abstract:
        a = next_scenario(state)
        if a is None:
            break
        try:
            instantiate(a, g, pmap, 0)
        except NoMatchingSubMap:
            blocked.append(str(a))
            add_blocking_constraint(state, a)
        except PlacementExhausted:
            pass  # structural match exists; per-seed failures are itemized later
    return list(state.emitted), blocked


def run_campaign(cfg: CampaignConfig) -> CampaignReport:
    out = Path(cfg.output_dir)
    if not out.is_absolute():
        out = Path(cfg.base_dir) / out
    out.mkdir(parents=True, exist_ok=True)
    written: List[str] = []

    def put(rel: str, text: str) -> str:
        _write(out / rel, text)
        written.append(rel)
        return rel

    try:
        catalog = load_catalog(cfg.resolve(cfg.catalog))
        pmap = ParameterMap.load(cfg.resolve(cfg.parameters))
        pmap.check_covers(catalog)
        map_ref = cfg.map_ref()
        g = resolve_map(map_ref)
        thresholds = KpiThresholds.load(cfg.resolve(cfg.thresholds)) if cfg.thresholds else KpiThresholds()
        search_cfg = SearchConfig(sim_budget=cfg.sim_budget)

        suite, blocked = build_suite(cfg, catalog, pmap, g)
        entries: List[ScenarioEntry] = []
        failures: List[dict] = []
        bases = []
        for ai, a in enumerate(suite):
            for j in range(cfg.instantiations):
                sid = f"b{ai:02d}-{j}"
                seed = child_seed(cfg.seed, ai * cfg.instantiations + j)
                try:
                    sc = instantiate(a, g, pmap, seed, map_ref=map_ref, scenario_id=sid)
                except (NoMatchingSubMap, PlacementExhausted) as exc:
                    failures.append({"id": sid, "abstract": str(a), "reason": str(exc)})
                    continue
                ctrl = controller_from_spec(cfg.controller)
                tr = run(sc, ctrl, budget=cfg.sim_budget, g=g)
                rep = evaluate(tr, sc, thresholds, g)
                entries.append(ScenarioEntry(
                    sid, "base", str(a), None, rep.safety_critical, rep.performance, rep.violations, tr.termination,
                    put(f"base/{sid}.scenario.json", sc.to_json()),
                    put(f"base/{sid}.trace.jsonl", tr.to_jsonl()),
                    put(f"base/{sid}.report.json", rep.to_json()),
                ))
                bases.append((sc, tr, rep, str(a)))
                log.info("base %s: %s", sid, ",".join(rep.violations) or "ok")

        for sc, tr, rep, label in bases:
            if not cfg.perturb_all and rep.problematic:
                continue
            st = meta_search(sc, controller_from_spec(cfg.controller), cfg.perturb_budget, thresholds, g,
                             search_cfg, base_trace=tr, keep_artifacts=True)
            put(f"perturbed/{sc.id}.log", "point\td\tt_npc\tt_ego\toutcome\n" + "".join(r.log_line() + "\n" for r in st.runs))
            for psc, ptr, prep in st.artifacts:
                entries.append(ScenarioEntry(
                    psc.id, "perturbed", label, sc.id, prep.safety_critical, prep.performance, prep.violations,
                    ptr.termination,
                    put(f"perturbed/{psc.id}.scenario.json", psc.to_json()),
                    put(f"perturbed/{psc.id}.trace.jsonl", ptr.to_jsonl()),
                    put(f"perturbed/{psc.id}.report.json", prep.to_json()),
                ))

        entries.sort(key=lambda e: (ROWS.index(e.set), e.id))
        kpi_counts = {name: {k: sum(1 for e in entries if e.set == name and k in e.violations) for k in KPIS}
                      for name in ROWS}
        report = CampaignReport(count_rows(entries), entries, [str(a) for a in suite], blocked, failures,
                                kpi_counts, cfg.to_dict())
        put("report.json", report.to_json())
        put("report.csv", report.to_csv())
        put("report.txt", report.to_text())
        if cfg.figures:
            counts_figure(report.rows, out / "counts.png")
            kpi_figure(kpi_counts, KPIS, out / "kpis.png")
            written += ["counts.png", "kpis.png"]
        _write(out / "manifest.json", json.dumps({"status": "complete", "files": sorted(written)}, indent=1) + "\n")
        return report
    except Exception as exc:
        _write(out / "manifest.json", json.dumps({"status": "aborted", "error": f"{type(exc).__name__}: {exc}",
                                                  "files": sorted(written)}, indent=1) + "\n")
        raise


def recount_from_disk(output_dir) -> Dict[str, Dict[str, int]]:
    """Recompute the report rows from the persisted per-scenario KPI reports."""
    out = Path(output_dir)
    index = json.loads((out / "report.json").read_text())
    entries = []
    for s in index["scenarios"]:
        rep = KpiReport.load(out / s["report"])
        entries.append(ScenarioEntry(s["id"], s["set"], s["abstract"], s["parent"], rep.safety_critical, rep.performance,
                                     rep.violations, rep.termination, s["scenario"], s["trace"], s["report"]))
    return count_rows(entries)
