"""Command-line front end: ``statstab <command> --config cfg.json [--out DIR] [--workers N]``.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, a0_of, default_output_dir, load_config, offsets_of
from .density import invariance_residual, tower_density
from .diagnostics import derived_constants, distortion_diagnostic, expansion_diagnostic, tail_statistics
from .errors import DomainError, InsufficientData, SchemaError
from .hypotheses import check_H1, check_H2, check_H3
from .inducing import InducedMap, expand_events
from .io import dumps, write_csv, write_json, write_jsonl
from .maps import make_builtin_family
from .metric import map_distance
from .pipeline import induce, prepare
from .stability import (STABILITY_HEADER, estimate_density, median_l1_by_scale, overlap_pair, spearman,
                        stability_curve, uniqueness_check)
from .tracer import sampled_branches

COMMANDS = ("hypotheses", "partition", "induce", "tail", "density", "distance", "stability", "overlap",
            "uniqueness", "report")

H1_SAMPLES = 2000
H1_HORIZON = 50

# keys that change how a run is executed but not what it computes
_NON_SEMANTIC = ("workers", "output_dir")


def config_hash(cfg: RunConfig) -> str:
    data = {k: v for k, v in cfg.to_json().items() if k not in _NON_SEMANTIC}
    return hashlib.sha256(dumps(data).encode()).hexdigest()


def _versions():
    import mpmath
    import scipy

    return {"statstab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "mpmath": mpmath.__version__}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# commands; each returns the list of files it wrote
# ---------------------------------------------------------------------------

def cmd_hypotheses(cfg, out):
    m, hyp = cfg.build_map(), cfg.hyp
    setup = cfg.setup()
    reports = {
        "H1": check_H1(m, hyp, H1_SAMPLES, H1_HORIZON, seed=cfg.seed).to_json(),
        "H2": check_H2(m, hyp, cfg.experiment.hypotheses_horizon).to_json(),
        "H3": check_H3(m, setup.t_star, setup.delta_star).to_json(),
    }
    return [write_json(out / "hypotheses.json", reports)]


def cmd_partition(cfg, out):
    prep = prepare(cfg.build_map(), cfg.setup(), cfg.hyp)
    return [prep.partition.write_csv(out / "partition.csv"),
            prep.binding.write_csv(out / "binding.csv"),
            write_json(out / "partition.json",
                       {"partition": prep.partition.to_json(), "binding": prep.binding.to_json()})]


def _induce(cfg):
    m = cfg.build_map()
    prep = prepare(m, cfg.setup(), cfg.hyp)
    result = induce(prep)
    branches = result.branches if isinstance(result, InducedMap) else sampled_branches(m, result)
    return m, prep, result, branches


def _summary(result, branches):
    out = {"branches": len(branches)}
    if isinstance(result, InducedMap):
        L = result.domain_length
        out.update(mode="exact", domain=list(result.domain), covered_fraction=result.covered_mass / L,
                   residual_by_reason={k: v / L for k, v in sorted(result.residual_by_reason().items())},
                   conservation_error=result.conservation_error(), budget_exhausted=result.budget_exhausted,
                   horizon=result.horizon)
    else:
        out.update(mode="sampled", domain=list(result.domain), samples=result.n,
                   returned_fraction=float(result.returned.mean()), horizon=result.horizon)
    return out


def cmd_induce(cfg, out):
    m, prep, result, branches = _induce(cfg)
    summary = _summary(result, branches)
    per_exp = per_dist = None
    if branches:
        exp = expansion_diagnostic(m, branches, seed=cfg.seed)
        dist = distortion_diagnostic(m, branches, seed=cfg.seed)
        per_exp, per_dist = exp.per_branch, dist.per_branch
        summary.update(expansion=exp.to_json(), distortion=dist.to_json())
        summary["derived"] = derived_constants(cfg.hyp, m, distortion=dist.D_hat).to_json()
    rows = []
    for i, b in enumerate(branches):
        rows.append((i, b.lo, b.hi, b.T, b.E, b.t0, per_exp[i][1] if per_exp else None,
                     per_dist[i][0] if per_dist else None))
    files = [write_csv(out / "induced.csv", ["branch_id", "left", "right", "T", "E", "t0", "min_deriv",
                                              "distortion_stat"], rows)]
    files.append(write_jsonl(out / "itinerary.jsonl", (
        {"branch_id": i, "T": b.T, "events": [e.to_json() for e in expand_events(b.events, prep.binding.get, b.T)]}
        for i, b in enumerate(branches))))
    files += _write_tail(result, out, summary)
    files.append(write_json(out / "induced.json", summary))
    return files


def _write_tail(result, out, summary):
    try:
        ts = tail_statistics(result)
    except InsufficientData as err:
        # the induced data are still worth keeping; the fit failure goes into the summary
        summary["tail"] = {"error": err.describe()}
        return []
    summary["tail"] = ts.to_json()
    ts.write_csv(out / "tail.csv")
    return [out / "tail.csv"]


def cmd_tail(cfg, out):
    _, _, result, _ = _induce(cfg)
    ts = tail_statistics(result)
    ts.write_csv(out / "tail.csv")
    return [out / "tail.csv", write_json(out / "tail.json", ts.to_json())]


def cmd_density(cfg, out):
    m = cfg.build_map()
    budget = cfg.budget()
    if budget.method == "tower":
        prep = prepare(m, cfg.setup(), cfg.hyp)
        rho = tower_density(m, induce(prep), budget.bins)
    else:
        rho = estimate_density(m, budget)
    res = invariance_residual(m, rho)
    rho.write_csv(out / "density.csv")
    (out / "residual.txt").write_text(f"{res:.17g}\n")
    return [out / "density.csv", out / "residual.txt", write_json(out / "density.json", rho.to_json())]


def cmd_distance(cfg, out):
    other = cfg.experiment.distance_to
    if other is None:
        raise SchemaError("distance needs experiment.distance_to", operation="distance",
                          field="experiment.distance_to")
    f = cfg.build_map()
    g = make_builtin_family(cfg.family, {**cfg.params, **other})
    return [write_json(out / "distance.json", map_distance(f, g).to_json())]


def _base_params(cfg):
    return {k: v for k, v in cfg.params.items() if k != cfg.experiment.param}


def cmd_stability(cfg, out):
    e = cfg.experiment
    rows = stability_curve(cfg.family, a0_of(cfg), offsets_of(cfg), cfg.budget(), param=e.param,
                           base_params=_base_params(cfg))
    files = [write_csv(out / "stability.csv", STABILITY_HEADER, [r.csv_row() for r in rows])]
    summary = {"spearman": spearman(rows),
               "median_l1_by_scale": [[k, v] for k, v in median_l1_by_scale(rows).items()]}
    files.append(write_json(out / "stability.json", summary))
    return files


def cmd_overlap(cfg, out):
    e = cfg.experiment
    a = a0_of(cfg)
    rows, _, _ = overlap_pair(cfg.family, a, a + e.gap, e.N_levels, cfg.setup(), param=e.param,
                              base_params=_base_params(cfg))
    files = [write_csv(out / "overlap.csv", ["j", "sym_diff_mass", "d"], [r.csv_row() for r in rows])]
    files.append(write_json(out / "overlap.json", {"a": a, "b": a + e.gap,
                                                   "total_sym_diff": float(sum(r.sym_diff for r in rows))}))
    return files


def cmd_uniqueness(cfg, out):
    b, s = cfg.budget(), cfg.setup()
    rep = uniqueness_check(cfg.build_map(), n_seeds=cfg.experiment.n_clouds, n_iter=b.n_iter, bins=b.bins,
                           seed=cfg.seed, delta_star=s.delta_star, workers=b.workers)
    return [write_json(out / "uniqueness.json", rep.to_json())]


def cmd_report(cfg, out):
    """Collects the JSON summaries already present in the output directory."""
    collected = {}
    for p in sorted(out.glob("*.json")):
        if p.name in ("manifest.json", "report.json"):
            continue
        collected[p.stem] = json.loads(p.read_text())
    return [write_json(out / "report.json", {"config_hash": config_hash(cfg), "artifacts": collected})]


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}

HELP = {
    "hypotheses": "check H1-H3 numerically",
    "partition": "critical partition and binding periods",
    "induce": "induced map, itineraries, expansion and distortion diagnostics",
    "tail": "return-time tail and its exponential fit",
    "density": "invariant density (ulam, birkhoff or tower) and its invariance residual",
    "distance": "map distance to experiment.distance_to",
    "stability": "density continuity scan over dyadic parameter offsets",
    "overlap": "level-set overlap between a0 and a0 + gap",
    "uniqueness": "pairwise L1 across localized seed clouds",
    "report": "collect the JSON summaries already in the output directory",
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out", default=None, help="output directory (default: config, then $STATSTAB_OUT, then ./out)")
    common.add_argument("--workers", type=int, default=None, help="worker processes (results do not depend on it)")
    parser = argparse.ArgumentParser(prog="statstab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"statstab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                parser.print_usage(sys.stderr)
                print("statstab: error: --workers must be at least 1", file=sys.stderr)
                return 2
            cfg = replace(cfg, workers=args.workers)
        out = Path(args.out or cfg.output_dir or default_output_dir())
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        files = HANDLERS[args.command](cfg, out)
        wall = time.perf_counter() - t0
    except DomainError as err:
        print(f"statstab: error: {err.describe()}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"statstab: error: {err}", file=sys.stderr)
        return 2
    manifest = {
        "command": args.command,
        "config_hash": config_hash(cfg),
        "config": cfg.to_json(),
        "seed": cfg.seed,
        "workers": cfg.workers,
        "versions": _versions(),
        "wall_time_s": wall,
        "artifacts": {Path(f).name: _sha256(Path(f)) for f in files},
    }
    write_json(out / "manifest.json", manifest)
    for f in files:
        print(f)
    return 0


def main(argv=None):
    sys.exit(run(argv))
