"""Command-line entry point: ``recloop complete|simulate|validate-ranking|report``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__, metrics
from .completion import GroundTruth, build_semisynthetic
from .config import RunConfig, parse_config
from .dataset import (GroupMapping, RatingDataset, dump_group_vocabulary, parse_item_groups,
                      parse_ratings)
from .errors import DataError, ParseError, RecloopError, TrainingError
from .simulation import SimulationAborted, derive_seed, run_simulation
from .stats import REPORT_COLUMNS, validate_ranking
from .synthetic import make_planted_problem

log = logging.getLogger("recloop")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5
EXIT_IO = 6


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _open_text(path):
    # titles may carry Latin-1 bytes; they never enter computation
    return open(path, encoding="utf-8", errors="replace")


def load_config(path: str | None) -> RunConfig:
    """Read a ``key = value`` config, or the config snapshot inside a manifest."""
    if path is None:
        return RunConfig()
    with _open_text(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            text = json.loads(text)["config"]
        except (ValueError, KeyError) as exc:
            raise ParseError(f"{path}: not a recloop manifest ({exc})") from None
    return parse_config(text.splitlines())


@dataclass
class Inputs:
    dataset: RatingDataset
    mapping: GroupMapping
    truth: GroundTruth | None
    files: dict


def load_inputs(cfg: RunConfig, need_truth: bool) -> Inputs:
    files = {}
    if cfg.dataset == "synthetic":
        p = make_planted_problem(cfg.synthetic_users, cfg.synthetic_items, cfg.synthetic_groups,
                                 cfg.synthetic_rank, cfg.synthetic_cold, cfg.synthetic_obs_per_user,
                                 seed=cfg.synthetic_seed)
        dataset, mapping, truth = p.dataset, p.mapping, p.truth
    else:
        for key in ("ratings", "groups"):
            if not getattr(cfg, key):
                raise DataError(f"config key '{key}' is required for dataset = movielens")
            if not Path(getattr(cfg, key)).is_file():
                raise FileNotFoundError(f"{key} file not found: {getattr(cfg, key)}")
        with _open_text(cfg.ratings) as fh:
            dataset = parse_ratings(fh)
        with _open_text(cfg.groups) as fh:
            mapping = parse_item_groups(fh, dataset.item_index)
        files["ratings"] = _sha256(cfg.ratings)
        files["groups"] = _sha256(cfg.groups)
        truth = None
    if cfg.truth:
        if not Path(cfg.truth).is_file():
            raise FileNotFoundError(f"truth file not found: {cfg.truth}")
        truth = GroundTruth.load(cfg.truth)
        files["truth"] = _sha256(cfg.truth)
    elif need_truth and truth is None:
        log.info("no ground truth given; building it by matrix completion")
        truth = build_semisynthetic(dataset, cfg.hyperparams())
    return Inputs(dataset, mapping, truth, files)


def write_manifest(out: Path, name: str, cfg: RunConfig, inputs: dict, outputs: list[Path],
                   started: float, derived_seeds=None, extra=None) -> Path:
    manifest = {
        "tool": "recloop",
        "version": __version__,
        "config": cfg.to_text(),
        "master_seed": cfg.seed,
        "derived_seeds": derived_seeds or {},
        "inputs": inputs,
        "outputs": {p.name: _sha256(p) for p in outputs},
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    path = out / f"manifest_{name}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _run_seeds(cfg: RunConfig) -> dict:
    return {str(r): int(derive_seed(cfg.seed, r).generate_state(1)[0]) for r in range(cfg.runs)}


def cmd_complete(cfg: RunConfig, out: Path) -> list[Path]:
    started = time.time()
    inp = load_inputs(cfg, need_truth=False)
    # the planted problem ships its own truth; real data goes through completion
    truth = inp.truth if cfg.dataset == "synthetic" else build_semisynthetic(inp.dataset, cfg.hyperparams())
    path = out / "ground_truth.bin"
    truth.save(path)
    outputs = [path]
    vocab = out / "groups.tsv"
    with open(vocab, "w", encoding="utf-8") as fh:
        dump_group_vocabulary(inp.mapping, fh)
    outputs.append(vocab)
    manifest = write_manifest(out, "complete", cfg, inp.files, outputs, started)
    return outputs + [manifest]


def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    started = time.time()
    inp = load_inputs(cfg, need_truth=True)
    sim_cfg = cfg.simulation_config()
    path = out / "trace.csv"
    aborted = None
    try:
        trace = run_simulation(sim_cfg, inp.dataset, inp.mapping, inp.truth)
    except SimulationAborted as exc:
        trace, aborted = exc.trace, exc
    with open(path, "w", newline="") as fh:
        rows = trace.rows() if trace is not None else []
        metrics.write_trace_csv(rows, fh, truncated=str(aborted) if aborted else None)
    extra = {}
    if trace is not None:
        trace.check_filtration()
        trace.check_increments()
        extra = {
            "exhausted_users": {str(r): len(e) for r, e in enumerate(trace.exhausted)},
            "blind_spot_check": trace.blind_spot_check(),
        }
    manifest = write_manifest(out, "simulate", cfg, inp.files, [path], started, _run_seeds(cfg), extra)
    if aborted:
        raise aborted
    return [path, manifest]


def cmd_validate_ranking(cfg: RunConfig, out: Path) -> list[Path]:
    started = time.time()
    inp = load_inputs(cfg, need_truth=False)
    result = validate_ranking(inp.dataset, inp.mapping, cfg.hyperparams(), cfg.sample_users,
                              cfg.repetitions, cfg.seed)
    csv_path = out / "ranking_report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in result.rows():
            writer.writerow([row[c] if isinstance(row[c], str) else metrics.format_value(row[c])
                             for c in REPORT_COLUMNS])
    txt_path = out / "ranking_report.txt"
    p = result.pooled
    lines = [f"{r.label}: mean_seen={r.mean_seen:.6f} mean_unseen={r.mean_unseen:.6f} "
             f"t={r.t_stat:.4f} df={r.df:.2f} p={r.p_value:.3e}" for r in result.repetitions]
    verdict = "rejected" if p.p_value < 0.01 else "not rejected"
    lines += [f"pooled: mean_seen={p.mean_seen:.6f} (var {p.var_seen:.3e}) "
              f"mean_unseen={p.mean_unseen:.6f} (var {p.var_unseen:.3e}) "
              f"t={p.t_stat:.4f} df={p.df:.2f} p={p.p_value:.3e}",
              f"null hypothesis of equal means at 0.01: {verdict}"]
    txt_path.write_text("\n".join(lines) + "\n")
    manifest = write_manifest(out, "validate", cfg, inp.files, [csv_path, txt_path], started)
    return [csv_path, txt_path, manifest]


def cmd_report(cfg: RunConfig, out: Path, traces: list[str]) -> list[Path]:
    started = time.time()
    if not traces:
        raise DataError("report needs at least one trace file")
    loaded, digests = [], {}
    for t in traces:
        if not Path(t).is_file():
            raise FileNotFoundError(f"trace file not found: {t}")
        with open(t) as fh:
            loaded.append(metrics.read_trace_csv(fh, t))
        digests[t] = _sha256(t)
    agg = metrics.aggregate_traces(loaded, cfg.deltas)
    csv_path = out / "aggregate.csv"
    with open(csv_path, "w", newline="") as fh:
        metrics.write_aggregate_csv(agg, fh)
    txt_path = out / "summary.txt"
    txt_path.write_text(metrics.summary_text(agg))
    manifest = write_manifest(out, "report", cfg, digests, [csv_path, txt_path], started)
    return [csv_path, txt_path, manifest]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file, or a manifest to replay")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--runs", type=int)
    common.add_argument("--iterations", type=int)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--policy", choices=("exploit", "epsilon_greedy"))
    common.add_argument("--feedback", choices=("perfect", "rank_dependent"))
    common.add_argument("--theta", type=float)
    common.add_argument("--delta", help="comma-separated confidence levels, e.g. 0.05,0.01")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="recloop", description=__doc__)
    parser.add_argument("--version", action="version", version=f"recloop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("complete", parents=[common], help="build the semi-synthetic ground truth")
    sub.add_parser("simulate", parents=[common], help="run the feedback-loop simulation")
    sub.add_parser("validate-ranking", parents=[common], help="test seen vs unseen group scores")
    rep = sub.add_parser("report", parents=[common], help="aggregate trace CSVs")
    rep.add_argument("traces", nargs="+")
    return parser


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    deltas = None
    if args.delta:
        try:
            deltas = tuple(float(x) for x in args.delta.split(",") if x.strip())
        except ValueError:
            raise ParseError(f"bad --delta list {args.delta!r}") from None
    try:
        return cfg.replace(seed=args.seed, out=args.out, runs=args.runs, iterations=args.iterations,
                           epsilon=args.epsilon, policy=args.policy, feedback=args.feedback,
                           theta=args.theta, deltas=deltas)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


COMMANDS = {
    "complete": cmd_complete,
    "simulate": cmd_simulate,
    "validate-ranking": cmd_validate_ranking,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "report":
            written = cmd_report(cfg, out, args.traces)
        else:
            written = COMMANDS[args.command](cfg, out)
    except FileNotFoundError as exc:
        print(f"recloop: {exc}", file=sys.stderr)
        return EXIT_IO
    except ParseError as exc:
        print(f"recloop: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SimulationAborted, TrainingError) as exc:
        print(f"recloop: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, RecloopError, ValueError) as exc:
        print(f"recloop: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"recloop: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
