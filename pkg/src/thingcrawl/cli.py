"""Command-line interface.

stdout carries only JSON, CSV or binary exports; progress and summaries go to
stderr. Exit codes: 0 success, 1 operational error (a JSON error object is
written to stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
import time
import urllib.parse
from pathlib import Path
from typing import Any, Sequence

from .analytics.density import DensityMatrix, density, read_csv
from .analytics.drift import drift_series
from .analytics.emd import emd, gap_score
from .analytics.overlap import id_sets, inclusiveness
from .analytics.querylog import keyword_stats, load_category_map, parse_query_log, query_density
from .analytics.updates import update_ratio
from .clock import SystemClock
from .config import TOKEN_ENV, load_crawl_config, load_toml, sim_config_from_dict
from .errors import ThingCrawlError
from .geo import BoundingBox, format_timestamp, parse_timestamp, read_snapshot_file
from .grid import GridPlan, build_queue, update_weights
from .pipeline import run_campaign
from .source import DEFAULT_FIELD_MAP, SourceDescriptor, poll_source, qualify
from .store import SnapshotStore

PLAN_FILE = "plan.json"


class UsageError(Exception):
    """Bad arguments discovered after parsing; exits with status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _emit(obj: Any, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    _write_text(text, out)


def _write_text(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        _say(f"wrote {out}")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _grid(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        rows, cols = int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like RxC, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise argparse.ArgumentTypeError("grid dims must be >= 1")
    return rows, cols


def _region(text: str) -> BoundingBox:
    try:
        return BoundingBox.parse(text)
    except (ValueError, ThingCrawlError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "round.workers": getattr(args, "workers", None),
        "round.interval": getattr(args, "interval", None),
        "round.clock": getattr(args, "clock", None),
        "round.sim_control": getattr(args, "sim_control", None),
        "grid.margin_fraction": getattr(args, "margin", None),
    }


# store metadata: crawl records its plan so later analysis can default the grid


def _save_plan(store_root: Path, plan: GridPlan) -> None:
    meta = {"region": plan.region.to_json(), "rows": plan.rows, "cols": plan.cols}
    store_root.mkdir(parents=True, exist_ok=True)
    (store_root / PLAN_FILE).write_text(json.dumps(meta) + "\n", encoding="utf-8")


def _grid_for(args: argparse.Namespace, store_root: Path | None) -> tuple[BoundingBox, int, int]:
    meta = {}
    if store_root is not None and (store_root / PLAN_FILE).exists():
        meta = json.loads((store_root / PLAN_FILE).read_text(encoding="utf-8"))
    region = args.region or (BoundingBox.from_json(meta["region"]) if "region" in meta else None)
    if region is None:
        raise UsageError("--region is required (the store has no recorded plan)")
    if args.grid:
        rows, cols = args.grid
    elif "rows" in meta:
        rows, cols = meta["rows"], meta["cols"]
    else:
        raise UsageError("--grid is required (the store has no recorded plan)")
    return region, rows, cols


def _round_arg(store: SnapshotStore, text: str | None):
    rounds = store.list_rounds()
    if text is None or text == "latest":
        if not rounds:
            raise ThingCrawlError(f"store {store.root} holds no rounds")
        return rounds[-1]
    if text == "first":
        if not rounds:
            raise ThingCrawlError(f"store {store.root} holds no rounds")
        return rounds[0]
    return parse_timestamp(text)


# subcommands


def cmd_simulate(args: argparse.Namespace) -> int:
    from .sim.farm import serve
    from .sim.world import make_world

    world_cfg, sources, ticks_per_request = sim_config_from_dict(load_toml(args.config))
    handle = serve(make_world(world_cfg), sources, args.listen, ticks_per_request)
    info = {
        "url": handle.url,
        "sources": {s.source_id: handle.source_url(s.source_id) for s in sources},
        "objects": len(handle.farm.world.state().ids),
    }
    _emit(info)
    _say(f"simulating {len(sources)} sources at {handle.url}")
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            signal.signal(sig, lambda *_: stop.set())
        except ValueError:  # not the main thread
            pass
    try:
        stop.wait(args.duration)
    finally:
        handle.close()
    return 0


def cmd_plan(args: argparse.Namespace) -> int:
    cfg = load_crawl_config(args.config, _overrides(args))
    plan, sched = cfg.plan, cfg.sched
    if args.density or args.queries:
        dens = read_csv(args.density, plan.region) if args.density else DensityMatrix(
            plan.region, [[0] * plan.cols for _ in range(plan.rows)])
        q = read_csv(args.queries, plan.region) if args.queries else None
        plan = update_weights(plan, dens, q, sched.alpha, sched.beta)
    queue = build_queue(plan, sched.prune_threshold, sched.revisit_every, sched.max_multiplicity)
    _emit({
        "rows": plan.rows,
        "cols": plan.cols,
        "weights": plan.weights().tolist(),
        "queue": [list(e) for e in queue],
        "segments": plan.to_json()["segments"],
    }, args.out)
    _say(f"queue holds {len(queue)} entries over {len(set(queue.entries))} of {len(plan)} segments")
    return 0


def _sim_control_url(cfg) -> str:
    if cfg.sim_control:
        return cfg.sim_control
    parts = urllib.parse.urlsplit(cfg.round.sources[0].base_url)
    return f"{parts.scheme}://{parts.netloc}"


def cmd_crawl(args: argparse.Namespace) -> int:
    cfg = load_crawl_config(args.config, _overrides(args))
    if args.rounds < 1:
        raise UsageError("--rounds must be >= 1")
    if cfg.clock == "sim":
        from .sim.farm import RemoteSimClock

        clock = RemoteSimClock(_sim_control_url(cfg))
    elif cfg.clock == "wall":
        clock = SystemClock()
    else:
        raise UsageError(f"unknown clock {cfg.clock!r}; expected wall or sim")
    qdens = None
    if cfg.query_log:
        with open(cfg.query_log, encoding="utf-8") as fh:
            entries, rejected = parse_query_log(fh)
        if cfg.query_window_days is not None and entries:
            newest = max(e.timestamp for e in entries)
            cutoff = newest.timestamp() - cfg.query_window_days * 86400
            entries = [e for e in entries if e.timestamp.timestamp() >= cutoff]
        qdens = query_density(entries, cfg.plan.region, cfg.plan.rows, cfg.plan.cols)
        _say(f"query weighting from {len(entries)} queries ({rejected} rejected lines)")
    store_root = Path(args.store)
    store = SnapshotStore(store_root)
    _save_plan(store_root, cfg.plan)
    started = time.monotonic()

    def progress(s) -> None:
        _say(f"round {s.round} at {format_timestamp(s.round_timestamp)}: {s.records} records, "
             f"{s.requests} requests, next queue {len(s.next_queue)}")
        for w in s.warnings:
            _say(f"  warning: {w}")

    summaries = run_campaign(cfg.round, args.rounds, store, clock, sched=cfg.sched, query_density=qdens,
                             on_round=progress)
    _emit({"store": str(store_root), "rounds": [s.to_json() for s in summaries]}, args.out)
    _say(f"{len(summaries)} rounds in {time.monotonic() - started:.1f}s")
    return 0


def cmd_qualify(args: argparse.Namespace) -> int:
    if args.polls < 2:
        raise UsageError("--polls must be >= 2")
    fm = dict(DEFAULT_FIELD_MAP)
    if args.field_map:
        fm.update(json.loads(args.field_map))
    desc = SourceDescriptor(source_id=args.source_id, base_url=args.source, page_limit=args.limit,
                            field_map=fm, auth_token=args.token or os.environ.get(TOKEN_ENV) or None)
    samples = poll_source(desc, args.polls, args.interval, area=args.region)
    report = qualify(samples, desc, theta=args.theta)
    _emit(report.to_json(), args.out)
    _say(f"{args.source}: {'qualifies' if report.verdict else 'does not qualify'}")
    return 0


def _load_snapshot(path: str):
    return read_snapshot_file(path)


def cmd_analyze_emd(args: argparse.Namespace) -> int:
    if args.a and args.b:
        region = args.region
        a, b = read_csv(args.a, region), read_csv(args.b, region)
        _emit(emd(a, b).to_json(), args.out)
        return 0
    if not args.store:
        raise UsageError("analyze emd needs --store or both --a and --b")
    store = SnapshotStore(args.store)
    region, rows, cols = _grid_for(args, Path(args.store))
    t_1 = _round_arg(store, args.start or "first")
    series = drift_series(store, t_1, region, rows, cols)
    _emit([s.to_json() for s in series], args.out)
    _say(f"{len(series)} drift scores, max {max((s.value for s in series), default=0.0):.4f}")
    return 0


def cmd_analyze_updates(args: argparse.Namespace) -> int:
    if args.before and args.after:
        rep = update_ratio(_load_snapshot(args.before), _load_snapshot(args.after))
        _emit(rep.to_json(), args.out)
        return 0
    if not args.store:
        raise UsageError("analyze updates needs --store or both --before and --after")
    store = SnapshotStore(args.store)
    rounds = store.list_rounds()
    if args.i:
        base = store.get_snapshot(parse_timestamp(args.i))
        later = [store.get_snapshot(parse_timestamp(args.j))] if args.j else [
            store.get_snapshot(t) for t in rounds if t > base.round_timestamp]
        reports = [update_ratio(base, d) for d in later]
    else:
        snaps = [store.get_snapshot(t) for t in rounds]
        reports = [update_ratio(a, b) for a, b in zip(snaps, snaps[1:])]
    _emit([r.to_json() for r in reports], args.out)
    return 0


def cmd_analyze_inclusiveness(args: argparse.Namespace) -> int:
    if args.snapshot:
        snap = _load_snapshot(args.snapshot)
    elif args.store:
        store = SnapshotStore(args.store)
        snap = store.get_snapshot(_round_arg(store, args.round))
    else:
        raise UsageError("analyze inclusiveness needs --store or --snapshot")
    sets = id_sets(snap)
    for sid in snap.source_ids:
        sets.setdefault(sid, set())
    _emit({"round_timestamp": format_timestamp(snap.round_timestamp), "inclusiveness": inclusiveness(sets),
           "objects": {k: len(v) for k, v in sorted(sets.items())}}, args.out)
    return 0


def cmd_analyze_keywords(args: argparse.Namespace) -> int:
    with open(args.log, encoding="utf-8") as fh:
        entries, rejected = parse_query_log(fh)
    stats = keyword_stats(entries, load_category_map(args.categories), top_n=args.top)
    if args.format == "csv":
        _write_text(stats.to_csv(), args.out)
    else:
        obj = stats.to_json()
        obj["rejected_lines"] = rejected
        _emit(obj, args.out)
    if stats.rows:
        top = stats.rows[0]
        _say(f"top keyword {top.keyword!r}: {top.percent:.1f}% of keyworded queries; "
             f"{100 * stats.keyworded_fraction:.1f}% of queries carry a keyword")
    return 0


def cmd_analyze_gap(args: argparse.Namespace) -> int:
    store_root = Path(args.store) if args.store else None
    if args.things and args.queries_csv:
        things = read_csv(args.things, args.region)
        qd = read_csv(args.queries_csv, args.region)
    else:
        if not (args.store and args.log):
            raise UsageError("analyze gap needs --store and --log, or --things and --queries-csv")
        store = SnapshotStore(args.store)
        region, rows, cols = _grid_for(args, store_root)
        things = density(store.get_snapshot(_round_arg(store, args.round)), region, rows, cols)
        with open(args.log, encoding="utf-8") as fh:
            entries, _ = parse_query_log(fh)
        qd = query_density(entries, region, rows, cols)
    _emit(gap_score(things, qd).to_json(), args.out)
    return 0


def cmd_export_density(args: argparse.Namespace) -> int:
    if not (args.csv or args.pgm):
        raise UsageError("export density needs --csv and/or --pgm")
    store = SnapshotStore(args.store)
    region, rows, cols = _grid_for(args, Path(args.store))
    t = _round_arg(store, args.round)
    csv_path = None if args.csv == "-" else args.csv
    m = store.export_density(t, region, rows, cols, csv_path, args.pgm)
    if args.csv == "-":
        _write_text(m.to_csv(), None)
    _say(f"round {format_timestamp(t)}: {m.total} things over {rows}x{cols} cells")
    return 0


def cmd_replay_log(args: argparse.Namespace) -> int:
    from .sim.querylog import write_category_map, write_replay_log

    n = write_replay_log(args.out, args.fraction, args.seed, args.scale)
    if args.categories:
        write_category_map(args.categories)
    _emit({"log": args.out, "queries": n, "categories": args.categories})
    return 0


# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="thingcrawl", description="Crawl geo-indexed IoT sources and analyze the snapshots.",
                allow_abbrev=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="serve a simulated source farm over HTTP", allow_abbrev=False)
    s.add_argument("--config", required=True)
    s.add_argument("--listen", default="127.0.0.1:0", help="host:port, port 0 picks a free one")
    s.add_argument("--duration", type=float, default=None, help="seconds to serve (default: until signalled)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("plan", help="print the scan queue for a config", allow_abbrev=False)
    s.add_argument("--config", required=True)
    s.add_argument("--density", help="thing density CSV matching the grid")
    s.add_argument("--queries", help="query density CSV matching the grid")
    s.add_argument("--margin", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("crawl", help="run crawl rounds into a store", allow_abbrev=False)
    s.add_argument("--config", required=True)
    s.add_argument("--rounds", type=int, required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--workers", type=int)
    s.add_argument("--interval", type=float, help="seconds between rounds")
    s.add_argument("--clock", choices=("wall", "sim"))
    s.add_argument("--sim-control", dest="sim_control", help="simulator base URL for --clock sim")
    s.add_argument("--margin", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_crawl)

    s = sub.add_parser("qualify", help="screen a candidate source", allow_abbrev=False)
    s.add_argument("--source", required=True, help="source base URL (things are read from <URL>/things)")
    s.add_argument("--polls", type=int, required=True)
    s.add_argument("--interval", type=float, required=True, help="seconds between polls")
    s.add_argument("--source-id", dest="source_id", default="candidate")
    s.add_argument("--limit", type=int, default=1000)
    s.add_argument("--region", type=_region)
    s.add_argument("--theta", type=float, default=0.95)
    s.add_argument("--field-map", dest="field_map", help="JSON object overriding the default field map")
    s.add_argument("--token")
    s.add_argument("--out")
    s.set_defaults(func=cmd_qualify)

    s = sub.add_parser("analyze", help="metrics over snapshots and query logs", allow_abbrev=False)
    an = s.add_subparsers(dest="metric", required=True, parser_class=_Parser)

    a = an.add_parser("emd", help="drift series from a store, or EMD of two density CSVs", allow_abbrev=False)
    a.add_argument("--store")
    a.add_argument("--from", dest="start", help="base round (default: first stored)")
    a.add_argument("--grid", type=_grid)
    a.add_argument("--region", type=_region)
    a.add_argument("--a")
    a.add_argument("--b")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze_emd)

    a = an.add_parser("updates", help="update ratios between rounds", allow_abbrev=False)
    a.add_argument("--store")
    a.add_argument("--i", help="earlier round (default: consecutive pairs)")
    a.add_argument("--j", help="later round (default: every later round)")
    a.add_argument("--before", help="snapshot file")
    a.add_argument("--after", help="snapshot file")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze_updates)

    a = an.add_parser("inclusiveness", help="per-source share of the object union", allow_abbrev=False)
    a.add_argument("--store")
    a.add_argument("--round", help="round timestamp (default: latest)")
    a.add_argument("--snapshot", help="snapshot file")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze_inclusiveness)

    a = an.add_parser("keywords", help="keyword and category statistics of a query log", allow_abbrev=False)
    a.add_argument("--log", required=True)
    a.add_argument("--categories", required=True, help="keyword<TAB>category lines")
    a.add_argument("--top", type=int)
    a.add_argument("--format", choices=("json", "csv"), default="json")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze_keywords)

    a = an.add_parser("gap", help="EMD between thing and query distributions", allow_abbrev=False)
    a.add_argument("--store")
    a.add_argument("--round", help="round timestamp (default: latest)")
    a.add_argument("--log", help="query log")
    a.add_argument("--things", help="thing density CSV")
    a.add_argument("--queries-csv", dest="queries_csv", help="query density CSV")
    a.add_argument("--grid", type=_grid)
    a.add_argument("--region", type=_region)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze_gap)

    s = sub.add_parser("export", help="write derived files", allow_abbrev=False)
    ex = s.add_subparsers(dest="what", required=True, parser_class=_Parser)
    e = ex.add_parser("density", help="density matrix of a stored round as CSV and PGM", allow_abbrev=False)
    e.add_argument("--store", required=True)
    e.add_argument("--round", help="round timestamp (default: latest)")
    e.add_argument("--grid", type=_grid)
    e.add_argument("--region", type=_region)
    e.add_argument("--csv", help="CSV path, or - for stdout")
    e.add_argument("--pgm")
    e.set_defaults(func=cmd_export_density)

    s = sub.add_parser("replay-log", help="write a synthetic query log replaying the keyword table",
                       allow_abbrev=False)
    s.add_argument("--out", required=True)
    s.add_argument("--categories", help="also write the matching category map here")
    s.add_argument("--fraction", type=float, default=0.849, help="share of queries carrying a keyword")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=int, default=1)
    s.set_defaults(func=cmd_replay_log)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _say(str(exc))
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ThingCrawlError, OSError, ValueError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc).strip("'\"")}
        print(json.dumps(err), file=sys.stderr, flush=True)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
