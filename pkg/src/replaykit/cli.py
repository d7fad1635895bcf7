"""Command line: run behavior trees with recording, list sessions, replay.

Exit codes: 0 success, 1 behavior failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import datetime
import logging
import os
import sys
import uuid
from dataclasses import dataclass
from pathlib import Path

from . import btree
from .messages import canonical_dumps
from .replayer import DEFAULT_TOLERANCE_NS, InvalidRate, plan, replay
from .bus import Bus
from .store import CorruptCollection, DocStore, Query, StoreError
from .simbot import scenarios

EXIT_OK, EXIT_FAILURE, EXIT_ERROR = 0, 1, 2
STORE_ENV = "REPLAYKIT_STORE"

logger = logging.getLogger("replaykit")


class CliError(Exception):
    pass


@dataclass
class CliConfig:
    store_dir: Path
    collection: str | None = None
    rate: float = 1.0
    tolerance_ns: int = DEFAULT_TOLERANCE_NS
    strict_topics: bool = True
    output: str = "text"

    def __post_init__(self):
        if not self.rate > 0:
            raise CliError(f"--rate must be positive, got {self.rate}")


def _config(args) -> CliConfig:
    store = os.environ.get(STORE_ENV) or args.store
    if not store:
        raise CliError(f"no store given (use --store or {STORE_ENV})")
    return CliConfig(
        store_dir=Path(store),
        collection=args.collection,
        rate=getattr(args, "rate", 1.0),
        tolerance_ns=round(getattr(args, "tolerance", DEFAULT_TOLERANCE_NS / 1e6) * 1e6),
        output=args.output,
    )


def _emit(doc: dict) -> None:
    sys.stdout.write(canonical_dumps(doc).decode("utf-8") + "\n")


def _new_run_id() -> str:
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    return f"run-{stamp}-{uuid.uuid4().hex[:6]}"


def _counts(counts: dict) -> str:
    return ",".join(f"{t}={n}" for t, n in sorted(counts.items())) or "-"


# --------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.config:
        sim_cfg = scenarios.load_config(args.config)
    elif args.scenario:
        sim_cfg = scenarios.load_config(args.scenario)
    else:
        sim_cfg = scenarios.default_config()
    tree_file = args.tree or sim_cfg.get("tree")
    if not tree_file:
        raise CliError("give a tree file or --scenario")
    tree = btree.load_tree(tree_file)

    store = DocStore(cfg.store_dir)
    collection = cfg.collection or _new_run_id()
    noise = scenarios.make_noise(sim_cfg, args.seed, enabled=True if args.noise else None)
    if args.noise:
        noise.sigma_v = noise.sigma_w = args.noise
    dump = open(args.dump, "w", encoding="utf-8") if args.dump else None
    try:
        result = scenarios.run_tree(tree, sim_cfg, store, collection, noise=noise, dump=dump)
    finally:
        if dump:
            dump.close()
    for line in result.diagnostics + result.world.errors:
        print(f"warning: {line}", file=sys.stderr)

    b = result.final_base
    if cfg.output == "doc":
        _emit({
            "_type": "RunResult",
            "collection": collection,
            "final_base": {"theta": b.theta, "x": b.x, "y": b.y},
            "sessions": [s.session_id for s in result.sessions],
            "status": result.status.value,
        })
    else:
        for s in result.sessions:
            print(f"{s.session_id}  {s.behavior_path}  {s.count} messages")
        print(f"collection {collection}", file=sys.stderr)
        print(f"status {result.status.value}", file=sys.stderr)
        print(f"final base x={b.x!r} y={b.y!r} theta={b.theta!r}", file=sys.stderr)
    return EXIT_OK if result.status is btree.SUCCESS else EXIT_FAILURE


# --------------------------------------------------------------------------
# sessions


def _open_store(cfg: CliConfig) -> DocStore:
    try:
        return DocStore(cfg.store_dir, create=False)
    except StoreError as exc:
        raise CliError(str(exc)) from None


def cmd_sessions(args) -> int:
    cfg = _config(args)
    store = _open_store(cfg)
    names = [cfg.collection] if cfg.collection else store.collection_names()
    for name in names:
        for s in store.collection(name).list_sessions():
            if cfg.output == "doc":
                _emit({
                    "_type": "SessionSummary",
                    "behavior_path": s.behavior_path,
                    "collection": name,
                    "ended_at": s.ended_at,
                    "session_id": s.session_id,
                    "started_at": s.started_at,
                    "status": s.status,
                    "topic_counts": s.topic_counts,
                })
                continue
            duration = f"{s.duration_ns / 1e9:.3f}s" if s.duration_ns is not None else "open"
            print(f"{s.session_id}  {s.behavior_path or '-'}  {duration}  {_counts(s.topic_counts)}  [{name}]")
    return EXIT_OK


# --------------------------------------------------------------------------
# replay


def _resolve_collection(store: DocStore, cfg: CliConfig, session: str | None) -> str:
    if cfg.collection:
        if session and session not in store.collection(cfg.collection).sessions:
            raise CliError(f"unknown session {session} in collection {cfg.collection}")
        return cfg.collection
    if session:
        name = store.find_session(session)
        if name is None:
            raise CliError(f"unknown session {session}")
        return name
    names = store.collection_names()
    if len(names) == 1:
        return names[0]
    if not names:
        raise CliError("store has no collections")
    raise CliError(f"several collections in store, pick one with --collection: {', '.join(names)}")


def cmd_replay(args) -> int:
    cfg = _config(args)
    store = _open_store(cfg)
    collection = _resolve_collection(store, cfg, args.session)
    topics = frozenset(t for t in args.topics.split(",") if t) if args.topics else None
    try:
        q = Query(session_id=args.session, topics=topics, t_lo=args.t_from, t_hi=args.t_to,
                  behavior_prefix=args.behavior)
    except ValueError as exc:
        raise CliError(str(exc)) from None

    final = None
    if args.drive_sim:
        sim_cfg = scenarios.load_config(args.config or args.scenario) if (args.config or args.scenario) \
            else scenarios.default_config()
        noise = scenarios.make_noise(sim_cfg, args.seed, enabled=bool(args.noise))
        if args.noise:
            noise.sigma_v = noise.sigma_w = args.noise
        report, world = scenarios.replay_on_sim(store, collection, q, sim_cfg, noise=noise, rate=cfg.rate)
        final = world.base
    else:
        p = plan(store, collection, q, cfg.rate)
        report = replay(p, Bus(strict=cfg.strict_topics), tolerance_ns=cfg.tolerance_ns)
    report.tolerance_ns = cfg.tolerance_ns

    if cfg.output == "doc":
        doc = {
            "_type": "ReplayReport",
            "collection": collection,
            "counts": report.counts,
            "max_lateness_ns": report.max_lateness_ns,
            "partial": report.partial,
            "published": report.published,
            "rate": cfg.rate,
            "wall_duration_ns": report.wall_duration_ns,
        }
        if final is not None:
            doc["final_base"] = {"theta": final.theta, "x": final.x, "y": final.y}
        _emit(doc)
    else:
        print(f"replayed {report.published} messages from {collection} at rate {cfg.rate:g}")
        for topic, n in sorted(report.counts.items()):
            print(f"  {topic}  {n}")
        print(f"max lateness {report.max_lateness_ns / 1e6:.3f} ms "
              f"(tolerance {cfg.tolerance_ns / 1e6:g} ms{'' if report.within_tolerance else ', exceeded'})")
        if final is not None:
            print(f"final base x={final.x!r} y={final.y!r} theta={final.theta!r}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--store", metavar="DIR", help=f"store directory (${STORE_ENV} takes precedence)")
    common.add_argument("--collection", metavar="NAME")
    common.add_argument("--output", choices=("text", "doc"), default="text",
                        help="'doc' prints canonical documents, one per line")
    common.add_argument("-v", "--verbose", action="store_true")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--scenario", choices=scenarios.SCENARIOS)
    sim.add_argument("--config", metavar="FILE", help="scenario config (JSON)")
    sim.add_argument("--seed", type=int, help="noise seed")
    sim.add_argument("--noise", type=float, metavar="SIGMA", default=0.0,
                     help="enable actuation noise with this std-dev for v and w")

    parser = argparse.ArgumentParser(prog="replaykit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common, sim], help="tick a behavior tree on the simulator, recording its scopes")
    p.add_argument("tree", nargs="?", help="tree file (defaults to the scenario's tree)")
    p.add_argument("--dump", metavar="FILE", help="write per-step simulator state here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sessions", parents=[common], help="list recorded sessions")
    p.set_defaults(func=cmd_sessions)

    p = sub.add_parser("replay", parents=[common, sim], help="replay recorded messages")
    p.add_argument("--session", metavar="ID")
    p.add_argument("--topics", metavar="T1,T2")
    p.add_argument("--from", dest="t_from", type=int, metavar="NS")
    p.add_argument("--to", dest="t_to", type=int, metavar="NS")
    p.add_argument("--behavior", metavar="PATH-PREFIX")
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE_NS / 1e6, metavar="MS")
    p.add_argument("--drive-sim", action="store_true", help="replay onto a fresh simulator in virtual time")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CorruptCollection as exc:
        print(f"error: corrupted collection {exc.path}, line {exc.line_no}: {exc.detail}", file=sys.stderr)
    except (CliError, StoreError, btree.TreeError, scenarios.UnknownScenario, InvalidRate, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
