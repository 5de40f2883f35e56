"""Command-line entry points.

    dss generate --blocks N --grid nx,ny,nz --periods T --seed S -o file
    dss optimize --instance f --method {hybrid|dw|exact} --scenarios K --seed S
    dss saa --instance f --s-in A --s-out B --reps R --method M --seed S
    dss report --run ID [--format csv|json] [--kind KIND --out DIR]
    dss serve --store DIR --port P
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .blockmodel import generate_synthetic, save_instance
from .errors import PitplanError
from .runstore import RunStore, RunWorker

DEFAULT_STORE = "./dss_runs"


def _parse_grid(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must be nx,ny,nz")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dss", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dss {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="create a seeded synthetic instance file")
    gen.add_argument("--blocks", type=int, required=True)
    gen.add_argument("--grid", type=_parse_grid, required=True, metavar="nx,ny,nz")
    gen.add_argument("--periods", type=int, required=True)
    gen.add_argument("--modes", type=int, default=2)
    gen.add_argument("--scenarios", type=int, default=2)
    gen.add_argument("--rock-types", type=int, default=2)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("-o", "--output", required=True)

    opt = sub.add_parser("optimize", help="run one optimizer on an instance")
    opt.add_argument("--instance", required=True)
    opt.add_argument("--method", choices=["hybrid", "dw", "exact"], default="hybrid")
    opt.add_argument("--scenarios", type=int, default=4)
    opt.add_argument("--shock-sigma", type=float, default=0.3)
    opt.add_argument("--seed", type=int, default=0)
    opt.add_argument("--rl", action="store_true", help="enable the adaptive controllers")
    opt.add_argument("--eps0", type=float, default=2.0)
    opt.add_argument("--schedule", choices=["linear", "cosine"], default="linear")
    opt.add_argument("--store", default=DEFAULT_STORE)

    saa = sub.add_parser("saa", help="sample-average-approximation study")
    saa.add_argument("--instance", required=True)
    saa.add_argument("--s-in", type=int, required=True)
    saa.add_argument("--s-out", type=int, required=True)
    saa.add_argument("--reps", type=int, required=True)
    saa.add_argument("--method", choices=["exact", "hybrid", "dw"], default="exact")
    saa.add_argument("--shock-sigma", type=float, default=0.3)
    saa.add_argument("--seed", type=int, default=0)
    saa.add_argument("--store", default=DEFAULT_STORE)

    rep = sub.add_parser("report", help="dump run results or render figures")
    rep.add_argument("--run", required=True, nargs="+", help="run id(s)")
    rep.add_argument("--format", choices=["json", "csv"], default="json")
    rep.add_argument("--kind", choices=None, default=None,
                     help="figure kind (bias_vs_sin, runtime_vs_sin, saa_stability, "
                          "trace, epsilon, box_compare, throughput)")
    rep.add_argument("--out", default=".", help="output directory for figures")
    rep.add_argument("--store", default=DEFAULT_STORE)

    srv = sub.add_parser("serve", help="start the HTTP service")
    srv.add_argument("--store", default=DEFAULT_STORE)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)

    return parser


def _cmd_generate(args) -> int:
    instance = generate_synthetic(
        args.blocks,
        args.grid,
        args.periods,
        args.modes,
        seed=args.seed,
        n_scenarios=args.scenarios,
        n_rock_types=args.rock_types,
    )
    save_instance(instance, args.output)
    print(f"wrote {args.output}: {instance.n_blocks} blocks, {instance.n_periods} periods")
    return 0


def _add_instance(store: RunStore, path: str) -> str:
    doc = json.loads(Path(path).read_text())
    return store.add_instance(doc)


def _cmd_optimize(args) -> int:
    store = RunStore(args.store)
    instance_id = _add_instance(store, args.instance)
    config = {
        "method": args.method,
        "seed": args.seed,
        "n_scenarios": args.scenarios,
        "shock_sigma": args.shock_sigma,
        "rl": bool(args.rl),
        "eps0": args.eps0,
        "schedule": args.schedule,
    }
    record = store.create_run(instance_id, config)
    record = RunWorker(store).execute(record.run_id)
    if record.status != "Done":
        print(f"run {record.run_id} {record.status}: {record.error}", file=sys.stderr)
        return 1
    result = store.read_result(record.run_id)
    print(f"run {record.run_id} Done")
    print(f"  npv      {result['npv']:.2f}")
    print(f"  p10/p50/p90  {result['risk']['p10']:.2f} / {result['risk']['p50']:.2f} / {result['risk']['p90']:.2f}")
    print(f"  cvar10   {result['risk']['cvar10']:.2f}")
    print(f"  schedule {result['schedule_digest'][:16]}")
    return 0


def _cmd_saa(args) -> int:
    store = RunStore(args.store)
    instance_id = _add_instance(store, args.instance)
    config = {
        "method": "saa",
        "seed": args.seed,
        "shock_sigma": args.shock_sigma,
        "saa": {
            "s_in": args.s_in,
            "s_out": args.s_out,
            "replications": args.reps,
            "optimizer": args.method,
        },
    }
    record = store.create_run(instance_id, config)
    record = RunWorker(store).execute(record.run_id)
    if record.status != "Done":
        print(f"run {record.run_id} {record.status}: {record.error}", file=sys.stderr)
        return 1
    agg = store.read_result(record.run_id)["aggregate"]
    print(f"run {record.run_id} Done")
    print(f"  mean bias  {agg['bias_mean']:.2f} +/- {agg['bias_ci_half_width']:.2f}")
    print(f"  p10/p50/p90  {agg['p10']:.2f} / {agg['p50']:.2f} / {agg['p90']:.2f}")
    print(f"  cvar10     {agg['cvar10']:.2f}")
    return 0


def _flatten(doc: dict, prefix: str = "") -> list[tuple[str, object]]:
    rows: list[tuple[str, object]] = []
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flatten(value, name + "."))
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            for i, item in enumerate(value):
                rows.extend(_flatten(item, f"{name}[{i}]."))
        else:
            rows.append((name, value))
    return rows


def _cmd_report(args) -> int:
    store = RunStore(args.store)
    if args.kind:
        from .reports import render_report

        paths = render_report(store, args.run, args.kind, args.out)
        for path in paths:
            print(path)
        return 0
    for run_id in args.run:
        record = store.get_run(run_id)
        doc = record.to_dict()
        if record.status == "Done":
            doc["result"] = store.read_result(run_id)
        if args.format == "json":
            print(json.dumps(doc, indent=2, sort_keys=True))
        else:
            for name, value in _flatten(doc):
                print(f"{name},{value}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    uvicorn.run(create_app(args.store), host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "optimize": _cmd_optimize,
    "saa": _cmd_saa,
    "report": _cmd_report,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except PitplanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
