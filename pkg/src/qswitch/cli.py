"""Command-line front end.

Exit codes: 0 success, 1 invalid topology or config, 2 simulation
assertion failure (deadlock, invariant), 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import analytics
from .simnet import SimConfig, SimulationError, Simulation, run
from .protocol import ProtocolError
from .topology import (
    PRESETS,
    QFlyParams,
    TopologyError,
    ValidationError,
    generate_qfly,
    load_topology,
    serialize_topology,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SIM = 2
EXIT_USAGE = 64
OUT_DIR_ENV = "QSWITCH_OUT_DIR"

# config-file keys that map onto SimConfig fields
_CONFIG_KEYS = {
    "lambda": ("lam", float), "lam": ("lam", float), "horizon": ("horizon", int), "seed": ("seed", int),
    "hop_latency": ("hop_latency", int), "dequeue_delay": ("dequeue_delay", int),
    "session_hold": ("session_hold", int), "reconfiguration_delay": ("reconfiguration_delay", int),
    "request_timeout": ("request_timeout", int), "grace": ("grace", int), "classical": ("classical", str),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_path(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get(OUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def read_config_file(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower()
        if not sep or key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{n}: unknown config line {raw.strip()!r}")
        field, conv = _CONFIG_KEYS[key]
        try:
            out[field] = conv(value.strip())
        except ValueError as exc:
            raise UsageError(f"{path}:{n}: {exc}") from None
    return out


def _add_qfly_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--g", type=int, help="number of groups")
    p.add_argument("--p", type=int, help="end nodes per group")
    p.add_argument("--b", type=int, help="BSAs per group")
    p.add_argument("--k", type=int, help="group switch radix (metadata)")
    p.add_argument("--n", type=int, help="total end nodes (even split over groups)")
    p.add_argument("--variant", default=None, help="name prefix, e.g. SPHD or DPHD")


def _qfly_params(args) -> QFlyParams:
    if args.g is None or args.p is None or args.b is None:
        raise UsageError("--g, --p and --b are required for a Q-Fly topology")
    variant = args.variant
    if variant is None:
        variant = next(
            (v.variant for v in PRESETS.values() if (v.g, v.p, v.b, v.n_override) == (args.g, args.p, args.b, args.n)),
            "QFly",
        )
    return QFlyParams(g=args.g, p=args.p, b=args.b, k=args.k, n_override=args.n, variant=variant)


def _topology(args):
    topo = getattr(args, "topo", None) or "qfly"
    if getattr(args, "topo_file", None):
        return load_topology(Path(args.topo_file).read_text())
    if topo in PRESETS:
        return PRESETS[topo]
    if topo == "qfly":
        if args.g is None and args.p is None and args.b is None:
            raise UsageError("--topo qfly needs --g, --p and --b (or use --topo sphd20/dphd42)")
        return _qfly_params(args)
    path = Path(topo)
    if path.exists():
        return load_topology(path.read_text())
    raise UsageError(f"unknown topology {topo!r}")


def cmd_gen_topo(args) -> int:
    params = PRESETS[args.preset] if args.preset else _qfly_params(args)
    text = serialize_topology(generate_qfly(params))
    out = _out_path(args.file)
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        print(f"wrote {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        topo = load_topology(Path(args.file).read_text())
    except ValidationError as exc:
        for v in exc.violations:
            print(f"invalid: {v}")
        return EXIT_INVALID
    counts = topo.counts()
    print(f"ok: {topo.name or args.file}: " + ", ".join(f"{n} {k.value}" for k, n in counts.items())
          + f", {len(topo.channels)} channels")
    return EXIT_OK


def _sim_config(args) -> SimConfig:
    kwargs = read_config_file(args.config) if args.config else {}
    flags = {
        "lam": args.lam, "horizon": args.horizon, "seed": args.seed, "session_hold": args.hold,
        "reconfiguration_delay": args.reconf, "request_timeout": args.timeout,
        "dequeue_delay": args.dequeue_delay, "grace": args.grace, "hop_latency": args.hop_latency,
        "classical": args.classical,
    }
    kwargs.update({k: v for k, v in flags.items() if v is not None})
    return SimConfig(topology=_topology(args), **kwargs)


def cmd_run(args) -> int:
    cfg = _sim_config(args)
    result = run(cfg)
    summary = analytics.summarize_result(result)
    print(f"topology {result.topology.name}  lambda {cfg.lam:g}  seed {cfg.seed}  "
          f"discovery messages {result.discovery_messages}")
    for line in summary.lines():
        print(line)
    if out := _out_path(args.out):
        out.write_text(summary.to_json() + "\n")
    if logp := _out_path(args.log):
        result.dump_log(logp)
    return EXIT_OK


def cmd_sweep(args) -> int:
    lambdas = [float(x) for x in args.lambdas.split(",") if x]
    topos = [t.strip() for t in args.topos.split(",") if t.strip()]
    for t in topos:
        if t not in PRESETS:
            raise UsageError(f"unknown preset {t!r}; choose from {sorted(PRESETS)}")
    configs = [
        SimConfig(PRESETS[t], lam=lam, seed=seed, horizon=args.horizon, log_messages=False,
                  **({"session_hold": args.hold} if args.hold is not None else {}))
        for t in topos for lam in lambdas for seed in range(args.seeds)
    ]
    rows = analytics.sweep(configs)
    text = analytics.to_csv(rows)
    if out := _out_path(args.csv):
        out.write_text(text)
        print(f"wrote {len(rows)} rows to {out}")
    else:
        sys.stdout.write(text)
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"error: {r.topology} lambda={r.lam:g} seed={r.seed}: {r.error}", file=sys.stderr)
    return EXIT_SIM if failed else EXIT_OK


def cmd_tables(args) -> int:
    topo = _topology(args)
    sim = Simulation(SimConfig(topology=topo))
    sim.discover()
    nodes = [args.node] if args.node is not None else sorted(sim.nodes)
    for nid in nodes:
        if nid not in sim.nodes:
            raise UsageError(f"no node {nid}")
        node = sim.nodes[nid]
        print(f"# node {nid} ({node.kind.value})")
        sys.stdout.write(node.table.dump())
    return EXIT_OK


def cmd_replay(args) -> int:
    with open(args.log) as fh:
        records = analytics.read_log(fh)
    summary = analytics.summarize(records)
    for line in summary.lines():
        print(line)
    if out := _out_path(args.out):
        out.write_text(summary.to_json() + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qswitch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-topo", help="write a Q-Fly topology file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    _add_qfly_args(p)
    p.add_argument("--file", help="output path (stdout if omitted)")
    p.set_defaults(func=cmd_gen_topo)

    p = sub.add_parser("validate", help="check a topology file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    def sim_args(p):
        p.add_argument("--topo", default=None, help="qfly, sphd20, dphd42 or a topology file")
        p.add_argument("--topo-file", default=None)
        _add_qfly_args(p)

    p = sub.add_parser("run", help="run one simulation")
    sim_args(p)
    p.add_argument("--config", help="key = value file of SimConfig fields")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--hold", type=int, help="session hold in time steps")
    p.add_argument("--reconf", type=int, help="reconfiguration delay")
    p.add_argument("--timeout", type=int, help="request timeout")
    p.add_argument("--dequeue-delay", type=int)
    p.add_argument("--grace", type=int, help="post-horizon drain steps")
    p.add_argument("--hop-latency", type=int)
    p.add_argument("--classical", choices=["address", "hops"])
    p.add_argument("--out", help="JSON summary path")
    p.add_argument("--log", help="JSON-lines event log path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="lambda x seed sweep over the built-in presets")
    p.add_argument("--lambdas", default="75,100,150")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, 0..N-1")
    p.add_argument("--topos", default="sphd20,dphd42")
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--hold", type=int)
    p.add_argument("--csv", help="CSV output path (stdout if omitted)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tables", help="print BSA tables after discovery")
    sim_args(p)
    p.add_argument("--node", type=int)
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("replay", help="summarise a JSON-lines event log")
    p.add_argument("log")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qswitch: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, TopologyError, ValueError, OSError) as exc:
        print(f"qswitch: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, ProtocolError, AssertionError) as exc:
        print(f"qswitch: simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
