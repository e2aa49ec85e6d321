"""Command line: ``ovdp run|verify <config>`` and ``ovdp gen <task>``.

Exit codes: 0 success, 1 some design (or check) failed, 2 bad config or arguments.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io as tio
from .bench import ConfigError, load_config, run_experiment, verify_experiment
from .errors import OVDPError
from .problems import GsrConfig, MnrConfig, UnmixConfig, make_instance

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--quiet", action="store_true", help="print only errors")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ovdp", description="P-PDS preconditioner benchmark")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", type=Path)
    _common(run)
    run.add_argument("--max-iters", type=int, help="override max_iters")
    run.add_argument("--oracle-iters", type=int, help="override oracle_iters")

    ver = sub.add_parser("verify", help="check the convergence condition and operator invariants")
    ver.add_argument("config", type=Path)
    _common(ver)
    ver.add_argument("--max-iters", type=int, help="accepted for symmetry with run; unused")

    gen = sub.add_parser("gen", help="write synthetic data files")
    gsub = gen.add_subparsers(dest="task", required=True, parser_class=_Parser)
    g_mnr = gsub.add_parser("mnr")
    g_mnr.add_argument("--dims", type=int, nargs=3, default=[16, 16, 8])
    g_mnr.add_argument("--sigma", type=float, default=0.05)
    g_mnr.add_argument("--p-s", type=float, default=0.1)
    g_mnr.add_argument("--stripe-ratio", type=float, default=0.0)
    g_un = gsub.add_parser("unmix")
    g_un.add_argument("--pixels", type=int, nargs=2, default=[16, 16])
    g_un.add_argument("--bands", type=int, default=32)
    g_un.add_argument("--endmembers", type=int, default=4)
    g_un.add_argument("--sigma", type=float, default=0.05)
    g_gsr = gsub.add_parser("gsr")
    g_gsr.add_argument("--n", type=int, default=200)
    g_gsr.add_argument("--k", type=int, default=6)
    g_gsr.add_argument("--rate", type=float, default=0.2)
    g_gsr.add_argument("--sigma", type=float, default=0.1)
    g_gsr.add_argument("--pieces", type=int, default=4)
    for p in (g_mnr, g_un, g_gsr):
        _common(p)
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        params = cfg.params
        if isinstance(params, GsrConfig):
            params.graph_seed = params.signal_seed = args.seed
        else:
            params.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    for key in ("max_iters", "oracle_iters"):
        v = getattr(args, key, None)
        if v is not None:
            if v < 1:
                raise ConfigError("must be >= 1", key.replace("_", "-"))
            setattr(cfg, key, v)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args)
    result = run_experiment(cfg, quiet=args.quiet)
    for note in result.notes:
        print(note, file=sys.stderr)
    if not args.quiet:
        print(f"wrote {result.out / 'summary.csv'}")
    return EXIT_FAILED if result.failed else EXIT_OK


def _cmd_verify(args) -> int:
    cfg = _load(args)
    checks = verify_experiment(cfg)
    for c in checks:
        if not args.quiet or not c.passed:
            print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAILED


def _cmd_gen(args) -> int:
    seed = 0 if args.seed is None else args.seed
    out = args.out or Path(f"data/{args.task}")
    if args.task == "mnr":
        cfg = MnrConfig(dims=tuple(args.dims), sigma=args.sigma, p_s=args.p_s, stripe_ratio=args.stripe_ratio, seed=seed)
        inst = make_instance("mnr", cfg)
        for name in ("observed", "truth", "stripes"):
            tio.write_tensor(out / f"{name}.raw", inst.data[name], cfg.dims)
    elif args.task == "unmix":
        cfg = UnmixConfig(pixels=tuple(args.pixels), bands=args.bands, endmembers=args.endmembers, sigma=args.sigma, seed=seed)
        inst = make_instance("unmix", cfg)
        p1, p2 = cfg.pixels
        # observed and abundances are stored map after map
        tio.write_tensor(out / "observed.raw", inst.data["observed"], [p1, p2, cfg.bands])
        tio.write_tensor(out / "abundances.raw", inst.data["truth"], [p1, p2, cfg.endmembers])
        tio.write_tensor(out / "endmembers.raw", inst.data["E"], [cfg.bands, cfg.endmembers])
    else:
        cfg = GsrConfig(n_vertices=args.n, k=args.k, rate=args.rate, sigma=args.sigma, pieces=args.pieces, graph_seed=seed, signal_seed=seed)
        inst = make_instance("gsr", cfg)
        tio.write_edge_list(out / "graph.txt", inst.data["graph"])
        tio.write_tensor(out / "signal.raw", inst.data["truth"], [cfg.n_vertices])
        tio.write_tensor(out / "mask.raw", inst.data["mask"].astype(float), [cfg.n_vertices])
        tio.write_tensor(out / "observed.raw", inst.data["observed"], [cfg.n_samples])
    if not args.quiet:
        print(f"wrote {args.task} data to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": _cmd_run, "verify": _cmd_verify, "gen": _cmd_gen}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OVDPError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if args.command == "gen" else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
