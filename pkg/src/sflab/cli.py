"""Command line entry point.

    sflab <study> --config <path> [--seed S] [--out DIR]
    sflab encode --input SEQ --dist-file F --D D --seed S [--n N] [--A A] [--max-scan M] --out BLOB
    sflab decode BLOB

Exit codes: 0 success (all study checks passed), 1 a check failed or the
encoder missed within its scan budget, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import STUDIES, ConfigError, load_config
from .core import DistortionError


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sflab", description="d-semifaithful coding experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for study in STUDIES:
        sp = sub.add_parser(study, help=f"run the {study} study")
        sp.add_argument("--config", required=True, help="flat key = value config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory (CSV named after the study)")
        sp.add_argument("--workers", type=int, default=None)
    enc = sub.add_parser("encode", help="encode one block into an SFC1 container")
    enc.add_argument("--input", required=True, help="whitespace-separated source symbols")
    enc.add_argument("--dist-file", required=True)
    enc.add_argument("--D", type=float, required=True)
    enc.add_argument("--seed", type=int, required=True)
    enc.add_argument("--n", type=int, default=None, help="block length (defaults to the input length)")
    enc.add_argument("--A", type=int, default=None, help="codebook base (default max(J, K) + 1)")
    enc.add_argument("--max-scan", type=int, default=None)
    enc.add_argument("--out", required=True)
    dec = sub.add_parser("decode", help="print the reproduction block stored in a container")
    dec.add_argument("container")
    return ap


def _run_study(args) -> int:
    from . import experiments

    cfg = load_config(args.config, seed=args.seed, workers=args.workers)
    if cfg.study != args.command:
        raise ConfigError(f"config is for study {cfg.study!r}, not {args.command!r}")
    out = Path(args.out) / f"{cfg.study}.csv" if args.out else Path(cfg.output_path)
    result = experiments.run_study(cfg)
    experiments.emit(result.rows, out, cfg, result)
    for name, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"wrote {out} ({len(result.rows)} rows)")
    return 0 if result.passed else 1


def _encode(args) -> int:
    from . import codec
    from .core import read_distortion, read_sequence

    dm = read_distortion(args.dist_file)
    if not dm.normalized:
        raise ConfigError("encode expects a normalized distortion matrix (zero row minima)")
    x = read_sequence(args.input, dm.K)
    n = args.n if args.n is not None else x.size
    if x.size != n:
        raise ConfigError(f"input holds {x.size} symbols, expected n = {n}")
    a = args.A if args.A is not None else max(dm.J, dm.K) + 1
    cb = codec.VirtualCodebook(args.seed, a, n, dm.J, dm.K)
    res = codec.encode(cb, x, dm, args.D, max_scan=args.max_scan)
    if not res.hit:
        print(f"miss: no codeword within distortion after {res.scanned} scans", file=sys.stderr)
        return 1
    Path(args.out).write_bytes(codec.pack_container(cb, res.bits))
    print(f"index {res.index} bits {len(res.bits)} distortion {res.distortion!r}")
    return 0


def _decode(args) -> int:
    from . import codec

    blob = Path(args.container).read_bytes()
    print(" ".join(str(v) for v in codec.decode_container(blob).symbols))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .codec import ContainerError
    from .prefix_code import PrefixDecodeError

    try:
        if args.command == "encode":
            return _encode(args)
        if args.command == "decode":
            return _decode(args)
        return _run_study(args)
    except (ConfigError, DistortionError, ContainerError, PrefixDecodeError, OSError, ValueError) as exc:
        print(f"sflab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
