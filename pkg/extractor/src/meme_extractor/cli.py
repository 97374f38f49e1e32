"""CLI: extract a manifest into RGE1, or verify an existing extraction."""

from __future__ import annotations

import argparse
import json
import sys

from .encoders import DEFAULT_ENCODER, EncoderLoadError
from .extract import extract, sidecar_path, verify
from .manifest import ManifestError
from .rge1 import Rge1Error


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meme-extract",
                                     description="Frozen-encoder feature extraction to RGE1")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="encode a manifest into an RGE1 file + text sidecar")
    p.add_argument("--manifest", required=True)
    p.add_argument("--encoder", default=DEFAULT_ENCODER,
                   help=f"'hash-v1' or 'clip:<model>' (default {DEFAULT_ENCODER})")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(cmd="extract")

    p = sub.add_parser("verify", help="check an RGE1 file against its manifest")
    p.add_argument("--rge1", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--encoder", default=None,
                   help="also check dimensions against this encoder's published dims")
    p.set_defaults(cmd="verify")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "extract":
            n = extract(args.manifest, args.encoder, args.out, batch_size=args.batch_size)
            json.dump({"records": n, "out": str(args.out),
                       "sidecar": str(sidecar_path(args.out)), "encoder": args.encoder},
                      sys.stdout)
            sys.stdout.write("\n")
            return 0
        report = verify(args.rge1, args.manifest, args.encoder)
        json.dump({"manifest_records": report.n_manifest, "rge1_records": report.n_rge1,
                   "mismatches": report.mismatches}, sys.stdout)
        sys.stdout.write("\n")
        return 0 if report.ok else 1
    except (ManifestError, Rge1Error, EncoderLoadError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
