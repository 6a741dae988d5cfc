"""Command-line exporter: image folders in, feature packs and a manifest out.

Exit codes: 0 success, 1 usage error, 2 extraction error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ExtractError
from .extract import ROLES, ExtractJob, extract


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="pyextract", description=__doc__)
    for role in ROLES:
        parser.add_argument(
            f"--{role.replace('_', '-')}", dest=role, metavar="DIR",
            help=f"image root for the {role} split",
        )
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--encoder", default="gray-8", help="encoder tag (default gray-8)")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu", help="device tag recorded for the run")
    parser.add_argument(
        "--with-probe", action="store_true",
        help="train a linear probe on known_train and stamp logits into every pack",
    )
    parser.add_argument("--probe-seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    roots = {role: Path(getattr(args, role)) for role in ROLES if getattr(args, role)}
    job = ExtractJob(
        roots=roots,
        out_dir=Path(args.out_dir),
        encoder=args.encoder,
        batch_size=args.batch_size,
        device=args.device,
        with_probe=args.with_probe,
        probe_seed=args.probe_seed,
    )
    try:
        result = extract(job)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for role in sorted(result.counts):
        dropped = len(result.skipped[role])
        note = f" ({dropped} skipped)" if dropped else ""
        print(f"{role}: {result.counts[role]} images{note}")
    print(f"classes: {len(result.class_names)} feature_dim: {result.encoder_dim}")
    print(f"wrote {result.manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
