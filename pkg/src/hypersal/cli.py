"""Batch command line: ``hypersal detect|evaluate CONFIG DATASET_ROOT OUT_DIR``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .pipeline import (CONFIG_ENV, default_config_text, emit_report, ingest_dataset,
                       load_config, process_dataset)

log = logging.getLogger("hypersal")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypersal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("detect", "write saliency maps only"),
                            ("evaluate", "write saliency maps and evaluation metrics")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help=f"INI config file; '-' uses ${CONFIG_ENV} or built-in defaults")
        p.add_argument("dataset_root")
        p.add_argument("out_dir")
        p.add_argument("--jobs", type=int, default=None, help="images processed in parallel")
        p.add_argument("--debug-intermediates", action="store_true",
                       help="also write per-stage maps, label maps and hyperedge tables")
        if name == "evaluate":
            p.add_argument("--pooled-curves", action="store_true",
                           help="pool confusion counts over images instead of averaging rates")
    sub.add_parser("default-config", help="print the default configuration")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "default-config":
        sys.stdout.write(default_config_text())
        return 0

    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.jobs is not None:
            overrides["jobs"] = args.jobs
        if args.debug_intermediates:
            overrides["debug"] = True
        if getattr(args, "pooled_curves", False):
            overrides["pooled_curves"] = True
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        index = ingest_dataset(args.dataset_root, cfg.images_dir, cfg.masks_dir, cfg.mask_suffix)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2

    evaluate = args.command == "evaluate"
    log.info("processing %d images with %d job(s)", len(index.entries), cfg.jobs)
    results = process_dataset(index, cfg, evaluate=evaluate)
    try:
        written = emit_report(index, results, args.out_dir, pooled=cfg.pooled_curves)
    except OSError as exc:
        log.error("cannot write report: %s", exc)
        return 2
    failed = sum(r.error is not None for r in results)
    if failed or index.skipped:
        log.warning("%d image(s) skipped, see %s", failed + len(index.skipped), written["skipped"])
    print(written["summary"].read_text().strip())
    return 0


if __name__ == "__main__":
    sys.exit(main())
