#!/usr/bin/env python3
"""Run the synthetic 5-task ablation (finetune / base / POD / full) and print
the report table. Takes a couple of minutes single-threaded; set
SRKOCL_WORKERS to parallelize over (variant, seed) jobs.

Usage: python scripts/run_synthetic.py [--config PATH] [--out DIR]
"""

import argparse
import json
import os
import sys

from srkocl.cli import cmd_report, cmd_run

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(HERE, "configs", "synthetic_ablation.json")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=DEFAULT_CONFIG)
    parser.add_argument("--out", default=None, help="override the config's output_dir")
    args = parser.parse_args()

    config_path = args.config
    if args.out:
        with open(args.config, encoding="utf-8") as f:
            doc = json.load(f)
        doc["output_dir"] = args.out
        config_path = os.path.join(args.out, "config.json")
        os.makedirs(args.out, exist_ok=True)
        with open(config_path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)

    status = cmd_run(config_path)
    if status != 0:
        return status
    with open(config_path, encoding="utf-8") as f:
        out_dir = json.load(f)["output_dir"]
    print()
    return cmd_report(out_dir, "table")


if __name__ == "__main__":
    sys.exit(main())
