"""``fedrd`` command line: run federations (optionally as sweeps) and
materialize synthetic domains as CSV."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import config_echo, expand_sweep, load_document, parse_config_dict
from .data import dataset_to_csv, gen_domains, load_csv_dataset
from .errors import ConfigError, NumericalError
from .federation import FederationReport, run_federation

log = logging.getLogger("fedrd")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

METRICS_COLUMNS = ["round", "unseen_acc", "unseen_loss", "mean_participant_acc"]
TRACE_COLUMNS = ["round", "client_id", "d", "gap", "gamma", "beta", "weight", "lambda_last", "local_loss"]


class DataError(Exception):
    """Unreadable or malformed input dataset."""


def _num(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(v) for v in row])
    return buf.getvalue()


def metrics_csv(report: FederationReport) -> str:
    return _csv_text(
        METRICS_COLUMNS,
        ([m.round, m.unseen_acc, m.unseen_loss, m.mean_participant_acc] for m in report.rounds),
    )


def trace_csv(report: FederationReport) -> str:
    def rows():
        for m in report.rounds:
            for i, cid in enumerate(m.client_ids):
                yield [m.round, cid, m.d[i], m.gap[i], m.gamma[i], m.beta[i],
                       m.weight[i], m.lambda_last[i], m.local_loss[i]]

    return _csv_text(TRACE_COLUMNS, rows())


def summary_dict(report: FederationReport) -> dict:
    last = report.rounds[-1]
    return {
        "strategy": report.config.strategy,
        "held_out_domain": report.config.held_out_domain,
        "rounds": len(report.rounds),
        "final_unseen_acc": report.final_unseen_acc,
        "best_unseen_acc": report.best_unseen_acc,
        "best_round": report.best_round,
        "final_unseen_loss": last.unseen_loss,
        "final_mean_participant_acc": last.mean_participant_acc,
    }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_atomically(out_dir: Path, files: dict[str, str]) -> None:
    """Stage every file in a hidden sibling directory, then rename into place."""
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        for name, text in files.items():
            (staging / name).write_text(text, encoding="utf-8", newline="\n")
        for name in files:
            os.replace(staging / name, out_dir / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def _load_domains(data_dir: Path, num_classes: int):
    paths = sorted(data_dir.glob("domain_*.csv"))
    if not paths:
        raise DataError(f"no domain_*.csv files in {data_dir}")
    domains, digests = [], {}
    for p in paths:
        try:
            domains.append(load_csv_dataset(p, num_classes))
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from None
        digests[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return domains, digests


def _execute(doc: dict, run_dir: Path, workers: int, data_dir: Path | None) -> dict:
    cfg, synth = parse_config_dict(doc)
    started = _now()
    if data_dir is None:
        domains = gen_domains(synth, cfg.seed)
        source = {"kind": "synthetic", "seed": cfg.seed}
    else:
        domains, digests = _load_domains(data_dir, cfg.model.num_classes)
        source = {"kind": "csv", "dir": str(data_dir), "sha256": digests}
    log.info("run %s: strategy=%s held_out=%d", run_dir.name, cfg.strategy, cfg.held_out_domain)
    report = run_federation(cfg, domains, synth.dirichlet_alpha, workers=workers)
    summary = summary_dict(report)
    manifest = {
        "artifact_version": __version__,
        "seed": cfg.seed,
        "config": config_echo(cfg, synth),
        "data_source": source,
        "started": started,
        "finished": _now(),
        "outputs": {
            "metrics": str(run_dir / "metrics.csv"),
            "trace": str(run_dir / "trace.csv"),
            "summary": str(run_dir / "summary.json"),
        },
    }
    write_atomically(run_dir, {
        "metrics.csv": metrics_csv(report),
        "trace.csv": trace_csv(report),
        "summary.json": json.dumps(summary, indent=2, sort_keys=True) + "\n",
        "manifest.json": json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    })
    return summary


def cmd_run(
    config_path,
    out_dir,
    seed_override: int | None = None,
    sweep: bool = False,
    workers: int = 1,
    data_dir=None,
) -> int:
    out_dir = Path(out_dir)
    created = not out_dir.exists()
    try:
        doc = load_document(Path(config_path).read_text(encoding="utf-8"))
        if seed_override is not None:
            fed = doc.get("federation")
            if not isinstance(fed, dict):
                raise ConfigError("missing required section 'federation'")
            fed["seed"] = seed_override
        runs = expand_sweep(doc) if sweep else [("base", doc)]
        # validate every run before training anything
        for _, d in runs:
            parse_config_dict(d)

        if not sweep:
            _execute(runs[0][1], out_dir, workers, data_dir and Path(data_dir))
            return EXIT_OK
        rows = []
        for i, (label, d) in enumerate(runs):
            run_dir = out_dir / f"run_{i:03d}_{label}"
            summary = _execute(d, run_dir, workers, data_dir and Path(data_dir))
            rows.append([run_dir.name, summary["final_unseen_acc"], summary["best_unseen_acc"],
                         summary["best_round"]])
        text = _csv_text(["run", "final_unseen_acc", "best_unseen_acc", "best_round"], rows)
        write_atomically(out_dir, {"sweep.csv": text})
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (OSError, DataError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        code = EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    if created and out_dir.is_dir() and not any(out_dir.iterdir()):
        out_dir.rmdir()
    return code


def cmd_gen_data(config_path, out_dir) -> int:
    out_dir = Path(out_dir)
    try:
        doc = load_document(Path(config_path).read_text(encoding="utf-8"))
        cfg, synth = parse_config_dict(doc)
        domains = gen_domains(synth, cfg.seed)
        write_atomically(out_dir, {f"domain_{d.domain_id}.csv": dataset_to_csv(d) for d in domains})
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one federation, or a sweep of them")
    run.add_argument("config", help="YAML config file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override federation.seed")
    run.add_argument("--sweep", action="store_true",
                     help="expand list-valued fields into a cross-product of runs")
    run.add_argument("--workers", type=int, default=1,
                     help="threads for client updates (results are identical for any value)")
    run.add_argument("--data-dir", default=None,
                     help="load domain_*.csv files instead of generating synthetic data")

    gen = sub.add_parser("gen-data", help="write the synthetic domains as domain_<id>.csv")
    gen.add_argument("config")
    gen.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed, args.sweep, args.workers, args.data_dir)
    return cmd_gen_data(args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
