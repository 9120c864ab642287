"""Command-line front end: ``synth``, ``estimate``, ``simulate`` and ``report``.

Every command writes a ``manifest.json`` next to its outputs (for ``synth``,
``<out>.manifest.json``) recording arguments, resolved parameters, input
and output checksums and a timestamp. Outputs other than the manifest are
byte-identical across reruns with the same inputs.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from importlib import metadata
from pathlib import Path

from . import markov, report, sim
from .core import parse_money
from .hsa import HsaParams
from .ingest import filter_cohort, load_person_years, write_person_years
from .sampler import build_distributions
from .synth import generate_dataset, load_calibration

logger = logging.getLogger("hsasim")

PRESET_WARNING = (
    "warning: preset 'paper' runs 10,000 lives x 1,000 replications; "
    "expect a long runtime at desk scale and about 1 GB of replication files"
)


class CliError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(path: Path, command: str, argv, params: dict, inputs, outputs, base: Path,
                   config=None, seed=None) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": None if config is None else str(config),
        "parameters": params,
        "seed": None if seed is None else str(seed),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(Path(p).relative_to(base)) if Path(p).is_relative_to(base) else str(p): _sha256(Path(p))
                    for p in sorted(set(outputs))},
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "version": _version(),
    }
    atomic_write_text(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, rows: list[dict]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return path


def _load_cohort(path):
    cohort = filter_cohort(load_person_years(path))
    logger.info("cohort: %d persons, dropped %s", len(cohort), dict(cohort.dropped))
    return cohort


# -- commands --------------------------------------------------------------------------------------------------


def cmd_synth(args, argv) -> None:
    cal = load_calibration(args.config)
    if args.seed is not None:
        cal = replace(cal, seed=args.seed)
    if args.n is not None:
        cal = replace(cal, cohort_size=args.n)
    data = generate_dataset(cal)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_person_years(data.records, out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "synth", argv, cal.to_dict(),
                   [args.config] if args.config else [], [out], out.parent, args.config, cal.seed)


def cmd_estimate(args, argv) -> None:
    cohort = _load_cohort(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    years = tuple(args.years) if args.years else None
    model = markov.estimate_model(cohort, years)
    written = [out / "transition_model.json"]
    atomic_write_text(written[0], model.to_json() + "\n")

    ref = markov.mid_window(cohort)
    groups = {
        "all": None,
        "young": markov.age_between(21, 40, ref),
        "old": markov.age_between(41, 65, ref),
    }
    heat = []
    for label, flt in groups.items():
        try:
            rep = markov.persistence_report(cohort, flt, label=label)
        except markov.EstimationError as exc:
            logger.warning("persistence group %s skipped: %s", label, exc)
            continue
        written.append(_write_json(out / f"persistence_{label}.json", rep.to_dict()))
        heat += rep.heatmap_rows()
    written.append(_write_csv(out / "persistence_heatmap.csv", heat))

    dists = build_distributions(cohort, (model.years[0], model.years[2]))
    written.append(_write_json(out / "distributions.json", dists.export()))
    params = {"years": list(model.years), "breaks": list(model.breaks), "policy": list(model.policy),
              "persistence_reference_date": ref.isoformat(), "cohort_size": len(cohort),
              "dropped": dict(cohort.dropped)}
    write_manifest(out / "manifest.json", "estimate", argv, params, [args.data], written, out)


def _study_params(args) -> sim.SimulationParams:
    if args.preset == "paper":
        print(PRESET_WARNING, file=sys.stderr)
        params = sim.PRESET_PARAMS
    else:
        params = sim.SimulationParams()
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        params = sim.SimulationParams.from_dict({**params.to_dict(), **cfg,
                                                 "hsa": {**params.hsa.to_dict(), **cfg.get("hsa", {})}})
    hsa = params.hsa
    if args.deposit is not None or args.cap is not None or args.deposits is not None:
        hsa = HsaParams(
            annual_deposit=parse_money(args.deposit) if args.deposit is not None else hsa.annual_deposit,
            annual_cap=parse_money(args.cap) if args.cap is not None else hsa.annual_cap,
            years=hsa.years,
            deposits=args.deposits if args.deposits is not None else hsa.deposits,
        )
    return replace(
        params,
        hsa=hsa,
        n_lives=args.lives if args.lives is not None else params.n_lives,
        n_replications=args.replications if args.replications is not None else params.n_replications,
        master_seed=args.seed if args.seed is not None else params.master_seed,
    )


def _config_paths(args) -> tuple[str, str]:
    model, data = args.model, args.data
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        base = Path(args.config).parent
        model = model or (str(base / cfg["model"]) if "model" in cfg else None)
        data = data or (str(base / cfg["data"]) if "data" in cfg else None)
    if not model or not data:
        raise CliError("simulate needs --model and --data (or 'model'/'data' paths in the config)")
    return model, data


def cmd_simulate(args, argv) -> None:
    model_dir, data_path = _config_paths(args)
    params = _study_params(args)
    model_file = Path(model_dir) / "transition_model.json"
    model = markov.TransitionModel.from_dict(json.loads(model_file.read_text(encoding="utf-8")))
    cohort = _load_cohort(data_path)
    dists = build_distributions(cohort, (model.years[0], model.years[2]), params.breaks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def persist(rep):
        written.append(sim.save_replication(out, rep))

    study = sim.run_study(model, dists, cohort, params, threads=args.threads, on_replication=persist,
                          keep_lives="slim")
    study = replace(study, metadata={**study.metadata, "model_years": list(model.years),
                                     "fallbacks": {"model": model.fallback_counts(),
                                                   "distributions": dists.fallback_summary()}})
    written += sim.save_study(out, study, write_replications=False)
    write_manifest(out / "manifest.json", "simulate", argv, params.to_dict(), [model_file, data_path], written, out,
                   args.config, params.master_seed)


def cmd_report(args, argv) -> None:
    out = Path(args.out)
    tables: list[report.Table] = []
    extras: dict[str, object] = {}
    inputs = []
    if args.study:
        study = sim.load_study(args.study, slim=True)
        study_tables, cov = report.study_tables(study)
        tables += study_tables
        extras["coverage_shape"] = cov.to_dict()
        extras["plot_feeds"] = report.plot_feeds(study)
        inputs.append(Path(args.study) / "study.json")
    if args.data:
        cohort = _load_cohort(args.data)
        tables += report.descriptive_tables(cohort)
        tables.append(report.level_share_table(cohort))
        extras["error_bars"] = report.error_bar_feed(cohort)
        inputs.append(args.data)
    if not tables:
        raise CliError("report needs --study and/or --data")
    meta = report.report_metadata(synthetic=not args.real_data)
    written = report.write_report(out, tables, meta, extras)
    write_manifest(out / "manifest.json", "report", argv, {"synthetic_calibrated": not args.real_data}, inputs,
                   written, out)


# -- parser ----------------------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsasim", description="HSA plus catastrophic insurance simulation pipeline")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic person-year claims file")
    s.add_argument("--config", help="calibration JSON (default: packaged calibration)")
    s.add_argument("--out", required=True, help="output CSV path")
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int, help="override cohort size")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("estimate", help="estimate transition matrices and persistence report")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="model directory")
    e.add_argument("--years", type=int, nargs=3, metavar="YEAR", help="estimation window (default: last three)")
    e.set_defaults(func=cmd_estimate)

    m = sub.add_parser("simulate", help="run the replicated life-cycle simulation")
    m.add_argument("--model", help="model directory written by estimate")
    m.add_argument("--data", help="claims CSV the model was estimated from")
    m.add_argument("--config", help="study JSON (SimulationParams fields, optional model/data paths)")
    m.add_argument("--out", required=True, help="results directory")
    m.add_argument("--preset", choices=["paper"], help="10,000 lives, 1,000 replications, 40 deposits")
    m.add_argument("--threads", type=int, default=1)
    m.add_argument("--seed", type=int, help="master seed")
    m.add_argument("--lives", type=int)
    m.add_argument("--replications", type=int)
    m.add_argument("--deposit", help="annual deposit, R$")
    m.add_argument("--cap", help="annual withdrawal cap, R$")
    m.add_argument("--deposits", type=int, help="number of yearly deposits")
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="render tables and plot feeds")
    r.add_argument("--study", help="results directory written by simulate")
    r.add_argument("--data", help="claims CSV for cohort tables")
    r.add_argument("--out", required=True)
    r.add_argument("--real-data", action="store_true", help="do not flag tables as synthetic-calibrated")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, argv)
    except (CliError, ValueError, LookupError, OSError) as exc:
        print(f"hsasim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
