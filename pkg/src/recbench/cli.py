"""
Command-line driver.

Subcommands: ``prepare`` (ingest, filter, split), ``hpo`` (per-round
searches), ``fit`` (fit one round's model), ``evaluate`` (run protocols and
cache per-user outcomes), ``report`` (write tables from cached outcomes),
``rank`` (average ranks across datasets) and ``run`` (evaluate + report).

Intermediate files live under ``$RECBENCH_CACHE`` (default
``~/.cache/recbench``); raw data under ``$RECBENCH_DATA`` (default
``./data``) unless the config says otherwise.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import pickle
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__, hpo
from .config import ConfigError, ExperimentConfig, load_config
from .data import (
    DATASETS,
    FoldPlan,
    Interactions,
    load_dataset,
    load_snapshot,
    make_folds,
    read_item_tags,
    save_snapshot,
    snapshot_key,
)
from .metrics import MetricReport
from .models import MODELS, Recommender
from .protocols import (
    LOO,
    RERANK,
    STRONG_GEN,
    ModelSpec,
    UserOutcomes,
    all_holdouts,
    diversity_reports,
    evaluate_subgroups,
    fit_round,
    rerank_reports,
    round_data,
    run_loo_memorization,
    run_rerank_memorization,
    subgroup_partitions,
    tune_and_evaluate,
)
from .report import (
    aggregate_ranks,
    config_hash,
    load_outcomes,
    ranks_to_csv,
    ranks_to_markdown,
    read_reports_csv,
    save_outcomes,
    write_manifest,
    write_tables,
)
from .semantics import build_semantic_space, sci

_log = logging.getLogger("recbench")

MODEL_MAGIC = b"recbench-model v1\n"


def cache_root() -> Path:
    return Path(os.environ.get("RECBENCH_CACHE", Path.home() / ".cache" / "recbench"))


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


@dataclass
class Prepared:
    name: str
    x: Interactions
    plan: FoldPlan
    digest: str


class Workspace:
    """
    Cache-backed experiment state for one configuration.  Every cached
    artifact is keyed by the data digest, model configuration and seeds,
    so a hit is only possible on an exact match.
    """

    def __init__(self, cfg: ExperimentConfig, cache: Path | None = None):
        self.cfg = cfg
        self.cache = Path(cache) if cache is not None else cache_root()
        self._prepared: dict[str, Prepared] = {}

    # -- data
    def dataset_config(self, name):
        dc = DATASETS[name]
        over = {}
        if self.cfg.h is not None:
            over["h"] = self.cfg.h
        if self.cfg.threshold is not None:
            over["threshold"] = self.cfg.threshold
        return dc.with_overrides(**over) if over else dc

    def prepare(self, name: str) -> Prepared:
        if name in self._prepared:
            return self._prepared[name]
        dc = self.dataset_config(name)
        raw = self.cfg.resolved_data_dir() / dc.filename
        if not raw.exists():
            raise FileNotFoundError(f"{name}: raw data not found at {raw}")
        raw_digest = _file_digest(raw)
        key = snapshot_key(name, dc.h, dc.threshold, self.cfg.seed, self.cfg.folds)
        path = self.cache / "snapshots" / f"{key}-{raw_digest}.npz"
        if path.exists():
            x, plan, _ = load_snapshot(path)
        else:
            x = load_dataset(dc, self.cfg.resolved_data_dir())
            plan = make_folds(x, self.cfg.folds, self.cfg.seed)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_snapshot(path, x, plan, {"raw_digest": raw_digest, "dataset": name})
        prep = Prepared(name, x, plan, x.digest())
        self._prepared[name] = prep
        return prep

    # -- keys
    def space(self, model: str, prep: Prepared) -> hpo.SearchSpace:
        pinned = self.cfg.models.get(model, {})
        space = hpo.default_space(model, prep.x.n_items, int(len(prep.plan.split(0)[0])))
        space.domains = {k: v for k, v in space.domains.items() if k not in pinned}
        space.fixed = dict(pinned)
        return space

    def run_key(self, model: str, prep: Prepared, protocol: str) -> str:
        return config_hash({
            "data": prep.digest, "model": model, "pinned": self.cfg.models.get(model, {}),
            "protocol": protocol, "seed": self.cfg.seed, "folds": self.cfg.folds,
            "trials": self.cfg.trials, "strategy": self.cfg.strategy, "shared": self.cfg.shared,
            "loo_mask": self.cfg.loo_mask if protocol == LOO else None,
            "space": self.space(model, prep).describe(),
        })

    def _run_path(self, model, prep, protocol) -> Path:
        return self.cache / "runs" / f"{prep.name}-{model}-{protocol}-{self.run_key(model, prep, protocol)}.npz"

    # -- protocols
    def strong_gen(self, model: str, prep: Prepared) -> UserOutcomes:
        path = self._run_path(model, prep, STRONG_GEN)
        if path.exists():
            return load_outcomes(path)
        key = self.run_key(model, prep, STRONG_GEN)
        run = tune_and_evaluate(
            model, prep.x, prep.plan, dataset=prep.name, seed=self.cfg.seed,
            n_trials=self.cfg.trials, strategy=self.cfg.strategy, shared=self.cfg.shared,
            log_dir=self.cache / "trials" / key, space=self.space(model, prep),
        )
        save_outcomes(path, run.outcomes)
        return run.outcomes

    def tuned_params(self, model: str, prep: Prepared, round_: int = 0) -> dict:
        cfgs = self.strong_gen(model, prep).configs
        return dict(cfgs.get(round_, cfgs.get(str(round_))))

    def memorization(self, model: str, prep: Prepared, protocol: str) -> UserOutcomes:
        path = self._run_path(model, prep, protocol)
        if path.exists():
            return load_outcomes(path)
        spec = ModelSpec(model, self.tuned_params(model, prep))
        if protocol == LOO:
            out = run_loo_memorization(spec, prep.x, prep.plan, seed=self.cfg.seed,
                                       dataset=prep.name, loo_mask=self.cfg.loo_mask)
        else:
            out = run_rerank_memorization(spec, prep.x, prep.plan, dataset=prep.name)
        save_outcomes(path, out)
        return out

    def fitted(self, model: str, prep: Prepared, round_: int = 0) -> Recommender:
        params = self.tuned_params(model, prep, round_)
        key = config_hash({"data": prep.digest, "model": model, "params": params,
                           "round": round_, "seed": self.cfg.seed, "folds": self.cfg.folds})
        path = self.cache / "models" / f"{prep.name}-{model}-round{round_}-{key}.pkl"
        if path.exists():
            return load_model(path)
        data = round_data(prep.x, prep.plan, round_, all_holdouts(prep.x, self.cfg.seed))
        m = fit_round(ModelSpec(model, params), data)
        save_model(path, m)
        return m

    def sci_report(self, model: str, prep: Prepared) -> MetricReport:
        tags = read_item_tags(prep.name, self.cfg.resolved_data_dir())
        space = build_semantic_space(tags, prep.x.item_ids)
        res = sci(self.fitted(model, prep, 0), space)
        return MetricReport(model, prep.name, "sci", "SCI", res.value, 0.0, (), res.n_items)

    def reports(self, model: str, prep: Prepared, protocol: str) -> list[MetricReport]:
        if protocol == STRONG_GEN:
            return self.strong_gen(model, prep).reports()
        if protocol == "diversity":
            return diversity_reports(self.strong_gen(model, prep), prep.x.n_items)
        if protocol == "subgroups":
            parts = subgroup_partitions(prep.x, prep.plan, seed=self.cfg.seed)
            return evaluate_subgroups(self.strong_gen(model, prep), parts)
        if protocol == LOO:
            return self.memorization(model, prep, LOO).reports()
        if protocol == RERANK:
            return rerank_reports(self.memorization(model, prep, RERANK))
        if protocol == "sci":
            return [self.sci_report(model, prep)]
        raise ValueError(f"unknown protocol {protocol!r}")

    def manifest_entry(self, model, prep, protocol) -> dict:
        entry = {"dataset": prep.name, "data_digest": prep.digest, "model": model,
                 "protocol": protocol, "seed": self.cfg.seed,
                 "search_space": self.space(model, prep).describe()}
        sg = self._run_path(model, prep, STRONG_GEN)
        if sg.exists():
            entry["configs"] = load_outcomes(sg).configs
        return entry


def save_model(path: Path, model: Recommender):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as f:
        f.write(MODEL_MAGIC)
        pickle.dump(model, f, protocol=pickle.HIGHEST_PROTOCOL)
    tmp.replace(path)


def load_model(path: Path) -> Recommender:
    with open(path, "rb") as f:
        if f.readline() != MODEL_MAGIC:
            raise ValueError(f"{path}: not a saved model")
        return pickle.load(f)


def _strong_gen_job(args):
    cfg, cache, dataset, model = args
    ws = Workspace(cfg, cache)
    ws.strong_gen(model, ws.prepare(dataset))
    return dataset, model


def evaluate(cfg: ExperimentConfig, cache: Path | None = None, jobs: int = 1) -> tuple[list[MetricReport], list[dict]]:
    ws = Workspace(cfg, cache)
    for d in cfg.datasets:
        ws.prepare(d)
    pairs = [(d, m) for d in cfg.datasets for m in cfg.models]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            for d, m in pool.map(_strong_gen_job, [(cfg, ws.cache, d, m) for d, m in pairs]):
                _log.info("finished %s on %s", m, d)
    reports, entries = [], []
    for d, m in pairs:
        prep = ws.prepare(d)
        for p in cfg.protocols:
            _log.info("%s / %s / %s", d, m, p)
            reports += ws.reports(m, prep, p)
            entries.append(ws.manifest_entry(m, prep, p))
    return reports, entries


def _models_arg(text: str) -> list[str]:
    if text == "all":
        return list(MODELS)
    return [t.strip().lower() for t in text.split(",") if t.strip()]


def _build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "dataset", None):
        cfg.datasets = [t.strip() for t in args.dataset.split(",")]
    if getattr(args, "models", None):
        pinned = cfg.models
        cfg.models = {m: pinned.get(m, {}) for m in _models_arg(args.models)}
    if not cfg.models:
        cfg.models = {m: {} for m in MODELS}
    if getattr(args, "protocol", None):
        cfg.protocols = [t.strip() for t in args.protocol.split(",")]
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "folds", None) is not None:
        cfg.folds = args.folds
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    if getattr(args, "strategy", None):
        cfg.strategy = args.strategy
    if getattr(args, "data_dir", None):
        cfg.data_dir = args.data_dir
    return cfg.validate()


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recbench", description="Top-n recommender benchmark")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, models=True, protocol=False):
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--dataset", help="dataset name(s), comma separated")
        if models:
            sp.add_argument("--models", help="model names, comma separated, or 'all'")
        if protocol:
            sp.add_argument("--protocol", help="protocol name(s), comma separated")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--folds", type=int)
        sp.add_argument("--data-dir")
        sp.add_argument("--out-dir", default="results")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--trials", type=int, help="search trials per round")
        sp.add_argument("--strategy", choices=sorted(hpo.STRATEGIES))

    common(sub.add_parser("prepare", help="ingest, filter and split datasets"), models=False)
    common(sub.add_parser("hpo", help="run hyper-parameter searches"))
    sp = sub.add_parser("fit", help="fit one round's model with its tuned config")
    common(sp)
    sp.add_argument("--round", type=int, default=0)
    common(sub.add_parser("evaluate", help="run protocols, cache outcomes"), protocol=True)
    common(sub.add_parser("report", help="write tables from cached outcomes"), protocol=True)
    common(sub.add_parser("run", help="evaluate and report"), protocol=True)
    sp = sub.add_parser("rank", help="average per-dataset ranks from metric CSVs")
    sp.add_argument("csv", nargs="+", help="metric CSV files")
    sp.add_argument("--metric", default="HR@50")
    sp.add_argument("--protocol", default=None)
    sp.add_argument("--out-dir", default="results")
    return p


def _cmd_prepare(cfg, args):
    ws = Workspace(cfg)
    for d in cfg.datasets:
        prep = ws.prepare(d)
        sizes = ",".join(str(s) for s in prep.plan.fold_sizes())
        print(f"{d}\tusers={prep.x.n_users}\titems={prep.x.n_items}\t"
              f"interactions={prep.x.nnz}\tfolds={sizes}\tdigest={prep.digest}")


def _cmd_hpo(cfg, args):
    ws = Workspace(cfg)
    for d in cfg.datasets:
        prep = ws.prepare(d)
        for m in cfg.models:
            out = ws.strong_gen(m, prep)
            for r, c in sorted(out.configs.items()):
                print(f"{d}\t{m}\tround{r}\t{json.dumps(c, sort_keys=True)}")


def _cmd_fit(cfg, args):
    ws = Workspace(cfg)
    for d in cfg.datasets:
        prep = ws.prepare(d)
        for m in cfg.models:
            model = ws.fitted(m, prep, args.round)
            print(f"{d}\t{m}\tround{args.round}\t{model!r}")


def _write(reports, entries, cfg, out_dir: Path):
    paths = write_tables(reports, out_dir)
    write_manifest(out_dir / "manifest.json", config=cfg.as_dict(), entries=entries,
                   version=__version__)
    for p in paths:
        print(p)


def _cmd_evaluate(cfg, args):
    reports, entries = evaluate(cfg, jobs=args.jobs)
    _write(reports, entries, cfg, Path(args.out_dir))


def _cmd_rank(args):
    reports = []
    for path in args.csv:
        reports += read_reports_csv(path)
    datasets, rows = aggregate_ranks(reports, args.metric, args.protocol)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"ranks-{args.metric.replace('@', '')}"
    stem.with_suffix(".csv").write_text(ranks_to_csv(datasets, rows))
    md = ranks_to_markdown(datasets, rows, args.metric)
    stem.with_suffix(".md").write_text(md)
    print(md, end="")


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "rank":
        try:
            _cmd_rank(args)
        except (ValueError, FileNotFoundError) as e:
            parser.error(str(e))
        return 0
    try:
        cfg = _build_config(args)
    except (ConfigError, FileNotFoundError) as e:
        parser.error(str(e))
    handlers = {
        "prepare": _cmd_prepare,
        "hpo": _cmd_hpo,
        "fit": _cmd_fit,
        "evaluate": _cmd_evaluate,
        "report": _cmd_evaluate,
        "run": _cmd_evaluate,
    }
    try:
        handlers[args.command](cfg, args)
    except FileNotFoundError as e:
        print(f"recbench: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
