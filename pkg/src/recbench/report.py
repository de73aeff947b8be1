"""
Result persistence and tables: per-user outcome files, metric CSVs,
aligned markdown tables, run manifests and cross-dataset rank
aggregation.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from collections import defaultdict
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .metrics import HIGHER_IS_BETTER, MetricReport
from .models import DISPLAY_NAMES
from .protocols import UserOutcomes

OUTCOME_MAGIC = "recbench-outcomes"
OUTCOME_VERSION = 1
CSV_HEADER = "# recbench-metrics v1"
MANIFEST_FORMAT = "recbench-manifest"
MANIFEST_VERSION = 1


def save_outcomes(path: str | Path, out: UserOutcomes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = dict(
        magic=np.array(OUTCOME_MAGIC),
        version=np.array(OUTCOME_VERSION),
        meta=np.array(json.dumps(
            {"model": out.model, "dataset": out.dataset, "protocol": out.protocol,
             "n_folds": out.n_folds, "configs": {str(k): v for k, v in out.configs.items()}},
            sort_keys=True,
        )),
        users=out.users, folds=out.folds, ranks=out.ranks, value=out.value,
    )
    if out.top_lists is not None:
        arrays["top_lists"] = out.top_lists
    tmp = path.with_suffix(".tmp.npz")
    np.savez_compressed(tmp, **arrays)
    tmp.replace(path)


def load_outcomes(path: str | Path) -> UserOutcomes:
    with np.load(path, allow_pickle=False) as z:
        if str(z["magic"]) != OUTCOME_MAGIC:
            raise ValueError(f"{path}: not an outcome file")
        if int(z["version"]) != OUTCOME_VERSION:
            raise ValueError(f"{path}: unsupported outcome version {int(z['version'])}")
        meta = json.loads(str(z["meta"]))
        tops = z["top_lists"] if "top_lists" in z.files else None
        return UserOutcomes(
            meta["model"], meta["dataset"], meta["protocol"], z["users"], z["folds"],
            z["ranks"], z["value"], meta["n_folds"], tops, meta["configs"],
        )


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def reports_to_csv(reports: list[MetricReport]) -> str:
    "CSV text with a version comment line; deterministic for identical input."
    n_folds = max((len(r.per_fold) for r in reports), default=0)
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "dataset", "protocol", "metric", "value", "ci95", "n_users"]
               + [f"fold{f}" for f in range(n_folds)])
    for r in reports:
        folds = [_fmt(v) for v in r.per_fold] + [""] * (n_folds - len(r.per_fold))
        w.writerow([r.model, r.dataset, r.protocol, r.metric, _fmt(r.value), _fmt(r.ci95),
                    r.n_users] + folds)
    return buf.getvalue()


def read_reports_csv(path: str | Path) -> list[MetricReport]:
    with open(path, newline="") as f:
        first = f.readline().strip()
        if first != CSV_HEADER:
            raise ValueError(f"{path}: not a metrics CSV")
        out = []
        for row in csv.DictReader(f):
            folds = tuple(float(row[k]) for k in row if k.startswith("fold") and row[k] != "")
            out.append(MetricReport(row["model"], row["dataset"], row["protocol"], row["metric"],
                                    float(row["value"]), float(row["ci95"]), folds,
                                    int(row["n_users"])))
    return out


def _aligned(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]

    def line(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(header), sep, *(line(r) for r in rows)]) + "\n"


def reports_to_markdown(reports: list[MetricReport]) -> str:
    """
    One table per (dataset, protocol): a row per model, a column per
    metric showing ``value ± ci95``.
    """
    groups: dict[tuple, list[MetricReport]] = defaultdict(list)
    for r in reports:
        groups[(r.dataset, r.protocol)].append(r)
    parts = []
    for (dataset, protocol), rs in groups.items():
        metrics = list(dict.fromkeys(r.metric for r in rs))
        models = list(dict.fromkeys(r.model for r in rs))
        cell = {(r.model, r.metric): r for r in rs}
        rows = []
        for m in models:
            row = [DISPLAY_NAMES.get(m, m)]
            for met in metrics:
                r = cell.get((m, met))
                if r is None:
                    row.append("")
                elif r.ci95 > 0:
                    row.append(f"{r.value:.3f} ± {r.ci95:.3f}")
                else:
                    row.append(f"{r.value:.3f}")
            rows.append(row)
        parts.append(f"### {dataset} / {protocol}\n\n" + _aligned(["Model", *metrics], rows))
    return "\n".join(parts)


def write_tables(reports: list[MetricReport], out_dir: str | Path) -> list[Path]:
    "Write one CSV and one markdown file per (protocol, dataset)."
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple, list[MetricReport]] = defaultdict(list)
    for r in reports:
        proto = r.protocol.split(":")[0]
        groups[(proto, r.dataset)].append(r)
    written = []
    for (proto, dataset), rs in sorted(groups.items()):
        stem = out_dir / f"{proto}-{dataset}"
        stem.with_suffix(".csv").write_text(reports_to_csv(rs))
        stem.with_suffix(".md").write_text(reports_to_markdown(rs))
        written += [stem.with_suffix(".csv"), stem.with_suffix(".md")]
    return written


def aggregate_ranks(reports: list[MetricReport], metric: str, protocol: str | None = None):
    """
    Rank models within each dataset on ``metric`` (1 = best, tied values
    share the mean of their positions) and average the ranks over
    datasets.  Returns ``(datasets, rows)`` with rows
    ``(model, [rank per dataset], mean rank)`` sorted by mean rank.
    """
    if metric not in HIGHER_IS_BETTER:
        raise ValueError(f"no ranking direction for {metric!r}")
    sign = -1.0 if HIGHER_IS_BETTER[metric] else 1.0
    by_ds: dict[str, dict[str, float]] = defaultdict(dict)
    for r in reports:
        if r.metric == metric and (protocol is None or r.protocol == protocol):
            by_ds[r.dataset][r.model] = r.value
    if not by_ds:
        raise ValueError(f"no {metric} reports")
    datasets = sorted(by_ds)
    models = sorted(set().union(*(d.keys() for d in by_ds.values())))
    ranks: dict[str, list[float]] = {m: [] for m in models}
    for ds in datasets:
        vals = by_ds[ds]
        names = sorted(vals)
        rk = rankdata([sign * vals[m] for m in names], method="average")
        got = dict(zip(names, rk))
        for m in models:
            ranks[m].append(float(got[m]) if m in got else float("nan"))
    rows = [(m, ranks[m], float(np.nanmean(ranks[m]))) for m in models]
    rows.sort(key=lambda t: (t[2], t[0]))
    return datasets, rows


def ranks_to_markdown(datasets, rows, metric: str) -> str:
    header = ["Model", *datasets, f"Avg rank ({metric})"]
    body = [[DISPLAY_NAMES.get(m, m), *(f"{v:g}" for v in rk), f"{avg:.2f}"] for m, rk, avg in rows]
    return _aligned(header, body)


def ranks_to_csv(datasets, rows) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER.replace("metrics", "ranks") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", *datasets, "mean_rank"])
    for m, rk, avg in rows:
        w.writerow([m, *(f"{v:g}" for v in rk), f"{avg:.6f}"])
    return buf.getvalue()


def config_hash(obj) -> str:
    raw = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def write_manifest(path: str | Path, *, config: dict, entries: list[dict], version: str):
    "Record what produced a set of outputs: config, code version and per-run keys."
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "code_version": version,
        "config_hash": config_hash(config),
        "config": config,
        "runs": entries,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
