"""
Hyper-parameter search: seeded random search and a Tree-structured Parzen
Estimator style sampler, with an append-only JSON-lines trial log that
lets an interrupted search resume or be replayed.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

_log = logging.getLogger(__name__)

TRIAL_LOG_FORMAT = "recbench-trials"
TRIAL_LOG_VERSION = 1


class Domain:
    "One hyper-parameter's domain."

    def sample(self, rng: np.random.Generator):
        raise NotImplementedError

    def to_unit(self, value) -> float:
        raise NotImplementedError

    def from_unit(self, u: float):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": type(self).__name__, **asdict(self)}


@dataclass(frozen=True)
class Uniform(Domain):
    low: float
    high: float

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high) and self.low < self.high):
            raise ValueError(f"bad bounds {self.low}, {self.high}")

    def sample(self, rng):
        return self.from_unit(rng.random())

    def to_unit(self, value):
        return (float(value) - self.low) / (self.high - self.low)

    def from_unit(self, u):
        return float(self.low + min(max(u, 0.0), 1.0) * (self.high - self.low))


@dataclass(frozen=True)
class LogUniform(Domain):
    low: float
    high: float

    def __post_init__(self):
        if not (0 < self.low < self.high and math.isfinite(self.high)):
            raise ValueError(f"bad bounds {self.low}, {self.high}")

    def sample(self, rng):
        return self.from_unit(rng.random())

    def to_unit(self, value):
        return (math.log(value) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))

    def from_unit(self, u):
        lo, hi = math.log(self.low), math.log(self.high)
        return float(math.exp(lo + min(max(u, 0.0), 1.0) * (hi - lo)))


@dataclass(frozen=True)
class IntRange(Domain):
    "Integers in ``[low, high]``, optionally sampled log-uniformly."

    low: int
    high: int
    log: bool = False

    def __post_init__(self):
        if not self.low <= self.high or (self.log and self.low < 1):
            raise ValueError(f"bad bounds {self.low}, {self.high}")

    def _inner(self):
        if self.log:
            return LogUniform(self.low - 0.5 if self.low > 1 else 0.5, self.high + 0.5)
        return Uniform(self.low - 0.5, self.high + 0.5)

    def sample(self, rng):
        return self.from_unit(rng.random())

    def to_unit(self, value):
        return self._inner().to_unit(value)

    def from_unit(self, u):
        return int(min(max(round(self._inner().from_unit(u)), self.low), self.high))


@dataclass(frozen=True)
class Categorical(Domain):
    choices: tuple

    def __post_init__(self):
        if not self.choices:
            raise ValueError("empty choice set")

    def sample(self, rng):
        return self.choices[int(rng.integers(len(self.choices)))]


@dataclass
class SearchSpace:
    model: str
    domains: dict[str, Domain] = field(default_factory=dict)
    #: fixed parameters passed to every trial
    fixed: dict[str, Any] = field(default_factory=dict)

    def sample(self, rng) -> dict:
        cfg = {name: dom.sample(rng) for name, dom in self.domains.items()}
        return {**self.fixed, **cfg}

    def describe(self) -> dict:
        return {
            "model": self.model,
            "domains": {k: d.describe() for k, d in self.domains.items()},
            "fixed": self.fixed,
        }


@dataclass
class Trial:
    number: int
    config: dict
    objective: float | None
    seed: int
    fold: int | None = None
    wall_time: float = 0.0
    timestamp: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.objective is not None


@dataclass
class SearchResult:
    best: Trial
    history: list[Trial]
    space: SearchSpace

    @property
    def errors(self) -> list[Trial]:
        return [t for t in self.history if not t.ok]


class SearchFailed(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


def _kde_logpdf(points, centers, bandwidth):
    "Log density of a Gaussian mixture in unit space plus a uniform prior component."
    if len(centers) == 0:
        return np.zeros(len(points))
    z = (points[:, None] - centers[None, :]) / bandwidth
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (bandwidth * math.sqrt(2 * math.pi))
    dens = (dens + 1.0) / (len(centers) + 1)
    return np.log(dens)


class TPESampler:
    """
    Random sampling for the first ``n_startup`` trials, then per-parameter
    Parzen estimators: finished trials are split into the top ``gamma``
    fraction ("good") and the rest, ``n_candidates`` points are drawn from
    the good density and the one maximizing ``l(x) / g(x)`` is proposed.
    """

    def __init__(self, n_startup=15, gamma=0.25, n_candidates=24):
        self.n_startup = n_startup
        self.gamma = gamma
        self.n_candidates = n_candidates

    def propose(self, space: SearchSpace, history: list[Trial], rng) -> dict:
        done = [t for t in history if t.ok]
        if len(done) < self.n_startup:
            return space.sample(rng)
        done.sort(key=lambda t: (-t.objective, t.number))
        n_good = max(1, int(math.ceil(self.gamma * len(done))))
        good, bad = done[:n_good], done[n_good:]
        cfg = dict(space.fixed)
        for name, dom in space.domains.items():
            gv = [t.config[name] for t in good]
            bv = [t.config[name] for t in bad]
            if isinstance(dom, Categorical):
                cfg[name] = self._categorical(dom, gv, bv, rng)
            else:
                cfg[name] = self._numeric(dom, gv, bv, rng)
        return cfg

    @staticmethod
    def _bandwidth(n: int) -> float:
        # shrinks with the sample count; data-driven rules collapse onto
        # a few clustered good points and stop exploring
        return max(0.5 / math.sqrt(n + 1), 0.02)

    def _numeric(self, dom, good, bad, rng):
        g = np.array([dom.to_unit(v) for v in good])
        b = np.array([dom.to_unit(v) for v in bad])
        bw_g, bw_b = self._bandwidth(len(g)), self._bandwidth(len(b))
        centers = g[rng.integers(len(g), size=self.n_candidates)]
        cand = np.clip(centers + bw_g * rng.standard_normal(self.n_candidates), 0.0, 1.0)
        # the prior component of l(x) proposes uniform candidates too
        prior = rng.random(self.n_candidates) < 1.0 / (len(g) + 1)
        cand[prior] = rng.random(int(prior.sum()))
        score = _kde_logpdf(cand, g, bw_g) - _kde_logpdf(cand, b, bw_b)
        return dom.from_unit(float(cand[int(np.argmax(score))]))

    def _categorical(self, dom, good, bad, rng):
        k = len(dom.choices)
        pg = np.array([1.0 + sum(v == c for v in good) for c in dom.choices]) / (k + len(good))
        pb = np.array([1.0 + sum(v == c for v in bad) for c in dom.choices]) / (k + len(bad))
        draws = rng.choice(k, size=self.n_candidates, p=pg)
        best = draws[int(np.argmax(np.log(pg[draws]) - np.log(pb[draws])))]
        return dom.choices[int(best)]


class RandomSampler:
    def propose(self, space, history, rng):
        return space.sample(rng)


STRATEGIES = {"random": RandomSampler, "tpe": TPESampler}


def _jsonable(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out


class TrialLog:
    "Append-only JSON-lines trial log with a versioned header line."

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def read(self) -> list[Trial]:
        if not self.path.exists():
            return []
        with self.path.open() as f:
            lines = [json.loads(line) for line in f if line.strip()]
        if not lines:
            return []
        head = lines[0]
        if head.get("format") != TRIAL_LOG_FORMAT or head.get("version") != TRIAL_LOG_VERSION:
            raise ValueError(f"{self.path}: not a version {TRIAL_LOG_VERSION} trial log")
        return [Trial(**rec) for rec in lines[1:]]

    def start(self, space: SearchSpace, strategy: str, seed: int):
        if self.path.exists() and self.path.stat().st_size > 0:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        head = {
            "format": TRIAL_LOG_FORMAT,
            "version": TRIAL_LOG_VERSION,
            "strategy": strategy,
            "seed": seed,
            "space": space.describe(),
        }
        with self.path.open("w") as f:
            f.write(json.dumps(head, sort_keys=True) + "\n")

    def append(self, trial: Trial):
        with self.path.open("a") as f:
            f.write(json.dumps(asdict(trial), sort_keys=True) + "\n")


def _pick_best(history: list[Trial]) -> Trial:
    done = [t for t in history if t.ok]
    # earliest trial wins ties, so replaying a log yields the same config
    return max(done, key=lambda t: (t.objective, -t.number))


def search(
    space: SearchSpace,
    objective: Callable[[dict], float],
    n_trials: int = 50,
    strategy: str = "random",
    seed: int = 0,
    *,
    fold: int | None = None,
    log_path: str | Path | None = None,
    sampler=None,
) -> SearchResult:
    """
    Maximize ``objective`` over ``space``.

    Proposals are drawn from a generator seeded with ``seed``, so a search
    is deterministic given ``(seed, strategy)`` and a deterministic
    objective.  With ``log_path`` every trial is appended to a JSON-lines
    log; trials already present in the log are reused instead of
    re-evaluated.  An empty space runs a single trial.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if sampler is None:
        try:
            sampler = STRATEGIES[strategy]()
        except KeyError:
            raise ValueError(f"unknown strategy {strategy!r}") from None
    if not space.domains:
        n_trials = 1
    log = TrialLog(log_path) if log_path is not None else None
    previous = {t.number: t for t in log.read()} if log else {}
    if log:
        log.start(space, strategy, seed)

    rng = np.random.default_rng(seed)
    history: list[Trial] = []
    for number in range(n_trials):
        cfg = _jsonable(sampler.propose(space, history, rng))
        old = previous.get(number)
        if old is not None and old.config == cfg:
            history.append(old)
            continue
        start = time.perf_counter()
        trial = Trial(number, cfg, None, seed, fold, timestamp=time.time())
        try:
            value = float(objective(dict(cfg)))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"objective {value} outside [0, 1]")
            trial.objective = value
        except Exception as e:  # noqa: BLE001 - a failed trial is logged, not fatal
            trial.error = f"{type(e).__name__}: {e}"
            _log.warning("trial %d failed: %s", number, trial.error)
        trial.wall_time = time.perf_counter() - start
        history.append(trial)
        if log:
            log.append(trial)

    if not any(t.ok for t in history):
        lines = "\n".join(f"  #{t.number} {t.config}: {t.error}" for t in history)
        raise SearchFailed(f"every trial failed:\n{lines}", history)
    return SearchResult(_pick_best(history), history, space)


def replay(log_path: str | Path) -> Trial:
    "Best trial recorded in a trial log."
    history = TrialLog(log_path).read()
    if not any(t.ok for t in history):
        raise ValueError(f"{log_path}: no successful trials")
    return _pick_best(history)


def default_space(model: str, n_items: int, n_users: int) -> SearchSpace:
    """
    Search space shipped for each model.  Integer upper bounds are capped
    by the data shape.
    """
    cap_items = max(2, n_items - 1)
    cap_rank = max(2, min(n_items, n_users) - 1)
    k_hi = min(1000, cap_items)
    u_hi = min(1000, max(5, n_users - 1))
    spaces = {
        "random": {},
        "popularity": {},
        "itemknn": {
            "k": IntRange(min(5, k_hi), k_hi, log=True),
            "shrinkage": Uniform(0.0, 1000.0),
            "normalize": Categorical((False, True)),
            "neighbors": Categorical(("history", "candidate")),
        },
        "userknn": {
            "k": IntRange(min(5, u_hi), u_hi, log=True),
            "shrinkage": Uniform(0.0, 1000.0),
        },
        "puresvd": {"rank": IntRange(1, min(500, cap_rank), log=True)},
        "als": {
            "rank": IntRange(min(8, cap_rank), min(128, cap_rank), log=True),
            "reg": LogUniform(1e-2, 1e3),
            "alpha": LogUniform(1e-1, 1e2),
        },
        "ease": {"reg": LogUniform(1.0, 1e4)},
        "slim": {"l1": LogUniform(1e-3, 1e2), "l2": LogUniform(1e-2, 1e3)},
        "p3alpha": {
            "alpha": Uniform(0.1, 2.0),
            "topk": IntRange(min(5, k_hi), k_hi, log=True),
            "neighbors": Categorical(("history", "candidate")),
        },
        "rp3beta": {
            "alpha": Uniform(0.1, 2.0),
            "beta": Uniform(0.0, 1.0),
            "topk": IntRange(min(5, k_hi), k_hi, log=True),
            "neighbors": Categorical(("history", "candidate")),
        },
        "gfcf": {
            "filter_alpha": Uniform(0.0, 1.0),
            "rank": IntRange(min(8, cap_rank), min(512, cap_rank), log=True),
        },
        "multidae": {
            "lr": LogUniform(1e-4, 1e-2),
            "dropout": Uniform(0.0, 0.8),
            "weight_decay": LogUniform(1e-6, 1e-1),
        },
        "multivae": {
            "lr": LogUniform(1e-4, 1e-2),
            "dropout": Uniform(0.0, 0.8),
            "beta_cap": Uniform(0.0, 1.0),
            "anneal_steps": IntRange(10, 5000, log=True),
        },
    }
    if model not in spaces:
        raise ValueError(f"no search space for {model!r}")
    return SearchSpace(model, dict(spaces[model]))
