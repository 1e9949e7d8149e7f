"""Run diagnostics: per-fold nuisance fit summaries, counters and failures."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

COUNTERS = ("propensity_clips", "density_floors", "exp_clamps")


@dataclass(frozen=True)
class FoldDiagnostics:
    """Nuisance quality for one cross-fitting fold.

    Losses are in-sample (training split); ``None`` when not applicable.
    """

    fold: int
    n_train: int
    n_eval: int
    propensity_logloss: float | None = None
    pinball_loss: float | None = None
    propensity_clips: int = 0
    density_floors: int = 0
    exp_clamps: int = 0
    rep: int | None = None
    n: int | None = None


@dataclass(frozen=True)
class Failure:
    rep: int
    error: str
    n: int | None = None
    estimator: str | None = None


@dataclass
class RunReport:
    folds: list = field(default_factory=list)
    counters: dict = field(default_factory=lambda: {k: 0 for k in COUNTERS})
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"folds": [dict(f) for f in self.folds], "counters": dict(self.counters),
                "failures": [dict(f) for f in self.failures]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls([dict(f) for f in d.get("folds", [])], dict(d["counters"]),
                   [dict(f) for f in d.get("failures", [])])

    @classmethod
    def from_json(cls, s: str) -> "RunReport":
        return cls.from_dict(json.loads(s))

    @property
    def clean(self) -> bool:
        return not self.failures and all(v == 0 for v in self.counters.values())


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def summarize(fold_diagnostics=(), failures=()) -> RunReport:
    """Aggregate fold summaries and failure records into a :class:`RunReport`.

    Accepts dataclass instances or plain dicts (as produced by
    :meth:`RunReport.to_dict`), so summarizing a report's own content again
    yields the same report.
    """
    folds = []
    counters = {k: 0 for k in COUNTERS}
    for fd in fold_diagnostics:
        d = asdict(fd) if not isinstance(fd, dict) else dict(fd)
        d = {k: _plain(v) for k, v in d.items()}
        for k in COUNTERS:
            if d.get(k, 0) < 0:
                raise ValueError(f"counter {k} must be nonnegative")
            counters[k] += int(d.get(k, 0))
        folds.append(d)
    fails = []
    for f in failures:
        d = asdict(f) if not isinstance(f, dict) else dict(f)
        fails.append({k: _plain(v) for k, v in d.items()})
    return RunReport(folds, counters, fails)


def logloss(a, p) -> float:
    a = np.asarray(a, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(-np.mean(a * np.log(p) + (1.0 - a) * np.log1p(-p)))
