"""Offline ranking metrics and online-style A/B statistics.

Offline: top-1/top-3 accuracy and MRR@3 over held-out completion events,
with per-event ranks emitted for audit. Events whose accepted token could
not be scored count against accuracy (rank None contributes zero) and are
tallied separately.

Online-style: observations are daily-completions-per-user counts, one per
(developer, day); groups are compared with a two-sided Welch unequal-
variance t-test. A synthetic-log driver exists so the whole path can be
exercised without a production user population.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as _scipy_stats

from . import ranker as ranker_mod
from .corpus import CompletionEvent, Dataset
from .encoding import event_context
from .model import TransformerLM
from .vocab import Vocabulary


class EvalError(ValueError):
    pass


@dataclass
class Metrics:
    n: int
    top1: float
    top3: float
    mrr3: float
    unscorable: int = 0

    def __post_init__(self) -> None:
        for name in ("top1", "top3", "mrr3"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise EvalError(f"{name}={v} outside [0,1]")
        if not (self.top1 <= self.mrr3 + 1e-12 and self.mrr3 <= self.top3 + 1e-12):
            raise EvalError("metric ordering violated: need top1 <= mrr3 <= top3")


def mrr_at_k(ranks: list[int | None], k: int = 3) -> float:
    """Mean reciprocal rank, truncated: ranks beyond k (or None) score zero."""
    if not ranks:
        raise EvalError("mrr_at_k needs at least one rank")
    total = 0.0
    for r in ranks:
        if r is not None:
            if r < 1:
                raise EvalError(f"ranks are 1-based, got {r}")
            if r <= k:
                total += 1.0 / r
    return total / len(ranks)


def metrics_from_ranks(ranks: list[int | None], k: int = 3) -> Metrics:
    n = len(ranks)
    if n == 0:
        raise EvalError("no ranks to aggregate")
    top1 = sum(1 for r in ranks if r == 1) / n
    topk = sum(1 for r in ranks if r is not None and r <= k) / n
    return Metrics(n=n, top1=top1, top3=topk, mrr3=mrr_at_k(ranks, k),
                   unscorable=sum(1 for r in ranks if r is None))


def evaluate(lm: TransformerLM, vocabulary: Vocabulary, heldout: Dataset,
             multilingual: bool = False,
             context_window: int | None = None
             ) -> tuple[Metrics, list[tuple[str, int | None]]]:
    """Rank each held-out event's candidates; aggregate and emit audit rows."""
    events = [it for it in heldout.items if isinstance(it, CompletionEvent)]
    if not events:
        raise EvalError("held-out dataset contains no completion events")
    window = context_window or (lm.config.context_len - 2)
    audit: list[tuple[str, int | None]] = []
    for ev in events:
        ctx_ids, vm = event_context(ev, vocabulary, multilingual, window=window)
        tree = ranker_mod.build_tree(ev.candidates, vocabulary, context_var_map=vm)
        ranked = ranker_mod.score_candidates(ctx_ids, tree, lm)
        audit.append((ev.id, ranked.rank_of(ev.accepted)))
    return metrics_from_ranks([r for _, r in audit]), audit


# -- A/B statistics --------------------------------------------------------------


@dataclass(frozen=True)
class ABObservation:
    developer_id: str
    day: str
    completions_accepted: int

    def __post_init__(self) -> None:
        if self.completions_accepted < 0:
            raise EvalError("completion counts are non-negative")


@dataclass
class ABResult:
    mean_control: float
    mean_experiment: float
    std_control: float
    std_experiment: float
    unique_developers: tuple[int, int]
    improvement: float
    p_value: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise EvalError(f"p_value {self.p_value} outside [0,1]")


def _check_group(obs: list[ABObservation], name: str) -> np.ndarray:
    if not obs:
        raise EvalError(f"{name} group is empty")
    seen = set()
    for o in obs:
        key = (o.developer_id, o.day)
        if key in seen:
            raise EvalError(f"{name}: duplicate observation for {key}")
        seen.add(key)
    return np.array([o.completions_accepted for o in obs], dtype=np.float64)


def welch_t_test(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    """(t, df, two-sided p) for unequal-variance means comparison."""
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise EvalError("Welch's test needs at least 2 observations per group")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    se2 = va / na + vb / nb
    diff = b.mean() - a.mean()
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, float(na + nb - 2), 1.0
        return math.inf, float(na + nb - 2), 0.0
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * float(_scipy_stats.t.sf(abs(t), df))
    return float(t), float(df), min(p, 1.0)


def ab_compare(control: list[ABObservation],
               experiment: list[ABObservation]) -> ABResult:
    """Welch-compared group statistics in the production-report format."""
    a = _check_group(control, "control")
    b = _check_group(experiment, "experiment")
    mean_c, mean_e = float(a.mean()), float(b.mean())
    if mean_c == 0.0:
        raise EvalError("control mean is zero; improvement ratio undefined")
    _, _, p = welch_t_test(a, b)
    return ABResult(
        mean_control=mean_c,
        mean_experiment=mean_e,
        std_control=float(a.std(ddof=1)),
        std_experiment=float(b.std(ddof=1)),
        unique_developers=(len({o.developer_id for o in control}),
                           len({o.developer_id for o in experiment})),
        improvement=(mean_e - mean_c) / mean_c,
        p_value=p,
    )


def significance_gate(result: ABResult, level: float = 0.95) -> bool:
    """True when the comparison clears the required significance level."""
    return result.p_value <= (1.0 - level)


def write_observations_jsonl(observations: list[ABObservation], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for o in observations:
            f.write(json.dumps(asdict(o)) + "\n")


def read_observations_jsonl(path) -> list[ABObservation]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(ABObservation(**json.loads(line)))
    return out


def simulate_ab(n_developers: int, n_days: int, base_rate: float,
                uplift: float, seed: int,
                rate_shape: float = 4.0) -> tuple[list[ABObservation], list[ABObservation]]:
    """Synthetic DCPU logs: per-developer gamma-distributed Poisson rates.

    The experiment group's rates are scaled by (1 + uplift). Used to
    exercise the A/B path end to end; the gamma mixing produces the
    overdispersion (std > mean) seen in real usage counts.
    """
    rng = np.random.default_rng(seed)
    out: list[list[ABObservation]] = []
    for group, scale in (("c", 1.0), ("e", 1.0 + uplift)):
        rates = rng.gamma(rate_shape, base_rate * scale / rate_shape,
                          size=n_developers)
        obs = []
        for d in range(n_developers):
            counts = rng.poisson(rates[d], size=n_days)
            for day, c in enumerate(counts):
                obs.append(ABObservation(
                    developer_id=f"{group}-dev-{d:04d}",
                    day=f"day-{day:02d}",
                    completions_accepted=int(c)))
        out.append(obs)
    return out[0], out[1]
