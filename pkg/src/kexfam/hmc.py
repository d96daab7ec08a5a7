"""Surrogate HMC: leapfrog dynamics driven by a learned score, judged by the
Metropolis acceptance the true target would assign to each point of the
trajectory."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class HmcConfig:
    num_steps: int = 100
    step_size: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_steps < 0:
            raise ValueError("num_steps must be >= 0")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")


@dataclass
class TrajectoryReport:
    states: list
    momenta: list
    per_step_acceptance: list
    mean_acceptance: float
    truncated: bool = False


class TargetError(ValueError):
    pass


def _score_fn(score):
    if hasattr(score, "score"):
        return score.score
    return score


def leapfrog(score, x0, p0, step_size, num_steps):
    """Integrate dx/dt = p, dp/dt = score(x); returns (positions, momenta, truncated).

    Positions and momenta include the initial state.  Integration stops early
    if the score becomes non-finite.
    """
    score = _score_fn(score)
    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    xs, ps = [x.copy()], [p.copy()]
    g = np.asarray(score(x), dtype=float)
    for _ in range(num_steps):
        if not np.all(np.isfinite(g)):
            return xs, ps, True
        p = p + 0.5 * step_size * g
        x = x + step_size * p
        g = np.asarray(score(x), dtype=float)
        if not np.all(np.isfinite(g)):
            return xs, ps, True
        p = p + 0.5 * step_size * g
        xs.append(x.copy())
        ps.append(p.copy())
    return xs, ps, False


def initial_momentum(cfg: HmcConfig, d: int, rng=None) -> np.ndarray:
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(cfg.seed))
    return rng.standard_normal(d)


def surrogate_trajectory(score, x0, cfg: HmcConfig, rng=None):
    """Leapfrog trajectory from x0 with momentum ~ N(0, I); list of (x, p) pairs."""
    x0 = np.asarray(x0, dtype=float)
    p0 = initial_momentum(cfg, x0.size, rng)
    xs, ps, _ = leapfrog(score, x0, p0, cfg.step_size, cfg.num_steps)
    return list(zip(xs, ps))


def acceptance_profile(score, target_logp, x0, cfg: HmcConfig, rng=None) -> TrajectoryReport:
    """Per-step acceptance min(1, exp(H(x0, p0) - H(x_t, p_t))) with H = -log p + |p|^2 / 2."""
    x0 = np.asarray(x0, dtype=float)
    p0 = initial_momentum(cfg, x0.size, rng)
    xs, ps, truncated = leapfrog(score, x0, p0, cfg.step_size, cfg.num_steps)

    def energy(x, p):
        lp = float(target_logp(x))
        if not np.isfinite(lp):
            raise TargetError(f"target log-density is not finite at {np.asarray(x).tolist()}")
        return -lp + 0.5 * float(p @ p)

    h0 = energy(xs[0], ps[0])
    acc = [float(min(1.0, np.exp(min(0.0, h0 - energy(x, p))))) for x, p in zip(xs[1:], ps[1:])]
    mean = float(np.mean(acc)) if acc else 1.0
    return TrajectoryReport(xs, ps, acc, mean, truncated)


def run_seed(seed, repetition, start_index):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, repetition, start_index])))


@dataclass
class AcceptanceRow:
    model_id: str
    mean_acceptance: float
    q05: float
    q95: float
    n_runs: int
    status: str = "ok"
    runs: list = field(default_factory=list, repr=False)


def acceptance_experiment(models, target_logp, starts, cfg: HmcConfig, repetitions=1, model_ids=None):
    """Mean and 5%/95% quantiles of trajectory-mean acceptance per model.

    Every (repetition, start) pair uses the same momentum stream for every
    model, so identical models produce identical rows.
    """
    if not models or not len(starts) or repetitions < 1:
        raise ValueError("need at least one model, one start and one repetition")
    ids = model_ids or [str(i) for i in range(len(models))]
    rows = []
    for mid, model in zip(ids, models):
        runs = []
        try:
            for rep in range(repetitions):
                for k, x0 in enumerate(starts):
                    rep_ = acceptance_profile(model, target_logp, x0, cfg, run_seed(cfg.seed, rep, k))
                    runs.append(rep_.mean_acceptance)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            rows.append(AcceptanceRow(mid, float("nan"), float("nan"), float("nan"), len(runs),
                                      f"failed: {exc}", runs))
            continue
        r = np.asarray(runs)
        rows.append(AcceptanceRow(mid, float(r.mean()), float(np.quantile(r, 0.05)),
                                  float(np.quantile(r, 0.95)), len(r), "ok", runs))
    return rows


def acceptance_table_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_id", "mean_acceptance", "q05", "q95", "n_runs"])
    for r in rows:
        w.writerow([r.model_id, repr(r.mean_acceptance), repr(r.q05), repr(r.q95), r.n_runs])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
