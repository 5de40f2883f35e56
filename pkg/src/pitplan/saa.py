"""Exact baseline, sample-average-approximation protocol and risk statistics.

The branch-and-bound solver replaces a commercial MILP solver for small
instances where exactness is provable. The SAA loop optimizes on S_in
sampled scenarios, then fixes the schedule and re-solves only the
processing stage against a fresh out-of-sample set; bias is the
in-sample optimism NPV_in - NPV_out.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .blockmodel import UNMINED, Instance
from .errors import InvalidArgs, TooFewSamples
from .evaluate import Schedule, ScheduleEvaluator
from .hybrid import HybridConfig, greedy_initialize, hybrid_optimize
from .rng import substream
from .scenarios import ScenarioSet, sample_lognormal
from .uncertainty import UncertaintyFactors

STATUS_OPTIMAL = "Optimal"
STATUS_INCOMPLETE = "Incomplete"


@dataclass
class BnbResult:
    schedule: Schedule
    status: str
    objective: float
    bound: float
    nodes: int


def branch_and_bound_exact(
    instance: Instance,
    scenarios: ScenarioSet,
    node_limit: int | None = None,
    time_limit: float | None = None,
    sigma: UncertaintyFactors | None = None,
    size_cap: int = 60,
) -> BnbResult:
    """Depth-first branch and bound over block-to-period assignments.

    Blocks are fixed in topological order; the bound values unassigned
    blocks at their best-period single-block relaxation (processing the
    whole block in its best mode, no shared plant hours), which dominates
    any feasible completion.
    """
    n, n_t = instance.n_blocks, instance.n_periods
    if n * n_t > size_cap:
        raise InvalidArgs(f"blocks*periods = {n * n_t} exceeds the exactness guard {size_cap}")
    ev = ScheduleEvaluator(instance, scenarios, sigma)
    topo = instance.topological_order()
    masses = instance.masses()
    costs = instance.mining_costs()
    disc = ev.discount
    n_s = scenarios.n_s

    vmax = ev.values.max(axis=2)  # [s][b]
    sig = np.ones((n_s, n_t)) if sigma is None else sigma.sigma
    contrib = np.empty((n, n_t))
    for t in range(n_t):
        contrib[:, t] = disc[t] * ((sig[:, t][:, None] * vmax).mean(axis=0) - costs[:, t])
    best_free = np.maximum(contrib.max(axis=1), 0.0)
    suffix_free = np.zeros(n + 1)
    for k in range(n - 1, -1, -1):
        suffix_free[k] = suffix_free[k + 1] + best_free[topo[k]]

    incumbent = greedy_initialize(instance, scenarios, sigma)
    incumbent_val = ev.npv_relaxed(incumbent)

    assign = np.full(n, UNMINED, dtype=int)
    load = np.zeros(n_t)
    nodes = 0
    started = time.monotonic()
    hit_limit = False

    def out_of_budget() -> bool:
        if node_limit is not None and nodes >= node_limit:
            return True
        if time_limit is not None and time.monotonic() - started > time_limit:
            return True
        return False

    def dfs(k: int, partial_ub: float):
        nonlocal nodes, incumbent, incumbent_val, hit_limit
        if hit_limit:
            return
        if partial_ub + suffix_free[k] <= incumbent_val + 1e-9:
            return
        if k == n:
            value = ev.npv_relaxed(Schedule(assign))
            if value > incumbent_val + 1e-9:
                incumbent = Schedule(assign.copy())
                incumbent_val = value
            return
        b = topo[k]
        t_min = 0
        preds_ok = True
        for p in instance.predecessors(b):
            if assign[p] == UNMINED:
                preds_ok = False
                break
            t_min = max(t_min, assign[p])
        if preds_ok:
            for t in range(t_min, n_t):
                if load[t] + masses[b] > instance.mining_capacity[t]:
                    continue
                nodes += 1
                if out_of_budget():
                    hit_limit = True
                    return
                assign[b] = t
                load[t] += masses[b]
                dfs(k + 1, partial_ub + contrib[b, t])
                load[t] -= masses[b]
                assign[b] = UNMINED
        nodes += 1
        if out_of_budget():
            hit_limit = True
            return
        dfs(k + 1, partial_ub)

    dfs(0, 0.0)
    status = STATUS_INCOMPLETE if hit_limit else STATUS_OPTIMAL
    return BnbResult(
        schedule=incumbent,
        status=status,
        objective=incumbent_val,
        bound=float(suffix_free[0]),
        nodes=nodes,
    )


class RiskMetrics(NamedTuple):
    p10: float
    p50: float
    p90: float
    cvar10: float
    mean: float
    sd: float


def risk_metrics(npv_samples) -> RiskMetrics:
    """Quantiles by linear interpolation on the sorted samples; CVaR10 is
    the mean of the ceil(0.1 n) lowest values."""
    samples = np.asarray(list(npv_samples), dtype=float)
    if samples.size == 0:
        raise InvalidArgs("need at least one sample")
    srt = np.sort(samples)
    k = math.ceil(0.1 * srt.size)
    p10, p50, p90 = (float(np.quantile(srt, q, method="linear")) for q in (0.1, 0.5, 0.9))
    return RiskMetrics(
        p10=p10,
        p50=p50,
        p90=p90,
        cvar10=float(srt[:k].mean()),
        mean=float(srt.mean()),
        sd=float(srt.std(ddof=1)) if srt.size > 1 else 0.0,
    )


# ---------------------------------------------------------------------------
# rank tests
# ---------------------------------------------------------------------------


class ComparisonResult(NamedTuple):
    statistic: float
    p_value: float
    method: str
    no_difference: bool


def _rankdata(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=float)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _signed_rank_exact_p(ranks2: np.ndarray, w2: float) -> float:
    """Exact two-sided p for W+ given doubled ranks (integers)."""
    dist = {0: 1.0}
    for r in ranks2:
        r = int(r)
        nxt: dict[int, float] = {}
        for s, c in dist.items():
            nxt[s] = nxt.get(s, 0.0) + c
            nxt[s + r] = nxt.get(s + r, 0.0) + c
        dist = nxt
    total = sum(dist.values())
    le = sum(c for s, c in dist.items() if s <= w2 + 1e-9) / total
    ge = sum(c for s, c in dist.items() if s >= w2 - 1e-9) / total
    return min(1.0, 2.0 * min(le, ge))


def _ranksum_exact_p(n_a: int, n_total: int, w: float) -> float:
    """Exact two-sided p for the rank sum of sample a (no ties)."""
    max_sum = n_total * (n_total + 1) // 2
    dp = np.zeros((n_a + 1, max_sum + 1))
    dp[0, 0] = 1.0
    for r in range(1, n_total + 1):
        for j in range(min(n_a, r), 0, -1):
            dp[j, r:] += dp[j - 1, : max_sum + 1 - r]
    dist = dp[n_a]
    total = dist.sum()
    w_int = int(round(w))
    le = dist[: w_int + 1].sum() / total
    ge = dist[w_int:].sum() / total
    return min(1.0, 2.0 * min(le, ge))


def compare_runs(samples_a, samples_b, paired: bool) -> ComparisonResult:
    """Wilcoxon signed-rank (paired) or rank-sum (unpaired), two-sided.

    Exact null distribution for n <= 12, normal approximation with
    continuity correction otherwise. Identical paired samples report
    no_difference with p = 1.
    """
    a = np.asarray(list(samples_a), dtype=float)
    b = np.asarray(list(samples_b), dtype=float)
    if a.size < 5 or b.size < 5:
        raise TooFewSamples("need at least 5 samples per group")
    if paired:
        if a.size != b.size:
            raise InvalidArgs("paired comparison needs equal lengths")
        diff = a - b
        diff = diff[diff != 0.0]
        n = diff.size
        if n == 0:
            return ComparisonResult(0.0, 1.0, "signed-rank", True)
        ranks = _rankdata(np.abs(diff))
        w_plus = float(ranks[diff > 0].sum())
        if n <= 12:
            p = _signed_rank_exact_p(np.round(2 * ranks), 2 * w_plus)
            return ComparisonResult(w_plus, p, "signed-rank-exact", False)
        mean = n * (n + 1) / 4.0
        _, counts = np.unique(np.abs(diff), return_counts=True)
        tie_corr = float(((counts**3 - counts)).sum()) / 48.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_corr
        if var <= 0:
            return ComparisonResult(w_plus, 1.0, "signed-rank-normal", False)
        cc = 0.5 * np.sign(w_plus - mean)
        z = (w_plus - mean - cc) / math.sqrt(var)
        return ComparisonResult(w_plus, min(1.0, 2.0 * _norm_sf(abs(z))), "signed-rank-normal", False)

    combined = np.concatenate([a, b])
    ranks = _rankdata(combined)
    w_a = float(ranks[: a.size].sum())
    has_ties = np.unique(combined).size < combined.size
    if max(a.size, b.size) <= 12 and not has_ties:
        p = _ranksum_exact_p(a.size, combined.size, w_a)
        return ComparisonResult(w_a, p, "rank-sum-exact", False)
    n, m = a.size, b.size
    big_n = n + m
    mean = n * (big_n + 1) / 2.0
    _, counts = np.unique(combined, return_counts=True)
    tie_corr = float((counts**3 - counts).sum())
    var = n * m * (big_n + 1) / 12.0 - n * m * tie_corr / (12.0 * big_n * (big_n - 1))
    if var <= 0:
        return ComparisonResult(w_a, 1.0, "rank-sum-normal", w_a == mean)
    cc = 0.5 * np.sign(w_a - mean)
    z = (w_a - mean - cc) / math.sqrt(var)
    return ComparisonResult(w_a, min(1.0, 2.0 * _norm_sf(abs(z))), "rank-sum-normal", False)


# ---------------------------------------------------------------------------
# SAA protocol
# ---------------------------------------------------------------------------


@dataclass
class SaaReplication:
    replication: int
    npv_in: float
    npv_out: float
    bias: float
    elapsed_seconds: float
    status: str = "ok"
    error: str | None = None


@dataclass
class SaaResult:
    config: dict
    replications: list[SaaReplication]
    mean_bias: float
    bias_ci_half_width: float
    risk: RiskMetrics
    schedule: Schedule | None = None
    per_sin: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "per_replication": [
                {
                    "replication": r.replication,
                    "npv_in": r.npv_in,
                    "npv_out": r.npv_out,
                    "bias": r.bias,
                    "elapsed_seconds": r.elapsed_seconds,
                    "status": r.status,
                    "error": r.error,
                }
                for r in self.replications
            ],
            "aggregate": {
                "bias_mean": self.mean_bias,
                "bias_ci_half_width": self.bias_ci_half_width,
                "p10": self.risk.p10,
                "p50": self.risk.p50,
                "p90": self.risk.p90,
                "cvar10": self.risk.cvar10,
                "mean": self.risk.mean,
                "sd": self.risk.sd,
            },
        }


def _child_seed(seed: int, *keys) -> int:
    return int(substream(seed, *keys).integers(0, 2**62))


def _solve(instance: Instance, scenarios: ScenarioSet, optimizer: str, seed: int, hybrid_config=None,
           dw_config=None) -> Schedule:
    if optimizer == "exact":
        return branch_and_bound_exact(instance, scenarios).schedule
    if optimizer == "hybrid":
        cfg = hybrid_config or HybridConfig(population=12, t_max=10, g_max=2, neighborhoods=2)
        cfg = HybridConfig(**{**cfg.__dict__, "seed": seed})
        schedule, _ = hybrid_optimize(instance, scenarios, None, cfg)
        return schedule
    if optimizer == "dw":
        from .colgen import DwConfig, run_dw

        cfg = dw_config or DwConfig(max_iterations=12, initial_columns=12)
        cfg = DwConfig(**{**cfg.__dict__, "seed": seed})
        schedule, _ = run_dw(instance, cfg, scenarios=scenarios)
        return schedule
    raise InvalidArgs(f"unknown optimizer {optimizer!r}")


def run_saa(
    instance: Instance,
    s_in: int,
    s_out: int,
    replications: int,
    optimizer: str = "exact",
    shock_sigma: float = 0.3,
    seed: int = 0,
    hybrid_config: HybridConfig | None = None,
    dw_config=None,
) -> SaaResult:
    """Per replication: optimize on S_in fresh scenarios, then fix the
    schedule and re-evaluate the processing stage on S_out new scenarios.

    Runs risk-neutral (no uncertainty multiplier) so bias isolates pure
    sampling optimism. Optimizer failures are recorded per replication,
    not fatal.
    """
    if min(s_in, s_out, replications) < 1:
        raise InvalidArgs("s_in, s_out and replications must be >= 1")
    reps: list[SaaReplication] = []
    out_samples: list[float] = []
    last_schedule = None
    for r in range(replications):
        started = time.monotonic()
        try:
            scen_in = sample_lognormal(instance, s_in, shock_sigma, _child_seed(seed, "saa-in", r))
            schedule = _solve(
                instance, scen_in, optimizer, _child_seed(seed, "saa-opt", r), hybrid_config, dw_config
            )
            npv_in = ScheduleEvaluator(instance, scen_in).objective(schedule)
            scen_out = sample_lognormal(instance, s_out, shock_sigma, _child_seed(seed, "saa-out", r))
            npv_out = ScheduleEvaluator(instance, scen_out).objective(schedule)
            reps.append(
                SaaReplication(
                    replication=r,
                    npv_in=npv_in,
                    npv_out=npv_out,
                    bias=npv_in - npv_out,
                    elapsed_seconds=time.monotonic() - started,
                )
            )
            out_samples.append(npv_out)
            last_schedule = schedule
        except Exception as exc:  # noqa: BLE001 - per-replication isolation
            reps.append(
                SaaReplication(
                    replication=r,
                    npv_in=float("nan"),
                    npv_out=float("nan"),
                    bias=float("nan"),
                    elapsed_seconds=time.monotonic() - started,
                    status="error",
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
    ok = [r for r in reps if r.status == "ok"]
    if not ok:
        raise InvalidArgs("every SAA replication failed")
    biases = np.array([r.bias for r in ok])
    mean_bias = float(biases.mean())
    half = float(1.96 * biases.std(ddof=1) / math.sqrt(biases.size)) if biases.size > 1 else 0.0
    return SaaResult(
        config={
            "s_in": s_in,
            "s_out": s_out,
            "replications": replications,
            "optimizer": optimizer,
            "shock_sigma": shock_sigma,
            "seed": seed,
        },
        replications=reps,
        mean_bias=mean_bias,
        bias_ci_half_width=half,
        risk=risk_metrics(out_samples),
        schedule=last_schedule,
    )
