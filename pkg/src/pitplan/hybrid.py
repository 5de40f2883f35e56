"""Hybrid GA+LNS+SA search with epsilon-constraint relaxation.

Schedules evolve per spatial neighborhood (seeded k-means over coords and
grade); a decaying violation tolerance lets early generations explore
near-feasible space, large-neighborhood repair restores feasibility, and
an annealing criterion governs transitions between neighborhoods. All
randomness derives from per-(iteration, neighborhood) substreams so runs
are reproducible and pause/resume cannot change results.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .blockmodel import UNMINED, Instance
from .errors import InvalidArgs, RepairStalled
from .evaluate import (
    CandidateMove,
    Schedule,
    ScheduleEvaluator,
    check_feasible,
    evaluate_candidates_parallel,
)
from .rng import substream
from .scenarios import ScenarioSet
from .uncertainty import UncertaintyFactors, UncertaintyParams, geological_consistency

logger = logging.getLogger(__name__)

CONTINUE, PAUSE, CANCEL = "continue", "pause", "cancel"


@dataclass
class HybridConfig:
    population: int = 100
    crossover_rate: float = 0.85
    mutation_rate: float = 0.05
    g_max: int = 5
    t0: float | None = None  # None: calibrated to 10% of |greedy NPV|
    alpha: float = 0.95
    eps0: float = 2.0
    eps_kind: str = "linear"
    eps_cull_threshold: float = 0.5
    t_max: int = 50
    penalty: float = 1e6
    neighborhoods: int = 4
    tournament: int = 3
    sa_metropolis: bool = False
    destroy_fraction: float = 0.2
    repair_iters: int = 50
    polish: bool = True
    init_multistarts: int = 6
    seed: int = 0

    def validate(self):
        if not (0 <= self.crossover_rate <= 1 and 0 <= self.mutation_rate <= 1):
            raise InvalidArgs("rates must lie in [0, 1]")
        if self.population < 2:
            raise InvalidArgs("population must be >= 2")
        if self.t0 is not None and self.t0 <= 0:
            raise InvalidArgs("t0 must be > 0")
        if not 0 < self.alpha < 1:
            raise InvalidArgs("alpha must lie in (0, 1)")
        if self.eps0 < 0 or self.t_max < 1 or self.g_max < 1 or self.neighborhoods < 1:
            raise InvalidArgs("schedule parameters must be positive")
        if self.eps_kind not in ("linear", "cosine"):
            raise InvalidArgs(f"unknown eps kind {self.eps_kind!r}")


def epsilon_schedule(t: int, t_max: int, eps0: float, kind: str = "linear") -> float:
    """Decaying violation tolerance; eps(0) = eps0, eps(t_max) = 0."""
    if not 0 <= t <= t_max or eps0 < 0 or t_max < 1:
        raise InvalidArgs("need 0 <= t <= t_max and eps0 >= 0")
    if kind == "linear":
        return eps0 * (1.0 - t / t_max)
    if kind == "cosine":
        return eps0 * 0.5 * (1.0 + math.cos(math.pi * t / t_max))
    raise InvalidArgs(f"unknown schedule kind {kind!r}")


def greedy_initialize(
    instance: Instance,
    scenarios: ScenarioSet,
    sigma: UncertaintyFactors | None,
    seed: int = 0,
    _noise_rng: np.random.Generator | None = None,
) -> Schedule:
    """Uncertainty-adjusted value-density greedy: sort blocks by scenario-
    averaged grade * mass * sigma (period-0 factors), then give each the
    earliest period that respects precedence and capacity. Blocks that fit
    nowhere stay unmined; the result is always feasible.
    """
    if scenarios.n_s < 1:
        raise InvalidArgs("scenario set is empty")
    masses = instance.masses()
    sig0 = np.ones(scenarios.n_s) if sigma is None else sigma.sigma[:, 0]
    vd = (scenarios.grades * sig0[:, None]).mean(axis=0) * masses
    if _noise_rng is not None:
        vd = vd * np.exp(0.35 * _noise_rng.standard_normal(vd.size))
    order = np.lexsort((np.arange(instance.n_blocks), -vd))

    assign = np.full(instance.n_blocks, UNMINED, dtype=int)
    load = np.zeros(instance.n_periods)
    for b in order:
        preds = instance.predecessors(int(b))
        t_min = 0
        ok = True
        for p in preds:
            if assign[p] == UNMINED:
                ok = False
                break
            t_min = max(t_min, assign[p])
        if not ok:
            continue
        for t in range(t_min, instance.n_periods):
            if load[t] + masses[b] <= instance.mining_capacity[t]:
                assign[b] = t
                load[t] += masses[b]
                break
    return Schedule(assign)


def fitness(
    instance: Instance,
    schedule: Schedule,
    scenarios: ScenarioSet,
    sigma: UncertaintyFactors | None,
    eps: float,
    penalty: float,
) -> float:
    """NPV(S) - penalty * max(0, violation(S) - eps); works on infeasible S."""
    report = check_feasible(instance, schedule)
    npv = ScheduleEvaluator(instance, scenarios, sigma).npv_relaxed(schedule)
    return npv - penalty * max(0.0, report.violation - eps)


def _scheduled_neighbor_similarity(
    instance: Instance, schedule: Schedule, blocks, mean_grade: np.ndarray, rook
) -> dict[int, float]:
    """Similarity of each block's grade to its already-scheduled rook
    neighbors; blocks with no scheduled neighbor rank last."""
    sims = {}
    assign = schedule.assignment
    for b in blocks:
        vals = [
            abs(mean_grade[b] - mean_grade[j])
            for j in rook.get(b, ())
            if assign[j] != UNMINED
        ]
        sims[b] = -float(np.mean(vals)) if vals else -np.inf
    return sims


def _rook_neighbor_map(instance: Instance) -> dict[int, list[int]]:
    from .uncertainty import rook_weights

    w = rook_weights(instance.coords_array())
    out: dict[int, list[int]] = {}
    for i, j in zip(w.i_idx, w.j_idx):
        out.setdefault(int(i), []).append(int(j))
    return out


def lns_repair(
    instance: Instance,
    schedule: Schedule,
    unassigned,
    scenarios: ScenarioSet,
    sigma: UncertaintyFactors | None,
    max_iters: int = 100,
    seed: int = 0,
    realism_threshold: float = 0.5,
    destroy_fraction: float = 0.0,
    candidate_width: int = 16,
    strict: bool = False,
    only_positive: bool = False,
    net_mining_cost: bool = False,
    params: UncertaintyParams | None = None,
) -> Schedule:
    """Destroy-and-reinsert repair; never increases the violation score.

    Precedence-violating blocks and over-capacity ejecta join the
    unassigned pool, then candidates ranked by geological similarity are
    reinserted through the parallel evaluation kernel. Moves whose block
    scores below the realism threshold fall back to the feasible
    candidate with the highest geological consistency.
    """
    params = params or UncertaintyParams()
    sched = schedule.copy()
    before = check_feasible(instance, sched)
    pool: set[int] = {int(b) for b in unassigned}
    masses = instance.masses()

    # unmine blocks whose predecessors are missing or later (fixpoint)
    changed = True
    while changed:
        changed = False
        for i, j in instance.precedence:
            tj = sched.assignment[j]
            if tj == UNMINED:
                continue
            ti = sched.assignment[i]
            if ti == UNMINED or ti > tj:
                sched.assignment[j] = UNMINED
                pool.add(int(j))
                changed = True

    # eject successor-free blocks from over-capacity periods, cheapest first
    mean_grade = scenarios.grades.mean(axis=0)
    for t in range(instance.n_periods):
        mined = sched.mined_in(t)
        load = masses[mined].sum()
        cap = instance.mining_capacity[t]
        target = cap
        if destroy_fraction > 0 and load > cap:
            target = cap * (1.0 - destroy_fraction)
        if load <= target:
            continue
        ejectable = [
            int(b)
            for b in mined
            if all(sched.assignment[c] == UNMINED for c in instance.successors(int(b)))
        ]
        ejectable.sort(key=lambda b: (mean_grade[b] * masses[b], b))
        for b in ejectable:
            if load <= target:
                break
            sched.assignment[b] = UNMINED
            pool.add(b)
            load -= masses[b]

    coords = instance.coords_array()
    spans = coords.max(axis=0) - coords.min(axis=0)
    diameter = float(np.sqrt((spans**2).sum()))
    spatial = {
        b: geological_consistency(instance.blocks[b].features, params, diameter)
        for b in range(instance.n_blocks)
    }
    rook = _rook_neighbor_map(instance)

    iters = 0
    stalled = False
    while pool and iters < max_iters:
        sims = _scheduled_neighbor_similarity(instance, sched, pool, mean_grade, rook)
        ranked = sorted(pool, key=lambda b: (-sims[b], b))
        cand = ranked[:candidate_width]
        moves, best = evaluate_candidates_parallel(
            instance, sched, cand, scenarios, None, sigma,
            net_mining_cost=net_mining_cost, params=params,
        )
        if best is None or (only_positive and best.improvement <= 0.0):
            stalled = best is None
            break
        chosen: CandidateMove = best
        if spatial[best.block] < realism_threshold:
            feasible = [m for m in moves if m.feasible]
            feasible.sort(key=lambda m: (-spatial[m.block], m.block))
            chosen = feasible[0]
        sched.assignment[chosen.block] = chosen.period
        pool.discard(chosen.block)
        iters += 1

    after = check_feasible(instance, sched)
    if after.violation > before.violation:
        return schedule.copy()
    if stalled and strict:
        raise RepairStalled("no feasible insertion for remaining blocks", schedule=sched)
    return sched


def _zorder_key(ix: int, iy: int, iz: int, bits: int = 10) -> int:
    key = 0
    for k in range(bits):
        key |= ((ix >> k) & 1) << (3 * k)
        key |= ((iy >> k) & 1) << (3 * k + 1)
        key |= ((iz >> k) & 1) << (3 * k + 2)
    return key


def _zorder(instance: Instance) -> np.ndarray:
    coords = instance.coords_array()
    spacing = np.ones(3)
    for a in range(3):
        vals = np.unique(coords[:, a])
        if vals.size > 1:
            spacing[a] = np.min(np.diff(vals))
    keys = [
        _zorder_key(
            int(round(c[0] / spacing[0])), int(round(c[1] / spacing[1])), int(round(c[2] / spacing[2]))
        )
        for c in coords
    ]
    return np.lexsort((np.arange(instance.n_blocks), np.array(keys)))


def _kmeans_blocks(instance: Instance, scenarios: ScenarioSet, k: int, seed: int) -> list[np.ndarray]:
    """Seeded Lloyd's k-means over (coords, scenario-mean grade)."""
    coords = instance.coords_array()
    grade = scenarios.grades.mean(axis=0)
    scale = coords.std(axis=0).mean() or 1.0
    feats = np.column_stack([coords, grade / (grade.std() + 1e-9) * scale])
    n = feats.shape[0]
    k = min(k, n)
    rng = substream(seed, "kmeans")
    centers = feats[rng.choice(n, size=k, replace=False)]
    labels = np.zeros(n, dtype=int)
    for _ in range(20):
        dist = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        for c in range(k):
            members = feats[labels == c]
            if members.size:
                centers[c] = members.mean(axis=0)
            else:
                far = dist.min(axis=1).argmax()
                centers[c] = feats[far]
                labels[far] = c
    return [np.nonzero(labels == c)[0] for c in range(k)]


def polish_schedule(
    instance: Instance,
    evaluator: ScheduleEvaluator,
    schedule: Schedule,
    max_sweeps: int = 5,
    pair_swaps: bool | None = None,
) -> Schedule:
    """Steepest-descent polish over feasibility-preserving moves.

    Sweeps single-block reassignments (other period, unmine, or mine) and,
    on small instances, period swaps between block pairs; keeps the best
    strict improvement per block until a local optimum or the sweep cap.
    """
    masses = instance.masses()
    if pair_swaps is None:
        pair_swaps = instance.n_blocks <= 32
    cur = schedule.copy()
    cur_val = evaluator.npv_relaxed(cur)
    load = np.zeros(instance.n_periods)
    for t in range(instance.n_periods):
        load[t] = masses[cur.assignment == t].sum()

    def window(b: int) -> tuple[int | None, int]:
        if any(cur.assignment[p] == UNMINED for p in instance.predecessors(b)):
            t_lo = None
        else:
            t_lo = max((cur.assignment[p] for p in instance.predecessors(b)), default=0)
        mined_succ = [cur.assignment[c] for c in instance.successors(b) if cur.assignment[c] != UNMINED]
        t_hi = min(mined_succ) if mined_succ else instance.n_periods - 1
        return t_lo, t_hi

    for _ in range(max_sweeps):
        improved = False
        for b in range(instance.n_blocks):
            orig = cur.assignment[b]
            t_lo, t_hi = window(b)
            mined_succ_any = any(
                cur.assignment[c] != UNMINED for c in instance.successors(b)
            )
            options: list[int] = []
            if not mined_succ_any and orig != UNMINED:
                options.append(UNMINED)
            if t_lo is not None:
                for t in range(t_lo, t_hi + 1):
                    if t != orig and load[t] + masses[b] <= instance.mining_capacity[t]:
                        options.append(t)
            best_t, best_val = orig, cur_val
            for t in options:
                cur.assignment[b] = t
                val = evaluator.npv_relaxed(cur)
                if val > best_val + 1e-9:
                    best_t, best_val = t, val
            cur.assignment[b] = best_t
            if best_t != orig:
                improved = True
                cur_val = best_val
                if orig != UNMINED:
                    load[orig] -= masses[b]
                if best_t != UNMINED:
                    load[best_t] += masses[b]

        if pair_swaps:
            for b1 in range(instance.n_blocks):
                t1 = cur.assignment[b1]
                if t1 == UNMINED:
                    continue
                for b2 in range(b1 + 1, instance.n_blocks):
                    t2 = cur.assignment[b2]
                    if t2 == UNMINED or t2 == t1:
                        continue
                    if load[t1] - masses[b1] + masses[b2] > instance.mining_capacity[t1]:
                        continue
                    if load[t2] - masses[b2] + masses[b1] > instance.mining_capacity[t2]:
                        continue
                    cur.assignment[b1], cur.assignment[b2] = t2, t1
                    lo1, hi1 = window(b1)
                    lo2, hi2 = window(b2)
                    ok = lo1 is not None and lo1 <= t2 <= hi1 and lo2 is not None and lo2 <= t1 <= hi2
                    val = evaluator.npv_relaxed(cur) if ok else -np.inf
                    if ok and val > cur_val + 1e-9:
                        cur_val = val
                        load[t1] += masses[b2] - masses[b1]
                        load[t2] += masses[b1] - masses[b2]
                        improved = True
                    else:
                        cur.assignment[b1], cur.assignment[b2] = t1, t2
                    t1 = cur.assignment[b1]

            # 1-1 exchanges: retire a mined leaf, bring in an unmined block
            for b1 in range(instance.n_blocks):
                t1 = cur.assignment[b1]
                if t1 == UNMINED:
                    continue
                if any(cur.assignment[c] != UNMINED for c in instance.successors(b1)):
                    continue
                cur.assignment[b1] = UNMINED
                applied = False
                for b2 in range(instance.n_blocks):
                    if b2 == b1 or cur.assignment[b2] != UNMINED:
                        continue
                    lo2, hi2 = window(b2)
                    if lo2 is None:
                        continue
                    for t2 in range(lo2, hi2 + 1):
                        room = load[t2] - (masses[b1] if t2 == t1 else 0.0) + masses[b2]
                        if room > instance.mining_capacity[t2]:
                            continue
                        cur.assignment[b2] = t2
                        val = evaluator.npv_relaxed(cur)
                        if val > cur_val + 1e-9:
                            cur_val = val
                            load[t1] -= masses[b1]
                            load[t2] += masses[b2]
                            improved = True
                            applied = True
                            break
                        cur.assignment[b2] = UNMINED
                    if applied:
                        break
                if not applied:
                    cur.assignment[b1] = t1

            # joint pair insertion: blend rows can make two leftovers
            # valuable only together
            if instance.n_blocks <= 12:
                unmined = [b for b in range(instance.n_blocks) if cur.assignment[b] == UNMINED]
                applied = False
                for b1 in unmined:
                    lo1, hi1 = window(b1)
                    if lo1 is None:
                        continue
                    for t1 in range(lo1, hi1 + 1):
                        if load[t1] + masses[b1] > instance.mining_capacity[t1]:
                            continue
                        cur.assignment[b1] = t1
                        load[t1] += masses[b1]
                        for b2 in unmined:
                            if b2 == b1 or cur.assignment[b2] != UNMINED:
                                continue
                            lo2, hi2 = window(b2)
                            if lo2 is None:
                                continue
                            for t2 in range(lo2, hi2 + 1):
                                if load[t2] + masses[b2] > instance.mining_capacity[t2]:
                                    continue
                                cur.assignment[b2] = t2
                                val = evaluator.npv_relaxed(cur)
                                if val > cur_val + 1e-9:
                                    cur_val = val
                                    load[t2] += masses[b2]
                                    improved = True
                                    applied = True
                                    break
                                cur.assignment[b2] = UNMINED
                            if applied:
                                break
                        if applied:
                            break
                        load[t1] -= masses[b1]
                        cur.assignment[b1] = UNMINED
                    if applied:
                        break
        if not improved:
            break
    return cur


def _precedence_repair_pass(instance: Instance, assign: np.ndarray) -> None:
    """Make an assignment precedence-valid in place (topological sweep)."""
    for b in instance.topological_order():
        t = assign[b]
        if t == UNMINED:
            continue
        t_min = 0
        ok = True
        for p in instance.predecessors(b):
            tp = assign[p]
            if tp == UNMINED:
                ok = False
                break
            t_min = max(t_min, tp)
        if not ok:
            assign[b] = UNMINED
        elif t < t_min:
            assign[b] = t_min


@dataclass
class TraceRow:
    iter: int
    best_fitness: float
    best_npv: float
    violation: float
    eps: float
    temperature: float
    accepted: bool
    operator: str

    def as_list(self):
        return [
            self.iter,
            repr(float(self.best_fitness)),
            repr(float(self.best_npv)),
            repr(float(self.violation)),
            repr(float(self.eps)),
            repr(float(self.temperature)),
            int(self.accepted),
            self.operator,
        ]


TRACE_HEADER = ["iter", "best_fitness", "best_npv", "violation", "eps", "temperature", "accepted", "operator"]


def write_trace_csv(trace: list[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for row in trace:
            writer.writerow(row.as_list())


@dataclass
class _Member:
    schedule: Schedule
    npv: float = float("nan")
    violation: float = float("nan")


class HybridSearch:
    """Stepwise driver so runs can checkpoint at iteration boundaries."""

    def __init__(
        self,
        instance: Instance,
        scenarios: ScenarioSet,
        sigma: UncertaintyFactors | None,
        config: HybridConfig,
        agents: dict | None = None,
    ):
        config.validate()
        self.instance = instance
        self.scenarios = scenarios
        self.sigma = sigma
        self.config = config
        self.agents = agents
        self.evaluator = ScheduleEvaluator(instance, scenarios, sigma)
        self._eval_cache: dict[str, tuple[float, float]] = {}
        self.zorder = _zorder(instance)
        self.clusters = _kmeans_blocks(instance, scenarios, config.neighborhoods, config.seed)
        self.greedy = greedy_initialize(instance, scenarios, sigma, config.seed)
        greedy_npv, _ = self._measure(self.greedy)
        self.t0 = config.t0 if config.t0 is not None else max(abs(greedy_npv) * 0.1, 1.0)
        self.temperature = self.t0
        self.iteration = 0
        self.trace: list[TraceRow] = []
        self.best = self.greedy.copy()
        self.best_npv = greedy_npv
        self.current = self.greedy.copy()
        self.alpha = config.alpha
        self.destroy_fraction = config.destroy_fraction
        self.operator = "balanced"
        self.population = self._initial_population()
        self._iters_since_improvement = 0
        self._last_polished = ""
        self.cancelled = False

    # -- measurement -------------------------------------------------

    def _measure(self, schedule: Schedule) -> tuple[float, float]:
        key = schedule.digest()
        hit = self._eval_cache.get(key)
        if hit is None:
            npv = self.evaluator.npv_relaxed(schedule)
            violation = check_feasible(self.instance, schedule).violation
            hit = (npv, violation)
            self._eval_cache[key] = hit
        return hit

    def _fitness(self, member: _Member, eps: float) -> float:
        return member.npv - self.config.penalty * max(0.0, member.violation - eps)

    def _member(self, schedule: Schedule) -> _Member:
        npv, violation = self._measure(schedule)
        return _Member(schedule=schedule, npv=npv, violation=violation)

    # -- population construction -------------------------------------

    def _initial_population(self) -> list[_Member]:
        pop = [self._member(self.greedy.copy())]
        if self.config.population > 2:
            pop.append(self._member(self._trimmed_greedy()))
            pop.append(self._member(Schedule.empty(self.instance.n_blocks)))
            pop.append(self._member(self._full_greedy()))
        if self.config.polish:
            for member in list(pop):
                polished = polish_schedule(self.instance, self.evaluator, member.schedule)
                if polished.digest() != member.schedule.digest():
                    pop.append(self._member(polished))
            for k in range(self.config.init_multistarts):
                rng = substream(self.config.seed, "multistart", k)
                start = greedy_initialize(
                    self.instance, self.scenarios, self.sigma, self.config.seed, _noise_rng=rng
                )
                pop.append(self._member(polish_schedule(self.instance, self.evaluator, start)))
        k = 0
        while len(pop) < self.config.population:
            rng = substream(self.config.seed, "init", k)
            variant = self.greedy.copy()
            self._mutate(variant.assignment, rng, np.arange(self.instance.n_blocks), rate=0.2)
            pop.append(self._member(variant))
            k += 1
        pop.sort(key=lambda m: -self._fitness(m, self.config.eps0))
        if not any(m.schedule.digest() == self.greedy.digest() for m in pop[: self.config.population]):
            pop[self.config.population - 1] = self._member(self.greedy.copy())
        return pop[: self.config.population]

    def _full_greedy(self) -> Schedule:
        """Mine every block that fits, earliest-feasible in topological order.

        Complements the empty-schedule seed: blend constraints can make
        blocks valuable only jointly, which value-ranked greedy misses."""
        inst = self.instance
        masses = inst.masses()
        assign = np.full(inst.n_blocks, UNMINED, dtype=int)
        load = np.zeros(inst.n_periods)
        for b in inst.topological_order():
            t_min = 0
            ok = True
            for p in inst.predecessors(b):
                if assign[p] == UNMINED:
                    ok = False
                    break
                t_min = max(t_min, assign[p])
            if not ok:
                continue
            for t in range(t_min, inst.n_periods):
                if load[t] + masses[b] <= inst.mining_capacity[t]:
                    assign[b] = t
                    load[t] += masses[b]
                    break
        return Schedule(assign)

    def _trimmed_greedy(self) -> Schedule:
        """Greedy schedule with net-losing leaf blocks peeled off."""
        inst = self.instance
        ev = self.evaluator
        vmax = ev.values.max(axis=2)  # [s][b]
        n_t = inst.n_periods
        sig = np.ones((self.scenarios.n_s, n_t)) if self.sigma is None else self.sigma.sigma
        net = np.empty((inst.n_blocks, n_t))
        for t in range(n_t):
            net[:, t] = ev.discount[t] * ((sig[:, t][:, None] * vmax).mean(axis=0) - ev.costs[:, t])
        sched = self.greedy.copy()
        changed = True
        while changed:
            changed = False
            for b in range(inst.n_blocks):
                t = sched.assignment[b]
                if t == UNMINED or net[b, t] >= 0:
                    continue
                if all(sched.assignment[c] == UNMINED for c in inst.successors(b)):
                    sched.assignment[b] = UNMINED
                    changed = True
        return sched

    def _mutate(self, assign: np.ndarray, rng: np.random.Generator, blocks: np.ndarray, rate: float) -> None:
        """Per-block reassignment preserving precedence validity."""
        inst = self.instance
        for b in blocks:
            if rng.random() >= rate:
                continue
            b = int(b)
            preds = inst.predecessors(b)
            succs = inst.successors(b)
            if assign[b] == UNMINED:
                if any(assign[p] == UNMINED for p in preds):
                    continue
                t_min = max((assign[p] for p in preds), default=0)
                assign[b] = int(rng.integers(t_min, inst.n_periods))
            else:
                mined_succ = [assign[c] for c in succs if assign[c] != UNMINED]
                if not mined_succ and rng.random() < 0.25:
                    assign[b] = UNMINED
                    continue
                t_min = max((assign[p] for p in preds), default=0)
                t_max = min(mined_succ) if mined_succ else inst.n_periods - 1
                if t_min <= t_max:
                    assign[b] = int(rng.integers(t_min, t_max + 1))

    def _crossover(self, a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        cut = int(rng.integers(1, self.instance.n_blocks)) if self.instance.n_blocks > 1 else 1
        child = a.copy()
        tail = self.zorder[cut:]
        child[tail] = b[tail]
        _precedence_repair_pass(self.instance, child)
        return child

    def _tournament(self, pop: list[_Member], eps: float, rng: np.random.Generator) -> _Member:
        size = min(self.config.tournament, len(pop))
        picks = rng.integers(0, len(pop), size=size)
        best = None
        for idx in picks:
            m = pop[int(idx)]
            if best is None or self._fitness(m, eps) > self._fitness(best, eps):
                best = m
        return best

    # -- main loop ----------------------------------------------------

    def step(self) -> None:
        """One outer iteration: per-neighborhood GA, repair, SA transition,
        elitist merge, cooling."""
        cfg = self.config
        t = self.iteration
        eps = epsilon_schedule(t, cfg.t_max, cfg.eps0, cfg.eps_kind)
        self._apply_agents(t)
        accepted_any = False
        ga_gens = cfg.g_max
        if self.operator == "ga-heavy":
            ga_gens = cfg.g_max + 1
        repair_width = 2 if self.operator == "lns-heavy" else 1

        for ni, cluster in enumerate(self.clusters):
            rng = substream(cfg.seed, "iter", t, ni)
            pop = self.population
            for _ in range(ga_gens):
                offspring: list[_Member] = []
                while len(offspring) < max(2, len(pop) // 2):
                    p1 = self._tournament(pop, eps, rng)
                    p2 = self._tournament(pop, eps, rng)
                    if rng.random() < cfg.crossover_rate:
                        child = self._crossover(p1.schedule.assignment, p2.schedule.assignment, rng)
                    else:
                        child = p1.schedule.assignment.copy()
                    self._mutate(child, rng, cluster, cfg.mutation_rate)
                    offspring.append(self._member(Schedule(child)))
                merged = pop + offspring
                merged.sort(key=lambda m: -self._fitness(m, eps))
                pop = merged[: cfg.population]
            self.population = pop

            # LNS repair for members beyond the current tolerance
            for idx, member in enumerate(self.population):
                if member.violation > eps:
                    for _ in range(repair_width):
                        repaired = lns_repair(
                            self.instance,
                            member.schedule,
                            [],
                            self.scenarios,
                            self.sigma,
                            max_iters=cfg.repair_iters,
                            seed=cfg.seed,
                            destroy_fraction=self.destroy_fraction,
                        )
                        candidate = self._member(repaired)
                        if self._fitness(candidate, eps) >= self._fitness(member, eps):
                            self.population[idx] = candidate
                            member = candidate

            # SA transition between neighborhoods
            best_local = max(self.population, key=lambda m: self._fitness(m, eps))
            cur = self._member(self.current)
            f_best, f_cur = self._fitness(best_local, eps), self._fitness(cur, eps)
            if cfg.sa_metropolis:
                delta = f_best - f_cur
                accept = delta > 0 or rng.random() < math.exp(min(delta / max(self.temperature, 1e-12), 0.0))
            else:
                accept = f_best > f_cur + rng.random() * self.temperature
            if accept:
                self.current = best_local.schedule.copy()
                accepted_any = True

        # elitist merge and feasibility cull
        self.population.sort(key=lambda m: -self._fitness(m, eps))
        self.population = self.population[: cfg.population]
        if eps < cfg.eps_cull_threshold:
            kept = [m for m in self.population if m.violation <= eps]
            if kept:
                while len(kept) < cfg.population:
                    kept.append(kept[len(kept) % max(len(kept), 1)])
                self.population = kept[: cfg.population]

        prev_best = self.best_npv
        self._lns_diversify(t)
        improved = False
        for m in self.population:
            if m.violation == 0.0 and m.npv > self.best_npv + 1e-12:
                self.best = m.schedule.copy()
                self.best_npv = m.npv
                improved = True
        if cfg.polish and self.best.digest() != self._last_polished:
            polished = polish_schedule(self.instance, self.evaluator, self.best)
            self._last_polished = polished.digest()
            npv, violation = self._measure(polished)
            if violation == 0.0 and npv > self.best_npv + 1e-12:
                self.best = polished
                self.best_npv = npv
                improved = True
            if not any(m.schedule.digest() == self._last_polished for m in self.population):
                self.population[-1] = self._member(polished)
        improved = improved or self.best_npv > prev_best + 1e-12
        self._iters_since_improvement = 0 if improved else self._iters_since_improvement + 1

        best_violation = min(m.violation for m in self.population)
        self.trace.append(
            TraceRow(
                iter=t,
                best_fitness=self.best_npv,
                best_npv=self.best_npv,
                violation=best_violation,
                eps=eps,
                temperature=self.temperature,
                accepted=accepted_any,
                operator=self.operator,
            )
        )
        self.temperature *= self.alpha
        self.iteration += 1
        self._reward_agents(improved)

    def _lns_diversify(self, t: int) -> None:
        """Ruin-and-recreate around the incumbent: unmine a spatially
        coherent chunk (plus mined descendants), rebuild greedily with
        noisy value densities, polish, and offer to the population."""
        rng = substream(self.config.seed, "lns", t)
        cand = self.best.copy()
        assign = cand.assignment
        mined = np.nonzero(assign != UNMINED)[0]
        inst = self.instance
        coords = inst.coords_array()
        if mined.size:
            n_destroy = max(1, int(round(self.destroy_fraction * mined.size)))
            anchor = int(mined[rng.integers(mined.size)])
            d = ((coords[mined] - coords[anchor]) ** 2).sum(axis=1)
            chunk = mined[np.argsort(d, kind="stable")[:n_destroy]]
            stack = list(chunk)
            while stack:
                b = stack.pop()
                if assign[b] == UNMINED:
                    continue
                assign[b] = UNMINED
                stack.extend(c for c in inst.successors(int(b)) if assign[c] != UNMINED)
        # greedy rebuild with noisy ordering
        masses = inst.masses()
        sig0 = np.ones(self.scenarios.n_s) if self.sigma is None else self.sigma.sigma[:, 0]
        vd = (self.scenarios.grades * sig0[:, None]).mean(axis=0) * masses
        vd = vd * np.exp(0.35 * rng.standard_normal(vd.size))
        load = np.zeros(inst.n_periods)
        for tt in range(inst.n_periods):
            load[tt] = masses[assign == tt].sum()
        for b in np.lexsort((np.arange(inst.n_blocks), -vd)):
            if assign[b] != UNMINED:
                continue
            preds = inst.predecessors(int(b))
            if any(assign[p] == UNMINED for p in preds):
                continue
            t_min = max((assign[p] for p in preds), default=0)
            succ_t = [assign[c] for c in inst.successors(int(b)) if assign[c] != UNMINED]
            t_hi = min(succ_t) if succ_t else inst.n_periods - 1
            for tt in range(t_min, t_hi + 1):
                if load[tt] + masses[b] <= inst.mining_capacity[tt]:
                    assign[b] = tt
                    load[tt] += masses[b]
                    break
        if self.config.polish:
            cand = polish_schedule(inst, self.evaluator, cand)
        member = self._member(cand)
        if member.violation == 0.0 and member.npv > self.best_npv + 1e-12:
            self.best = member.schedule.copy()
            self.best_npv = member.npv
        self.population[-1] = member

    # -- adaptive control ---------------------------------------------

    def _apply_agents(self, t: int) -> None:
        if not self.agents:
            return
        from .agents import agent_step, make_state

        state = make_state(
            improvement_rate=1.0 / (1.0 + self._iters_since_improvement),
            violation=min(m.violation for m in self.population),
            iters_since_improvement=self._iters_since_improvement,
            eps=epsilon_schedule(t, self.config.t_max, self.config.eps0, self.config.eps_kind),
            eps0=self.config.eps0,
            temperature=self.temperature,
            t0=self.t0,
        )
        param_agent = self.agents.get("parameter")
        if param_agent is not None:
            action, _ = agent_step(param_agent, state, None, seed=(self.config.seed, "param", t))
            self.alpha, self.destroy_fraction = action
        sched_agent = self.agents.get("scheduling")
        if sched_agent is not None:
            action, _ = agent_step(sched_agent, state, None, seed=(self.config.seed, "sched", t))
            self.operator = action

    def _reward_agents(self, improved: bool) -> None:
        if not self.agents:
            return
        from .agents import observe_reward

        denom = max(abs(self.best_npv), 1.0)
        delta = 1.0 if improved else 0.0
        violation = min(m.violation for m in self.population)
        for name in ("parameter", "scheduling"):
            agent = self.agents.get(name)
            if agent is not None:
                observe_reward(
                    agent,
                    delta_npv=delta,
                    constraint_sat=1.0 / (1.0 + violation),
                    efficiency=1.0 / (1.0 + self._iters_since_improvement),
                    risk=min(violation, 1.0),
                )

    # -- checkpointing ------------------------------------------------

    def state(self) -> dict:
        doc = {
            "iteration": self.iteration,
            "temperature": self.temperature,
            "t0": self.t0,
            "alpha": self.alpha,
            "destroy_fraction": self.destroy_fraction,
            "operator": self.operator,
            "population": [m.schedule.assignment.tolist() for m in self.population],
            "current": self.current.assignment.tolist(),
            "best": self.best.assignment.tolist(),
            "best_npv": self.best_npv,
            "iters_since_improvement": self._iters_since_improvement,
            "last_polished": self._last_polished,
            "trace": [row.__dict__ for row in self.trace],
        }
        if self.agents:
            from .agents import agent_to_dict

            doc["agents"] = {name: agent_to_dict(a) for name, a in self.agents.items()}
        return doc

    def restore(self, doc: dict) -> None:
        self.iteration = doc["iteration"]
        self.temperature = doc["temperature"]
        self.t0 = doc["t0"]
        self.alpha = doc["alpha"]
        self.destroy_fraction = doc["destroy_fraction"]
        self.operator = doc["operator"]
        self.population = [self._member(Schedule(np.array(a, dtype=int))) for a in doc["population"]]
        self.current = Schedule(np.array(doc["current"], dtype=int))
        self.best = Schedule(np.array(doc["best"], dtype=int))
        self.best_npv = doc["best_npv"]
        self._iters_since_improvement = doc["iters_since_improvement"]
        self._last_polished = doc.get("last_polished", "")
        self.trace = [TraceRow(**row) for row in doc["trace"]]
        if self.agents and "agents" in doc:
            from .agents import agent_restore

            for name, saved in doc["agents"].items():
                if name in self.agents:
                    agent_restore(self.agents[name], saved)

    def run(self, control=None) -> tuple[Schedule, list[TraceRow]]:
        while self.iteration < self.config.t_max:
            self.step()
            if control is not None:
                cmd = control(self.iteration, self)
                if cmd == PAUSE:
                    return self.best.copy(), self.trace
                if cmd == CANCEL:
                    self.cancelled = True
                    return self.best.copy(), self.trace
        # strict final check: the incumbent must be exactly feasible
        if check_feasible(self.instance, self.best).violation != 0.0:
            repaired = lns_repair(
                self.instance, self.best, [], self.scenarios, self.sigma,
                max_iters=self.config.repair_iters, seed=self.config.seed,
            )
            if check_feasible(self.instance, repaired).violation == 0.0:
                self.best = repaired
                self.best_npv = self._measure(repaired)[0]
            else:
                logger.warning("no feasible incumbent; falling back to greedy initialization")
                self.best = self.greedy.copy()
                self.best_npv = self._measure(self.best)[0]
        return self.best.copy(), self.trace


def hybrid_optimize(
    instance: Instance,
    scenarios: ScenarioSet,
    sigma: UncertaintyFactors | None,
    config: HybridConfig,
    agents: dict | None = None,
    control=None,
) -> tuple[Schedule, list[TraceRow]]:
    """Run the full hybrid search; returns the best feasible schedule and
    the per-iteration trace."""
    search = HybridSearch(instance, scenarios, sigma, config, agents)
    return search.run(control)
