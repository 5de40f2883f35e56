"""Two-stage objective evaluation and the deterministic candidate kernel.

Stage 1 charges discounted mining costs per period; stage 2 solves the
processing LP per (scenario, period) and is scenario-averaged. Because
the uncertainty multiplier scales every value coefficient of a given
(s, t) uniformly, stage-2 optima are cached unadjusted and scaled on
the way out.
"""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .blockmodel import UNMINED, Instance
from .errors import InfeasibleSchedule, InvalidArgs, LpFailure
from .lp import EQ, LE, LpProblem, LpStatus, solve_lp
from .scenarios import ScenarioSet
from .uncertainty import UncertaintyFactors, UncertaintyParams, geological_consistency

_KERNEL_CHUNK = 64


@dataclass
class Schedule:
    """Stage-1 decision: period index per block, UNMINED (-1) for unmined."""

    assignment: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=int)

    @classmethod
    def empty(cls, n_blocks: int) -> "Schedule":
        return cls(np.full(n_blocks, UNMINED, dtype=int))

    @property
    def n_blocks(self) -> int:
        return self.assignment.size

    def copy(self) -> "Schedule":
        return Schedule(self.assignment.copy())

    def mined_in(self, t: int) -> np.ndarray:
        return np.nonzero(self.assignment == t)[0]

    def period_sets(self, n_periods: int) -> list[np.ndarray]:
        return [self.mined_in(t) for t in range(n_periods)]

    def digest(self) -> str:
        return hashlib.sha256(self.assignment.astype("<i8").tobytes()).hexdigest()

    def validate(self, n_periods: int):
        bad = (self.assignment < UNMINED) | (self.assignment >= n_periods)
        if np.any(bad):
            raise InvalidArgs("schedule has period indices out of range")


@dataclass
class ViolationReport:
    precedence_violations: int
    capacity_excess: float
    violation: float

    @property
    def feasible(self) -> bool:
        return self.violation == 0.0


@dataclass
class CandidateMove:
    block: int
    period: int
    improvement: float
    feasible: bool


def check_feasible(instance: Instance, schedule: Schedule) -> ViolationReport:
    """Count violated precedence pairs and sum capacity excess.

    violation = precedence pair count + capacity excess normalized by the
    mean per-period capacity; 0 means feasible.
    """
    assign = schedule.assignment
    pred_count = 0
    for i, j in instance.precedence:
        tj = assign[j]
        if tj == UNMINED:
            continue
        ti = assign[i]
        if ti == UNMINED or ti > tj:
            pred_count += 1
    masses = instance.masses()
    excess = 0.0
    for t in range(instance.n_periods):
        mined = assign == t
        load = float(masses[mined].sum())
        excess += max(0.0, load - instance.mining_capacity[t])
    mean_cap = float(np.mean(instance.mining_capacity))
    violation = pred_count + excess / mean_cap
    return ViolationReport(precedence_violations=pred_count, capacity_excess=excess, violation=violation)


def scenario_mode_values(instance: Instance, scenarios: ScenarioSet) -> np.ndarray:
    """v[s][b][o]: recoverable dollars (undiscounted).

    The instance's own scenario set carries the stored matrices; freshly
    sampled sets are valued from the economics config.
    """
    if scenarios.meta.get("use_stored_values"):
        return instance.builtin_values()
    masses = instance.masses()
    econ = instance.economics
    n_modes = len(instance.modes)
    v = np.empty((scenarios.n_s, instance.n_blocks, n_modes))
    for o in range(n_modes):
        rec = econ.recovery_by_mode[o % len(econ.recovery_by_mode)]
        cost = econ.processing_cost_by_mode[o % len(econ.processing_cost_by_mode)]
        v[:, :, o] = scenarios.grades * masses[None, :] * econ.price * rec - masses[None, :] * cost
    return v


class ScheduleEvaluator:
    """Caches stage-2 optima per (scenario, period, mined set)."""

    def __init__(
        self,
        instance: Instance,
        scenarios: ScenarioSet,
        sigma: UncertaintyFactors | None = None,
    ):
        if scenarios.n_blocks != instance.n_blocks:
            raise InvalidArgs("scenario set does not match instance block count")
        self.instance = instance
        self.scenarios = scenarios
        self.sigma = sigma
        self.values = scenario_mode_values(instance, scenarios)
        self.masses = instance.masses()
        self.costs = instance.mining_costs()
        self.discount = np.array(
            [(1.0 + instance.discount_rate) ** (-t) for t in range(instance.n_periods)]
        )
        self._stage2_cache: dict = {}
        rates = np.array([m.rate for m in instance.modes])
        self._single_mode_fast = len(instance.modes) == 1 and len(instance.rock_types) == 1 and rates[0] > 0

    def sigma_st(self, s: int, t: int) -> float:
        return 1.0 if self.sigma is None else float(self.sigma.sigma[s, t])

    def stage2_raw(self, s: int, t: int, blocks: tuple[int, ...]) -> float:
        """Unadjusted optimal processing value for the mined set (sigma = 1)."""
        if not blocks:
            return 0.0
        key = (s, t, blocks)
        hit = self._stage2_cache.get(key)
        if hit is not None:
            return hit
        value = self._solve_stage2(s, t, blocks)
        self._stage2_cache[key] = value
        return value

    def _solve_stage2(self, s: int, t: int, blocks: tuple[int, ...]) -> float:
        ids = np.array(blocks, dtype=int)
        inst = self.instance
        if self._single_mode_fast:
            mode = inst.modes[0]
            density = self.values[s, ids, 0] / self.masses[ids]
            order = np.argsort(-density, kind="stable")
            hours_left = inst.plant_hours[t]
            total = 0.0
            for k in order:
                if density[k] <= 0 or hours_left <= 0:
                    break
                b = ids[k]
                take = min(self.masses[b], hours_left * mode.rate)
                total += density[k] * take
                hours_left -= take / mode.rate
            return float(total)
        return self._solve_stage2_lp(s, t, ids)

    def _solve_stage2_lp(self, s: int, t: int, ids: np.ndarray) -> float:
        inst = self.instance
        modes = [o for o, m in enumerate(inst.modes) if m.rate > 0]
        if not modes:
            return 0.0
        nb = ids.size
        nv = nb * len(modes)
        obj = np.empty(nv)
        for k, o in enumerate(modes):
            obj[k * nb : (k + 1) * nb] = self.values[s, ids, o] / self.masses[ids]

        rows: list[tuple[np.ndarray, str, float]] = []
        for bi in range(nb):
            row = np.zeros(nv)
            for k in range(len(modes)):
                row[k * nb + bi] = 1.0
            rows.append((row, LE, float(self.masses[ids[bi]])))
        hours = np.zeros(nv)
        for k, o in enumerate(modes):
            hours[k * nb : (k + 1) * nb] = 1.0 / inst.modes[o].rate
        rows.append((hours, LE, float(inst.plant_hours[t])))

        rock = self.scenarios.rock_types[s, ids]
        for k, o in enumerate(modes):
            blend = inst.modes[o].blend_fraction
            for p, rock_name in enumerate(inst.rock_types):
                w_op = blend.get(rock_name, 0.0)
                row = np.zeros(nv)
                row[k * nb : (k + 1) * nb] = (rock == p).astype(float) - w_op
                if np.any(np.abs(row) > 1e-12):
                    rows.append((row, EQ, 0.0))

        sol = solve_lp(LpProblem(objective=obj, constraints=rows))
        if sol.status is not LpStatus.OPTIMAL:
            raise LpFailure(f"stage-2 LP {sol.status.value} for scenario {s}, period {t}")
        return float(sol.objective)

    def _npv(self, schedule: Schedule) -> float:
        inst = self.instance
        total = 0.0
        assign = schedule.assignment
        n_s = self.scenarios.n_s
        for t in range(inst.n_periods):
            mined = tuple(int(b) for b in np.nonzero(assign == t)[0])
            if mined:
                total -= self.discount[t] * float(self.costs[list(mined), t].sum())
            for s in range(n_s):
                raw = self.stage2_raw(s, t, mined)
                total += self.discount[t] * self.sigma_st(s, t) * raw / n_s
        return total

    def objective(self, schedule: Schedule) -> float:
        """f(x) for a feasible schedule; raises InfeasibleSchedule otherwise."""
        report = check_feasible(self.instance, schedule)
        if not report.feasible:
            raise InfeasibleSchedule(
                f"schedule has violation {report.violation:.6g}; use the relaxed evaluator"
            )
        return self._npv(schedule)

    def npv_relaxed(self, schedule: Schedule) -> float:
        """Stage-1 + stage-2 value evaluated as-is, violations ignored."""
        return self._npv(schedule)

    def per_scenario_npv(self, schedule: Schedule) -> np.ndarray:
        inst = self.instance
        assign = schedule.assignment
        out = np.zeros(self.scenarios.n_s)
        for t in range(inst.n_periods):
            mined = tuple(int(b) for b in np.nonzero(assign == t)[0])
            cost = self.discount[t] * float(self.costs[list(mined), t].sum()) if mined else 0.0
            for s in range(self.scenarios.n_s):
                raw = self.stage2_raw(s, t, mined)
                out[s] += self.discount[t] * self.sigma_st(s, t) * raw - cost
        return out


def stage2_value(
    instance: Instance,
    mined: tuple[int, ...] | list[int] | np.ndarray,
    s: int,
    t: int,
    scenarios: ScenarioSet | None = None,
    sigma: UncertaintyFactors | None = None,
) -> float:
    """Optimal processing value of the mined set under scenario s in period t.

    With scenarios omitted the instance's stored per-scenario values apply.
    """
    from .scenarios import builtin_scenarios  # local import to avoid cycle

    scen = scenarios if scenarios is not None else builtin_scenarios(instance)
    ev = ScheduleEvaluator(instance, scen, sigma)
    blocks = tuple(sorted(int(b) for b in mined))
    return ev.sigma_st(s, t) * ev.stage2_raw(s, t, blocks)


def objective(
    instance: Instance,
    schedule: Schedule,
    scenarios: ScenarioSet,
    sigma: UncertaintyFactors | None = None,
) -> float:
    return ScheduleEvaluator(instance, scenarios, sigma).objective(schedule)


def _unit_values(
    instance: Instance,
    scenarios: ScenarioSet,
    s: int | None,
    literal_kernel_value: bool,
    values: np.ndarray | None = None,
) -> np.ndarray:
    if literal_kernel_value:
        return instance.masses() * 100.0
    v = values if values is not None else scenario_mode_values(instance, scenarios)
    if s is None:
        return v.max(axis=2).mean(axis=0)
    return v[s].max(axis=1)


def evaluate_candidates_parallel(
    instance: Instance,
    schedule: Schedule,
    candidates,
    scenarios: ScenarioSet,
    s: int | None,
    sigma: UncertaintyFactors | None,
    worker_count: int = 1,
    literal_kernel_value: bool = False,
    net_mining_cost: bool = False,
    params: UncertaintyParams | None = None,
    trace_path=None,
) -> tuple[list[CandidateMove], CandidateMove | None]:
    """Best insertion period per candidate plus the overall best move.

    Pure map over (candidate, period) with a two-level reduction over
    fixed-size chunks; output is bit-identical for every worker_count
    and candidate ordering (ties: lowest block id, then lowest period).
    Infeasible candidates come back with improvement -inf.
    """
    if worker_count < 1:
        raise InvalidArgs("worker_count must be >= 1")
    candidates = [int(b) for b in candidates]
    params = params or UncertaintyParams()
    assign = schedule.assignment
    masses = instance.masses()
    n_t = instance.n_periods

    period_mass = np.zeros(n_t)
    for t in range(n_t):
        mask = assign == t
        period_mass[t] = masses[mask].sum()

    unit = _unit_values(instance, scenarios, s, literal_kernel_value)
    mining_cost = instance.mining_costs() if net_mining_cost else None
    discount = np.array([(1.0 + instance.discount_rate) ** (-t) for t in range(n_t)])
    coords = instance.coords_array()
    spans = coords.max(axis=0) - coords.min(axis=0)
    diameter = float(np.sqrt((spans**2).sum()))
    spatial = np.array(
        [geological_consistency(b.features, params, diameter) for b in instance.blocks]
    )
    if sigma is None:
        sig_row = np.ones(n_t)
    elif s is None:
        sig_row = sigma.sigma.mean(axis=0)
    else:
        sig_row = sigma.sigma[s]

    trace_rows = [] if trace_path else None

    def eval_candidate(b: int) -> CandidateMove:
        own = masses[b] if assign[b] != UNMINED else 0.0
        best_val, best_t = -np.inf, -1
        for t in range(n_t):
            feasible = True
            for p in instance.predecessors(b):
                tp = assign[p]
                if tp == UNMINED or tp > t:
                    feasible = False
                    break
            if feasible:
                for c in instance.successors(b):
                    tc = assign[c]
                    if tc != UNMINED and tc < t:
                        feasible = False
                        break
            if feasible:
                load = period_mass[t] + masses[b]
                if assign[b] == t:
                    load -= own
                if load > instance.mining_capacity[t]:
                    feasible = False
            if feasible:
                value = unit[b] * discount[t] * sig_row[t] * spatial[b]
                if mining_cost is not None:
                    value -= discount[t] * mining_cost[b, t]
            else:
                value = -np.inf
            if trace_rows is not None:
                trace_rows.append((b, t, feasible, value))
            if feasible and value > best_val:
                best_val, best_t = value, t
        return CandidateMove(block=b, period=best_t, improvement=best_val, feasible=best_t >= 0)

    chunks = [candidates[k : k + _KERNEL_CHUNK] for k in range(0, len(candidates), _KERNEL_CHUNK)]

    def eval_chunk(chunk):
        return [eval_candidate(b) for b in chunk]

    if worker_count > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            chunk_results = list(pool.map(eval_chunk, chunks))
    else:
        chunk_results = [eval_chunk(c) for c in chunks]

    moves: list[CandidateMove] = [m for chunk in chunk_results for m in chunk]

    def better(a: CandidateMove, b: CandidateMove) -> CandidateMove:
        if b.improvement > a.improvement:
            return b
        if b.improvement == a.improvement and (b.block, b.period) < (a.block, a.period):
            return b
        return a

    best: CandidateMove | None = None
    chunk_best = []
    for chunk in chunk_results:
        local = None
        for m in chunk:
            if m.feasible:
                local = m if local is None else better(local, m)
        chunk_best.append(local)
    for local in chunk_best:
        if local is not None:
            best = local if best is None else better(best, local)

    if trace_rows is not None:
        with open(trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["candidate", "period", "feasible", "value"])
            for row in sorted(trace_rows):
                writer.writerow([row[0], row[1], int(row[2]), repr(float(row[3]))])

    return moves, best
