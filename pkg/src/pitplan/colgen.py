"""Column generation over complete mining sequences.

The restricted master LP selects convex combinations of
precedence-closed, capacity-feasible sequences (block-cover rows,
per-period capacity rows, one convexity row per equipment unit).
Pricing greedily builds sequences against the latest duals using
freshly sampled scenarios; the pool keeps a quality score per column
and evicts aged, out-of-basis columns. Integerization rounds the
selection greedily and repairs, then the incumbent is re-offered to
the master so the final LP value always bounds the integer result.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .blockmodel import UNMINED, Instance
from .errors import InvalidArgs, LpFailure
from .evaluate import Schedule, ScheduleEvaluator, check_feasible
from .hybrid import greedy_initialize, lns_repair
from .lp import LE, LpProblem, LpStatus, solve_lp
from .rng import substream
from .scenarios import ScenarioSet, filter_valid, sample_lognormal
from .uncertainty import UncertaintyFactors, uncertainty_factors

logger = logging.getLogger(__name__)

CONTINUE, PAUSE, CANCEL = "continue", "pause", "cancel"


@dataclass
class DwConfig:
    max_iterations: int = 30
    initial_columns: int = 50
    max_columns: int = 500
    rc_tolerance: float = 1e-6
    age_window: int = 10
    quality_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    tau_min: float | None = None  # enabling this may evict basic columns
    n_equipment: int = 1
    n_scenarios: int = 2
    shock_sigma: float = 0.3
    scenarios_per_iter: int = 6
    tau_valid: float = float("inf")
    pricing_node_cap: int = 5000
    pricing_noise: float = 0.0
    seed: int = 0

    def validate(self):
        if self.max_iterations < 1 or self.initial_columns < 1 or self.max_columns < 1:
            raise InvalidArgs("iteration/pool sizes must be >= 1")
        if self.n_equipment < 1:
            raise InvalidArgs("need at least one equipment unit")


@dataclass
class DualPrices:
    block: np.ndarray
    capacity: np.ndarray
    convexity: np.ndarray

    def __post_init__(self):
        if np.any(self.capacity < -1e-7):
            raise InvalidArgs("capacity duals must be nonnegative")


@dataclass
class SequenceColumn:
    id: int
    equipment: int
    assignment: np.ndarray  # period per block, UNMINED outside the sequence
    mass_per_period: np.ndarray
    value: float
    reduced_cost: float = float("nan")
    birth: int = 0
    last_used: int = 0
    quality: float = 0.0

    @property
    def blocks(self) -> np.ndarray:
        return np.nonzero(self.assignment != UNMINED)[0]

    @property
    def length(self) -> int:
        return int((self.assignment != UNMINED).sum())

    def signature(self) -> bytes:
        return self.assignment.astype("<i8").tobytes()

    def schedule(self) -> Schedule:
        return Schedule(self.assignment.copy())


def validate_column(instance: Instance, column: SequenceColumn) -> None:
    report = check_feasible(instance, column.schedule())
    if not report.feasible:
        raise InvalidArgs(f"column {column.id} violates precedence/capacity ({report.violation:.3g})")


@dataclass
class ColumnPool:
    max_columns: int = 500
    columns: list[SequenceColumn] = field(default_factory=list)
    evictions: list[int] = field(default_factory=list)
    _signatures: set = field(default_factory=set)
    _next_id: int = 0

    def __len__(self) -> int:
        return len(self.columns)

    def has_signature(self, sig: bytes) -> bool:
        return sig in self._signatures

    def add(self, column: SequenceColumn) -> bool:
        sig = column.signature()
        if sig in self._signatures:
            return False
        column.id = self._next_id
        self._next_id += 1
        self.columns.append(column)
        self._signatures.add(sig)
        return True

    def remove(self, column: SequenceColumn) -> None:
        self.columns.remove(column)
        self._signatures.discard(column.signature())
        self.evictions.append(column.id)


def column_from_schedule(
    instance: Instance, schedule: Schedule, evaluator: ScheduleEvaluator, equipment: int = 0
) -> SequenceColumn:
    masses = instance.masses()
    assign = schedule.assignment
    mass_t = np.array(
        [float(masses[assign == t].sum()) for t in range(instance.n_periods)]
    )
    return SequenceColumn(
        id=-1,
        equipment=equipment,
        assignment=assign.copy(),
        mass_per_period=mass_t,
        value=evaluator.npv_relaxed(schedule),
    )


def solve_restricted_master(
    pool: ColumnPool, instance: Instance, n_equipment: int = 1
) -> tuple[np.ndarray, DualPrices, float]:
    """LP over pooled sequences: block-cover, per-period capacity, and one
    convexity row per equipment unit."""
    cols = pool.columns
    if not cols:
        raise InvalidArgs("pool is empty")
    n_cols = len(cols)
    n_blocks = instance.n_blocks
    n_t = instance.n_periods

    obj = np.array([c.value for c in cols])
    rows: list = []
    for b in range(n_blocks):
        row = np.array([1.0 if c.assignment[b] != UNMINED else 0.0 for c in cols])
        rows.append((row, LE, 1.0))
    for t in range(n_t):
        row = np.array([c.mass_per_period[t] for c in cols])
        rows.append((row, LE, float(instance.mining_capacity[t])))
    for e in range(n_equipment):
        row = np.array([1.0 if c.equipment == e else 0.0 for c in cols])
        rows.append((row, LE, 1.0))

    sol = solve_lp(LpProblem(objective=obj, constraints=rows))
    if sol.status is not LpStatus.OPTIMAL:
        raise LpFailure(f"restricted master {sol.status.value}")
    duals = DualPrices(
        block=np.maximum(sol.duals[:n_blocks], 0.0),
        capacity=np.maximum(sol.duals[n_blocks : n_blocks + n_t], 0.0),
        convexity=np.maximum(sol.duals[n_blocks + n_t :], 0.0),
    )
    lambdas = sol.x[:n_cols]
    return lambdas, duals, float(sol.objective)


def _enpv_adjusted(
    instance: Instance,
    scenarios: ScenarioSet,
    sigma: UncertaintyFactors | None,
) -> np.ndarray:
    """Per (block, period) risk-adjusted discounted value net of mining cost,
    averaged over the supplied scenarios."""
    from .evaluate import scenario_mode_values

    v = scenario_mode_values(instance, scenarios).max(axis=2)  # [s][b]
    n_t = instance.n_periods
    disc = np.array([(1.0 + instance.discount_rate) ** (-t) for t in range(n_t)])
    sig = np.ones((scenarios.n_s, n_t)) if sigma is None else sigma.sigma
    costs = instance.mining_costs()
    enpv = np.empty((instance.n_blocks, n_t))
    for t in range(n_t):
        enpv[:, t] = disc[t] * (sig[:, t][:, None] * v).mean(axis=0) - disc[t] * costs[:, t]
    return enpv


def price_column(
    instance: Instance,
    duals: DualPrices,
    scenarios: ScenarioSet,
    sigma: UncertaintyFactors | None,
    equipment: int,
    seed,
    evaluator: ScheduleEvaluator | None = None,
    node_cap: int = 5000,
    capacity_slack: float = 1.0,
    noise: float = 0.0,
) -> tuple[SequenceColumn | None, float]:
    """Greedy feasible-sequence construction maximizing dual-adjusted value.

    The construction scores use the (possibly freshly sampled) scenarios;
    the returned column's value is the reference evaluation so master
    values stay consistent across iterations. Reduced cost = value minus
    block/capacity/convexity dual charges.
    """
    rng = substream(seed[0], *seed[1:]) if isinstance(seed, tuple) else substream(seed, "price")
    enpv = _enpv_adjusted(instance, scenarios, sigma)
    masses = instance.masses()
    n_t = instance.n_periods
    score = enpv - duals.block[:, None] - np.outer(masses, duals.capacity)
    if noise > 0:
        scale = max(float(np.abs(score).max()), 1e-9)
        score = score + rng.normal(0.0, noise * scale, size=score.shape)

    assign = np.full(instance.n_blocks, UNMINED, dtype=int)
    in_col = np.zeros(instance.n_blocks, dtype=bool)
    expansions = 0
    for t in range(n_t):
        cap = instance.mining_capacity[t] * capacity_slack
        load = 0.0
        while expansions < node_cap:
            best_b, best_s = -1, 0.0
            for b in range(instance.n_blocks):
                if in_col[b] or masses[b] + load > cap:
                    continue
                if any(not in_col[p] or assign[p] > t for p in instance.predecessors(b)):
                    continue
                expansions += 1
                if score[b, t] > best_s + 1e-12:
                    best_b, best_s = b, score[b, t]
            if best_b < 0:
                break
            assign[best_b] = t
            in_col[best_b] = True
            load += masses[best_b]

    # trim back to the hard capacity if the slack let the sequence overfill
    if capacity_slack > 1.0:
        for t in range(n_t):
            load = float(masses[assign == t].sum())
            if load <= instance.mining_capacity[t]:
                continue
            for b in reversed(instance.topological_order()):
                if assign[b] != t:
                    continue
                if all(assign[c] == UNMINED for c in instance.successors(b)):
                    assign[b] = UNMINED
                    in_col[b] = False
                    load -= masses[b]
                if load <= instance.mining_capacity[t]:
                    break

    if not in_col.any():
        return None, float("inf")
    mass_t = np.array([float(masses[assign == t].sum()) for t in range(n_t)])
    column = SequenceColumn(
        id=-1,
        equipment=equipment,
        assignment=assign,
        mass_per_period=mass_t,
        value=0.0,
    )
    if evaluator is not None:
        column.value = evaluator.npv_relaxed(column.schedule())
    else:
        mined = assign != UNMINED
        column.value = float(enpv[mined, assign[mined]].sum())
    charge = float(duals.block[assign != UNMINED].sum())
    charge += float(duals.capacity @ mass_t)
    charge += float(duals.convexity[equipment])
    column.reduced_cost = column.value - charge
    return column, column.reduced_cost


def column_quality(
    column: SequenceColumn, pool: ColumnPool, instance: Instance, spatial: np.ndarray,
    weights: tuple[float, float, float],
) -> float:
    """alpha * normalized value + beta * geological consistency - gamma * length cost."""
    alpha, beta, gamma = weights
    scale = max((abs(c.value) for c in pool.columns), default=1.0) or 1.0
    npv_impr = column.value / scale
    blocks = column.blocks
    consistency = float(spatial[blocks].mean()) if blocks.size else 0.0
    cost = column.length / max(instance.n_blocks, 1)
    return alpha * npv_impr + beta * consistency - gamma * cost


def manage_pool(
    pool: ColumnPool,
    new_columns: list[SequenceColumn],
    iteration: int,
    instance: Instance,
    spatial: np.ndarray,
    config: DwConfig,
    basic_ids: set[int] | None = None,
) -> ColumnPool:
    """Insert improving columns, refresh quality, apply age-based eviction."""
    basic_ids = basic_ids or set()
    for col in new_columns:
        if col is None or col.reduced_cost >= 0:
            continue
        col.birth = iteration
        col.last_used = iteration
        if pool.add(col):
            col.quality = column_quality(col, pool, instance, spatial, config.quality_weights)

    for col in pool.columns:
        col.quality = column_quality(col, pool, instance, spatial, config.quality_weights)

    if config.tau_min is not None:
        for col in [c for c in pool.columns if c.quality < config.tau_min and c.id not in basic_ids]:
            pool.remove(col)

    while len(pool) > config.max_columns:
        aged = [
            c
            for c in pool.columns
            if iteration - c.last_used >= config.age_window and c.id not in basic_ids
        ]
        victims = aged or [c for c in pool.columns if c.id not in basic_ids]
        if not victims:
            break
        victims.sort(key=lambda c: (c.quality, c.id))
        pool.remove(victims[0])
    return pool


@dataclass
class DwTraceRow:
    iter: int
    master_lp_value: float
    min_reduced_cost: float
    pool_size: int
    n_scenarios_valid: int

    def as_list(self):
        return [
            self.iter,
            repr(float(self.master_lp_value)),
            repr(float(self.min_reduced_cost)),
            self.pool_size,
            self.n_scenarios_valid,
        ]


DW_TRACE_HEADER = ["iter", "master_lp_value", "min_reduced_cost", "pool_size", "n_scenarios_valid"]


def write_dw_trace_csv(trace: list[DwTraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DW_TRACE_HEADER)
        for row in trace:
            writer.writerow(row.as_list())


class DwSearch:
    """Stepwise column-generation driver with checkpoint support."""

    def __init__(
        self,
        instance: Instance,
        config: DwConfig,
        agents: dict | None = None,
        scenarios: ScenarioSet | None = None,
        sigma: UncertaintyFactors | None = None,
        vae_model=None,
    ):
        config.validate()
        self.instance = instance
        self.config = config
        self.agents = agents
        self.vae_model = vae_model
        seed = config.seed
        if scenarios is None:
            scenarios = sample_lognormal(instance, config.n_scenarios, config.shock_sigma, seed)
        self.scenarios = scenarios
        self.sigma = sigma if sigma is not None else uncertainty_factors(instance, scenarios.grades)
        self.evaluator = ScheduleEvaluator(instance, scenarios, self.sigma)
        from .uncertainty import UncertaintyParams, geological_consistency

        coords = instance.coords_array()
        spans = coords.max(axis=0) - coords.min(axis=0)
        diameter = float(np.sqrt((spans**2).sum()))
        params = UncertaintyParams()
        self.spatial = np.array(
            [geological_consistency(b.features, params, diameter) for b in instance.blocks]
        )
        self.pool = ColumnPool(max_columns=config.max_columns)
        self.trace: list[DwTraceRow] = []
        self.iteration = 0
        self.capacity_slack = 1.0
        self.cancelled = False
        self.finished = False
        self._build_initial_pool()

    def _build_initial_pool(self) -> None:
        cfg = self.config
        greedy = greedy_initialize(self.instance, self.scenarios, self.sigma, cfg.seed)
        col = column_from_schedule(self.instance, greedy, self.evaluator)
        col.reduced_cost = -abs(col.value) - 1.0
        self.pool.add(col)
        zero = DualPrices(
            block=np.zeros(self.instance.n_blocks),
            capacity=np.zeros(self.instance.n_periods),
            convexity=np.zeros(cfg.n_equipment),
        )
        k = 0
        while len(self.pool) < cfg.initial_columns and k < cfg.initial_columns * 4:
            e = k % cfg.n_equipment
            column, _ = price_column(
                self.instance,
                zero,
                self.scenarios,
                self.sigma,
                e,
                (cfg.seed, "init", k),
                evaluator=self.evaluator,
                node_cap=cfg.pricing_node_cap,
                noise=0.25,
            )
            if column is not None:
                column.reduced_cost = -1.0
                self.pool.add(column)
            k += 1
        for col_ in self.pool.columns:
            col_.quality = column_quality(
                col_, self.pool, self.instance, self.spatial, cfg.quality_weights
            )

    def _dynamic_scenarios(self, k: int) -> ScenarioSet:
        cfg = self.config
        if self.vae_model is not None:
            from .vae import vae_generate

            dyn = vae_generate(self.vae_model, cfg.scenarios_per_iter, (cfg.seed * 1000003 + k) & 0x7FFFFFFF,
                               instance=self.instance)
        else:
            dyn = sample_lognormal(
                self.instance, cfg.scenarios_per_iter, cfg.shock_sigma, (cfg.seed * 1000003 + k) & 0x7FFFFFFF
            )
        filtered = filter_valid(dyn, cfg.tau_valid)
        return filtered if filtered.n_s >= 1 else dyn

    def step(self) -> bool:
        """One pricing round; returns True when converged."""
        cfg = self.config
        k = self.iteration
        lambdas, duals, lp_value = solve_restricted_master(self.pool, self.instance, cfg.n_equipment)
        basic_ids = set()
        for col, lam in zip(self.pool.columns, lambdas):
            if lam > 1e-9:
                col.last_used = k
                basic_ids.add(col.id)

        dyn = self._dynamic_scenarios(k)
        sigma_dyn = uncertainty_factors(self.instance, dyn.grades)
        self._apply_resource_agent(k)

        priced: list[SequenceColumn] = []
        min_rc = float("inf")
        for e in range(cfg.n_equipment):
            column, rc = price_column(
                self.instance,
                duals,
                dyn,
                sigma_dyn,
                e,
                (cfg.seed, "price", k, e),
                evaluator=self.evaluator,
                node_cap=cfg.pricing_node_cap,
                capacity_slack=self.capacity_slack,
                noise=cfg.pricing_noise,
            )
            if column is not None:
                min_rc = min(min_rc, rc)
                priced.append(column)
        manage_pool(self.pool, priced, k, self.instance, self.spatial, cfg, basic_ids)

        self.trace.append(
            DwTraceRow(
                iter=k,
                master_lp_value=float(lp_value),
                min_reduced_cost=float(min_rc) if np.isfinite(min_rc) else 0.0,
                pool_size=len(self.pool),
                n_scenarios_valid=dyn.n_s,
            )
        )
        self._reward_agents(lp_value)
        self.iteration += 1
        return min_rc >= -cfg.rc_tolerance or self.iteration >= cfg.max_iterations

    def _apply_resource_agent(self, k: int) -> None:
        if not self.agents or "resource" not in self.agents:
            return
        from .agents import agent_step, make_state

        pool_fill = len(self.pool) / self.config.max_columns
        state = make_state(
            improvement_rate=0.5,
            violation=0.0,
            iters_since_improvement=0,
            eps=0.0,
            eps0=1.0,
            temperature=0.0,
            t0=1.0,
            pool_fill=pool_fill,
        )
        action, _ = agent_step(self.agents["resource"], state, None, seed=(self.config.seed, "res", k))
        self.capacity_slack = float(action)

    def _reward_agents(self, lp_value: float) -> None:
        if not self.agents or "resource" not in self.agents:
            return
        from .agents import observe_reward

        prev = self.trace[-2].master_lp_value if len(self.trace) > 1 else lp_value
        scale = max(abs(prev), 1.0)
        delta = max(0.0, (lp_value - prev) / scale)
        observe_reward(self.agents["resource"], delta_npv=min(delta, 1.0), constraint_sat=1.0,
                       efficiency=0.5, risk=0.0)

    def integerize(self) -> Schedule:
        """Greedy lambda rounding (skip conflicts), repair, and a final
        master solve including the incumbent column."""
        cfg = self.config
        lambdas, _, _ = solve_restricted_master(self.pool, self.instance, cfg.n_equipment)
        order = sorted(
            range(len(self.pool.columns)),
            key=lambda i: (-lambdas[i], self.pool.columns[i].id),
        )
        masses = self.instance.masses()
        taken = np.zeros(self.instance.n_blocks, dtype=bool)
        load = np.zeros(self.instance.n_periods)
        assign = np.full(self.instance.n_blocks, UNMINED, dtype=int)
        for i in order:
            if lambdas[i] <= 1e-9:
                continue
            col = self.pool.columns[i]
            blocks = col.blocks
            if taken[blocks].any():
                continue
            mass_t = col.mass_per_period
            if np.any(load + mass_t > np.array(self.instance.mining_capacity) + 1e-9):
                continue
            assign[blocks] = col.assignment[blocks]
            taken[blocks] = True
            load += mass_t

        schedule = Schedule(assign)
        unassigned = [b for b in range(self.instance.n_blocks) if not taken[b]]
        schedule = lns_repair(
            self.instance,
            schedule,
            unassigned,
            self.scenarios,
            self.sigma,
            max_iters=4 * self.instance.n_blocks,
            seed=cfg.seed,
            only_positive=True,
            net_mining_cost=True,
        )
        from .hybrid import polish_schedule

        schedule = polish_schedule(self.instance, self.evaluator, schedule)
        # incumbent selection: rounded-and-repaired vs polished high-value columns
        best_value = self.evaluator.npv_relaxed(schedule)
        contenders = sorted(self.pool.columns, key=lambda c: -c.value)[:3]
        for col in contenders:
            candidate = polish_schedule(self.instance, self.evaluator, col.schedule())
            value = self.evaluator.npv_relaxed(candidate)
            if value > best_value:
                schedule, best_value = candidate, value
        incumbent = column_from_schedule(self.instance, schedule, self.evaluator)
        incumbent.reduced_cost = -1.0
        if not self.pool.has_signature(incumbent.signature()):
            if len(self.pool) >= cfg.max_columns:
                manage_pool(self.pool, [], self.iteration, self.instance, self.spatial,
                            DwConfig(**{**cfg.__dict__, "max_columns": cfg.max_columns - 1}))
            self.pool.add(incumbent)
        _, _, lp_value = solve_restricted_master(self.pool, self.instance, cfg.n_equipment)
        self.trace.append(
            DwTraceRow(
                iter=self.iteration,
                master_lp_value=lp_value,
                min_reduced_cost=0.0,
                pool_size=len(self.pool),
                n_scenarios_valid=0,
            )
        )
        return schedule

    # -- checkpointing ------------------------------------------------

    def state(self) -> dict:
        return {
            "iteration": self.iteration,
            "capacity_slack": self.capacity_slack,
            "columns": [
                {
                    "id": c.id,
                    "equipment": c.equipment,
                    "assignment": c.assignment.tolist(),
                    "value": c.value,
                    "reduced_cost": None if not np.isfinite(c.reduced_cost) else c.reduced_cost,
                    "birth": c.birth,
                    "last_used": c.last_used,
                    "quality": c.quality,
                }
                for c in self.pool.columns
            ],
            "next_id": self.pool._next_id,
            "evictions": list(self.pool.evictions),
            "trace": [row.__dict__ for row in self.trace],
        }

    def restore(self, doc: dict) -> None:
        self.iteration = doc["iteration"]
        self.capacity_slack = doc["capacity_slack"]
        masses = self.instance.masses()
        self.pool = ColumnPool(max_columns=self.config.max_columns)
        for saved in doc["columns"]:
            assign = np.array(saved["assignment"], dtype=int)
            mass_t = np.array(
                [float(masses[assign == t].sum()) for t in range(self.instance.n_periods)]
            )
            col = SequenceColumn(
                id=saved["id"],
                equipment=saved["equipment"],
                assignment=assign,
                mass_per_period=mass_t,
                value=saved["value"],
                reduced_cost=float("nan") if saved["reduced_cost"] is None else saved["reduced_cost"],
                birth=saved["birth"],
                last_used=saved["last_used"],
                quality=saved["quality"],
            )
            self.pool.columns.append(col)
            self.pool._signatures.add(col.signature())
        self.pool._next_id = doc["next_id"]
        self.pool.evictions = list(doc["evictions"])
        self.trace = [DwTraceRow(**row) for row in doc["trace"]]

    def run(self, control=None) -> tuple[Schedule, list[DwTraceRow]]:
        while not self.finished:
            done = self.step()
            if done:
                break
            if control is not None:
                cmd = control(self.iteration, self)
                if cmd == PAUSE:
                    return None, self.trace
                if cmd == CANCEL:
                    self.cancelled = True
                    break
        self.finished = True
        schedule = self.integerize()
        return schedule, self.trace


def run_dw(
    instance: Instance,
    config: DwConfig,
    agents: dict | None = None,
    seed: int | None = None,
    scenarios: ScenarioSet | None = None,
    sigma: UncertaintyFactors | None = None,
    vae_model=None,
    control=None,
) -> tuple[Schedule, list[DwTraceRow]]:
    if seed is not None:
        config.seed = seed
    search = DwSearch(instance, config, agents, scenarios, sigma, vae_model)
    schedule, trace = search.run(control)
    if schedule is None:  # paused
        return None, trace
    if not check_feasible(instance, schedule).feasible:
        logger.warning("integerized schedule infeasible; falling back to greedy initialization")
        schedule = greedy_initialize(instance, search.scenarios, search.sigma, config.seed)
    return schedule, trace
