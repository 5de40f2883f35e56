"""Block-model data types, instance file I/O and synthetic instance generation.

Units are fixed across the engine: tonnes, hours, dollars, meters; grades
are dimensionless metal content per tonne. Mining costs are stored
undiscounted and discounted at evaluation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgs, ParseError, ValidationError
from .rng import substream

UNMINED = -1


@dataclass(frozen=True)
class GeoFeatures:
    """Per-block geological descriptors feeding the uncertainty factor."""

    alteration_intensity: float
    structural_density: float
    distance_to_intrusion: float

    def validate(self):
        for name in ("alteration_intensity", "structural_density"):
            v = getattr(self, name)
            if not np.isfinite(v) or not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        if not np.isfinite(self.distance_to_intrusion) or self.distance_to_intrusion < 0:
            raise ValidationError("distance_to_intrusion must be finite and >= 0")


@dataclass(frozen=True)
class Block:
    id: int
    mass: float
    coords: tuple[float, float, float]
    base_grade: float
    rock_type_by_scenario: tuple[int, ...]
    features: GeoFeatures
    mining_cost_by_period: tuple[float, ...]

    def validate(self, n_periods: int, n_rock_types: int):
        if self.mass <= 0 or not np.isfinite(self.mass):
            raise ValidationError(f"block {self.id}: mass {self.mass} must be > 0")
        if self.base_grade < 0 or not np.isfinite(self.base_grade):
            raise ValidationError(f"block {self.id}: base_grade {self.base_grade} must be >= 0")
        if len(self.mining_cost_by_period) != n_periods:
            raise ValidationError(f"block {self.id}: mining_cost length != n_periods")
        for rt in self.rock_type_by_scenario:
            if not 0 <= rt < n_rock_types:
                raise ValidationError(f"block {self.id}: rock type {rt} out of range")
        self.features.validate()


@dataclass(frozen=True)
class OperatingMode:
    """Plant configuration: recoverable values, throughput rate and blend."""

    id: int
    rate: float
    blend_fraction: dict[str, float]
    # value[b][s]: recoverable dollars for block b under scenario s (undiscounted)
    value: tuple[tuple[float, ...], ...]

    def validate(self, rock_types: list[str]):
        if self.rate < 0:
            raise ValidationError(f"mode {self.id}: rate must be >= 0")
        total = sum(self.blend_fraction.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"mode {self.id}: blend fractions sum to {total}, not 1")
        for rock in self.blend_fraction:
            if rock not in rock_types:
                raise ValidationError(f"mode {self.id}: unknown rock type {rock!r}")


@dataclass(frozen=True)
class Economics:
    """Prices and per-mode recovery/cost used to value freshly sampled scenarios."""

    price: float = 5.0
    recovery_by_mode: tuple[float, ...] = (0.85,)
    processing_cost_by_mode: tuple[float, ...] = (1.0,)


@dataclass
class Instance:
    blocks: list[Block]
    precedence: list[tuple[int, int]]  # (i, j): i must be mined no later than j
    n_periods: int
    mining_capacity: tuple[float, ...]
    plant_hours: tuple[float, ...]
    modes: list[OperatingMode]
    rock_types: list[str]
    discount_rate: float = 0.08
    economics: Economics = field(default_factory=Economics)

    # -- derived, filled by validate() --
    _preds: list[list[int]] = field(default_factory=list, repr=False)
    _succs: list[list[int]] = field(default_factory=list, repr=False)
    _topo: list[int] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.validate()

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_scenarios_builtin(self) -> int:
        return len(self.blocks[0].rock_type_by_scenario) if self.blocks else 0

    def predecessors(self, b: int) -> list[int]:
        return self._preds[b]

    def successors(self, b: int) -> list[int]:
        return self._succs[b]

    def topological_order(self) -> list[int]:
        return list(self._topo)

    def masses(self) -> np.ndarray:
        return np.array([b.mass for b in self.blocks])

    def coords_array(self) -> np.ndarray:
        return np.array([b.coords for b in self.blocks])

    def base_grades(self) -> np.ndarray:
        return np.array([b.base_grade for b in self.blocks])

    def mining_costs(self) -> np.ndarray:
        """c[b][t], undiscounted."""
        return np.array([b.mining_cost_by_period for b in self.blocks])

    def builtin_values(self) -> np.ndarray:
        """v[s][b][o] from the stored per-mode value matrices."""
        n_s = self.n_scenarios_builtin
        v = np.zeros((n_s, self.n_blocks, len(self.modes)))
        for o, mode in enumerate(self.modes):
            v[:, :, o] = np.array(mode.value).T
        return v

    def builtin_rock_types(self) -> np.ndarray:
        """rt[s][b] from the stored per-block scenario assignments."""
        return np.array([b.rock_type_by_scenario for b in self.blocks]).T

    def validate(self):
        if self.n_periods < 1:
            raise ValidationError("n_periods must be >= 1")
        if len(self.mining_capacity) != self.n_periods or len(self.plant_hours) != self.n_periods:
            raise ValidationError("capacity/hours arrays must have n_periods entries")
        if any(m <= 0 for m in self.mining_capacity):
            raise ValidationError("mining capacity must be > 0 in every period")
        if any(d <= 0 for d in self.plant_hours):
            raise ValidationError("plant hours must be > 0 in every period")
        ids = [b.id for b in self.blocks]
        if ids != list(range(len(self.blocks))):
            raise ValidationError("block ids must be 0..n-1 in order")
        n_s = self.n_scenarios_builtin
        for b in self.blocks:
            if len(b.rock_type_by_scenario) != n_s:
                raise ValidationError("inconsistent scenario count across blocks")
            b.validate(self.n_periods, len(self.rock_types))
        for mode in self.modes:
            mode.validate(self.rock_types)
            if len(mode.value) != len(self.blocks):
                raise ValidationError(f"mode {mode.id}: value matrix has wrong block count")
            if any(len(row) != n_s for row in mode.value):
                raise ValidationError(f"mode {mode.id}: value matrix has wrong scenario count")
        n = len(self.blocks)
        for i, j in self.precedence:
            if not (0 <= i < n and 0 <= j < n):
                raise ValidationError(f"precedence edge ({i}, {j}) references unknown block")
        self._preds = [[] for _ in range(n)]
        self._succs = [[] for _ in range(n)]
        for i, j in self.precedence:
            self._preds[j].append(i)
            self._succs[i].append(j)
        self._topo = _topological_order(n, self._preds, self._succs)

    def to_dict(self) -> dict:
        return {
            "n_periods": self.n_periods,
            "discount_rate": self.discount_rate,
            "mining_capacity": list(self.mining_capacity),
            "plant_hours": list(self.plant_hours),
            "rock_types": list(self.rock_types),
            "economics": {
                "price": self.economics.price,
                "recovery": list(self.economics.recovery_by_mode),
                "processing_cost": list(self.economics.processing_cost_by_mode),
            },
            "modes": [
                {
                    "id": m.id,
                    "rate": m.rate,
                    "blend_fraction": {k: m.blend_fraction[k] for k in sorted(m.blend_fraction)},
                    "value": [list(row) for row in m.value],
                }
                for m in self.modes
            ],
            "blocks": [
                {
                    "id": b.id,
                    "mass": b.mass,
                    "coords": list(b.coords),
                    "base_grade": b.base_grade,
                    "features": {
                        "alteration": b.features.alteration_intensity,
                        "structural": b.features.structural_density,
                        "dist_intrusion": b.features.distance_to_intrusion,
                    },
                    "mining_cost": list(b.mining_cost_by_period),
                    "rock_type": list(b.rock_type_by_scenario),
                }
                for b in self.blocks
            ],
            "precedence": [[i, j] for i, j in self.precedence],
        }


def _topological_order(n: int, preds: list[list[int]], succs: list[list[int]]) -> list[int]:
    """Kahn's algorithm; raises ValidationError on a cycle."""
    indeg = [len(p) for p in preds]
    queue = sorted(i for i in range(n) if indeg[i] == 0)
    order: list[int] = []
    while queue:
        b = queue.pop(0)
        order.append(b)
        fresh = []
        for j in succs[b]:
            indeg[j] -= 1
            if indeg[j] == 0:
                fresh.append(j)
        if fresh:
            queue = sorted(queue + fresh)
    if len(order) != n:
        raise ValidationError("cycle in precedence graph")
    return order


def instance_from_dict(doc: dict) -> Instance:
    try:
        econ_doc = doc.get("economics")
        n_modes = len(doc["modes"])
        if econ_doc is None:
            economics = Economics(
                recovery_by_mode=tuple([0.85] * n_modes),
                processing_cost_by_mode=tuple([1.0] * n_modes),
            )
        else:
            economics = Economics(
                price=float(econ_doc["price"]),
                recovery_by_mode=tuple(float(r) for r in econ_doc["recovery"]),
                processing_cost_by_mode=tuple(float(c) for c in econ_doc["processing_cost"]),
            )
        blocks = [
            Block(
                id=int(b["id"]),
                mass=float(b["mass"]),
                coords=tuple(float(c) for c in b["coords"]),
                base_grade=float(b["base_grade"]),
                rock_type_by_scenario=tuple(int(r) for r in b["rock_type"]),
                features=GeoFeatures(
                    alteration_intensity=float(b["features"]["alteration"]),
                    structural_density=float(b["features"]["structural"]),
                    distance_to_intrusion=float(b["features"]["dist_intrusion"]),
                ),
                mining_cost_by_period=tuple(float(c) for c in b["mining_cost"]),
            )
            for b in doc["blocks"]
        ]
        modes = [
            OperatingMode(
                id=int(m["id"]),
                rate=float(m["rate"]),
                blend_fraction={str(k): float(v) for k, v in m["blend_fraction"].items()},
                value=tuple(tuple(float(x) for x in row) for row in m["value"]),
            )
            for m in doc["modes"]
        ]
        return Instance(
            blocks=blocks,
            precedence=[(int(i), int(j)) for i, j in doc["precedence"]],
            n_periods=int(doc["n_periods"]),
            mining_capacity=tuple(float(x) for x in doc["mining_capacity"]),
            plant_hours=tuple(float(x) for x in doc["plant_hours"]),
            modes=modes,
            rock_types=[str(r) for r in doc["rock_types"]],
            discount_rate=float(doc.get("discount_rate", 0.08)),
            economics=economics,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed instance document: {exc}") from exc


def load_instance(path) -> Instance:
    """Load and validate an instance JSON file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read instance file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("instance file must contain a JSON object")
    return instance_from_dict(doc)


def save_instance(instance: Instance, path) -> None:
    """Write the canonical JSON serialization (stable byte-for-byte)."""
    with open(path, "w") as fh:
        json.dump(instance.to_dict(), fh, sort_keys=True, separators=(",", ":"))


def instance_bytes(instance: Instance) -> bytes:
    return json.dumps(instance.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def _smooth_field(rng: np.random.Generator, dims: tuple[int, int, int], smoothing: int = 2) -> np.ndarray:
    """Spatially correlated standard-normal-ish field via box smoothing of white noise."""
    nx, ny, nz = dims
    noise = rng.standard_normal((nx, ny, nz))
    field_ = noise
    for axis, size in enumerate(dims):
        # cap the window so short axes keep spatial variation
        radius = min(smoothing, max(0, (size - 1) // 2))
        if size == 1 or radius == 0:
            continue
        acc = np.zeros_like(field_)
        count = np.zeros_like(field_)
        for shift in range(-radius, radius + 1):
            rolled = np.roll(field_, shift, axis=axis)
            # zero out wrap-around instead of treating the grid as a torus
            sl = [slice(None)] * 3
            if shift > 0:
                sl[axis] = slice(0, shift)
            elif shift < 0:
                sl[axis] = slice(size + shift, size)
            mask = np.ones_like(field_)
            if shift != 0:
                mask[tuple(sl)] = 0.0
                rolled = rolled * mask
            acc += rolled
            count += mask
        field_ = acc / count
    std = field_.std()
    if std > 0:
        field_ = (field_ - field_.mean()) / std
    return field_


def generate_synthetic(
    n_blocks: int,
    grid_dims: tuple[int, int, int],
    n_periods: int,
    n_modes: int,
    seed: int,
    *,
    n_scenarios: int = 2,
    n_rock_types: int = 2,
    spacing: float = 1.0,
    grade_sigma: float = 0.5,
    capacity_factor: float = 1.3,
    mining_cost_rate: float = 0.8,
) -> Instance:
    """Seeded synthetic block model on a regular grid.

    Grades come from a spatially correlated Gaussian field, exponentiated so
    they stay nonnegative. Precedence links every block to the up-to-9 blocks
    in the layer above within a 45-degree cone. Layer index 0 is the surface.
    """
    nx, ny, nz = grid_dims
    if n_blocks != nx * ny * nz:
        raise InvalidArgs(f"n_blocks={n_blocks} != product of grid dims {grid_dims}")
    if min(n_blocks, nx, ny, nz, n_periods, n_modes, n_scenarios, n_rock_types) < 1:
        raise InvalidArgs("all size arguments must be >= 1")

    rng = substream(seed, "synthetic")
    base_field = _smooth_field(rng, grid_dims)
    base_grades = np.exp(grade_sigma * base_field)

    def block_index(ix, iy, iz):
        return (iz * ny + iy) * nx + ix

    coords, precedence = [], []
    for iz in range(nz):
        for iy in range(ny):
            for ix in range(nx):
                coords.append((ix * spacing, iy * spacing, iz * spacing))
                if iz == 0:
                    continue
                b = block_index(ix, iy, iz)
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        px, py = ix + dx, iy + dy
                        if 0 <= px < nx and 0 <= py < ny:
                            precedence.append((block_index(px, py, iz - 1), b))

    masses = rng.uniform(800.0, 1200.0, size=n_blocks)
    base_flat = np.array(
        [base_grades[int(x / spacing), int(y / spacing), int(z / spacing)] for x, y, z in coords]
    )

    # per-scenario grade realizations drive rock types and mode values
    scen_fields = np.empty((n_scenarios, n_blocks))
    for s in range(n_scenarios):
        shocks = substream(seed, "synthetic-scen", s).standard_normal(n_blocks)
        scen_fields[s] = base_flat * np.exp(0.25 * shocks - 0.25**2 / 2)

    # rock types by quantile cuts of the base grades, applied per scenario
    cuts = np.quantile(base_flat, [k / n_rock_types for k in range(1, n_rock_types)])
    rock_by_scen = np.zeros((n_scenarios, n_blocks), dtype=int)
    for s in range(n_scenarios):
        rock_by_scen[s] = np.searchsorted(cuts, scen_fields[s], side="right")
    rock_names = [f"rock_{chr(ord('a') + p)}" for p in range(n_rock_types)]

    recovery = tuple(0.85 + 0.05 * o for o in range(n_modes))
    proc_cost = tuple(1.0 + 0.4 * o for o in range(n_modes))
    economics = Economics(price=6.0, recovery_by_mode=recovery, processing_cost_by_mode=proc_cost)

    total_mass = masses.sum()
    capacity = tuple([round(capacity_factor * total_mass / n_periods, 3)] * n_periods)
    mean_rate = 500.0
    hours = tuple([round(0.8 * capacity[0] / mean_rate, 3)] * n_periods)

    modes = []
    for o in range(n_modes):
        rate = mean_rate * (1.0 + 0.2 * o)
        if n_rock_types == 1:
            blend = {rock_names[0]: 1.0}
        else:
            lead = 1.0 / n_rock_types + 0.15 * (o % 2)
            rest = (1.0 - lead) / (n_rock_types - 1)
            blend = {rock_names[0]: round(lead, 6)}
            for p in range(1, n_rock_types):
                blend[rock_names[p]] = round(rest, 6)
            blend[rock_names[-1]] = round(1.0 - sum(v for k, v in blend.items() if k != rock_names[-1]), 6)
        value = tuple(
            tuple(
                float(scen_fields[s, b] * masses[b] * economics.price * recovery[o] - masses[b] * proc_cost[o])
                for s in range(n_scenarios)
            )
            for b in range(n_blocks)
        )
        modes.append(OperatingMode(id=o, rate=rate, blend_fraction=blend, value=value))

    mining_rate = mining_cost_rate
    feat_rng = substream(seed, "synthetic-feat")
    alteration = feat_rng.uniform(0, 1, n_blocks)
    structural = feat_rng.uniform(0, 1, n_blocks)
    intrusion = feat_rng.uniform(0, spacing * max(nx, ny, nz), n_blocks)

    blocks = [
        Block(
            id=b,
            mass=float(round(masses[b], 6)),
            coords=coords[b],
            base_grade=float(round(base_flat[b], 9)),
            rock_type_by_scenario=tuple(int(r) for r in rock_by_scen[:, b]),
            features=GeoFeatures(
                alteration_intensity=float(round(alteration[b], 9)),
                structural_density=float(round(structural[b], 9)),
                distance_to_intrusion=float(round(intrusion[b], 9)),
            ),
            mining_cost_by_period=tuple(
                float(round(masses[b] * mining_rate * (1.0 + 0.02 * t), 6)) for t in range(n_periods)
            ),
        )
        for b in range(n_blocks)
    ]

    return Instance(
        blocks=blocks,
        precedence=precedence,
        n_periods=n_periods,
        mining_capacity=capacity,
        plant_hours=hours,
        modes=modes,
        rock_types=rock_names,
        discount_rate=0.08,
        economics=economics,
    )
