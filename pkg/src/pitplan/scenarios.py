"""Geological scenario sets: the lognormal SAA sampler and realism filtering.

The trainable generative model lives in vae.py; both produce ScenarioSet
objects whose per-scenario validity score is the spatial-continuity loss
(sum over neighbor pairs of w_ij * (g_i - g_j)^2 / d_ij^2).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .blockmodel import Instance
from .errors import InvalidArgs
from .rng import substream
from .uncertainty import SpatialWeights, rook_weights

SOURCE_LOGNORMAL = "Lognormal"
SOURCE_VAE = "Vae"


@dataclass
class NeighborGraph:
    """Unordered neighbor pairs with weights and squared distances."""

    i_idx: np.ndarray
    j_idx: np.ndarray
    w: np.ndarray
    d2: np.ndarray

    @classmethod
    def from_weights(cls, weights: SpatialWeights, coords: np.ndarray) -> "NeighborGraph":
        ii, jj, w = weights.undirected_pairs()
        coords = np.asarray(coords, dtype=float)
        d2 = ((coords[ii] - coords[jj]) ** 2).sum(axis=1)
        if np.any(d2 <= 0):
            raise InvalidArgs("neighbor pairs must have positive distance")
        return cls(i_idx=ii, j_idx=jj, w=w, d2=d2)

    @classmethod
    def from_instance(cls, instance: Instance) -> "NeighborGraph":
        coords = instance.coords_array()
        return cls.from_weights(rook_weights(coords), coords)


def geological_loss(grades: np.ndarray, graph: NeighborGraph) -> np.ndarray:
    """Spatial-continuity loss per field: sum_ij w_ij (g_i - g_j)^2 / d_ij^2.

    Accepts a single field (1d) or a batch [n][blocks]; returns scalar
    per field.
    """
    grades = np.asarray(grades, dtype=float)
    single = grades.ndim == 1
    batch = grades[None, :] if single else grades
    diff = batch[:, graph.i_idx] - batch[:, graph.j_idx]
    loss = (graph.w / graph.d2)[None, :] * diff**2
    out = loss.sum(axis=1)
    return float(out[0]) if single else out


@dataclass
class ScenarioSet:
    grades: np.ndarray  # [scenario][block], >= 0
    rock_types: np.ndarray  # [scenario][block]
    source: str
    validity: np.ndarray | None = None  # geological loss per scenario
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grades = np.asarray(self.grades, dtype=float)
        self.rock_types = np.asarray(self.rock_types, dtype=int)
        if self.grades.shape != self.rock_types.shape:
            raise InvalidArgs("grades and rock_types must have matching shapes")
        if not np.all(np.isfinite(self.grades)) or np.any(self.grades < 0):
            raise InvalidArgs("grades must be finite and >= 0")
        if self.validity is not None:
            self.validity = np.asarray(self.validity, dtype=float)

    @property
    def n_s(self) -> int:
        return self.grades.shape[0]

    @property
    def n_blocks(self) -> int:
        return self.grades.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.grades.tobytes())
        h.update(self.rock_types.tobytes())
        h.update(self.source.encode())
        return h.hexdigest()

    def subset(self, keep: np.ndarray) -> "ScenarioSet":
        return ScenarioSet(
            grades=self.grades[keep],
            rock_types=self.rock_types[keep],
            source=self.source,
            validity=None if self.validity is None else self.validity[keep],
            meta=dict(self.meta),
        )


def builtin_scenarios(instance: Instance) -> ScenarioSet:
    """The instance's stored scenario labels with base grades per scenario."""
    n_s = instance.n_scenarios_builtin
    grades = np.tile(instance.base_grades(), (n_s, 1))
    out = ScenarioSet(
        grades=grades,
        rock_types=instance.builtin_rock_types(),
        source=SOURCE_LOGNORMAL,
        meta={"use_stored_values": True},
    )
    out.validity = geological_loss(out.grades, NeighborGraph.from_instance(instance))
    return out


def rock_types_for_grades(instance: Instance, grades: np.ndarray) -> np.ndarray:
    """Assign rock types by the instance-level quantile cuts of base grades."""
    n_types = len(instance.rock_types)
    base = instance.base_grades()
    if n_types == 1:
        return np.zeros_like(grades, dtype=int)
    cuts = np.quantile(base, [k / n_types for k in range(1, n_types)])
    return np.searchsorted(cuts, grades, side="right").astype(int)


def sample_lognormal(
    instance: Instance, n_s: int, shock_sigma: float, seed: int
) -> ScenarioSet:
    """Mean-preserving lognormal grade shocks:
    g[s][b] = base[b] * exp(sigma * z - sigma^2 / 2), z ~ N(0, 1).
    """
    if n_s < 1:
        raise InvalidArgs("n_s must be >= 1")
    if shock_sigma < 0:
        raise InvalidArgs("shock_sigma must be >= 0")
    base = instance.base_grades()
    z = substream(seed, "lognormal").standard_normal((n_s, instance.n_blocks))
    grades = base[None, :] * np.exp(shock_sigma * z - shock_sigma**2 / 2.0)
    rock = rock_types_for_grades(instance, grades)
    out = ScenarioSet(grades=grades, rock_types=rock, source=SOURCE_LOGNORMAL)
    out.validity = geological_loss(grades, NeighborGraph.from_instance(instance))
    return out


def filter_valid(
    scenarios: ScenarioSet, tau: float, graph: NeighborGraph | None = None
) -> ScenarioSet:
    """Keep scenarios whose geological loss is below tau, order preserved.

    The comparison is strict up to floating-point tolerance, so a zero
    threshold keeps exactly the zero-loss (constant) fields.
    """
    if scenarios.validity is None:
        if graph is None:
            raise InvalidArgs("validity absent: a neighbor graph is required to compute it")
        scenarios.validity = geological_loss(scenarios.grades, graph)
    keep = scenarios.validity < tau + 1e-12
    return scenarios.subset(keep)
