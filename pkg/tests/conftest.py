import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pitplan.blockmodel import Block, Economics, GeoFeatures, Instance, OperatingMode


def _feat(alt=0.5, struct=0.5, dist=1.0):
    return GeoFeatures(alteration_intensity=alt, structural_density=struct, distance_to_intrusion=dist)


def make_block(bid, mass, coords, grade, rock=(0,), cost=(0.0,), features=None):
    return Block(
        id=bid,
        mass=float(mass),
        coords=tuple(float(c) for c in coords),
        base_grade=float(grade),
        rock_type_by_scenario=tuple(rock),
        features=features or _feat(),
        mining_cost_by_period=tuple(float(c) for c in cost),
    )


def make_instance(
    blocks,
    precedence=(),
    n_periods=1,
    capacity=1e9,
    hours=1e9,
    modes=None,
    rock_types=("ore",),
    discount_rate=0.08,
    economics=None,
):
    """Hand-built instance helper for the spec's worked examples."""
    fixed = []
    for b in blocks:
        if len(b.mining_cost_by_period) != n_periods:
            cost = tuple(b.mining_cost_by_period) + (0.0,) * (n_periods - len(b.mining_cost_by_period))
            b = make_block(b.id, b.mass, b.coords, b.base_grade, b.rock_type_by_scenario,
                           cost[:n_periods], b.features)
        fixed.append(b)
    blocks = fixed
    n_s = len(blocks[0].rock_type_by_scenario)
    if modes is None:
        modes = [
            OperatingMode(
                id=0,
                rate=100.0,
                blend_fraction={rock_types[0]: 1.0},
                value=tuple(tuple(100.0 for _ in range(n_s)) for _ in blocks),
            )
        ]
    cap = tuple([capacity] * n_periods) if np.isscalar(capacity) else tuple(capacity)
    hrs = tuple([hours] * n_periods) if np.isscalar(hours) else tuple(hours)
    return Instance(
        blocks=list(blocks),
        precedence=[tuple(e) for e in precedence],
        n_periods=n_periods,
        mining_capacity=cap,
        plant_hours=hrs,
        modes=modes,
        rock_types=list(rock_types),
        discount_rate=discount_rate,
        economics=economics or Economics(),
    )


@pytest.fixture
def chain3_doc():
    """3-block chain instance document in the external JSON format."""
    return {
        "n_periods": 2,
        "discount_rate": 0.08,
        "mining_capacity": [5000.0, 5000.0],
        "plant_hours": [50.0, 50.0],
        "rock_types": ["ore"],
        "modes": [
            {
                "id": 0,
                "rate": 100.0,
                "blend_fraction": {"ore": 1.0},
                "value": [[500.0], [400.0], [300.0]],
            }
        ],
        "blocks": [
            {
                "id": b,
                "mass": 1000.0,
                "coords": [0.0, 0.0, float(b)],
                "base_grade": 1.0,
                "features": {"alteration": 0.5, "structural": 0.5, "dist_intrusion": 1.0},
                "mining_cost": [100.0, 100.0],
                "rock_type": [0],
            }
            for b in range(3)
        ],
        "precedence": [[0, 1], [1, 2]],
    }


@pytest.fixture
def tiny_instance():
    """8-block synthetic instance used by most optimizer tests."""
    from pitplan.blockmodel import generate_synthetic

    return generate_synthetic(8, (2, 2, 2), 3, 1, seed=11, n_rock_types=1)
