import json

import numpy as np
import pytest

from pitplan.blockmodel import (
    generate_synthetic,
    instance_bytes,
    load_instance,
    save_instance,
)
from pitplan.errors import InvalidArgs, ParseError, ValidationError
from pitplan.uncertainty import morans_i, rook_weights


class TestLoadInstance:
    def test_chain_round_trip(self, chain3_doc, tmp_path):
        path = tmp_path / "chain.json"
        path.write_text(json.dumps(chain3_doc))
        inst = load_instance(path)
        assert inst.n_blocks == 3
        assert len(inst.precedence) == 2
        out = tmp_path / "out.json"
        save_instance(inst, out)
        assert load_instance(out).to_dict() == inst.to_dict()

    def test_cycle_rejected(self, chain3_doc, tmp_path):
        chain3_doc["precedence"] = [[0, 1], [1, 0]]
        path = tmp_path / "cyc.json"
        path.write_text(json.dumps(chain3_doc))
        with pytest.raises(ValidationError, match="cycle"):
            load_instance(path)

    def test_zero_mass_rejected(self, chain3_doc, tmp_path):
        chain3_doc["blocks"][0]["mass"] = 0.0
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(chain3_doc))
        with pytest.raises(ValidationError):
            load_instance(path)

    def test_dangling_precedence_rejected(self, chain3_doc, tmp_path):
        chain3_doc["precedence"] = [[0, 7]]
        path = tmp_path / "dangle.json"
        path.write_text(json.dumps(chain3_doc))
        with pytest.raises(ValidationError):
            load_instance(path)

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_instance(path)

    def test_blend_must_sum_to_one(self, chain3_doc, tmp_path):
        chain3_doc["modes"][0]["blend_fraction"] = {"ore": 0.7}
        path = tmp_path / "blend.json"
        path.write_text(json.dumps(chain3_doc))
        with pytest.raises(ValidationError, match="blend"):
            load_instance(path)


class TestGenerateSynthetic:
    def test_deterministic_in_seed(self):
        a = generate_synthetic(8, (2, 2, 2), 3, 2, seed=1)
        b = generate_synthetic(8, (2, 2, 2), 3, 2, seed=1)
        assert instance_bytes(a) == instance_bytes(b)
        c = generate_synthetic(8, (2, 2, 2), 3, 2, seed=2)
        assert instance_bytes(a) != instance_bytes(c)

    def test_cone_precedence(self):
        inst = generate_synthetic(8, (2, 2, 2), 3, 2, seed=1)
        for b in range(4):  # surface layer
            assert inst.predecessors(b) == []
        for b in range(4, 8):  # second layer: the full 2x2 above is in the cone
            assert len(inst.predecessors(b)) >= 1

    def test_grades_spatially_correlated(self):
        # Moran's I of the generated field must be positive under rook weights
        inst = generate_synthetic(1000, (10, 10, 10), 6, 2, seed=7)
        weights = rook_weights(inst.coords_array())
        assert morans_i(inst.base_grades(), weights) > 0

    def test_grid_mismatch_rejected(self):
        with pytest.raises(InvalidArgs):
            generate_synthetic(7, (2, 2, 2), 3, 2, seed=1)

    def test_topological_order_exists(self):
        inst = generate_synthetic(27, (3, 3, 3), 3, 1, seed=3)
        order = inst.topological_order()
        pos = {b: k for k, b in enumerate(order)}
        assert all(pos[i] < pos[j] for i, j in inst.precedence)

    def test_all_invariants_hold(self):
        inst = generate_synthetic(27, (3, 3, 3), 4, 2, seed=5, n_rock_types=2)
        assert inst.n_periods == 4
        assert all(b.mass > 0 for b in inst.blocks)
        assert all(b.base_grade >= 0 for b in inst.blocks)
        for mode in inst.modes:
            assert abs(sum(mode.blend_fraction.values()) - 1.0) < 1e-9
