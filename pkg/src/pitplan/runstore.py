"""On-disk run persistence and execution worker.

One directory per run (config.json, trace.csv, result.json,
checkpoint.json) plus an index of records; no database. The store is
the only writer. Optimizers observe control commands at iteration
boundaries, so pause/resume never changes results: checkpoints carry
the full search state and every random draw is derived from
(seed, iteration) substreams.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blockmodel import Economics, Instance, instance_from_dict
from .colgen import DwConfig, DwSearch, write_dw_trace_csv
from .errors import (
    IllegalTransition,
    InvalidConfig,
    InvalidOverride,
    UnknownInstance,
    UnknownRun,
)
from .evaluate import Schedule, ScheduleEvaluator
from .hybrid import CANCEL, CONTINUE, PAUSE, HybridConfig, HybridSearch, write_trace_csv
from .rng import substream
from .saa import branch_and_bound_exact, risk_metrics, run_saa
from .scenarios import sample_lognormal
from .uncertainty import uncertainty_factors

QUEUED, RUNNING, PAUSED, DONE, FAILED = "Queued", "Running", "Paused", "Done", "Failed"

_LEGAL_TRANSITIONS = {
    (QUEUED, RUNNING),
    (RUNNING, PAUSED),
    (PAUSED, RUNNING),
    (RUNNING, DONE),
    (RUNNING, FAILED),
    (QUEUED, FAILED),
    (PAUSED, FAILED),
}

_OVERRIDE_KEYS = {"price_scale", "capacity_scale", "n_scenarios", "eps0", "schedule"}

DEFAULT_CONFIG = {
    "method": "hybrid",
    "seed": 0,
    "n_scenarios": 4,
    "shock_sigma": 0.3,
    "risk_adjusted": True,
    "rl": False,
    "eps0": 2.0,
    "schedule": "linear",
    "price_scale": 1.0,
    "capacity_scale": 1.0,
    "hybrid": {},
    "dw": {},
    "saa": {"s_in": 4, "s_out": 8, "replications": 3},
}


def validate_config(config: dict) -> dict:
    merged = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, value in config.items():
        if key not in merged:
            raise InvalidConfig(f"unknown config key {key!r}")
        if isinstance(merged[key], dict):
            if not isinstance(value, dict):
                raise InvalidConfig(f"{key} must be an object")
            merged[key].update(value)
        else:
            merged[key] = value
    if merged["method"] not in ("hybrid", "dw", "exact", "saa"):
        raise InvalidConfig(f"unknown method {merged['method']!r}")
    if merged["schedule"] not in ("linear", "cosine"):
        raise InvalidConfig("schedule must be linear or cosine")
    if merged["n_scenarios"] < 1 or merged["n_scenarios"] > 1000:
        raise InvalidConfig("n_scenarios must be in [1, 1000]")
    for key in ("price_scale", "capacity_scale"):
        if not merged[key] > 0:
            raise InvalidConfig(f"{key} must be > 0")
    if merged["eps0"] < 0:
        raise InvalidConfig("eps0 must be >= 0")
    return merged


@dataclass
class RunRecord:
    run_id: str
    instance_id: str
    status: str
    config: dict
    parent_id: str | None = None
    created_at: float = 0.0
    updated_at: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "instance_id": self.instance_id,
            "status": self.status,
            "config": self.config,
            "parent_id": self.parent_id,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        return cls(**doc)


def _canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class RunStore:
    """Directory-backed store for instances and runs."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "instances").mkdir(parents=True, exist_ok=True)
        (self.root / "runs").mkdir(parents=True, exist_ok=True)

    # -- instances -----------------------------------------------------

    def add_instance(self, doc: dict) -> str:
        instance_from_dict(doc)  # validate before persisting
        text = _canonical_json(doc)
        instance_id = hashlib.sha256(text.encode()).hexdigest()[:12]
        _atomic_write(self.root / "instances" / f"{instance_id}.json", text)
        return instance_id

    def has_instance(self, instance_id: str) -> bool:
        return (self.root / "instances" / f"{instance_id}.json").exists()

    def get_instance_doc(self, instance_id: str) -> dict:
        path = self.root / "instances" / f"{instance_id}.json"
        if not path.exists():
            raise UnknownInstance(f"instance {instance_id} not found")
        return json.loads(path.read_text())

    def load_instance(self, instance_id: str) -> Instance:
        return instance_from_dict(self.get_instance_doc(instance_id))

    def list_instances(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "instances").glob("*.json"))

    # -- run records ----------------------------------------------------

    def _run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def _record_path(self, run_id: str) -> Path:
        return self._run_dir(run_id) / "record.json"

    def create_run(
        self, instance_id: str, config: dict, parent_id: str | None = None
    ) -> RunRecord:
        if not self.has_instance(instance_id):
            raise UnknownInstance(f"instance {instance_id} not found")
        config = validate_config(config)
        run_id = uuid.uuid4().hex[:16]
        record = RunRecord(
            run_id=run_id,
            instance_id=instance_id,
            status=QUEUED,
            config=config,
            parent_id=parent_id,
            created_at=time.time(),
            updated_at=time.time(),
        )
        rd = self._run_dir(run_id)
        rd.mkdir(parents=True)
        _atomic_write(rd / "config.json", _canonical_json(config))
        _atomic_write(self._record_path(run_id), _canonical_json(record.to_dict()))
        return record

    def get_run(self, run_id: str) -> RunRecord:
        path = self._record_path(run_id)
        if not path.exists():
            raise UnknownRun(f"run {run_id} not found")
        return RunRecord.from_dict(json.loads(path.read_text()))

    def list_runs(self) -> list[RunRecord]:
        out = []
        for d in sorted((self.root / "runs").iterdir()):
            if (d / "record.json").exists():
                out.append(RunRecord.from_dict(json.loads((d / "record.json").read_text())))
        return out

    def set_status(self, run_id: str, status: str, error: str | None = None) -> RunRecord:
        record = self.get_run(run_id)
        if (record.status, status) not in _LEGAL_TRANSITIONS:
            raise IllegalTransition(f"cannot move run from {record.status} to {status}")
        record.status = status
        record.updated_at = time.time()
        record.error = error
        _atomic_write(self._record_path(run_id), _canonical_json(record.to_dict()))
        return record

    # -- control --------------------------------------------------------

    def request_control(self, run_id: str, command: str) -> str:
        """pause | resume | cancel; validated against the current status."""
        record = self.get_run(run_id)
        if command == "pause":
            if record.status != RUNNING:
                raise IllegalTransition(f"cannot pause a {record.status} run")
            self._write_control(run_id, "pause")
            return record.status
        if command == "resume":
            if record.status != PAUSED:
                raise IllegalTransition(f"cannot resume a {record.status} run")
            self._write_control(run_id, "")
            return self.set_status(run_id, RUNNING).status
        if command == "cancel":
            if record.status in (DONE, FAILED):
                raise IllegalTransition(f"cannot cancel a {record.status} run")
            if record.status == QUEUED:
                return self.set_status(run_id, FAILED, error="Cancelled").status
            if record.status == PAUSED:
                return self.set_status(run_id, FAILED, error="Cancelled").status
            self._write_control(run_id, "cancel")
            return record.status
        raise IllegalTransition(f"unknown command {command!r}")

    def _write_control(self, run_id: str, command: str) -> None:
        _atomic_write(self._run_dir(run_id) / "control.json", _canonical_json({"command": command}))

    def read_control(self, run_id: str) -> str:
        path = self._run_dir(run_id) / "control.json"
        if not path.exists():
            return ""
        return json.loads(path.read_text()).get("command", "")

    # -- artifacts --------------------------------------------------------

    def write_result(self, run_id: str, result: dict) -> None:
        _atomic_write(self._run_dir(run_id) / "result.json", _canonical_json(result))

    def read_result(self, run_id: str) -> dict:
        path = self._run_dir(run_id) / "result.json"
        if not path.exists():
            raise UnknownRun(f"run {run_id} has no result")
        return json.loads(path.read_text())

    def result_bytes(self, run_id: str) -> bytes:
        return (self._run_dir(run_id) / "result.json").read_bytes()

    def write_checkpoint(self, run_id: str, state: dict) -> None:
        _atomic_write(self._run_dir(run_id) / "checkpoint.json", _canonical_json(state))

    def read_checkpoint(self, run_id: str) -> dict | None:
        path = self._run_dir(run_id) / "checkpoint.json"
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def read_timing(self, run_id: str) -> dict:
        path = self._run_dir(run_id) / "timing.json"
        return json.loads(path.read_text()) if path.exists() else {}

    def trace_path(self, run_id: str) -> Path:
        return self._run_dir(run_id) / "trace.csv"

    def read_trace(self, run_id: str, from_iter: int = -1) -> list[dict]:
        path = self.trace_path(run_id)
        if not path.exists():
            return []
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if int(row["iter"]) > from_iter:
                    rows.append(row)
        return rows

    # -- what-if ---------------------------------------------------------

    def whatif_run(self, parent_id: str, overrides: dict) -> RunRecord:
        parent = self.get_run(parent_id)
        if parent.status != DONE:
            raise InvalidOverride(f"parent run is {parent.status}, not Done", http_status=409)
        bad = set(overrides) - _OVERRIDE_KEYS
        if bad:
            raise InvalidOverride(f"unknown override keys: {sorted(bad)}")
        config = json.loads(json.dumps(parent.config))
        config.update(overrides)
        config = validate_config(config)
        return self.create_run(parent.instance_id, config, parent_id=parent_id)


def hybrid_config_for(config: dict) -> HybridConfig:
    """Merged HybridConfig for a run config (shared by worker and reports)."""
    overrides = dict(config.get("hybrid", {}))
    overrides.setdefault("eps0", float(config["eps0"]))
    overrides.setdefault("eps_kind", config["schedule"])
    return HybridConfig(**{**HybridConfig().__dict__, **overrides, "seed": int(config["seed"])})


def scaled_instance(instance: Instance, config: dict) -> Instance:
    """Apply price/capacity what-if scales to a fresh Instance copy."""
    price_scale = config.get("price_scale", 1.0)
    capacity_scale = config.get("capacity_scale", 1.0)
    if price_scale == 1.0 and capacity_scale == 1.0:
        return instance
    econ = instance.economics
    return Instance(
        blocks=instance.blocks,
        precedence=instance.precedence,
        n_periods=instance.n_periods,
        mining_capacity=tuple(c * capacity_scale for c in instance.mining_capacity),
        plant_hours=instance.plant_hours,
        modes=instance.modes,
        rock_types=instance.rock_types,
        discount_rate=instance.discount_rate,
        economics=Economics(
            price=econ.price * price_scale,
            recovery_by_mode=econ.recovery_by_mode,
            processing_cost_by_mode=econ.processing_cost_by_mode,
        ),
    )


class RunWorker:
    """Executes one run to completion, honoring pause/cancel at iteration
    boundaries and flushing the trace incrementally."""

    def __init__(self, store: RunStore):
        self.store = store

    def execute(self, run_id: str) -> RunRecord:
        store = self.store
        record = store.get_run(run_id)
        if record.status == QUEUED:
            record = store.set_status(run_id, RUNNING)
        elif record.status != RUNNING:
            raise IllegalTransition(f"run {run_id} is {record.status}")
        try:
            return self._execute_inner(run_id, record)
        except Exception as exc:  # noqa: BLE001 - recorded, not raised
            store.set_status(run_id, FAILED, error=f"{type(exc).__name__}: {exc}")
            return store.get_run(run_id)

    def _execute_inner(self, run_id: str, record: RunRecord) -> RunRecord:
        store = self.store
        config = record.config
        instance = scaled_instance(store.load_instance(record.instance_id), config)
        seed = int(config["seed"])
        method = config["method"]
        started = time.monotonic()

        if method == "saa":
            saa_cfg = config["saa"]
            result = run_saa(
                instance,
                s_in=int(saa_cfg["s_in"]),
                s_out=int(saa_cfg["s_out"]),
                replications=int(saa_cfg["replications"]),
                optimizer=saa_cfg.get("optimizer", "exact"),
                shock_sigma=float(config["shock_sigma"]),
                seed=seed,
            )
            doc = result.to_dict()
            doc["kind"] = "saa"
            store.write_result(run_id, _strip_timing(doc))
            self._write_saa_trace(run_id, result)
            _atomic_write(
                store._run_dir(run_id) / "timing.json",
                _canonical_json(
                    {
                        "elapsed_seconds": time.monotonic() - started,
                        "per_replication": [r.elapsed_seconds for r in result.replications],
                    }
                ),
            )
            store.set_status(run_id, DONE)
            return store.get_run(run_id)

        scen_seed = int(substream(seed, "scen").integers(0, 2**62))
        scenarios = sample_lognormal(
            instance, int(config["n_scenarios"]), float(config["shock_sigma"]), scen_seed
        )
        sigma = uncertainty_factors(instance, scenarios.grades) if config["risk_adjusted"] else None
        evaluator = ScheduleEvaluator(instance, scenarios, sigma)

        agents = None
        if config.get("rl"):
            from .agents import default_agents

            agents = default_agents(seed)

        if method == "exact":
            bnb = branch_and_bound_exact(instance, scenarios, sigma=sigma)
            schedule, trace_rows = bnb.schedule, []
        elif method == "hybrid":
            schedule, trace_rows = self._run_hybrid(run_id, instance, scenarios, sigma, config, agents)
            if schedule is None:  # paused
                return store.get_run(run_id)
        elif method == "dw":
            schedule, trace_rows = self._run_dw(run_id, instance, scenarios, sigma, config, agents)
            if schedule is None:
                return store.get_run(run_id)
        else:
            raise InvalidConfig(f"unknown method {method!r}")

        cancelled = store.read_control(run_id) == "cancel"
        per_scenario = evaluator.per_scenario_npv(schedule)
        risk = risk_metrics(per_scenario)
        result = {
            "kind": "optimize",
            "method": method,
            "npv": evaluator.objective(schedule),
            "schedule": schedule.assignment.tolist(),
            "schedule_digest": schedule.digest(),
            "per_scenario_npv": per_scenario.tolist(),
            "risk": {
                "p10": risk.p10,
                "p50": risk.p50,
                "p90": risk.p90,
                "cvar10": risk.cvar10,
                "mean": risk.mean,
                "sd": risk.sd,
            },
            "iterations": len(trace_rows),
            "scenario_digest": scenarios.digest(),
        }
        if record.parent_id:
            result["whatif_delta"] = self._delta_vs_parent(record.parent_id, result)
        store.write_result(run_id, result)
        _atomic_write(
            store._run_dir(run_id) / "timing.json",
            _canonical_json(
                {
                    "elapsed_seconds": time.monotonic() - started,
                    "evaluations": len(evaluator._stage2_cache),
                }
            ),
        )
        if cancelled:
            store.set_status(run_id, FAILED, error="Cancelled")
        else:
            store.set_status(run_id, DONE)
        return store.get_run(run_id)

    # -- per-method drivers ----------------------------------------------

    def _control_hook(self, run_id: str, writer):
        store = self.store

        def control(iteration: int, search) -> str:
            writer(search)
            command = store.read_control(run_id)
            if command == "pause":
                store.write_checkpoint(run_id, search.state())
                store._write_control(run_id, "")
                store.set_status(run_id, PAUSED)
                return PAUSE
            if command == "cancel":
                return CANCEL
            return CONTINUE

        return control

    def _run_hybrid(self, run_id, instance, scenarios, sigma, config, agents):
        search = HybridSearch(instance, scenarios, sigma, hybrid_config_for(config), agents)
        checkpoint = self.store.read_checkpoint(run_id)
        if checkpoint is not None:
            search.restore(checkpoint)

        def writer(s):
            write_trace_csv(s.trace, self.store.trace_path(run_id))

        schedule, trace = search.run(self._control_hook(run_id, writer))
        writer(search)
        if self.store.get_run(run_id).status == PAUSED:
            return None, trace
        return schedule, trace

    def _run_dw(self, run_id, instance, scenarios, sigma, config, agents):
        overrides = dict(config.get("dw", {}))
        dw_cfg = DwConfig(**{**DwConfig().__dict__, **overrides, "seed": int(config["seed"])})
        search = DwSearch(instance, dw_cfg, agents, scenarios, sigma)
        checkpoint = self.store.read_checkpoint(run_id)
        if checkpoint is not None:
            search.restore(checkpoint)

        def writer(s):
            write_dw_trace_csv(s.trace, self.store.trace_path(run_id))

        schedule, trace = search.run(self._control_hook(run_id, writer))
        writer(search)
        if schedule is None and self.store.get_run(run_id).status == PAUSED:
            return None, trace
        return schedule, trace

    def _write_saa_trace(self, run_id: str, result) -> None:
        with open(self.store.trace_path(run_id), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "npv_in", "npv_out", "bias", "status"])
            for rep in result.replications:
                writer.writerow(
                    [rep.replication, repr(rep.npv_in), repr(rep.npv_out), repr(rep.bias), rep.status]
                )

    def _delta_vs_parent(self, parent_id: str, child_result: dict) -> dict:
        parent = self.store.read_result(parent_id)
        return {
            "npv": child_result["npv"] - parent["npv"],
            "p10": child_result["risk"]["p10"] - parent["risk"]["p10"],
            "cvar10": child_result["risk"]["cvar10"] - parent["risk"]["cvar10"],
        }


def _strip_timing(doc: dict) -> dict:
    """Remove wall-clock fields so result.json is byte-reproducible."""
    doc = json.loads(json.dumps(doc))
    doc.pop("elapsed_seconds", None)
    for rep in doc.get("per_replication", []):
        rep.pop("elapsed_seconds", None)
    return doc
