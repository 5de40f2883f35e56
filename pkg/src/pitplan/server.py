"""HTTP service over the run store.

JSON bodies mirror the CLI semantics; handlers are read-mostly and never
block on optimizer iterations (runs execute on a worker pool, status
reads serve the latest flushed checkpoint). Error mapping: 400 invalid,
404 unknown, 409 illegal transition.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse

from .errors import (
    IllegalTransition,
    InvalidConfig,
    InvalidOverride,
    ParseError,
    UnknownInstance,
    UnknownRun,
    ValidationError,
)
from .runstore import DONE, RunStore, RunWorker

_ERROR_STATUS = {
    ParseError: 400,
    ValidationError: 400,
    InvalidConfig: 400,
    UnknownInstance: 404,
    UnknownRun: 404,
    IllegalTransition: 409,
}


def _record_json(record) -> dict:
    return record.to_dict()


def create_app(store_dir, max_workers: int = 2) -> FastAPI:
    store = RunStore(store_dir)
    worker = RunWorker(store)
    pool = ThreadPoolExecutor(max_workers=max_workers)
    app = FastAPI(title="pitplan service")
    app.state.store = store
    app.state.pool = pool

    def fail(exc: Exception) -> JSONResponse:
        if isinstance(exc, InvalidOverride):
            return JSONResponse(status_code=exc.http_status, content={"error": str(exc)})
        for cls, status in _ERROR_STATUS.items():
            if isinstance(exc, cls):
                return JSONResponse(status_code=status, content={"error": str(exc)})
        raise exc

    @app.post("/instances")
    async def upload_instance(request: Request):
        doc = await request.json()
        try:
            instance_id = store.add_instance(doc)
        except Exception as exc:  # noqa: BLE001
            return fail(exc)
        return {"instance_id": instance_id}

    @app.get("/instances/{instance_id}")
    def get_instance(instance_id: str):
        try:
            return store.get_instance_doc(instance_id)
        except Exception as exc:  # noqa: BLE001
            return fail(exc)

    @app.get("/instances")
    def list_instances():
        return {"instances": store.list_instances()}

    @app.post("/runs")
    async def create_run(request: Request):
        body = await request.json()
        try:
            record = store.create_run(body.get("instance_id", ""), body.get("config", {}))
        except Exception as exc:  # noqa: BLE001
            return fail(exc)
        pool.submit(worker.execute, record.run_id)
        return _record_json(record)

    @app.get("/runs")
    def list_runs():
        return {"runs": [_record_json(r) for r in store.list_runs()]}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        try:
            record = store.get_run(run_id)
        except Exception as exc:  # noqa: BLE001
            return fail(exc)
        out = _record_json(record)
        if record.status == DONE:
            out["result"] = store.read_result(run_id)
        return out

    @app.get("/runs/{run_id}/trace")
    def get_trace(run_id: str, from_iter: int = Query(default=-1, alias="from")):
        try:
            store.get_run(run_id)
        except Exception as exc:  # noqa: BLE001
            return fail(exc)
        rows = store.read_trace(run_id, from_iter)
        next_cursor = max((int(r["iter"]) for r in rows), default=from_iter)
        return {"rows": rows, "next": next_cursor}

    @app.get("/runs/{run_id}/schedule")
    def get_schedule(run_id: str):
        try:
            record = store.get_run(run_id)
            result = store.read_result(run_id)
        except Exception as exc:  # noqa: BLE001
            return fail(exc)
        return {
            "run_id": run_id,
            "status": record.status,
            "schedule": result.get("schedule"),
            "npv": result.get("npv"),
        }

    @app.get("/runs/{run_id}/risk")
    def get_risk(run_id: str):
        try:
            store.get_run(run_id)
            result = store.read_result(run_id)
        except Exception as exc:  # noqa: BLE001
            return fail(exc)
        key = "risk" if "risk" in result else "aggregate"
        return {"run_id": run_id, "risk": result.get(key), "whatif_delta": result.get("whatif_delta")}

    @app.post("/runs/{run_id}/whatif")
    async def whatif(run_id: str, request: Request):
        body = await request.json()
        try:
            record = store.whatif_run(run_id, body.get("overrides", {}))
        except Exception as exc:  # noqa: BLE001
            return fail(exc)
        pool.submit(worker.execute, record.run_id)
        return _record_json(record)

    @app.post("/runs/{run_id}/control")
    async def control(run_id: str, request: Request):
        body = await request.json()
        command = body.get("command", "")
        try:
            status = store.request_control(run_id, command)
        except Exception as exc:  # noqa: BLE001
            return fail(exc)
        if command == "resume":
            pool.submit(worker.execute, run_id)
        return {"run_id": run_id, "status": status, "command": command}

    return app
