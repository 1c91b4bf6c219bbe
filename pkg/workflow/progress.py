"""
In-memory progress tracker for experiment runs.
"""

from datetime import datetime
from typing import Dict, Optional

_run_progress: Dict[str, dict] = {}


def create_run(run_id: str, experiment: str, strategy: str):
    """Create a new progress entry."""
    _run_progress[run_id] = {
        "run_id": run_id,
        "experiment": experiment,
        "strategy": strategy,
        "status": "running",
        "layer": 0,
        "h_cum": 0.0,
        "message": "Starting...",
        "started_at": datetime.now().isoformat(),
        "completed_at": None,
        "error": None,
    }


def update_run(
    run_id: str,
    layer: Optional[int] = None,
    h_cum: Optional[float] = None,
    message: Optional[str] = None,
    status: Optional[str] = None,
    error: Optional[str] = None,
):
    if run_id not in _run_progress:
        return

    run = _run_progress[run_id]
    if layer is not None:
        run["layer"] = layer
    if h_cum is not None:
        run["h_cum"] = h_cum
    if message is not None:
        run["message"] = message
    if status is not None:
        run["status"] = status
        if status in ["completed", "failed"]:
            run["completed_at"] = datetime.now().isoformat()
    if error is not None:
        run["error"] = error


def record_layer(run_id: str, record: dict):
    """Fold one SMC layer record into the run's progress."""
    update_run(
        run_id,
        layer=record["layer"],
        h_cum=record["h_cum"],
        message=f"layer {record['layer']}: h_cum={record['h_cum']:.4f}, ESS={record['ess']:.0f}",
    )


def get_run(run_id: str) -> Optional[dict]:
    return _run_progress.get(run_id)


def complete_run(run_id: str, message: str = "Completed"):
    update_run(run_id, status="completed", message=message)


def fail_run(run_id: str, error: str):
    update_run(run_id, status="failed", error=error, message="Failed")


def progress_snapshot(run_id: str) -> dict:
    """Last layer, timing and outcome of a run, as stored in its manifest."""
    run = _run_progress.get(run_id)
    if run is None:
        return {}
    keys = ("layer", "h_cum", "message", "started_at", "completed_at", "error")
    return {key: run[key] for key in keys}
