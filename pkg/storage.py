"""
Run artifacts on disk: observations, run logs, ensembles, mixtures,
diagnostics tables and the run manifest.
Every file lives inside its run directory; artifact_path enforces that.
"""

import hashlib
import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from errors import ConfigurationError
from forward import ObservationSetup
from function_space import GaussianMixtureSpec
from kernels import product_space_traces

PathLike = Union[str, Path]

OBSERVATIONS_CSV = "observations.csv"
OBSERVATIONS_JSON = "observations.json"
RUN_LOG = "run_log.jsonl"
ENSEMBLE_CSV = "ensemble.csv"
MIXTURE_JSON = "mixture.json"
SUMMARY_JSON = "summary.json"
MANIFEST_JSON = "manifest.json"

FLOAT_FORMAT = "%.17g"


@dataclass
class RunManifest:
    """What was run, with which configuration, and what it produced."""
    experiment: str
    strategy: str
    seed: int
    config: dict
    config_hash: str = ""
    status: str = "running"  # running, completed, failed
    message: str = ""
    artifacts: list = field(default_factory=list)
    # last layer, start and finish times, error
    progress: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _to_builtin(value):
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def dumps(payload) -> str:
    return json.dumps(_to_builtin(payload), sort_keys=True, indent=2)


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    canonical = json.dumps(_to_builtin(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def artifact_path(run_dir: PathLike, name: str) -> Path:
    root = Path(run_dir).resolve()
    path = (root / name).resolve()
    if root != path and root not in path.parents:
        raise ConfigurationError(f"artifact '{name}' would be written outside {root}")
    return path


@contextmanager
def open_artifact(run_dir: PathLike, name: str, mode: str = "w"):
    """Context manager for artifact files inside a run directory."""
    path = artifact_path(run_dir, name)
    if "r" not in mode:
        path.parent.mkdir(parents=True, exist_ok=True)
    handle = open(path, mode, encoding="utf-8", newline="")
    try:
        yield handle
    finally:
        handle.close()


def save_json(run_dir: PathLike, name: str, payload) -> Path:
    with open_artifact(run_dir, name) as f:
        f.write(dumps(payload) + "\n")
    return artifact_path(run_dir, name)


def load_json(run_dir: PathLike, name: str) -> dict:
    with open_artifact(run_dir, name, "r") as f:
        return json.load(f)


def save_table(run_dir: PathLike, name: str, table: pd.DataFrame) -> Path:
    with open_artifact(run_dir, name) as f:
        table.to_csv(f, index=False, float_format=FLOAT_FORMAT)
    return artifact_path(run_dir, name)


def load_table(run_dir: PathLike, name: str) -> pd.DataFrame:
    return pd.read_csv(artifact_path(run_dir, name))


def save_observations(run_dir: PathLike, observations: ObservationSetup, meta: dict) -> list[str]:
    """CSV of (x, y, value) plus a JSON sidecar with sigma and generation settings."""
    points = observations.points
    table = pd.DataFrame({"x": points[:, 0], "value": observations.data})
    if points.shape[1] > 1:
        table.insert(1, "y", points[:, 1])
    save_table(run_dir, OBSERVATIONS_CSV, table)
    save_json(run_dir, OBSERVATIONS_JSON, {**meta, "noise_std": observations.noise_std})
    return [OBSERVATIONS_CSV, OBSERVATIONS_JSON]


def load_observations(run_dir: PathLike) -> tuple[ObservationSetup, dict]:
    table = load_table(run_dir, OBSERVATIONS_CSV)
    meta = load_json(run_dir, OBSERVATIONS_JSON)
    columns = ["x", "y"] if "y" in table.columns else ["x"]
    points = table[columns].to_numpy(dtype=float)
    return ObservationSetup(points, meta["noise_std"], table["value"].to_numpy(dtype=float)), meta


def append_run_log(run_dir: PathLike, record: dict):
    with open_artifact(run_dir, RUN_LOG, "a") as f:
        f.write(json.dumps(_to_builtin(record), sort_keys=True) + "\n")


def reset_run_log(run_dir: PathLike):
    with open_artifact(run_dir, RUN_LOG, "w"):
        pass


def load_run_log(run_dir: PathLike) -> pd.DataFrame:
    with open_artifact(run_dir, RUN_LOG, "r") as f:
        records = [json.loads(line) for line in f if line.strip()]
    return pd.DataFrame(records)


def save_ensemble(run_dir: PathLike, particles: np.ndarray, name: str = ENSEMBLE_CSV) -> Path:
    columns = [f"c{k}" for k in range(particles.shape[1])]
    return save_table(run_dir, name, pd.DataFrame(particles, columns=columns))


def load_ensemble(run_dir: PathLike, name: str = ENSEMBLE_CSV) -> np.ndarray:
    return load_table(run_dir, name).to_numpy(dtype=float)


def mixture_summary(mix: GaussianMixtureSpec, beta: Optional[float] = None) -> dict:
    """Fitted modes of the mixture; with `beta`, also the pcn-gm product-space traces."""
    k = mix.fit_truncation
    summary = {
        "fit_truncation": k,
        "weights": mix.weights,
        "means": mix.means[:, :k],
        "eigenvalue_ratios": mix.eigenvalue_ratios()[:, :k],
        "loglik_trace": list(mix.loglik_trace),
    }
    if beta is not None:
        summary["beta"] = beta
        summary["product_space_traces"] = product_space_traces(mix, beta)
    return summary


def save_mixture(run_dir: PathLike, mix: GaussianMixtureSpec, beta: Optional[float] = None) -> Path:
    return save_json(run_dir, MIXTURE_JSON, mixture_summary(mix, beta))


def save_manifest(run_dir: PathLike, manifest: RunManifest) -> Path:
    if not manifest.config_hash:
        manifest.config_hash = config_hash(manifest.config)
    return save_json(run_dir, MANIFEST_JSON, manifest.to_dict())


def load_manifest(run_dir: PathLike) -> Optional[RunManifest]:
    if not artifact_path(run_dir, MANIFEST_JSON).exists():
        return None
    return RunManifest(**load_json(run_dir, MANIFEST_JSON))


def get_run_stats(run_dir: PathLike) -> dict:
    """Summary statistics of a finished run, for the report command."""
    log = load_run_log(run_dir)
    manifest = load_manifest(run_dir)
    stats = {
        "experiment": manifest.experiment if manifest else None,
        "strategy": manifest.strategy if manifest else None,
        "status": manifest.status if manifest else None,
        "num_layers": int(len(log)),
        "total_solves": int(log["solves_cum"].iloc[-1]) if len(log) else 0,
        "mean_accept_rate": float(log["accept_rate"].mean()) if len(log) else None,
    }
    stats["progress"] = manifest.progress if manifest else {}
    if artifact_path(run_dir, OBSERVATIONS_CSV).exists():
        observations, _ = load_observations(run_dir)
        stats["num_data"] = observations.num_data
        stats["noise_std"] = observations.noise_std
    if artifact_path(run_dir, SUMMARY_JSON).exists():
        stats["summary"] = load_json(run_dir, SUMMARY_JSON)
    return stats
