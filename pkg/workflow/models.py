"""
Pydantic models for experiment configuration files.
"""

import copy
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import (
    DARCY_CONFIG,
    DIAGNOSTICS_CONFIG,
    EXPERIMENT_PRESETS,
    MIXTURE_CONFIG,
    MULTIMODAL_CONFIG,
    PAPER_SCALE_OVERRIDES,
    PRIOR_CONFIG,
    SMC_CONFIG,
)
from errors import ConfigurationError

Experiment = Literal[
    "multimodal1d", "darcy-dense", "darcy-sparse", "mesh-independence", "conjugate-check", "error-scaling"
]
Strategy = Literal["rw", "pcn", "pcn-gm", "gm"]

ONE_DIMENSIONAL = ("multimodal1d", "conjugate-check", "error-scaling")


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PriorSection(Section):
    """Unset fields take the defaults of the experiment's dimension."""
    alpha: Optional[float] = Field(default=None, gt=0)
    power: Optional[int] = Field(default=None, ge=1)
    modes_per_axis: Optional[int] = Field(default=None, ge=1)
    grid_size: Optional[int] = Field(default=None, ge=1)


class DarcySection(Section):
    inverse_resolution: int = Field(default=DARCY_CONFIG["inverse_resolution"], ge=8)
    fine_resolution: int = Field(default=DARCY_CONFIG["fine_resolution"], ge=8)
    source: float = DARCY_CONFIG["source"]
    noise_pct: float = Field(default=DARCY_CONFIG["noise_pct"], ge=0)
    measurement_grid: Literal["dense10x10", "sparse-line20"] = "dense10x10"

    @model_validator(mode="after")
    def fine_mesh_exceeds_inverse(self):
        if self.fine_resolution <= self.inverse_resolution:
            raise ValueError("fine_resolution must exceed inverse_resolution")
        return self


class SMCSection(Section):
    n_particles: int = Field(default=SMC_CONFIG["n_particles"], ge=2)
    chain_len: int = Field(default=SMC_CONFIG["chain_len"], ge=0)
    beta0: float = Field(default=SMC_CONFIG["beta0"], gt=0, le=1)
    ess_threshold: float = Field(default=SMC_CONFIG["ess_threshold"], gt=0, lt=1)
    adapt_beta: bool = SMC_CONFIG["adapt_beta"]
    max_layers: int = Field(default=SMC_CONFIG["max_layers"], ge=1)


class MixtureSection(Section):
    truncation: int = Field(default=MIXTURE_CONFIG["truncation"], ge=1)
    components: int = Field(default=MIXTURE_CONFIG["components"], ge=1)
    max_iter: int = Field(default=MIXTURE_CONFIG["max_iter"], ge=1)
    var_floor: float = Field(default=MIXTURE_CONFIG["var_floor"], gt=0)
    tol: float = Field(default=MIXTURE_CONFIG["tol"], gt=0)
    bic_max_components: Optional[int] = Field(default=MIXTURE_CONFIG["bic_max_components"], ge=1)


class MultimodalSection(Section):
    sigma: float = Field(default=MULTIMODAL_CONFIG["sigma"], gt=0)
    modal_waves: list[float] = Field(default_factory=lambda: list(MULTIMODAL_CONFIG["modal_waves"]))


class LinearSection(Section):
    """Identity forward map on the leading modes, for conjugate checks."""
    noise_std: float = Field(default=0.5, gt=0)
    data: list[float] = Field(default_factory=lambda: [1.0, -0.5, 0.25], min_length=1)


class DiagnosticsSection(Section):
    clusters: Optional[int] = Field(default=None, ge=1)
    silhouette_range: tuple[int, int] = tuple(DIAGNOSTICS_CONFIG["silhouette_range"])
    tv_modes: int = Field(default=DIAGNOSTICS_CONFIG["tv_modes"], ge=1)
    cluster_truncation: int = Field(default=DIAGNOSTICS_CONFIG["cluster_truncation"], ge=1)
    kde_grid_points: int = Field(default=DIAGNOSTICS_CONFIG["kde_grid_points"], ge=16)


class MeshSection(Section):
    resolutions: list[int] = Field(default_factory=lambda: [16, 24, 32], min_length=1)
    strategies: list[Strategy] = Field(default_factory=lambda: ["gm", "pcn", "rw"], min_length=1)


class ScalingSection(Section):
    sizes: list[int] = Field(default_factory=lambda: [100, 1000, 10000], min_length=2)
    repeats: int = Field(default=20, ge=2)


class ExperimentConfig(Section):
    """Validated configuration of one experiment run."""
    experiment: Experiment
    strategy: Strategy = "gm"
    seed: int = Field(default=0, ge=0)
    threads: int = Field(default=1, ge=1)
    output_dir: Optional[str] = None
    prior: PriorSection = Field(default_factory=PriorSection)
    darcy: DarcySection = Field(default_factory=DarcySection)
    smc: SMCSection = Field(default_factory=SMCSection)
    mixture: MixtureSection = Field(default_factory=MixtureSection)
    multimodal: MultimodalSection = Field(default_factory=MultimodalSection)
    linear: LinearSection = Field(default_factory=LinearSection)
    diagnostics: DiagnosticsSection = Field(default_factory=DiagnosticsSection)
    mesh: MeshSection = Field(default_factory=MeshSection)
    scaling: ScalingSection = Field(default_factory=ScalingSection)

    @property
    def domain_dim(self) -> int:
        return 1 if self.experiment in ONE_DIMENSIONAL else 2

    def prior_settings(self) -> dict:
        """alpha, power, modes_per_axis, grid_size with dimension defaults filled in."""
        if self.domain_dim == 1:
            defaults = {
                "alpha": MULTIMODAL_CONFIG["alpha"],
                "power": MULTIMODAL_CONFIG["power"],
                "modes_per_axis": PRIOR_CONFIG["modes_1d"],
                "grid_size": PRIOR_CONFIG["grid_1d"],
            }
        else:
            modes = PRIOR_CONFIG["modes_per_axis_2d"]
            defaults = {
                "alpha": DARCY_CONFIG["alpha"],
                "power": DARCY_CONFIG["power"],
                "modes_per_axis": modes,
                "grid_size": 2 * modes,
            }
        given = self.prior.model_dump(exclude_none=True)
        return {**defaults, **given}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(path) -> dict:
    """TOML experiment file or a JSON manifest (its `config` entry is replayed)."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        if path.suffix == ".json":
            payload = json.loads(path.read_text(encoding="utf-8"))
            return payload.get("config", payload)
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot parse {path}: {e}") from e


def _apply_paper_scale(layered: dict, experiment: str, overrides: dict) -> dict:
    scale = copy.deepcopy(PAPER_SCALE_OVERRIDES.get(experiment, {}))
    per_strategy = scale.pop("strategies", {})
    strategy = overrides.get("strategy") or layered.get("strategy") or ExperimentConfig.model_fields["strategy"].default
    layered = _deep_merge(layered, scale)
    return _deep_merge(layered, per_strategy.get(strategy, {}))


def build_config(raw: dict, paper_scale: bool = False, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Merge presets, file values, paper-scale overrides and CLI overrides, then validate.

    Paper-scale sizes override the file. Command-line overrides win over both.

    Manifests store fully resolved configurations, so replaying one ignores
    presets that were already applied.
    """
    experiment = (overrides or {}).get("experiment") or raw.get("experiment")
    if experiment is None:
        raise ConfigurationError("experiment: field required")
    layered = _deep_merge(EXPERIMENT_PRESETS.get(experiment, {}), raw)
    if paper_scale:
        layered = _apply_paper_scale(layered, experiment, overrides or {})
    layered = _deep_merge(layered, overrides or {})
    return validate_config(layered)


def validate_config(payload: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigurationError(problems) from e
