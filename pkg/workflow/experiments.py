"""
Experiment runners: build the problem from a validated configuration, run
SMC, compute diagnostics and write every artifact into the run directory.
"""

import logging
import time
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from config import OUTPUT_DIR
from diagnostics import (
    avg_data_misfit,
    data_misfit,
    error_scaling_study,
    kde_marginal,
    kmeans_cluster,
    marginal_tv_table,
    mesh_independence_report,
    relative_l2_error,
    select_cluster_count,
    solve_count_ratio,
    temperature_curve_gap,
)
from errors import ConfigurationError
from forward import (
    DarcyConfig,
    ObservationSetup,
    conjugate_posterior,
    darcy_evaluator,
    darcy_solve,
    linear_evaluator,
    measurement_grid,
    multimodal_evaluator,
    multimodal_modals,
    observe,
    synthesize_data,
)
from function_space import (
    CoeffField,
    CovarianceSpectrum,
    SpectralBasis,
    embed,
    make_prior_basis,
    sample_gaussian,
    zero_mean,
)
from mixture import FitConfig, fit_mixture
from smc import SMCConfig, run_smc
from storage import (
    RunManifest,
    append_run_log,
    config_hash,
    get_run_stats,
    load_ensemble,
    reset_run_log,
    save_ensemble,
    save_json,
    save_manifest,
    save_mixture,
    save_observations,
    save_table,
)
from workflow.models import ExperimentConfig
from workflow.progress import complete_run, create_run, fail_run, get_run, progress_snapshot, record_layer, update_run

logger = logging.getLogger(__name__)

# stream keys for problem generation; SMC streams use longer seed sequences
_TRUTH_STREAM, _NOISE_STREAM = 101, 102

# fields excluded from the configuration hash
_UNHASHED = {"threads", "output_dir"}


@dataclass
class Problem:
    basis: SpectralBasis
    prior: CovarianceSpectrum
    evaluator: Callable
    truth: Optional[CoeffField] = None
    observations: Optional[ObservationSetup] = None
    darcy: Optional[DarcyConfig] = None
    modals: Optional[list] = None


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def default_run_dir(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.output_dir or OUTPUT_DIR)
    return root / f"{cfg.experiment}-{cfg.strategy}-seed{cfg.seed}"


def make_prior(cfg: ExperimentConfig, modes_per_axis: Optional[int] = None):
    settings = cfg.prior_settings()
    modes = modes_per_axis or settings["modes_per_axis"]
    grid = settings["grid_size"] if modes_per_axis is None else 2 * modes
    return make_prior_basis(cfg.domain_dim, modes, settings["alpha"], settings["power"], grid_size=grid)


def fit_config(cfg: ExperimentConfig, seed: Optional[int] = None) -> FitConfig:
    section = cfg.mixture
    return FitConfig(
        truncation=section.truncation,
        components=section.components,
        max_iter=section.max_iter,
        var_floor=section.var_floor,
        tol=section.tol,
        seed=cfg.seed if seed is None else seed,
        max_components=section.bic_max_components,
    )


def smc_config(cfg: ExperimentConfig, **changes) -> SMCConfig:
    section = cfg.smc
    base = SMCConfig(
        strategy=cfg.strategy,
        n_particles=section.n_particles,
        chain_len=section.chain_len,
        beta0=section.beta0,
        ess_threshold=section.ess_threshold,
        adapt_beta=section.adapt_beta,
        max_layers=section.max_layers,
        seed=cfg.seed,
        threads=cfg.threads,
        fit=fit_config(cfg),
    )
    return replace(base, **changes)


def darcy_config(cfg: ExperimentConfig, resolution: Optional[int] = None) -> DarcyConfig:
    return DarcyConfig(
        resolution=resolution or cfg.darcy.inverse_resolution,
        fine_resolution=cfg.darcy.fine_resolution,
        source=cfg.darcy.source,
    )


def darcy_truth_and_data(cfg: ExperimentConfig, prior: CovarianceSpectrum):
    """Truth drawn from the prior and noisy data from the fine-mesh solve."""
    truth = sample_gaussian(zero_mean(prior), _rng(cfg.seed, _TRUTH_STREAM))
    points = measurement_grid(cfg.darcy.measurement_grid)
    observations = synthesize_data(
        truth, darcy_config(cfg), points, cfg.darcy.noise_pct, _rng(cfg.seed, _NOISE_STREAM)
    )
    return truth, observations


def build_problem(cfg: ExperimentConfig) -> Problem:
    basis, prior = make_prior(cfg)
    if cfg.experiment in ("multimodal1d", "error-scaling"):
        modals = multimodal_modals(basis, cfg.multimodal.modal_waves)
        evaluator = multimodal_evaluator(basis, modals, cfg.multimodal.sigma)
        return Problem(basis, prior, evaluator, modals=modals)
    if cfg.experiment == "conjugate-check":
        data = np.asarray(cfg.linear.data, dtype=float)
        points = np.linspace(0.0, 1.0, data.shape[0])[:, None]
        observations = ObservationSetup(points, cfg.linear.noise_std, data)
        return Problem(basis, prior, linear_evaluator(basis, observations), observations=observations)

    truth, observations = darcy_truth_and_data(cfg, prior)
    dcfg = darcy_config(cfg)
    return Problem(basis, prior, darcy_evaluator(basis, dcfg, observations), truth, observations, dcfg)


def _observation_meta(cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.seed,
        "measurement_grid": cfg.darcy.measurement_grid,
        "noise_pct": cfg.darcy.noise_pct,
        "inverse_resolution": cfg.darcy.inverse_resolution,
        "fine_resolution": cfg.darcy.fine_resolution,
    }


def synth_data(cfg: ExperimentConfig, run_dir) -> dict:
    """Generate and store the Darcy truth field and observations only."""
    if cfg.domain_dim != 2:
        raise ConfigurationError(f"experiment '{cfg.experiment}' has no synthetic Darcy data")
    _, prior = make_prior(cfg)
    truth, observations = darcy_truth_and_data(cfg, prior)
    artifacts = save_observations(run_dir, observations, _observation_meta(cfg))
    save_ensemble(run_dir, truth.coefficients[None, :], name="truth.csv")
    return {
        "status": "completed",
        "message": f"Wrote {observations.num_data} observations (sigma={observations.noise_std:.4g})",
        "artifacts": artifacts + ["truth.csv"],
    }


def _marginals_table(particles: np.ndarray, cfg: ExperimentConfig) -> pd.DataFrame:
    modes = min(cfg.diagnostics.tv_modes, particles.shape[1])
    frames = [
        kde_marginal(particles[:, k], mode=k, points=cfg.diagnostics.kde_grid_points).to_frame()
        for k in range(modes)
    ]
    return pd.concat(frames, ignore_index=True)


def _summarize_multimodal(cfg, problem: Problem, ensemble, run_dir) -> dict:
    k = cfg.diagnostics.clusters or len(problem.modals)
    report = kmeans_cluster(ensemble, k, seed=cfg.seed, truncation=cfg.diagnostics.cluster_truncation)
    centers = np.stack([f.coefficients for f in problem.modals])
    distances, nearest = [], []
    for mean in report.means:
        gaps = np.linalg.norm(centers - mean.coefficients[None, :], axis=1)
        distances.append(float(gaps.min()))
        nearest.append(int(gaps.argmin()))
    table = report.to_frame()
    table.insert(2, "nearest_modal", nearest)
    table.insert(3, "modal_distance", distances)
    save_table(run_dir, "clusters.csv", table)
    return {
        "clusters": report.count,
        "member_counts": report.member_counts,
        "modal_distances": distances,
        "modals_covered": len(set(nearest)) == len(problem.modals),
    }


def _summarize_darcy(cfg, problem: Problem, ensemble, run_dir) -> dict:
    mean = CoeffField(problem.basis, ensemble.mean_coefficients())
    points = problem.observations.points
    data = problem.observations.data

    def forward(field: CoeffField) -> np.ndarray:
        return observe(darcy_solve(field, problem.darcy), points)

    silhouette = None
    k = cfg.diagnostics.clusters
    if k is None:
        k, silhouette = select_cluster_count(
            ensemble, cfg.diagnostics.silhouette_range, cfg.seed, cfg.diagnostics.cluster_truncation
        )
    report = kmeans_cluster(
        ensemble, k, seed=cfg.seed, truncation=cfg.diagnostics.cluster_truncation,
        misfit=partial(data_misfit, forward=forward, data=data),
    )
    save_table(run_dir, "clusters.csv", report.to_frame())
    save_ensemble(run_dir, problem.truth.coefficients[None, :], name="truth.csv")
    noise_floor = problem.observations.noise_std * np.sqrt(problem.observations.num_data)
    return {
        "relative_l2_error": relative_l2_error(mean, problem.truth),
        "mean_misfit": data_misfit(mean, forward, data),
        "noise_floor": float(noise_floor),
        "clusters": report.count,
        "silhouette_scores": silhouette,
        "cluster_misfits": report.misfits,
        "avg_cluster_misfit": avg_data_misfit(report.means, forward, data),
        "misfit_over_noise_floor": float(np.max(report.misfits) / noise_floor),
    }


def _summarize_conjugate(cfg, problem: Problem, ensemble, run_dir) -> dict:
    observations = problem.observations
    post_mean, post_var = conjugate_posterior(problem.prior.eigenvalues, observations.noise_std, observations.data)
    n_obs = observations.num_data
    samples = ensemble.particles[:, :n_obs]
    n = samples.shape[0]
    table = pd.DataFrame({
        "mode": np.arange(n_obs),
        "analytic_mean": post_mean,
        "sample_mean": samples.mean(axis=0),
        "mean_se": np.sqrt(post_var / n),
        "analytic_var": post_var,
        "sample_var": samples.var(axis=0, ddof=1),
        "var_se": post_var * np.sqrt(2.0 / (n - 1)),
    })
    table["mean_z"] = (table["sample_mean"] - table["analytic_mean"]) / table["mean_se"]
    table["var_z"] = (table["sample_var"] - table["analytic_var"]) / table["var_se"]
    save_table(run_dir, "conjugate.csv", table)
    return {
        "max_abs_mean_z": float(table["mean_z"].abs().max()),
        "max_abs_var_z": float(table["var_z"].abs().max()),
    }


_SUMMARIES = {
    "multimodal1d": _summarize_multimodal,
    "darcy-dense": _summarize_darcy,
    "darcy-sparse": _summarize_darcy,
    "conjugate-check": _summarize_conjugate,
}


def _run_smc_experiment(cfg: ExperimentConfig, run_dir, run_id: str) -> tuple[dict, list]:
    problem = build_problem(cfg)
    artifacts = []
    if problem.observations is not None and cfg.domain_dim == 2:
        artifacts += save_observations(run_dir, problem.observations, _observation_meta(cfg))

    reset_run_log(run_dir)

    def on_layer(record: dict):
        append_run_log(run_dir, record)
        record_layer(run_id, record)

    ensemble, schedule, _ = run_smc(smc_config(cfg), problem.prior, problem.evaluator, on_layer)
    save_ensemble(run_dir, ensemble.particles)
    save_json(run_dir, "schedule.json", schedule.to_dict())
    save_table(run_dir, "marginals.csv", _marginals_table(ensemble.particles, cfg))
    artifacts += ["run_log.jsonl", "ensemble.csv", "schedule.json", "marginals.csv"]
    if cfg.strategy in ("gm", "pcn-gm"):
        beta = schedule.beta[-1] if cfg.strategy == "pcn-gm" else None
        save_mixture(run_dir, fit_mixture(ensemble, problem.prior, fit_config(cfg)), beta=beta)
        artifacts.append("mixture.json")

    summary = {
        "experiment": cfg.experiment,
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "num_layers": schedule.num_layers,
        "total_solves": int(problem.evaluator.solves),
        **_SUMMARIES[cfg.experiment](cfg, problem, ensemble, run_dir),
    }
    return summary, artifacts


def _run_mesh_independence(cfg: ExperimentConfig, run_dir, run_id: str) -> tuple[dict, list]:
    """One SMC run per (strategy, resolution) against one shared truth and data set."""
    _, fine_prior = make_prior(cfg)
    truth, observations = darcy_truth_and_data(cfg, fine_prior)
    artifacts = save_observations(run_dir, observations, _observation_meta(cfg))

    frames, summary = [], {"experiment": cfg.experiment, "seed": cfg.seed, "strategies": {}}
    for strategy in cfg.mesh.strategies:
        solves = {}

        def run(resolution: int, strategy=strategy, solves=solves):
            basis, prior = make_prior(cfg, modes_per_axis=resolution)
            evaluator = darcy_evaluator(basis, darcy_config(cfg, resolution), observations)
            smc_cfg = smc_config(cfg, strategy=strategy)
            _, schedule, _ = run_smc(smc_cfg, prior, evaluator, lambda r: record_layer(run_id, r))
            solves[resolution] = evaluator.solves
            return schedule.cumulative

        table = mesh_independence_report(run, cfg.mesh.resolutions)
        table.insert(0, "strategy", strategy)
        frames.append(table)
        curves = [g["h_cum"].tolist() for _, g in table.groupby("resolution", sort=True)]
        layers = table.groupby("resolution", sort=True)["num_layers"].first().tolist()
        summary["strategies"][strategy] = {
            "num_layers": dict(zip(cfg.mesh.resolutions, layers)),
            "layer_spread": int(max(layers) - min(layers)),
            "curve_gap": temperature_curve_gap(curves),
            "solves": solves,
        }

    save_table(run_dir, "mesh_curves.csv", pd.concat(frames, ignore_index=True))
    save_ensemble(run_dir, truth.coefficients[None, :], name="truth.csv")
    # truth projected onto the coarsest basis, for inspection
    coarse_basis, _ = make_prior(cfg, modes_per_axis=min(cfg.mesh.resolutions))
    save_ensemble(run_dir, embed(truth, coarse_basis).coefficients[None, :], name="truth_coarse.csv")
    return summary, artifacts + ["mesh_curves.csv", "truth.csv", "truth_coarse.csv"]


def _run_error_scaling(cfg: ExperimentConfig, run_dir, run_id: str) -> tuple[dict, list]:
    """RMS error of E[tanh(u_1)] on the four-modal target; the exact value is 0 by symmetry."""
    problem = build_problem(cfg)

    def estimate(n_particles: int, repeat: int) -> float:
        seed = cfg.seed * 100_000 + repeat
        smc_cfg = smc_config(cfg, n_particles=n_particles, seed=seed, fit=fit_config(cfg, seed))
        ensemble, _, _ = run_smc(smc_cfg, problem.prior, problem.evaluator)
        update_run(run_id, message=f"N={n_particles}, repeat {repeat + 1}/{cfg.scaling.repeats}")
        return float(np.mean(np.tanh(ensemble.particles[:, 1])))

    table, slope = error_scaling_study(estimate, cfg.scaling.sizes, cfg.scaling.repeats, reference=0.0)
    save_table(run_dir, "scaling.csv", table)
    summary = {"experiment": cfg.experiment, "strategy": cfg.strategy, "seed": cfg.seed, "exponent": slope}
    return summary, ["scaling.csv"]


_RUNNERS = {
    "mesh-independence": _run_mesh_independence,
    "error-scaling": _run_error_scaling,
}


def run_experiment(cfg: ExperimentConfig, run_dir=None) -> dict:
    """Run one configured experiment and write its artifacts.

    Returns a status dict. Failures are recorded in the manifest and
    progress tracker, then re-raised for the caller to map to an exit code.
    """
    run_dir = Path(run_dir or default_run_dir(cfg))
    run_dir.mkdir(parents=True, exist_ok=True)
    run_id = run_dir.name
    create_run(run_id, cfg.experiment, cfg.strategy)

    hashed = cfg.model_dump(mode="json", exclude=_UNHASHED)
    manifest = RunManifest(
        experiment=cfg.experiment,
        strategy=cfg.strategy,
        seed=cfg.seed,
        config=cfg.model_dump(mode="json"),
        config_hash=config_hash(hashed),
    )
    save_manifest(run_dir, manifest)

    started = time.perf_counter()
    try:
        runner = _RUNNERS.get(cfg.experiment, _run_smc_experiment)
        summary, artifacts = runner(cfg, run_dir, run_id)
        save_json(run_dir, "summary.json", summary)
    except Exception as e:
        fail_run(run_id, str(e))
        manifest.status, manifest.message = "failed", str(e)
        manifest.progress = progress_snapshot(run_id)
        save_manifest(run_dir, manifest)
        raise

    message = f"{cfg.experiment} ({cfg.strategy}) finished"
    complete_run(run_id, message)
    manifest.status = get_run(run_id)["status"]
    manifest.message = message
    manifest.progress = progress_snapshot(run_id)
    manifest.artifacts = sorted(set(artifacts + ["summary.json", "manifest.json"]))
    save_manifest(run_dir, manifest)
    return {
        "status": "completed",
        "message": message,
        "run_dir": str(run_dir),
        "elapsed_s": round(time.perf_counter() - started, 2),
        "summary": summary,
    }


def compare_runs(run_dir_a, run_dir_b, out=None, modes: int = 20) -> dict:
    """Per-mode TV table, mean-field relative L2 difference and solve-count ratio."""
    a, b = load_ensemble(run_dir_a), load_ensemble(run_dir_b)
    if a.shape[1] != b.shape[1]:
        raise ConfigurationError(
            f"runs use different bases ({a.shape[1]} vs {b.shape[1]} coefficients)"
        )
    tv = marginal_tv_table(a, b, modes=modes)
    mean_a, mean_b = a.mean(axis=0), b.mean(axis=0)
    if np.array_equal(mean_a, mean_b):
        mean_difference = 0.0
    else:
        mean_difference = relative_l2_error(mean_a, mean_b)

    stats_a, stats_b = get_run_stats(run_dir_a), get_run_stats(run_dir_b)
    comparison = {
        "run_a": str(run_dir_a),
        "run_b": str(run_dir_b),
        "avg_tv": float(tv["tv"].mean()),
        "max_tv": float(tv["tv"].max()),
        "mean_relative_l2_difference": mean_difference,
        "solves_a": stats_a["total_solves"],
        "solves_b": stats_b["total_solves"],
        "solve_count_ratio": solve_count_ratio(stats_a["total_solves"], stats_b["total_solves"]),
        "tv": tv["tv"].tolist(),
    }
    if out is not None:
        save_table(out, "tv_table.csv", tv)
        save_json(out, "comparison.json", comparison)
    return comparison
