"""
Configuration defaults for the SMC toolkit.
Edit the dictionaries below to change desk-scale defaults; experiment files
override them per run.
"""

import os

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Prior: C = (I - alpha * Laplacian)^(-power) on the Neumann cosine basis
PRIOR_CONFIG = {
    "boundary": "neumann",
    "modes_1d": 64,
    "grid_1d": 128,
    "modes_per_axis_2d": 32,
    # Tail ratio lambda_K / lambda_1 above this triggers a warning
    "tail_warning_ratio": 1e-6,
    "orthonormality_tol": 1e-8,
}

# Darcy flow forward model
DARCY_CONFIG = {
    "inverse_resolution": 32,
    "fine_resolution": 128,
    "source": 1.0,
    "alpha": 1.0,
    "power": 2,
    "noise_pct": 0.02,
    # sigma used when data are generated without noise (fraction of max|F|)
    "zero_noise_sigma_pct": 0.02,
    "cg_rtol": 1e-10,
    "cg_maxiter_factor": 20,
}

# Four-modal 1D example
MULTIMODAL_CONFIG = {
    "alpha": 0.01,
    "power": 2,
    # pairwise exp(-||f_i - f_j||^2 / 2 sigma^2) stays below 1e-3 at 0.25
    "sigma": 0.25,
    "modal_waves": [1.0, -1.0, 2.0, 3.0],
}

# Sequential Monte Carlo driver
SMC_CONFIG = {
    "n_particles": 1000,
    "chain_len": 200,
    "beta0": 0.2,
    "ess_threshold": 0.6,
    "bisection_tol": 1e-6,
    "bisection_maxiter": 60,
    "adapt_beta": True,
    "max_layers": 500,
    # Adaptive step size window on the layer-average acceptance rate
    "accept_low": 0.15,
    "accept_high": 0.3,
}

# Gaussian mixture fit used by the gm and pcn-gm strategies
MIXTURE_CONFIG = {
    "truncation": 20,
    "components": 4,
    "max_iter": 200,
    "var_floor": 1e-4,
    "tol": 1e-8,
    "bic_max_components": None,
}

# Posterior diagnostics
DIAGNOSTICS_CONFIG = {
    "kde_grid_points": 512,
    "tv_modes": 20,
    "cluster_truncation": 20,
    "kmeans_max_iter": 200,
    "silhouette_range": [2, 12],
}

# Per-experiment overrides applied on top of the defaults above
EXPERIMENT_PRESETS = {
    "multimodal1d": {
        "smc": {"n_particles": 2000},
        "mixture": {"components": 4},
        "diagnostics": {"clusters": 4},
    },
    "darcy-dense": {
        "darcy": {"measurement_grid": "dense10x10"},
        "mixture": {"components": 3},
    },
    "darcy-sparse": {
        "darcy": {"measurement_grid": "sparse-line20"},
        "mixture": {"components": 8},
    },
    "mesh-independence": {
        "darcy": {"measurement_grid": "dense10x10"},
        "mixture": {"components": 3},
        "mesh": {"resolutions": [16, 24, 32], "strategies": ["gm", "pcn", "rw"]},
    },
    "conjugate-check": {
        "smc": {"n_particles": 5000, "chain_len": 20},
        "mixture": {"components": 1, "truncation": 3},
    },
}

# --paper-scale restores the published mesh sizes, particle counts and chain
# lengths; it is applied after the experiment file. Entries under "strategies"
# apply only to runs of that strategy.
PAPER_SCALE_OVERRIDES = {
    "multimodal1d": {"smc": {"n_particles": 20000, "chain_len": 200}},
    "darcy-dense": {
        "darcy": {"inverse_resolution": 20, "fine_resolution": 500},
        "smc": {"n_particles": 1000, "chain_len": 200},
    },
    "darcy-sparse": {
        "darcy": {"inverse_resolution": 20, "fine_resolution": 500},
        "smc": {"n_particles": 6000, "chain_len": 200},
        "strategies": {"gm": {"smc": {"n_particles": 60000}}},
    },
    "mesh-independence": {
        "mesh": {"resolutions": [20, 40, 60, 80, 100]},
        "smc": {"chain_len": 200},
    },
}

# Artifact root and worker count, overridable from the environment
OUTPUT_DIR = os.getenv("SMCGM_OUTPUT_DIR", "runs")
DEFAULT_THREADS = int(os.getenv("SMCGM_THREADS", "1"))
