"""Benchmark wiring: config -> systems, model specs, training, evaluation.

Variant wiring follows the experimental protocol: mass-spring and Duffing
fix the canonical interconnection and zero dissipation and learn the
storage; Van der Pol fixes the quadratic storage and learns the
nonconservative matrix (symmetric, sign-unconstrained: a PSD dissipation
cannot pump energy and therefore cannot represent a self-excited limit
cycle).  The nll variant additionally learns the diffusion field B.

Evaluation truth is the deterministic mean dynamics: the PH drift without
the noise-induced Ito correction (this only differs from the printed SDE
drift for the mass-spring system).  Training data always comes from the
full Ito SDEs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import mlp
from .config import RunConfig
from .data import TransitionDataset, extract_transitions
from .diagnostics import RolloutMetrics, rollout_metrics
from .sde import Ensemble, simulate_ensemble, uniform_initial_states
from .structure import CoefficientSet
from .systems import (
    SdeSystem,
    canonical_j,
    deterministic_truth_drift,
    duffing_coefficients,
    force_port,
    make_duffing,
    make_mass_spring,
    make_van_der_pol,
    mass_spring_ito_coefficients,
    mass_spring_ph_coefficients,
    van_der_pol_coefficients,
)
from .training import (
    BaselineModel,
    SphnnModel,
    SphnnSpec,
    TrainConfig,
    baseline_train,
    quadratic_storage_spec,
    train,
)

MODEL_FORMAT_TAG = "sphnn-model-v1"
HELDOUT_SEED_SALT = 104729


class ExperimentError(RuntimeError):
    """Mismatched or missing run artifacts."""


def build_system(cfg: RunConfig) -> SdeSystem:
    if cfg.system == "mass_spring":
        return make_mass_spring(cfg.k, cfg.mass, cfg.force)
    if cfg.system == "duffing":
        return make_duffing(cfg.force, cfg.sigma0)
    return make_van_der_pol(cfg.mu, cfg.xi)


def system_params(cfg: RunConfig) -> dict:
    return {"k": cfg.k, "m": cfg.mass, "F": cfg.force, "sigma0": cfg.sigma0,
            "mu": cfg.mu, "xi": cfg.xi}


def truth_coefficients(cfg: RunConfig, form: str = "ph") -> CoefficientSet:
    """Analytic coefficient bundle of the configured benchmark.

    form "ph" is the undamped physical structure (diagnostics, evaluation
    truth); form "ito" reproduces the printed Ito drift exactly and is the
    right comparison target for the coupled stability bound.
    """
    if cfg.system == "mass_spring":
        if form == "ito":
            return mass_spring_ito_coefficients(cfg.k, cfg.mass)
        return mass_spring_ph_coefficients(cfg.k, cfg.mass)
    if cfg.system == "duffing":
        return duffing_coefficients(cfg.sigma0)
    return van_der_pol_coefficients(cfg.mu, cfg.xi)


def truth_drift(cfg: RunConfig):
    """Deterministic mean-dynamics drift used as the evaluation reference."""
    return deterministic_truth_drift(cfg.system, system_params(cfg))


def model_spec_for(cfg: RunConfig, objective: str) -> SphnnSpec:
    coeffs = truth_coefficients(cfg, form="ph")
    common = dict(
        n=2, d=coeffs.d, m=1,
        j_source="analytic", j_matrix=canonical_j(),
        sigma_source="learned_b" if objective == "NLL" else "analytic",
        sigma_fn=coeffs.sigma,
        g_matrix=force_port(),
    )
    if cfg.system == "van_der_pol":
        return SphnnSpec(
            learn_h=False, fixed_storage=quadratic_storage_spec(),
            r_source="learned_symmetric", **common,
        )
    return SphnnSpec(learn_h=True, r_source="zero", **common)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def generate_training_ensemble(cfg: RunConfig, system: SdeSystem | None = None) -> Ensemble:
    system = system or build_system(cfg)
    x0 = uniform_initial_states(cfg.x0_low, cfg.x0_high, cfg.master_seed, cfg.n_train_paths)
    return simulate_ensemble(system, x0, None, cfg.dt, cfg.t_train, cfg.master_seed,
                             cfg.n_train_paths)


def generate_dataset(cfg: RunConfig) -> TransitionDataset:
    ens = generate_training_ensemble(cfg)
    meta = {"system": cfg.system, "master_seed": cfg.master_seed,
            "dt": cfg.dt, "t_train": cfg.t_train}
    return extract_transitions(ens, None, meta)


def heldout_states(cfg: RunConfig, n_states: int | None = None) -> np.ndarray:
    """States from a fresh ensemble (salted seed), never seen in training."""
    n_states = n_states or cfg.n_heldout
    system = build_system(cfg)
    seed = cfg.master_seed + HELDOUT_SEED_SALT
    n_paths = max(2, min(10, cfg.n_train_paths))
    x0 = uniform_initial_states(cfg.x0_low, cfg.x0_high, seed, n_paths)
    ens = simulate_ensemble(system, x0, None, cfg.dt, cfg.t_train, seed, n_paths)
    states = np.concatenate([t.states for t in ens])
    stride = max(1, len(states) // n_states)
    return states[::stride][:n_states]


# ---------------------------------------------------------------------------
# training drivers
# ---------------------------------------------------------------------------

def train_variant(
    ds: TransitionDataset, cfg: RunConfig, variant: str
) -> tuple[BaselineModel | SphnnModel, np.ndarray]:
    tc: TrainConfig = cfg.train[variant]
    if variant == "baseline":
        return baseline_train(ds, tc)
    spec = model_spec_for(cfg, tc.objective)
    return train(ds, spec, tc)


def model_drift_fn(model: BaselineModel | SphnnModel):
    return lambda x: model.drift(x)


def evaluate_model(
    model_drift, cfg: RunConfig, heldout: np.ndarray
) -> RolloutMetrics:
    return rollout_metrics(
        model_drift,
        truth_drift(cfg),
        truth_coefficients(cfg, "ph").H,
        heldout,
        x0=np.asarray(cfg.eval_x0),
        horizon=cfg.t_eval,
        dt=cfg.dt_eval,
    )


# ---------------------------------------------------------------------------
# model persistence (parameter files + key = value manifest)
# ---------------------------------------------------------------------------

def save_model(
    model: BaselineModel | SphnnModel,
    directory,
    variant: str,
    cfg: RunConfig,
    final_loss: float | None = None,
) -> str:
    """Write parameter files plus a manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    lines = [
        f"format {MODEL_FORMAT_TAG}",
        f"system {cfg.system}",
        f"variant {variant}",
        f"objective {cfg.train[variant].objective}",
        f"seed {cfg.train[variant].seed}",
        f"epochs {cfg.train[variant].epochs}",
    ]
    if isinstance(model, BaselineModel):
        lines.append("kind baseline")
        fname = f"model_{variant}_f.params"
        mlp.save_params(model.params, os.path.join(directory, fname))
        lines.append(f"field f {fname}")
        lines.append(f"n {model.n}")
    else:
        lines.append("kind sphnn")
        lines.append(f"n {model.spec.n}")
        lines.append(f"d {model.spec.d}")
        lines.append(f"m {model.spec.m}")
        for name in sorted(model.fields):
            fname = f"model_{variant}_{name}.params"
            mlp.save_params(model.fields[name], os.path.join(directory, fname))
            lines.append(f"field {name} {fname}")
    if final_loss is not None:
        lines.append(f"final_loss {final_loss:.17g}")
    manifest = os.path.join(directory, f"model_{variant}.manifest")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def load_model(directory, variant: str, cfg: RunConfig) -> BaselineModel | SphnnModel:
    manifest = os.path.join(directory, f"model_{variant}.manifest")
    if not os.path.exists(manifest):
        raise ExperimentError(f"missing model manifest {manifest}")
    entries: dict[str, str] = {}
    fields: dict[str, str] = {}
    with open(manifest) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "field":
                fields[parts[1]] = parts[2]
            else:
                entries[parts[0]] = " ".join(parts[1:])
    if entries.get("format") != MODEL_FORMAT_TAG:
        raise ExperimentError(f"{manifest}: unknown format {entries.get('format')!r}")
    if entries.get("system") != cfg.system:
        raise ExperimentError(
            f"{manifest}: model was trained on {entries.get('system')!r}, config says {cfg.system!r}"
        )
    if entries.get("kind") == "baseline":
        params = mlp.load_params(os.path.join(directory, fields["f"]))
        if params.arch.input_dim != 2:
            raise ExperimentError(f"{manifest}: baseline input dim {params.arch.input_dim} != 2")
        return BaselineModel(params)
    spec = model_spec_for(cfg, entries.get("objective", "IB"))
    loaded = {name: mlp.load_params(os.path.join(directory, fname)) for name, fname in fields.items()}
    expected = set(spec.learned_field_shapes())
    if set(loaded) != expected:
        raise ExperimentError(
            f"{manifest}: model fields {sorted(loaded)} do not match spec fields {sorted(expected)}"
        )
    for name, params in loaded.items():
        rows, cols = spec.learned_field_shapes()[name]
        if params.arch.output_dim != rows * cols or params.arch.input_dim != spec.n:
            raise ExperimentError(f"{manifest}: field {name} dimensions mismatch the configuration")
    return SphnnModel(spec, loaded)
