"""Reproduction pipeline CLI.

Verbs: generate, train, evaluate, passivity, stability, report.  Every
command is a pure function of (config file, --seed override, --out
directory): reruns produce byte-identical artifacts.  Output files carry no
timestamps; each command writes a manifest recording the tool version, the
config hash and the seeds involved.

Exit codes: 0 success, 1 usage/config error, 2 I/O or missing artifact,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import VARIANTS, ConfigError, RunConfig, config_hash, load_config
from .data import DatasetError, load_dataset, save_dataset
from .diagnostics import (
    DiagnosticsError,
    energy_curve,
    rollout_deterministic,
    stability_bound_check,
    weak_passivity_mc,
)
from .experiments import (
    ExperimentError,
    build_system,
    evaluate_model,
    generate_training_ensemble,
    heldout_states,
    load_model,
    model_drift_fn,
    save_model,
    train_variant,
    truth_coefficients,
    truth_drift,
)
from .mlp import NonFiniteError
from .plots import line_chart
from .sde import SimulationError, save_trajectory_csv
from .structure import CompactBox
from .data import extract_transitions
from .training import SphnnModel, TrainingError

log = logging.getLogger("sphnn")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (SimulationError, TrainingError, DiagnosticsError, NonFiniteError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _write_manifest(out_dir: str, command: str, cfg: RunConfig, artifacts: list[str], extra: list[str]):
    lines = [
        f"tool sphnn/{__version__}",
        f"command {command}",
        f"config_sha256 {config_hash(cfg)}",
        f"master_seed {cfg.master_seed}",
    ]
    lines += extra
    lines += [f"artifact {name}" for name in artifacts]
    with open(os.path.join(out_dir, f"manifest_{command}.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _prepare_out(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise _IoFailure(f"output directory {path!r} is not writable: {exc}") from exc
    return path


class _IoFailure(RuntimeError):
    pass


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_master_seed(args.seed)
    return cfg


def _diag_box(cfg: RunConfig) -> CompactBox:
    low, high, defaulted = cfg.diagnostics_box()
    if defaulted:
        log.info("no diagnostics box in config; defaulting to [-2, 2]^%d", len(low))
    return CompactBox(np.array(low), np.array(high), cfg.grid_points)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    out = _prepare_out(args.out)
    system = build_system(cfg)
    ens = generate_training_ensemble(cfg, system)
    artifacts = []
    for traj in ens:
        name = f"train_p{traj.path_index}.csv"
        save_trajectory_csv(traj, os.path.join(out, name))
        artifacts.append(name)
    ds = extract_transitions(ens, None, {"system": cfg.system})
    save_dataset(ds, os.path.join(out, "transitions.csv"))
    artifacts.append("transitions.csv")
    _write_manifest(out, "generate", cfg, artifacts,
                    [f"n_paths {cfg.n_train_paths}", f"dt {_fmt(cfg.dt)}", f"t_train {_fmt(cfg.t_train)}"])
    log.info("wrote %d trajectories and %d transitions to %s", len(ens), len(ds), out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _prepare_out(args.out)
    variant = args.variant
    ds_path = os.path.join(out, "transitions.csv")
    if not os.path.exists(ds_path):
        raise _IoFailure(f"missing dataset {ds_path}; run generate first")
    ds = load_dataset(ds_path)
    model, history = train_variant(ds, cfg, variant)
    final_loss = float(history[-1]) if len(history) else None
    save_model(model, out, variant, cfg, final_loss)
    hist_name = f"loss_history_{variant}.csv"
    with open(os.path.join(out, hist_name), "w") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(history):
            fh.write(f"{epoch},{_fmt(loss)}\n")
    _write_manifest(out, f"train_{variant}", cfg,
                    [f"model_{variant}.manifest", hist_name],
                    [f"variant {variant}", f"train_seed {cfg.train[variant].seed}",
                     f"epochs {cfg.train[variant].epochs}"])
    log.info("trained %s (%d epochs); final loss %s", variant, len(history), final_loss)
    return EXIT_OK


def _evaluation_models(args, cfg: RunConfig, out: str):
    names = args.variant or ["truth", *[v for v in VARIANTS
                                        if os.path.exists(os.path.join(out, f"model_{v}.manifest"))]]
    models = []
    for name in names:
        if name == "truth":
            models.append((name, truth_drift(cfg)))
        elif name in VARIANTS:
            models.append((name, model_drift_fn(load_model(out, name, cfg))))
        else:
            raise ConfigError(f"variant: unknown model name {name!r}")
    if not models:
        raise _IoFailure(f"no trained models found in {out}")
    return models


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out = _prepare_out(args.out)
    models = _evaluation_models(args, cfg, out)
    held = heldout_states(cfg)
    truth = truth_drift(cfg)
    true_h = truth_coefficients(cfg, "ph").H
    artifacts = []
    rows = []
    curves = []
    for name, drift in models:
        mets = evaluate_model(drift, cfg, held)
        rows.append((name, mets))
        times, states, _ = rollout_deterministic(drift, np.asarray(cfg.eval_x0), cfg.dt_eval, cfg.t_eval)
        energies = np.array([true_h(x) for x in states])
        curves.append((name, times, states, energies))
        phase_name, energy_name = f"phase_{name}.csv", f"energy_{name}.csv"
        with open(os.path.join(out, phase_name), "w") as fh:
            fh.write("t," + ",".join(f"x{i + 1}" for i in range(states.shape[1])) + "\n")
            for t, x in zip(times, states):
                fh.write(f"{_fmt(t)}," + ",".join(_fmt(v) for v in x) + "\n")
        with open(os.path.join(out, energy_name), "w") as fh:
            fh.write("t,H\n")
            for t, h in zip(times, energies):
                fh.write(f"{_fmt(t)},{_fmt(h)}\n")
        artifacts += [phase_name, energy_name]
    with open(os.path.join(out, "rollout.csv"), "w") as fh:
        fh.write("system,model,true_mse,mean_abs_dq,mean_abs_dp,mean_abs_dH,valid\n")
        for name, mets in rows:
            fh.write(
                f"{cfg.system},{name},{_fmt(mets.true_mse)},{_fmt(mets.mean_abs_dq)},"
                f"{_fmt(mets.mean_abs_dp)},{_fmt(mets.mean_abs_dh)},{int(mets.valid)}\n"
            )
    artifacts.append("rollout.csv")
    line_chart([(name, states[:, 0], states[:, 1]) for name, _, states, _ in curves],
               f"Phase space: {cfg.system}", "q", "p", os.path.join(out, "phase_space.svg"))
    line_chart([(name, times, energies) for name, times, _, energies in curves],
               f"Energy evolution: {cfg.system}", "t", "H(x_t)",
               os.path.join(out, "energy_evolution.svg"))
    artifacts += ["phase_space.svg", "energy_evolution.svg"]
    _write_manifest(out, "evaluate", cfg, artifacts,
                    [f"models {' '.join(name for name, _ in rows)}"])
    log.info("evaluated %d models on %s", len(rows), cfg.system)
    return EXIT_OK


def cmd_passivity(args) -> int:
    cfg = _load_cfg(args)
    out = _prepare_out(args.out)
    variant = args.variant or "analytic"
    if variant == "analytic":
        coeffs = truth_coefficients(cfg, "ph")
        system = None
        eps = 0.0
    else:
        model = load_model(out, variant, cfg)
        if not isinstance(model, SphnnModel):
            raise ConfigError("variant: passivity needs a structured model or 'analytic'")
        coeffs = model.to_coefficient_set()
        system = model.to_sde_system()
        eps = 0.0
    box = _diag_box(cfg)
    report = weak_passivity_mc(
        coeffs, np.asarray(cfg.eval_x0), None, box, cfg.passivity_dt,
        cfg.passivity_horizon, cfg.passivity_paths, cfg.master_seed,
        strict=False, eps=eps, system=system,
    )
    with open(os.path.join(out, "passivity.csv"), "w") as fh:
        fh.write("t,E_H,se_H,supply,margin\n")
        for k in range(len(report.times)):
            fh.write(
                f"{_fmt(report.times[k])},{_fmt(report.mean_energy[k])},"
                f"{_fmt(report.se_energy[k])},{_fmt(report.supply[k])},{_fmt(report.margin[k])}\n"
            )
    _write_manifest(out, "passivity", cfg, ["passivity.csv"],
                    [f"variant {variant}", f"c0_hat {_fmt(report.c0_hat)}",
                     f"eps {_fmt(report.eps)}", f"n_paths {report.n_paths}",
                     f"holds_2sigma {int(report.holds(2.0))}"])
    log.info("passivity (%s): c0_hat=%.6g holds(2sigma)=%s", variant, report.c0_hat, report.holds(2.0))
    return EXIT_OK


def cmd_stability(args) -> int:
    cfg = _load_cfg(args)
    out = _prepare_out(args.out)
    if not args.variant:
        raise ConfigError("variant: stability requires a trained model variant")
    model = load_model(out, args.variant, cfg)
    learned = model.to_sde_system() if isinstance(model, SphnnModel) else _baseline_system(model, cfg)
    truth = truth_coefficients(cfg, "ito")
    box = _diag_box(cfg)
    report = stability_bound_check(
        truth, learned, box, np.asarray(cfg.eval_x0), None,
        cfg.dt, cfg.stability_horizon, cfg.stability_paths, cfg.master_seed,
    )
    with open(os.path.join(out, "stability.csv"), "w") as fh:
        fh.write("alpha,beta,L_hat,bound,F_T\n")
        fh.write(
            f"{_fmt(report.alpha)},{_fmt(report.beta)},{_fmt(report.l_hat)},"
            f"{_fmt(report.bound)},{_fmt(report.empirical_f)}\n"
        )
    _write_manifest(out, "stability", cfg, ["stability.csv"],
                    [f"variant {args.variant}", f"log_bound {_fmt(report.log_bound)}",
                     f"holds {int(report.holds)}", f"n_paths {report.n_paths}"])
    log.info("stability (%s): F(T)=%.4g log_bound=%.4g holds=%s",
             args.variant, report.empirical_f, report.log_bound, report.holds)
    return EXIT_OK


def _baseline_system(model, cfg: RunConfig):
    from .systems import SdeSystem

    sigma = truth_coefficients(cfg, "ito").sigma
    return SdeSystem(
        name="baseline", n=2, d=truth_coefficients(cfg, "ito").d, m=1,
        drift_fn=lambda t, x, u=None: model.drift(x),
        diffusion_fn=sigma,
    )


def cmd_report(args) -> int:
    out = _prepare_out(args.out)
    inputs = args.inputs
    if not inputs:
        raise _IoFailure("report needs at least one rollout.csv path")
    header = None
    rows = []
    for path in inputs:
        if not os.path.exists(path):
            raise _IoFailure(f"missing metrics file {path}")
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        if not lines:
            raise _IoFailure(f"{path}: empty metrics file")
        if header is None:
            header = lines[0]
        elif lines[0] != header:
            raise _IoFailure(f"{path}: header mismatch with earlier inputs")
        rows += lines[1:]
    with open(os.path.join(out, "report.csv"), "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")
    log.info("report.csv: %d rows from %d files", len(rows), len(inputs))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sphnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="run configuration (INI)")
            p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="simulate training trajectories and transitions")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model variant")
    common(p)
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rollout metrics, curves and figures")
    common(p)
    p.add_argument("--variant", action="append", default=None,
                   help="model to evaluate ('truth' or a trained variant); repeatable")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("passivity", help="Monte-Carlo weak-passivity check")
    common(p)
    p.add_argument("--variant", default="analytic",
                   help="'analytic' or a trained structured variant")
    p.set_defaults(func=cmd_passivity)

    p = sub.add_parser("stability", help="coupled-path stability bound check")
    common(p)
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("report", help="concatenate rollout metric CSVs")
    common(p, needs_config=False)
    p.add_argument("inputs", nargs="*", help="rollout.csv files to merge")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"sphnn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExperimentError as exc:
        msg = str(exc)
        code = EXIT_IO if "missing" in msg else EXIT_USAGE
        print(f"sphnn: {msg}", file=sys.stderr)
        return code
    except (DatasetError,) as exc:
        print(f"sphnn: dataset error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _IoFailure as exc:
        print(f"sphnn: {exc}", file=sys.stderr)
        return EXIT_IO
    except _NUMERIC_ERRORS as exc:
        print(f"sphnn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"sphnn: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
