"""Run configuration: one INI file drives the whole pipeline.

Flat sections, key = value.  [train] holds shared optimizer settings and
[train.<variant>] sections override per variant (baseline, ib, ce, nll).
The serialized form is canonical (fixed key order, round-trip-safe floats),
so a config hash identifies a run and reruns are byte-reproducible.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, replace

from .training import TrainConfig

VARIANTS = ("baseline", "ib", "ce", "nll")
SYSTEMS = ("mass_spring", "duffing", "van_der_pol")

_X0_DEFAULTS = {
    "mass_spring": ((-1.5, -1.5), (1.5, 1.5)),
    "duffing": ((-1.5, -1.5), (1.5, 1.5)),
    "van_der_pol": ((-2.5, -2.5), (2.5, 2.5)),
}

_OBJECTIVES = {"baseline": "IB", "ib": "IB", "ce": "CE", "nll": "NLL"}


class ConfigError(ValueError):
    """Invalid or missing configuration; the message names the field path."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a reproduction run needs, seeds included."""

    system: str
    # system parameters (unused ones are ignored by the factories)
    k: float = 1.0
    mass: float = 1.0
    force: float = 0.0
    sigma0: float = 0.05
    mu: float = 1.0
    xi: float = 0.1
    # data generation
    dt: float = 0.01
    t_train: float = 10.0
    n_train_paths: int = 20
    x0_low: tuple[float, ...] = ()
    x0_high: tuple[float, ...] = ()
    master_seed: int = 20260810
    # training (per-variant)
    train: dict = field(default_factory=dict)
    # evaluation
    eval_x0: tuple[float, ...] = (1.0, 0.0)
    t_eval: float = 20.0
    dt_eval: float = 0.01
    n_heldout: int = 2000
    # diagnostics
    box_low: tuple[float, ...] | None = None
    box_high: tuple[float, ...] | None = None
    grid_points: int = 41
    passivity_paths: int = 500
    passivity_horizon: float = 2.0
    passivity_dt: float = 0.01
    stability_paths: int = 100
    stability_horizon: float = 1.0

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigError(f"system: unknown system {self.system!r} (choose from {SYSTEMS})")
        if not self.x0_low or not self.x0_high:
            lo, hi = _X0_DEFAULTS[self.system]
            object.__setattr__(self, "x0_low", lo)
            object.__setattr__(self, "x0_high", hi)
        for name in ("dt", "t_train", "t_eval", "dt_eval", "passivity_horizon", "stability_horizon"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"data.{name}: must be positive")
        if self.n_train_paths < 1:
            raise ConfigError("data.n_train_paths: must be >= 1")
        filled = {}
        for variant in VARIANTS:
            base = self.train.get(variant)
            if base is None:
                filled[variant] = TrainConfig(objective=_OBJECTIVES[variant])
            elif isinstance(base, TrainConfig):
                filled[variant] = replace(base, objective=_OBJECTIVES[variant])
            else:
                raise ConfigError(f"train.{variant}: expected TrainConfig")
        object.__setattr__(self, "train", filled)

    def with_master_seed(self, seed: int) -> "RunConfig":
        return replace(self, master_seed=int(seed))

    def diagnostics_box(self) -> tuple[tuple[float, ...], tuple[float, ...], bool]:
        """(low, high, defaulted); [-2, 2]^n when the config omits the box."""
        if self.box_low is not None and self.box_high is not None:
            return self.box_low, self.box_high, False
        n = len(self.x0_low)
        return tuple([-2.0] * n), tuple([2.0] * n), True


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, tuple):
        return " ".join(f"{v:.17g}" for v in value)
    return str(value)


def to_ini(cfg: RunConfig) -> str:
    """Canonical serialization: fixed section and key order."""
    out = io.StringIO()
    out.write("[system]\n")
    out.write(f"name = {cfg.system}\n")
    for key, attr in (("k", "k"), ("m", "mass"), ("F", "force"), ("sigma0", "sigma0"),
                      ("mu", "mu"), ("xi", "xi")):
        out.write(f"{key} = {_fmt(getattr(cfg, attr))}\n")
    out.write("\n[data]\n")
    out.write(f"dt = {_fmt(cfg.dt)}\n")
    out.write(f"t_train = {_fmt(cfg.t_train)}\n")
    out.write(f"n_train_paths = {cfg.n_train_paths}\n")
    out.write(f"x0_low = {_fmt(cfg.x0_low)}\n")
    out.write(f"x0_high = {_fmt(cfg.x0_high)}\n")
    out.write(f"master_seed = {cfg.master_seed}\n")
    for variant in VARIANTS:
        tc = cfg.train[variant]
        out.write(f"\n[train.{variant}]\n")
        out.write(f"epochs = {tc.epochs}\n")
        out.write(f"batch_size = {tc.batch_size}\n")
        out.write(f"learning_rate = {_fmt(tc.learning_rate)}\n")
        out.write(f"seed = {tc.seed}\n")
        out.write(f"nll_jitter = {_fmt(tc.nll_jitter)}\n")
        out.write(f"ce_neighbors = {tc.ce_neighbors}\n")
        out.write(f"ce_estimator = {tc.ce_estimator}\n")
        if tc.ce_bandwidth is not None:
            out.write(f"ce_bandwidth = {_fmt(tc.ce_bandwidth)}\n")
    out.write("\n[evaluation]\n")
    out.write(f"x0 = {_fmt(cfg.eval_x0)}\n")
    out.write(f"t_eval = {_fmt(cfg.t_eval)}\n")
    out.write(f"dt_eval = {_fmt(cfg.dt_eval)}\n")
    out.write(f"n_heldout = {cfg.n_heldout}\n")
    out.write("\n[diagnostics]\n")
    if cfg.box_low is not None:
        out.write(f"box_low = {_fmt(cfg.box_low)}\n")
        out.write(f"box_high = {_fmt(cfg.box_high)}\n")
    out.write(f"grid_points = {cfg.grid_points}\n")
    out.write(f"passivity_paths = {cfg.passivity_paths}\n")
    out.write(f"passivity_horizon = {_fmt(cfg.passivity_horizon)}\n")
    out.write(f"passivity_dt = {_fmt(cfg.passivity_dt)}\n")
    out.write(f"stability_paths = {cfg.stability_paths}\n")
    out.write(f"stability_horizon = {_fmt(cfg.stability_horizon)}\n")
    return out.getvalue()


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split())


def from_ini(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    if not parser.has_section("system") or not parser.has_option("system", "name"):
        raise ConfigError("system.name: required field is missing")
    sys_name = parser.get("system", "name")

    def getf(section: str, key: str, attr_default):
        if parser.has_option(section, key):
            try:
                return float(parser.get(section, key))
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from exc
        return attr_default

    def geti(section: str, key: str, attr_default):
        if parser.has_option(section, key):
            try:
                return int(parser.get(section, key))
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from exc
        return attr_default

    defaults = RunConfig.__dataclass_fields__
    kwargs = dict(
        system=sys_name,
        k=getf("system", "k", 1.0),
        mass=getf("system", "m", 1.0),
        force=getf("system", "F", 0.0),
        sigma0=getf("system", "sigma0", 0.05),
        mu=getf("system", "mu", 1.0),
        xi=getf("system", "xi", 0.1),
        dt=getf("data", "dt", 0.01),
        t_train=getf("data", "t_train", 10.0),
        n_train_paths=geti("data", "n_train_paths", 20),
        master_seed=geti("data", "master_seed", defaults["master_seed"].default),
        eval_x0=_floats(parser.get("evaluation", "x0")) if parser.has_option("evaluation", "x0") else (1.0, 0.0),
        t_eval=getf("evaluation", "t_eval", 20.0),
        dt_eval=getf("evaluation", "dt_eval", 0.01),
        n_heldout=geti("evaluation", "n_heldout", 2000),
        grid_points=geti("diagnostics", "grid_points", 41),
        passivity_paths=geti("diagnostics", "passivity_paths", 500),
        passivity_horizon=getf("diagnostics", "passivity_horizon", 2.0),
        passivity_dt=getf("diagnostics", "passivity_dt", 0.01),
        stability_paths=geti("diagnostics", "stability_paths", 100),
        stability_horizon=getf("diagnostics", "stability_horizon", 1.0),
    )
    if parser.has_option("data", "x0_low"):
        kwargs["x0_low"] = _floats(parser.get("data", "x0_low"))
    if parser.has_option("data", "x0_high"):
        kwargs["x0_high"] = _floats(parser.get("data", "x0_high"))
    if parser.has_option("diagnostics", "box_low"):
        kwargs["box_low"] = _floats(parser.get("diagnostics", "box_low"))
    if parser.has_option("diagnostics", "box_high"):
        kwargs["box_high"] = _floats(parser.get("diagnostics", "box_high"))

    train = {}
    for variant in VARIANTS:
        tc = TrainConfig(objective=_OBJECTIVES[variant])
        for section in ("train", f"train.{variant}"):
            if not parser.has_section(section):
                continue
            updates = {}
            for key in parser.options(section):
                if key == "epochs":
                    updates["epochs"] = geti(section, "epochs", tc.epochs)
                elif key == "batch_size":
                    updates["batch_size"] = geti(section, "batch_size", tc.batch_size)
                elif key == "learning_rate":
                    updates["learning_rate"] = getf(section, "learning_rate", tc.learning_rate)
                elif key == "seed":
                    updates["seed"] = geti(section, "seed", tc.seed)
                elif key == "nll_jitter":
                    updates["nll_jitter"] = getf(section, "nll_jitter", tc.nll_jitter)
                elif key == "ce_neighbors":
                    updates["ce_neighbors"] = geti(section, "ce_neighbors", tc.ce_neighbors)
                elif key == "ce_estimator":
                    updates["ce_estimator"] = parser.get(section, key)
                elif key == "ce_bandwidth":
                    updates["ce_bandwidth"] = getf(section, "ce_bandwidth", None)
                else:
                    raise ConfigError(f"{section}.{key}: unknown key")
            tc = replace(tc, **updates)
        train[variant] = tc
    kwargs["train"] = train
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return from_ini(fh.read())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(to_ini(cfg).encode()).hexdigest()
