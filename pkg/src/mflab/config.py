"""TOML run configuration: parsing and whole-file validation.

Schema (keys marked * are required)::

    [model]
    name* = "tanh-dot" | "softplus-dot" | any registered name
    D = 1
    data_radius = 1.0
    param_radius = 1.0
    [model.constants]            # optional overrides of declared constants
    B = 1.0                      # any of B, M, L_x, L_theta, b, c

    [data]
    A* = 1.0                     # label bound
    atoms = [{x = [1.0], y = 0.5, p = 0.5}, ...]
    # or instead of atoms:
    [data.generator]
    kind = "random"              # x uniform in the data ball, y uniform in [-A, A]
    n = 8
    seed = 0

    [init]
    kind = "uniform_ball" | "gaussian"
    radius = 1.0                 # uniform_ball
    std = 1.0                    # gaussian

    [hyperparams]
    alpha* = 1.0
    lambda* = 3.0
    widths* = [64, 128, 256]

    [experiment]
    study = "bias-sweep"         # used when the subcommand does not fix it
    times = [0, 0.5, 1, 2, 4, 8, 16]
    trials = 200
    master_seed = 0
    metrics = ["testfn", "w1", "sw1"]
    n_dirs = 2048
    M_ref = 8192                 # default 8 * max(widths)
    h_ref = 0.001                # default min(1 / max(widths), 0.01)
    test_x = [1.0]               # test function sigma(., test_x) / M
    baseline = "reference" | "twin"
    steps = 100000               # localization audit
    verdict_time = 4.0
    R0 = 1.0                     # default: init radius
    C0 = [0.25, 0.25]            # transport constants (p=1, p=2)
    Cpi = [0.25, 0.25]
    force_seed = 7               # every trial uses this seed (diagnostics)

    [output]
    directory = "out"
    prefix = "run"
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .activation import ActivationModel, Regime, get_model
from .dynamics import DiscreteDataDistribution, InitialLaw
from .errors import ConfigError, InputError
from .experiments import DEFAULT_TIMES, METRICS, ExperimentPlan, Study

log = logging.getLogger(__name__)

_MISSING = object()


@dataclass
class RunConfig:
    model: ActivationModel
    data: DiscreteDataDistribution
    init: InitialLaw
    A: float
    alpha: float
    lam: float
    widths: tuple
    experiment: dict
    out_dir: str = "out"
    prefix: str = "run"
    warnings: list = field(default_factory=list)

    def plan(self, study: Optional[Study] = None, threads: int = 1) -> ExperimentPlan:
        e = dict(self.experiment)
        study = Study(study if study is not None else e.pop("study", Study.BIAS_SWEEP.value))
        e.pop("study", None)
        return ExperimentPlan(study=study, model=self.model, data=self.data, init=self.init,
                              alpha=self.alpha, lam=self.lam, A=self.A, widths=self.widths,
                              threads=threads, **e)


class _Reader:
    """Typed lookups that record an error (with key path) instead of raising."""

    def __init__(self, doc: dict):
        self.doc = doc
        self.errors: list[str] = []

    def get(self, path: str, kind, default=_MISSING):
        node: Any = self.doc
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is _MISSING:
                    self.errors.append(f"{path}: missing required key")
                    return None
                return default
            node = node[part]
        return self.coerce(path, node, kind)

    def coerce(self, path, value, kind):
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.errors.append(f"{path}: expected a number, got {type(value).__name__}")
                return None
            if not math.isfinite(value):
                self.errors.append(f"{path}: must be finite")
                return None
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.errors.append(f"{path}: expected an integer, got {type(value).__name__}")
                return None
            return value
        if kind is str:
            if not isinstance(value, str):
                self.errors.append(f"{path}: expected a string, got {type(value).__name__}")
                return None
            return value
        if kind is list:
            if not isinstance(value, list):
                self.errors.append(f"{path}: expected an array, got {type(value).__name__}")
                return None
            return value
        if kind is dict:
            if not isinstance(value, dict):
                self.errors.append(f"{path}: expected a table, got {type(value).__name__}")
                return None
            return value
        raise TypeError(kind)

    def numbers(self, path, value, kind=float) -> Optional[list]:
        if value is None:
            return None
        out = [self.coerce(f"{path}[{i}]", v, kind) for i, v in enumerate(value)]
        return None if any(v is None for v in out) else out


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def parse_config(path) -> RunConfig:
    """Parse and validate ``path``; raises ConfigError listing every problem."""
    try:
        doc = load_toml(path)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: invalid TOML: {exc}"]) from None
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> RunConfig:
    r = _Reader(doc)
    warnings: list[str] = []

    # model
    name = r.get("model.name", str)
    D = r.get("model.D", int, 1)
    data_radius = r.get("model.data_radius", float, 1.0)
    param_radius = r.get("model.param_radius", float, 1.0)
    overrides = r.get("model.constants", dict, {}) or {}
    ov = {}
    for k, v in overrides.items():
        val = r.coerce(f"model.constants.{k}", v, float)
        if val is not None:
            ov[k] = val
    if D is not None and D < 1:
        r.errors.append("model.D: must be >= 1")
    for key, val in (("model.data_radius", data_radius), ("model.param_radius", param_radius)):
        if val is not None and not val > 0:
            r.errors.append(f"{key}: must be > 0")
    model = None
    if name is not None and D is not None and D >= 1 and data_radius and param_radius:
        try:
            model = get_model(name, D, data_radius, param_radius, **ov)
        except InputError as exc:
            r.errors.append(f"model: {exc}")

    # data
    A = r.get("data.A", float)
    if A is not None and A < 0:
        r.errors.append("data.A: must be >= 0")
    data = _parse_data(r, model, A, data_radius or 1.0, D or 1)

    # init
    kind = r.get("init.kind", str, "uniform_ball")
    radius = r.get("init.radius", float, 1.0)
    std = r.get("init.std", float, 1.0)
    init = None
    if kind not in ("uniform_ball", "gaussian"):
        r.errors.append(f"init.kind: expected 'uniform_ball' or 'gaussian', got {kind!r}")
    elif radius is not None and std is not None:
        if not radius > 0:
            r.errors.append("init.radius: must be > 0")
        if not std > 0:
            r.errors.append("init.std: must be > 0")
        init = InitialLaw(kind, radius, std, D or 1)

    # hyperparameters
    alpha = r.get("hyperparams.alpha", float)
    lam = r.get("hyperparams.lambda", float)
    widths = r.numbers("hyperparams.widths", r.get("hyperparams.widths", list), int)
    hD = r.get("hyperparams.D", int, D)
    if alpha is not None and not alpha > 0:
        r.errors.append("hyperparams.alpha: must be > 0")
    if lam is not None and lam < 0:
        r.errors.append("hyperparams.lambda: must be >= 0")
    if widths is not None:
        if not widths:
            r.errors.append("hyperparams.widths: must be nonempty")
        elif any(n < 1 for n in widths):
            r.errors.append("hyperparams.widths: every width must be >= 1")
        elif any(b <= a for a, b in zip(widths, widths[1:])):
            r.errors.append("hyperparams.widths: must be strictly ascending")
    if hD is not None and D is not None and hD != D:
        r.errors.append(f"hyperparams.D: {hD} disagrees with model.D={D}")

    experiment = _parse_experiment(r)

    out_dir = r.get("output.directory", str, "out")
    prefix = r.get("output.prefix", str, "run")

    if r.errors:
        raise ConfigError(r.errors)

    if model.regime is Regime.LOCALIZED and lam <= model.M * model.c:
        msg = f"hyperparams.lambda={lam:g} <= M*c={model.M * model.c:g}: localization radius undefined"
        warnings.append(msg)
        log.warning(msg)
    cfg = RunConfig(model, data, init, A, alpha, lam, tuple(widths), experiment, out_dir, prefix, warnings)
    try:
        plan_errors = cfg.plan().validate()
    except (InputError, ValueError) as exc:
        plan_errors = [str(exc)]
    if plan_errors:
        raise ConfigError([f"experiment: {e}" for e in plan_errors])
    return cfg


def _parse_data(r: _Reader, model, A, data_radius, D) -> Optional[DiscreteDataDistribution]:
    atoms = r.get("data.atoms", list, None)
    gen = r.get("data.generator", dict, None)
    if (atoms is None) == (gen is None):
        r.errors.append("data: exactly one of data.atoms or data.generator is required")
        return None
    if gen is not None:
        kind = r.get("data.generator.kind", str, "random")
        n = r.get("data.generator.n", int)
        seed = r.get("data.generator.seed", int, 0)
        if kind != "random":
            r.errors.append(f"data.generator.kind: unknown generator {kind!r}")
            return None
        if n is None or seed is None or A is None:
            return None
        if n < 1:
            r.errors.append("data.generator.n: must be >= 1")
            return None
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((n, D))
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        xs = g * data_radius * rng.random((n, 1)) ** (1.0 / D)
        ys = rng.uniform(-A, A, size=n)
        return DiscreteDataDistribution(xs, ys, np.full(n, 1.0 / n))

    xs, ys, ps = [], [], []
    ok = True
    for i, atom in enumerate(atoms):
        if not isinstance(atom, dict):
            r.errors.append(f"data.atoms[{i}]: expected a table with x, y, p")
            ok = False
            continue
        for key in ("x", "y", "p"):
            if key not in atom:
                r.errors.append(f"data.atoms[{i}].{key}: missing required key")
                ok = False
        if not ok:
            continue
        x = atom["x"] if isinstance(atom["x"], list) else [atom["x"]]
        x = r.numbers(f"data.atoms[{i}].x", x)
        y = r.coerce(f"data.atoms[{i}].y", atom["y"], float)
        p = r.coerce(f"data.atoms[{i}].p", atom["p"], float)
        if x is None or y is None or p is None:
            ok = False
            continue
        if len(x) != D:
            r.errors.append(f"data.atoms[{i}].x: expected {D} coordinates, got {len(x)}")
            ok = False
        if not p > 0:
            r.errors.append(f"data.atoms[{i}].p: must be > 0")
            ok = False
        if A is not None and abs(y) > A:
            r.errors.append(f"data.atoms[{i}].y: |y|={abs(y):g} exceeds data.A={A:g}")
            ok = False
        if float(np.linalg.norm(x)) > data_radius + 1e-12:
            r.errors.append(f"data.atoms[{i}].x: norm exceeds model.data_radius={data_radius:g}")
            ok = False
        xs.append(x)
        ys.append(y)
        ps.append(p)
    if not atoms:
        r.errors.append("data.atoms: must be nonempty")
        return None
    if ps and len(ps) == len(atoms) and abs(math.fsum(ps) - 1.0) > 1e-12:
        r.errors.append(f"data.atoms[*].p: weights sum to {math.fsum(ps):.15g}, expected 1")
        ok = False
    if not ok:
        return None
    return DiscreteDataDistribution(np.array(xs), np.array(ys), np.array(ps))


def _parse_experiment(r: _Reader) -> dict:
    e: dict = {}
    study = r.get("experiment.study", str, None)
    if study is not None:
        try:
            e["study"] = Study(study).value
        except ValueError:
            r.errors.append(f"experiment.study: unknown study {study!r}; known: {[s.value for s in Study]}")
    times = r.numbers("experiment.times", r.get("experiment.times", list, list(DEFAULT_TIMES)))
    if times is not None:
        e["times"] = tuple(times)
    metrics = r.get("experiment.metrics", list, None)
    if metrics is not None:
        bad = [m for m in metrics if m not in METRICS]
        if bad:
            r.errors.append(f"experiment.metrics: unknown metrics {bad}; known: {list(METRICS)}")
        else:
            e["metrics"] = tuple(metrics)
    for key, kind in (("trials", int), ("master_seed", int), ("n_dirs", int), ("M_ref", int),
                      ("h_ref", float), ("steps", int), ("verdict_time", float), ("R0", float),
                      ("force_seed", int), ("baseline", str)):
        v = r.get(f"experiment.{key}", kind, None)
        if v is not None:
            e[key] = v
    if e.get("master_seed", 0) < 0:
        r.errors.append("experiment.master_seed: must be >= 0")
    test_x = r.get("experiment.test_x", list, None)
    if test_x is not None:
        tx = r.numbers("experiment.test_x", test_x)
        if tx is not None:
            e["test_x"] = tuple(tx)
    for key in ("C0", "Cpi"):
        v = r.get(f"experiment.{key}", list, None)
        if v is not None:
            nums = r.numbers(f"experiment.{key}", v)
            if nums is not None:
                if len(nums) != 2:
                    r.errors.append(f"experiment.{key}: expected [p1, p2]")
                else:
                    e[key] = tuple(nums)
    return e
