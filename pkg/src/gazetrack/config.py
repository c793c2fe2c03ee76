"""Experiment configuration: TOML documents validated against dataclass schemas.

Every section maps onto one dataclass; unknown sections or keys, and values
of the wrong type, raise :class:`ConfigInvalid` before anything runs.
"""

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid
from .simulator import SceneSettings
from .training import PretrainSettings

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

POLICY_NAMES = ("random", "circular", "hedge", "exp3", "bayesopt")


@dataclass(frozen=True)
class ExperimentSection:
    seeds: tuple = tuple(range(10))
    glyphs: tuple = tuple(range(10))
    policies: tuple = ("hedge", "random", "circular")
    output_dir: str = "results"
    models_dir: str = ""  # defaults to <output_dir>/models
    pretrain_seed: int = 0
    workers: int = 1
    traces: bool = True
    surfaces: bool = True
    track_loss_threshold: float = 25.0


@dataclass(frozen=True)
class TrackerSection:
    n_particles: int = 200
    bandwidth: float = 0.05
    position_std: float = 1.0
    velocity_std: float = 0.5
    log_scale_std: float = 0.0
    orientation_std: float = 0.0
    init_std: tuple = (2.0, 2.0, 0.5, 0.5, 0.0, 0.0)
    baseline_mode: str = "partial_information"
    classifier: bool = False
    classifier_gaze: str = "policy"


@dataclass(frozen=True)
class HedgeSection:
    gamma: float = 0.0  # 0 selects the horizon-based default


@dataclass(frozen=True)
class Exp3Section:
    gamma: float = 0.0
    divide_by: str = "sampled"


@dataclass(frozen=True)
class BayesOptSection:
    half_width: float = 12.0
    delta: float = 0.001
    budget: int = 300
    warmup: int = 10
    refit_every: int = 5
    signal_var: float = 1.0
    noise_var: float = 0.01
    length_scale: float = 0.0  # 0 means a quarter of the domain side


@dataclass(frozen=True)
class GpPriorSection:
    nu: float = 4.0
    length_loc: float = 0.0  # 0 means a quarter of the domain side
    length_scale: float = 0.0
    signal_var_bounds: tuple = (1e-4, 10.0)
    noise_var_bounds: tuple = (1e-6, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    scene: SceneSettings = field(default_factory=SceneSettings)
    tracker: TrackerSection = field(default_factory=TrackerSection)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    hedge: HedgeSection = field(default_factory=HedgeSection)
    exp3: Exp3Section = field(default_factory=Exp3Section)
    bayesopt: BayesOptSection = field(default_factory=BayesOptSection)
    gp_priors: GpPriorSection = field(default_factory=GpPriorSection)

    @property
    def models_dir(self):
        e = self.experiment
        return Path(e.models_dir) if e.models_dir else Path(e.output_dir) / "models"

    def with_overrides(self, seed=None, policies=None, output_dir=None):
        exp = self.experiment
        changes = {}
        if seed is not None:
            changes["seeds"] = (int(seed),)
        if policies is not None:
            unknown = [p for p in policies if p not in POLICY_NAMES]
            if unknown:
                raise ConfigInvalid(f"unknown policy name(s): {', '.join(unknown)}")
            changes["policies"] = tuple(policies)
        if output_dir is not None:
            changes["output_dir"] = str(output_dir)
        cfg = dataclasses.replace(self, experiment=dataclasses.replace(exp, **changes))
        validate(cfg)
        return cfg


def _coerce(section, name, value, default):
    where = f"[{section}] {name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigInvalid(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigInvalid(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigInvalid(f"{where}: expected a list, got {value!r}")
        if default:
            return tuple(_coerce(section, name, v, default[0]) for v in value)
        return tuple(value)
    raise ConfigInvalid(f"{where}: unsupported value {value!r}")


def _build(cls, section, table):
    if not isinstance(table, dict):
        raise ConfigInvalid(f"[{section}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigInvalid(f"[{section}] unknown key(s): {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in table.items():
        kwargs[name] = _coerce(section, name, value, getattr(defaults, name))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"[{section}] {exc}") from exc


def from_dict(doc):
    sections = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(doc) - set(sections))
    if unknown:
        raise ConfigInvalid(f"unknown section(s): {', '.join(unknown)}")
    kwargs = {}
    for name, f in sections.items():
        if name in doc:
            kwargs[name] = _build(f.default_factory().__class__, name, doc[name])
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def load_config(path):
    """Parse and validate a TOML experiment file.

    Raises
    ------
    ConfigInvalid
        On syntax errors, unknown keys, wrong types or inconsistent values.
    """
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    return from_dict(doc)


def validate(cfg):
    e = cfg.experiment
    problems = []
    if not e.seeds:
        problems.append("experiment.seeds is empty")
    if any(s < 0 for s in e.seeds):
        problems.append("seeds must be non-negative")
    if not e.glyphs or any(not 0 <= g <= 9 for g in e.glyphs):
        problems.append("experiment.glyphs must list digits 0-9")
    if not e.policies:
        problems.append("experiment.policies is empty")
    bad = [p for p in e.policies if p not in POLICY_NAMES]
    if bad:
        problems.append(f"unknown policy name(s): {', '.join(bad)}")
    if len(set(e.policies)) != len(e.policies):
        problems.append("experiment.policies has duplicates")
    if e.workers < 1:
        problems.append("experiment.workers must be >= 1")
    t = cfg.tracker
    if t.n_particles < 2:
        problems.append("tracker.n_particles must be >= 2")
    if t.bandwidth <= 0:
        problems.append("tracker.bandwidth must be > 0")
    if len(t.init_std) != 6 or any(v < 0 for v in t.init_std):
        problems.append("tracker.init_std needs six non-negative entries")
    if min(t.position_std, t.velocity_std, t.log_scale_std, t.orientation_std) < 0:
        problems.append("tracker noise stds must be >= 0")
    if t.baseline_mode not in ("full_information", "partial_information"):
        problems.append("tracker.baseline_mode must be full_information or partial_information")
    if t.classifier_gaze not in ("policy", "random"):
        problems.append("tracker.classifier_gaze must be policy or random")
    s = cfg.scene
    if not 0.0 <= s.noise_fraction <= 1.0:
        problems.append("scene.noise_fraction must lie in [0, 1]")
    if s.length < 1:
        problems.append("scene.length must be >= 1")
    if len(s.frame_size) != 2:
        problems.append("scene.frame_size must be [height, width]")
    if cfg.exp3.divide_by not in ("sampled", "inner"):
        problems.append("exp3.divide_by must be sampled or inner")
    if cfg.hedge.gamma < 0 or not 0.0 <= cfg.exp3.gamma <= 1.0:
        problems.append("hedge.gamma must be >= 0 and exp3.gamma in [0, 1]")
    b = cfg.bayesopt
    if b.half_width <= 0 or not 0 < b.delta < 1 or b.budget < 1 or b.warmup < 1 or b.refit_every < 1:
        problems.append("bayesopt settings out of range")
    if b.signal_var <= 0 or b.noise_var <= 0 or b.length_scale < 0:
        problems.append("bayesopt hyperparameters must be positive")
    g = cfg.gp_priors
    if g.nu <= 0 or len(g.signal_var_bounds) != 2 or len(g.noise_var_bounds) != 2:
        problems.append("gp_priors settings out of range")
    p = cfg.pretrain
    if p.delta < 1 or p.n_hidden < 1 or p.n_hidden2 < 1 or p.n_factors < 1:
        problems.append("pretrain sizes must be >= 1")
    if p.rbm_learning_rate < 0 or p.mf_learning_rate < 0 or p.readout_learning_rate < 0:
        problems.append("learning rates must be >= 0")
    if problems:
        raise ConfigInvalid("; ".join(problems))
