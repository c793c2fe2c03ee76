"""Experiment runner: model pretraining, policy-comparison grids and artifact files."""

import csv
import io
import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import TrainingDiverged
from .gp import ActionDomain, BayesOptPolicy, GpHyperparams, HyperPriors, reward_surface
from .identity import MultiFixationRbm, Readout
from .appearance import FoveaGeometry, Rbm
from .policies import (
    CircularPolicy,
    DiscreteActionSet,
    Exp3Policy,
    HedgePolicy,
    RandomPolicy,
    default_exp3_gamma,
    default_hedge_gamma,
)
from .simulator import (
    classification_accuracy,
    generate_sequence,
    position_errors,
    random_sequence_spec,
    write_pgm,
)
from .state_space import TransitionModel
from .tracker import FULL, PARTIAL, AppearanceModels, TrackerConfig, run_sequence
from .training import PretrainedModels, pretrain

log = logging.getLogger(__name__)

TRACE_HEADER = "# gazetrack-trace v1"
DIST_HEADER = "# gazetrack-policy-distribution v1"
SURFACE_HEADER = "# gazetrack-reward-surface v1"
MODEL_FILES = ("rbm.bin", "mfrbm.bin", "readout.bin")
INIT_NOTE = "particles initialised from a Gaussian around the first-frame ground truth (no detector)"


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------


def stream(seed, *names):
    """Independent generator for a named substream of a master seed.

    Integers and strings may be mixed; strings are hashed with CRC-32 so the
    stream for a name never depends on which other streams exist.
    """
    words = [int(seed)]
    for n in names:
        words.append(zlib.crc32(n.encode()) if isinstance(n, str) else int(n))
    return np.random.default_rng(np.random.SeedSequence(words))


def cell_streams(seed, glyph, policy):
    # the scene and particle noise are shared across policies for a given (glyph, seed)
    return {
        "simulator": stream(seed, glyph, "simulator"),
        "particles": stream(seed, glyph, "particles"),
        "policy": stream(seed, glyph, "policy", policy),
        "classifier": stream(seed, glyph, "classifier"),
    }


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def pretrain_models(cfg, out_dir=None):
    """Train and save the appearance RBM, multi-fixation RBM and readout."""
    out = Path(out_dir) if out_dir is not None else cfg.models_dir
    out.mkdir(parents=True, exist_ok=True)
    models = pretrain(cfg.pretrain, stream(cfg.experiment.pretrain_seed, "pretrain"))
    if not (models.rbm.is_finite() and models.mfrbm.is_finite()):
        raise TrainingDiverged("trained parameters are not finite")
    models.rbm.save(out / "rbm.bin")
    models.mfrbm.save(out / "mfrbm.bin")
    models.readout.save(out / "readout.bin")
    return models


def load_models(cfg, models_dir=None, train_missing=True):
    d = Path(models_dir) if models_dir is not None else cfg.models_dir
    if not all((d / f).exists() for f in MODEL_FILES):
        if not train_missing:
            raise FileNotFoundError(f"model files missing in {d}")
        log.info("model files missing in %s; pretraining", d)
        return pretrain_models(cfg, d)
    p = cfg.pretrain
    geometry = FoveaGeometry(p.fovea, p.rings)
    rbm = Rbm.load(d / "rbm.bin")
    mf = MultiFixationRbm.load(d / "mfrbm.bin")
    readout = Readout.load(d / "readout.bin")
    fixations = DiscreteActionSet.grid(p.gaze_spacing).fixations
    return PretrainedModels(rbm, mf, readout, geometry, fixations)


# ---------------------------------------------------------------------------
# one cell
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    policy: str
    glyph: int
    seed: int
    status: str = "ok"
    message: str = ""
    errors: np.ndarray = None
    estimates: list = None
    truth: list = None
    accuracy: float = float("nan")
    bayesopt: object = None
    wall_clock: float = 0.0

    @property
    def mean_error(self):
        return float(np.mean(self.errors)) if self.errors is not None else float("nan")

    @property
    def std_error(self):
        return float(np.std(self.errors)) if self.errors is not None else float("nan")


def make_policy(name, cfg, K):
    horizon = max(cfg.scene.length - 1, 1)
    if name == "random":
        return RandomPolicy(K)
    if name == "circular":
        return CircularPolicy(K)
    if name == "hedge":
        return HedgePolicy(K, cfg.hedge.gamma or default_hedge_gamma(K, horizon))
    if name == "exp3":
        return Exp3Policy(K, cfg.exp3.gamma or default_exp3_gamma(K, horizon), cfg.exp3.divide_by)
    if name == "bayesopt":
        b = cfg.bayesopt
        domain = ActionDomain.square(b.half_width)
        side = 2.0 * b.half_width
        ell = b.length_scale or side / 4.0
        g = cfg.gp_priors
        priors = HyperPriors(
            nu=g.nu,
            length_loc=(g.length_loc or 0.25 * side,),
            length_scale=(g.length_scale or side / 4.0,),
            signal_var_bounds=tuple(g.signal_var_bounds),
            noise_var_bounds=tuple(g.noise_var_bounds),
            length_bounds=(side / 100.0, side * 10.0),
        )
        hyper = GpHyperparams(b.signal_var, b.noise_var, (ell, ell))
        return BayesOptPolicy(domain, hyper, priors, b.delta, b.budget, b.warmup, b.refit_every)
    raise ValueError(f"unknown policy {name!r}")


def tracker_config(cfg, policy):
    t = cfg.tracker
    if policy.information == "full":
        mode = FULL
    elif policy.information == "partial":
        mode = PARTIAL
    else:
        mode = t.baseline_mode
    transition = TransitionModel.constant_velocity(
        position_std=t.position_std,
        velocity_std=t.velocity_std,
        log_scale_std=t.log_scale_std,
        orientation_std=t.orientation_std,
    )
    return TrackerConfig(
        n_particles=t.n_particles,
        transition=transition,
        bandwidth=t.bandwidth,
        mode=mode,
        init_std=tuple(t.init_std),
        classifier=t.classifier,
        classifier_gaze=t.classifier_gaze,
        record_weights=True,
    )


def run_cell(cfg, models, policy_name, glyph, seed):
    t0 = time.perf_counter()
    res = CellResult(policy_name, int(glyph), int(seed))
    try:
        rngs = cell_streams(seed, glyph, policy_name)
        spec = random_sequence_spec(glyph, cfg.scene, rngs["simulator"])
        frames, truth = generate_sequence(spec, rng=rngs["simulator"])
        actions = DiscreteActionSet(models.fixations)
        appearance = AppearanceModels(models.rbm, models.geometry, actions, models.mfrbm, models.readout)
        policy = make_policy(policy_name, cfg, actions.K)
        tcfg = tracker_config(cfg, policy)
        estimates = run_sequence(
            frames, truth[0], tcfg, appearance, policy, rngs["particles"], rngs["policy"], rngs["classifier"]
        )
        res.estimates = estimates
        res.truth = truth
        res.errors = position_errors([e.state for e in estimates], truth)
        if tcfg.classifier:
            posts = [e.posterior for e in estimates if e.posterior is not None]
            res.accuracy = classification_accuracy(posts, spec.class_label) if posts else float("nan")
        if isinstance(policy, BayesOptPolicy):
            res.bayesopt = policy
    except Exception as exc:  # noqa: BLE001 - a failed cell is reported, not fatal
        log.exception("cell %s/g%d/s%d failed", policy_name, glyph, seed)
        res.status = "failed"
        res.message = f"{type(exc).__name__}: {exc}"
    res.wall_clock = time.perf_counter() - t0
    return res


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def _fmt(x):
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def trace_rows(res):
    names = [
        "frame", "x", "y", "vx", "vy", "log_scale", "orientation",
        "action", "action_x", "action_y", "reward", "cumulative_reward", "ess",
        "flagged", "truth_x", "truth_y", "error", "class_argmax", "class_prob",
    ]  # fmt: skip
    rows = [names]
    for est, tru, err in zip(res.estimates, res.truth, res.errors):
        s = est.state
        a = est.action
        if a is None:
            act, ax, ay = "", "", ""
        elif np.ndim(a) == 0:
            act, ax, ay = str(int(a)), "", ""
        else:
            act, ax, ay = "", _fmt(a[0]), _fmt(a[1])
        post = est.posterior
        ess = "" if est.weights is None else _fmt(1.0 / float(np.dot(est.weights, est.weights)))
        rows.append(
            [
                str(est.frame), _fmt(s.position[0]), _fmt(s.position[1]), _fmt(s.velocity[0]),
                _fmt(s.velocity[1]), _fmt(s.log_scale), _fmt(s.orientation), act, ax, ay,
                _fmt(est.reward), _fmt(est.cumulative_reward), ess, str(int(est.flagged)),
                _fmt(tru.position[0]), _fmt(tru.position[1]), _fmt(err),
                "" if post is None else str(post.argmax()),
                "" if post is None else _fmt(post.probs[post.argmax()]),
            ]
        )  # fmt: skip
    return rows


def _write_csv(path, rows, header=None):
    buf = io.StringIO()
    if header:
        buf.write(header + "\n")
    csv.writer(buf, lineterminator="\n").writerows(rows)
    Path(path).write_text(buf.getvalue())


def cell_stem(res):
    return f"{res.policy}_g{res.glyph}_s{res.seed}"


def results_table(results, policies, glyphs):
    """Rows = policies, columns = glyphs + Avg, cells ``"mean (std)"`` of pooled per-frame errors."""
    rows = [["policy"] + [str(g) for g in glyphs] + ["Avg"]]
    for p in policies:
        row = [p]
        pooled = []
        for g in glyphs:
            errs = [r.errors for r in results if r.policy == p and r.glyph == g and r.status == "ok"]
            if errs:
                e = np.concatenate(errs)
                pooled.append(e)
                row.append(f"{e.mean():.2f} ({e.std():.2f})")
            else:
                row.append("failed")
        if pooled:
            e = np.concatenate(pooled)
            row.append(f"{e.mean():.2f} ({e.std():.2f})")
        else:
            row.append("failed")
        rows.append(row)
    return rows


def cell_rows(results, loss_threshold):
    rows = [
        [
            "policy", "glyph", "seed", "status", "mean_error", "std_error", "track_loss_rate",
            "accuracy", "cumulative_reward", "flagged_frames", "message",
        ]
    ]  # fmt: skip
    for r in results:
        if r.status == "ok":
            rows.append(
                [
                    r.policy, str(r.glyph), str(r.seed), r.status, _fmt(r.mean_error), _fmt(r.std_error),
                    _fmt(float(np.mean(r.errors > loss_threshold))), _fmt(r.accuracy),
                    _fmt(r.estimates[-1].cumulative_reward), str(sum(e.flagged for e in r.estimates)), "",
                ]
            )  # fmt: skip
        else:
            rows.append([r.policy, str(r.glyph), str(r.seed), r.status, "", "", "", "", "", "", r.message])
    return rows


def write_surface(stem_path, policy, n=64):
    """GP posterior mean/std on a grid as CSV plus a mean heatmap PGM."""
    surf = reward_surface(policy.model, policy.domain, n)
    rows = [["x", "y", "mean", "std"]] + [[_fmt(v) for v in row] for row in surf]
    _write_csv(str(stem_path) + ".csv", rows, SURFACE_HEADER)
    mean = surf[:, 2].reshape(n, n)
    lo, hi = float(mean.min()), float(mean.max())
    img = np.zeros_like(mean) if hi <= lo else (mean - lo) / (hi - lo)
    write_pgm(str(stem_path) + ".pgm", img)
    return surf


def write_cell_artifacts(out, res, cfg):
    if res.status != "ok":
        return
    stem = cell_stem(res)
    if cfg.experiment.traces:
        _write_csv(out / "traces" / f"{stem}.csv", trace_rows(res), TRACE_HEADER)
        dists = [e.distribution for e in res.estimates[1:]]
        if dists and dists[0] is not None:
            K = len(dists[0])
            rows = [["frame"] + [f"p{k}" for k in range(K)]]
            rows += [[str(e.frame)] + [_fmt(v) for v in e.distribution] for e in res.estimates[1:]]
            _write_csv(out / "distributions" / f"{stem}.csv", rows, DIST_HEADER)
    if cfg.experiment.surfaces and res.bayesopt is not None:
        write_surface(out / "surfaces" / stem, res.bayesopt)


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

_WORKER = {}


def _init_worker(cfg, models):
    _WORKER["cfg"] = cfg
    _WORKER["models"] = models


def _run_task(task):
    return _logged(run_cell(_WORKER["cfg"], _WORKER["models"], *task))


def _logged(res):
    log.info("%s %s in %.1f s", cell_stem(res), res.status, res.wall_clock)
    return res


@dataclass
class RunReport:
    results: list
    failures: list = field(default_factory=list)
    wall_clock: float = 0.0
    output_dir: Path = None

    def cell(self, policy, glyph, seed):
        for r in self.results:
            if (r.policy, r.glyph, r.seed) == (policy, glyph, seed):
                return r
        raise KeyError((policy, glyph, seed))


def run_grid(cfg, models):
    e = cfg.experiment
    tasks = [(p, g, s) for p in e.policies for g in e.glyphs for s in e.seeds]
    if e.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(e.workers, initializer=_init_worker, initargs=(cfg, models)) as pool:
            return list(pool.map(_run_task, tasks))  # map preserves task order
    return [_logged(run_cell(cfg, models, *t)) for t in tasks]


def run_experiment(cfg, models=None, out_dir=None):
    """Run the configured grid and write all artifacts; returns a :class:`RunReport`."""
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else Path(cfg.experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if models is None:
        models = load_models(cfg)
    results = run_grid(cfg, models)
    e = cfg.experiment
    for sub in ("traces", "distributions", "surfaces"):
        (out / sub).mkdir(exist_ok=True)
    for r in results:
        write_cell_artifacts(out, r, cfg)
    _write_csv(out / "results.csv", results_table(results, e.policies, e.glyphs))
    _write_csv(out / "cells.csv", cell_rows(results, e.track_loss_threshold))
    failures = [f"{cell_stem(r)}: {r.message}" for r in results if r.status != "ok"]
    report = RunReport(results, failures, time.perf_counter() - t0, out)
    meta = {
        "version": __version__,
        "initialization": INIT_NOTE,
        "wall_clock_seconds": report.wall_clock,
        "cell_wall_clock_seconds": {cell_stem(r): r.wall_clock for r in results},
        "failures": failures,
        "config": _jsonable(cfg),
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return report


def dump_surface(cfg, models=None, out_dir=None, glyph=None, seed=None, n=64):
    """Run the BayesOpt policy on one sequence and write its final reward surface."""
    out = Path(out_dir) if out_dir is not None else Path(cfg.experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if models is None:
        models = load_models(cfg)
    glyph = cfg.experiment.glyphs[0] if glyph is None else glyph
    seed = cfg.experiment.seeds[0] if seed is None else seed
    res = run_cell(cfg, models, "bayesopt", glyph, seed)
    if res.status != "ok":
        raise RuntimeError(res.message)
    stem = out / f"surface_g{glyph}_s{seed}"
    write_surface(stem, res.bayesopt, n)
    return stem


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj
