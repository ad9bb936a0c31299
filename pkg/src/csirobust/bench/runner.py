"""Seeded orchestration of the data / train / defend / attack / score grid.

Every random stream is derived from ``(seed, stage, names...)`` so a cell's
result does not depend on which other cells run, or in which order. Trained
networks are checkpointed under the run's checkpoint directory keyed by a
hash of everything that influences training; ``resume`` reuses them.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..attacks.budget import AttackBudget, logits_of, measure_psr
from ..attacks.transfer import AttackSpec, run_attack, transfer_eval
from ..attacks.uap import fooling_rate, uap
from ..data.csib import read_csib
from ..data.preprocessing import normalize, split
from ..data.synth import ChannelParams, synth_generate
from ..defenses import DefenseSpec, adversarial_train
from ..metrics import evaluate_predictions, macro_f1
from ..models.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from ..models.estimator import CsiClassifier
from ..models.networks import TINY, ModelSpec, build_autoencoder
from ..models.training import pretrain_autoencoder
from ..physcon import PhysConfig, PhysicalProjector
from ..utils.validation import derive_rng
from .config import SCHEMA_VERSION, ExperimentConfig, canonical, hyper_from

logger = logging.getLogger(__name__)

_CHANNEL_KEYS = ("pdp_kind", "tau_rms", "subcarrier_spacing", "doppler_max", "packet_rate",
                 "noise_std", "rician_k", "modulation_depth", "antenna_corr")


@dataclass
class ReportRecord:
    dataset: str
    model: str
    family: str
    defense: str
    attack: str
    mode: str
    budget_db: float
    seed: int
    clean_acc: float
    clean_f1: float
    asr: float
    racc: float
    adv_f1: float
    mean_psr_db: float
    capacity: int
    wall_time: float
    # extra columns: all-sample ASR, UAP fooling rate, failure bookkeeping
    n_eval: int = 0
    asr_all: float = math.nan
    fooling_rate: float = math.nan
    status: str = "ok"
    stage: str = ""
    note: str = ""
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


FIELDS = tuple(f.name for f in fields(ReportRecord))
STAGES = ("train", "defend", "attack")
NAN = math.nan


def stage_seed(seed, *keys):
    """Integer seed for one stage of one run, e.g. ``stage_seed(3, "train", "cnn")``."""
    return int(derive_rng(seed, *[str(k) if isinstance(k, float) else k for k in keys])
               .integers(0, 2 ** 31 - 1))


def _key(*parts):
    return hashlib.sha256(canonical(parts).encode()).hexdigest()[:20]


# ----------------------------------------------------------------- grid

def clean_cells(cfg: ExperimentConfig):
    """(model, defense) pairs; every model gets "none" plus the defenses
    that list it (or list nobody)."""
    out = []
    for m in cfg.models:
        for d in cfg.defenses:
            if d["kind"] == "none" or not d["models"] or m.name in d["models"]:
                out.append((m.name, d.name))
    return out


def attack_cells(cfg: ExperimentConfig):
    """(model, defense, attack, budget) tuples in report order."""
    pairs = clean_cells(cfg)
    out = []
    for m_name, d_name in pairs:
        for a in cfg.attacks:
            if a["models"] and m_name not in a["models"]:
                continue
            if a["defenses"]:
                if d_name not in a["defenses"]:
                    continue
            elif d_name != "none":
                # attacks run on defended models only when asked for
                continue
            if a["method"] == "transfer" and a["surrogate"] == m_name:
                continue
            for b in a["budgets"]:
                out.append((m_name, d_name, a.name, float(b)))
    return out


def record_order(cfg: ExperimentConfig):
    models = {m.name: i for i, m in enumerate(cfg.models)}
    defenses = {d.name: i for i, d in enumerate(cfg.defenses)}
    attacks = {a.name: i + 1 for i, a in enumerate(cfg.attacks)}
    attacks["none"] = 0

    def key(r: ReportRecord):
        budget = -1.0 if r.budget_db != r.budget_db else r.budget_db
        return (r.seed, models.get(r.model, 99), defenses.get(r.defense, 99),
                attacks.get(r.attack, 99), budget)
    return key


# ----------------------------------------------------------------- stages

def load_data(cfg: ExperimentConfig, seed):
    """Generate (or read) the dataset for ``seed``, split and normalize it."""
    ds_cfg = cfg.dataset
    if ds_cfg["source"] == "csib":
        data = read_csib(ds_cfg["path"])
    else:
        params = ChannelParams(**{k: ds_cfg[k] for k in _CHANNEL_KEYS})
        data = synth_generate(params, ds_cfg["n_classes"], ds_cfg["n_per_class"],
                              tuple(ds_cfg["dims"]), seed=stage_seed(seed, "data"))
    parts = split(data, tuple(ds_cfg["ratios"]), seed=stage_seed(seed, "split"))
    width = ds_cfg["smoothing_width"] if ds_cfg["temporal_smoothing"] else 0
    if ds_cfg["normalize"]:
        parts, _ = normalize(parts, smoothing_width=width)
    return parts, data.n_classes


def _physcfg(block):
    bw = block["mmd_bandwidth"]
    try:
        bw = float(bw)
    except ValueError:
        pass
    return PhysConfig(pdp_kind=block["pdp_kind"], tau_rms=block["tau_rms"],
                      subcarrier_spacing=block["subcarrier_spacing"], sigma_t=block["sigma_t"],
                      ridge=block["ridge"], mmd_weight=block["mmd_weight"], mmd_bandwidth=bw)


class SeedRun:
    """All stages for one seed; trained networks are kept in memory and
    mirrored to checkpoints."""

    def __init__(self, cfg: ExperimentConfig, seed, ckpt_dir: Path | None, resume=True,
                 stream=None):
        self.cfg, self.seed = cfg, seed
        self.ckpt_dir = ckpt_dir
        self.resume = resume
        self.stream = stream
        self.nets, self.failed, self.timings = {}, {}, {}
        self.aes = {}
        self.records = []
        self.split = None
        self.n_classes = None

    # -- bookkeeping
    def _emit(self, rec: ReportRecord):
        self.records.append(rec)
        if self.stream is not None:
            self.stream.write(json.dumps(rec.to_dict()) + "\n")
            self.stream.flush()

    def _timed(self, label, fn, *args):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        finally:
            self.timings[label] = self.timings.get(label, 0.0) + time.perf_counter() - t0

    def _ckpt(self, name):
        if self.ckpt_dir is None:
            return None
        path = self.ckpt_dir / f"seed-{self.seed}"
        path.mkdir(parents=True, exist_ok=True)
        return path / name

    # -- training
    def _train_key(self, m):
        return _key(self.cfg.dataset.values, m.values, self.seed)

    def _autoencoder(self, m, spec, hyper, train_seed):
        ae_key = _key(self.cfg.dataset.values, spec.latent_dim, spec.width,
                      {k: v for k, v in hyper.to_dict().items() if k != "seed"}, self.seed)
        if ae_key in self.aes:
            return self.aes[ae_key]
        ae_spec = ModelSpec(spec.family, spec.input_dims, spec.n_classes, spec.width,
                            latent_dim=spec.latent_dim, seed=stage_seed(self.seed, "ae", ae_key))
        ae = build_autoencoder(ae_spec)
        path = self._ckpt(f"ae-{ae_key}.npz")
        if self.resume and path is not None and path.exists():
            with np.load(path) as f:
                ae.load_state_dict({k: f[k] for k in f.files})
        else:
            hy = copy.deepcopy(hyper)
            hy.seed = stage_seed(self.seed, "ae-train", ae_key)
            self._timed("pretrain", pretrain_autoencoder, ae, self.split, hy)
            if path is not None:
                np.savez(path, **ae.state_dict())
        self.aes[ae_key] = ae
        return ae

    def train_model(self, m):
        key = self._train_key(m)
        path = self._ckpt(f"{m.name}.ckpt")
        dims = self.split.train.dims
        train_seed = stage_seed(self.seed, "train", m.name)
        spec = ModelSpec(m["family"], dims, self.n_classes, m["width"], m["depth"],
                         m["latent_dim"], m["head_width"], train_seed)
        if self.resume and path is not None and path.exists():
            try:
                net, meta = load_checkpoint(path, expect_spec=spec)
                if meta.get("key") == key:
                    logger.info("seed %d: reusing checkpoint for %s", self.seed, m.name)
                    return net
            except CheckpointError as exc:
                logger.warning("ignoring checkpoint %s (%s)", path, exc)
        hyper = hyper_from(m, train_seed)
        encoder = None
        if m["family"] in TINY:
            encoder = self._autoencoder(m, spec, hyper, train_seed)
        est = CsiClassifier(m["family"], width=m["width"], depth=m["depth"],
                            latent_dim=m["latent_dim"], head_width=m["head_width"],
                            hyper=hyper, encoder=encoder, random_state=train_seed)
        sp = self.split
        self._timed(f"train:{m.name}", est.fit, sp.train.X, sp.train.y,
                    (sp.val.X, sp.val.y), self.n_classes)
        if path is not None:
            save_checkpoint(path, est.network_, {"key": key, "stage": "train"})
        return est.network_

    def defend_model(self, m, d, base_net):
        key = _key(self._train_key(m), d.values)
        path = self._ckpt(f"{m.name}@{d.name}.ckpt")
        if self.resume and path is not None and path.exists():
            try:
                net, meta = load_checkpoint(path, expect_spec=base_net.spec)
                if meta.get("key") == key:
                    return net
            except CheckpointError as exc:
                logger.warning("ignoring checkpoint %s (%s)", path, exc)
        dseed = stage_seed(self.seed, "defend", m.name, d.name)
        spec = DefenseSpec(d["kind"], d["train_snr_db"], d["inner_steps"], d["inner_restarts"],
                           d["alpha_fraction"], d["beta"], d["val_steps"],
                           hyper_from(m, dseed, overrides=d))
        net, _ = self._timed(f"defend:{m.name}@{d.name}", adversarial_train, base_net,
                             self.split, spec)
        net.spec = base_net.spec
        if path is not None:
            save_checkpoint(path, net, {"key": key, "stage": "defend",
                                        "defense": spec.to_dict()})
        return net

    # -- scoring
    def eval_set(self, n_eval=0):
        X, y = self.split.test.X, self.split.test.y
        if n_eval and n_eval < len(y):
            X, y = X[:n_eval], y[:n_eval]
        return X, y

    def _base_record(self, m_name, d_name, attack="none", mode="", budget=NAN):
        m = self.cfg.model(m_name)
        return ReportRecord(self.cfg.dataset["name"], m_name, m["family"], d_name, attack, mode,
                            budget, self.seed, NAN, NAN, NAN, NAN, NAN, NAN, 0, 0.0)

    def _clean_record(self, m_name, d_name):
        net = self.nets[(m_name, d_name)]
        X, y = self.eval_set()
        pred = logits_of(net, X).argmax(1)
        rec = self._base_record(m_name, d_name)
        rec.clean_acc = float(np.mean(pred == y))
        rec.clean_f1 = macro_f1(pred, y, self.n_classes).macro
        rec.capacity = net.n_params(trainable_only=False)
        rec.n_eval = int(len(y))
        return rec

    def _score(self, rec, net, X, y, adv_pred, psr):
        clean = logits_of(net, X).argmax(1)
        res = evaluate_predictions(clean, adv_pred, y, self.n_classes, psr,
                                   net.n_params(trainable_only=False))
        rec.clean_acc, rec.clean_f1 = res.clean_accuracy, res.clean_macro_f1
        rec.asr, rec.racc, rec.asr_all = res.asr, res.robust_accuracy, res.asr_all
        rec.adv_f1 = macro_f1(adv_pred, y, self.n_classes).macro
        rec.mean_psr_db = res.psr_mean
        rec.capacity = res.capacity
        rec.n_eval = res.n_total
        return rec

    def _attack_spec(self, a, method, budget):
        b = AttackBudget(budget, a["steps"], a["alpha_fraction"], a["restarts"], a["mode"])
        bw = a["mmd_bandwidth"]
        try:
            bw = float(bw)
        except ValueError:
            pass
        return AttackSpec(method, b, a["mmd_weight"], bw, a["df_max_iter"], a["overshoot"],
                          a["sign_step"])

    def attack_cell(self, m_name, d_name, a, budget):
        net = self.nets[(m_name, d_name)]
        X, y = self.eval_set(a["n_eval"])
        rec = self._base_record(m_name, d_name, a.name, a["mode"], budget)
        cseed = stage_seed(self.seed, "attack", m_name, d_name, a.name, budget)
        method = a["method"]
        if method in ("pgd", "pgd-corr", "deepfool"):
            projector = None
            if method == "pgd-corr":
                projector = self._projector(a)
            pert = run_attack(net, X, y, self._attack_spec(a, method, budget), projector,
                              seed=cseed)
            return self._score(rec, net, X, y, pert.adv_pred, pert.achieved_psr_db)
        if method == "uap":
            projector = self._projector(a) if a["preserve_corr"] else None
            out = uap(net, self.split.train.X, budget, a["passes"], a["fooling_target"],
                      a["aggregate"], a["preserve_corr"], projector=projector,
                      batch_size=a["uap_batch_size"], norm_batches=a["norm_batches"],
                      norm_batch_size=a["uap_batch_size"], df_max_iter=a["uap_df_iter"],
                      overshoot=a["overshoot"], seed=cseed)
            clean = logits_of(net, X).argmax(1)
            rec.fooling_rate, _ = fooling_rate(net, X, out.v, clean)
            adv = logits_of(net, X + out.v[None]).argmax(1)
            psr = measure_psr(X, np.broadcast_to(out.v, X.shape))
            rec.note = f"train_fooling={out.fooling_rate:.6f};passes={out.passes_used}"
            return self._score(rec, net, X, y, adv, psr)
        # transfer: craft once per (surrogate, budget) on the undefended surrogate
        sur = self.nets.get((a["surrogate"], "none"))
        if sur is None:
            raise RuntimeError(f"surrogate {a['surrogate']} is unavailable")
        spec = self._attack_spec(a, a["base"], budget)
        cache_key = (a.name, budget)
        pert = self._transfer_cache.get(cache_key)
        if pert is None:
            projector = self._projector(a) if a["base"] == "pgd-corr" else None
            sseed = stage_seed(self.seed, "transfer", a.name, budget)
            pert = run_attack(sur, X, y, spec, projector, seed=sseed)
            self._transfer_cache[cache_key] = pert
        res = transfer_eval(sur, net, X, y, spec, perturbation=pert)
        adv = logits_of(net, X + pert.delta).argmax(1)
        rec.note = f"surrogate={a['surrogate']};{res.tag};white_box_asr={res.white_box_asr:.6f}"
        return self._score(rec, net, X, y, adv, pert.achieved_psr_db)

    def _projector(self, a):
        key = ("proj", a.name)
        if key not in self._proj_cache:
            self._proj_cache[key] = PhysicalProjector.from_config(
                _physcfg(a), self.split.train.dims, self.split.train.X)
        return self._proj_cache[key]

    # -- driver
    def _fail_all(self, stage, exc, pairs=None, cells=None):
        note = f"{type(exc).__name__}: {exc}"[:300]
        for m_name, d_name in pairs or []:
            rec = self._base_record(m_name, d_name)
            rec.status, rec.stage, rec.note = "failed", stage, note
            self._emit(rec)
        for m_name, d_name, a_name, b in cells or []:
            a = next(x for x in self.cfg.attacks if x.name == a_name)
            rec = self._base_record(m_name, d_name, a_name, a["mode"], b)
            rec.status, rec.stage, rec.note = "failed", stage, note
            self._emit(rec)

    def run(self, stages=STAGES):
        """Run ``stages`` (a subset of :data:`STAGES`); later stages reuse
        checkpoints from earlier runs when ``resume`` is on."""
        cfg = self.cfg
        pairs, cells = clean_cells(cfg), attack_cells(cfg)
        if "defend" not in stages:
            pairs = [p for p in pairs if p[1] == "none"]
        if "attack" not in stages:
            cells = []
        else:
            cells = [c for c in cells if (c[0], c[1]) in pairs]
        self._proj_cache, self._transfer_cache = {}, {}
        try:
            self.split, self.n_classes = self._timed("data", load_data, cfg, self.seed)
        except Exception as exc:  # noqa: BLE001 - recorded, run continues
            logger.error("seed %d: data stage failed: %s", self.seed, exc)
            self._fail_all("data", exc, pairs, cells)
            return self.records

        for m_name, d_name in pairs:
            m = cfg.model(m_name)
            d = next(x for x in cfg.defenses if x.name == d_name)
            stage = "train" if d["kind"] == "none" else "defend"
            try:
                if (m_name, "none") in self.failed:
                    raise RuntimeError(f"undefended {m_name} failed to train")
                if d["kind"] == "none":
                    net = self.train_model(m)
                else:
                    net = self.defend_model(m, d, self.nets[(m_name, "none")])
                self.nets[(m_name, d_name)] = net
                self._emit(self._clean_record(m_name, d_name))
            except Exception as exc:  # noqa: BLE001
                logger.error("seed %d: %s of %s/%s failed: %s", self.seed, stage, m_name,
                             d_name, exc)
                self.failed[(m_name, d_name)] = (stage, exc)
                self._fail_all(stage, exc, [(m_name, d_name)])

        attacks = {a.name: a for a in cfg.attacks}
        for cell in cells:
            m_name, d_name, a_name, budget = cell
            if (m_name, d_name) in self.failed:
                stage, exc = self.failed[(m_name, d_name)]
                self._fail_all(stage, exc, cells=[cell])
                continue
            try:
                t0 = time.perf_counter()
                rec = self.attack_cell(m_name, d_name, attacks[a_name], budget)
                dt = time.perf_counter() - t0
                self.timings[f"attack:{m_name}@{d_name}:{a_name}:{budget:g}"] = dt
                if cfg.run["record_wall_time"]:
                    rec.wall_time = dt
                self._emit(rec)
            except Exception as exc:  # noqa: BLE001
                logger.error("seed %d: attack %s failed: %s", self.seed, cell, exc)
                self._fail_all("attack", exc, cells=[cell])
        return self.records


def _run_seed(args):
    cfg, seed, ckpt_dir, resume, stream_path, stages = args
    stream = open(stream_path, "w") if stream_path else None
    try:
        runner = SeedRun(cfg, seed, ckpt_dir, resume, stream)
        records = runner.run(stages)
        return records, runner.timings
    finally:
        if stream is not None:
            stream.close()


def checkpoint_dir(cfg: ExperimentConfig, out_dir=None):
    if cfg.run["checkpoint_dir"]:
        return Path(cfg.run["checkpoint_dir"])
    return Path(out_dir or cfg.run["output_dir"]) / "checkpoints"


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs=None, seeds=None,
                   checkpoints=True, stages=STAGES):
    """Run the whole grid. Returns ``(records, timings)`` with records in
    cell order; per-seed records are also streamed to
    ``<out>/partial/seed-<s>.jsonl`` while the run progresses."""
    out = Path(out_dir or cfg.run["output_dir"])
    seeds = list(seeds if seeds is not None else cfg.seeds)
    jobs = jobs or cfg.run["jobs"]
    partial = out / "partial"
    partial.mkdir(parents=True, exist_ok=True)
    ckpt = checkpoint_dir(cfg, out) if checkpoints else None
    tasks = [(cfg, s, ckpt, cfg.run["resume"], str(partial / f"seed-{s}.jsonl"), tuple(stages))
             for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_run_seed, tasks))
    else:
        results = [_run_seed(t) for t in tasks]
    records = [r for recs, _ in results for r in recs]
    records.sort(key=record_order(cfg))
    timings = {str(s): t for s, (_, t) in zip(seeds, results)}
    return records, timings

