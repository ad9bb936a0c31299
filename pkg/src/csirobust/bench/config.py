"""Experiment configuration files.

Flat, sectioned ``key = value`` text. ``[dataset]`` and ``[run]`` appear at
most once; ``[model]``, ``[attack]`` and ``[defense]`` may repeat, each
header opening a new block. ``#`` starts a comment. Example::

    [dataset]
    dims = 3, 30, 64

    [model]
    name = cnn
    family = large-cnn

    [attack]
    method = pgd
    budgets = 10, 20, 40

Every key has a schema entry; parsing materializes all defaults so that
:meth:`ExperimentConfig.echo` writes the complete effective config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..attacks.transfer import ATTACKS
from ..data.synth import ChannelParams
from ..defenses import DEFENSES
from ..models.networks import FAMILIES
from ..models.training import TrainHyper

SCHEMA_VERSION = 1
METHODS = ATTACKS + ("uap", "transfer")
MAX_DB = 80.0


class ConfigError(ValueError):
    """Invalid config; ``line`` and ``key`` locate the problem when known."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line, self.key = line, key


# ---------------------------------------------------------------- values

def _bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _list(conv):
    def parse(s):
        items = [p.strip() for p in s.split(",") if p.strip()]
        return [conv(p) for p in items]
    return parse


def _optional(conv, none_word="auto"):
    def parse(s):
        return None if s.strip().lower() == none_word else conv(s)
    parse.none_word = none_word
    return parse


def _fmt(value, none_word="auto"):
    if value is None:
        return none_word
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: object
    default: object
    check: object = None  # callable(value) -> error message or None
    required: bool = False


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be non-negative"


def _at_least_one(v):
    return None if v >= 1 else "must be at least 1"


def _choice(options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(map(str, options))}"
    return check


def _budgets(v):
    if not v:
        return "needs at least one budget"
    bad = [b for b in v if not 0 <= b <= MAX_DB]
    return f"{bad[0]:g} dB outside [0, {MAX_DB:g}]" if bad else None


def _fraction(v):
    return None if 0 <= v <= 1 else "must lie in [0, 1]"


_hyper_defaults = TrainHyper()
HYPER_KEYS = ("lr", "weight_decay", "max_epochs", "patience", "min_epochs", "batch_size",
              "contractive_lambda", "mask_focus_schedule", "phaseA_epochs", "phaseB_epochs",
              "head_lr", "encoder_lr")


def _hyper_schema(inherit=False):
    out = {}
    for k in HYPER_KEYS:
        default = getattr(_hyper_defaults, k)
        conv = int if isinstance(default, int) else float
        if inherit:
            out[k] = Key(_optional(conv, "inherit"), None)
        else:
            out[k] = Key(conv, default, _positive)
    return out


_channel_defaults = ChannelParams()
_phys_defaults = {
    "pdp_kind": Key(str, "gaussian", _choice(("gaussian", "exponential"))),
    "tau_rms": Key(float, 50e-9, _positive),
    "subcarrier_spacing": Key(float, 312.5e3, _positive),
    "sigma_t": Key(float, 3.0, _non_negative),
    "ridge": Key(float, 1e-3, _positive),
    "mmd_weight": Key(float, 0.25, _non_negative),
    "mmd_bandwidth": Key(str, "median"),
}

SCHEMA = {
    "dataset": {
        "name": Key(str, "synthetic"),
        "source": Key(str, "synthetic", _choice(("synthetic", "csib"))),
        "path": Key(_optional(str, "none"), None),
        "dims": Key(_list(int), [3, 30, 250],
                    lambda v: None if len(v) == 3 and min(v) >= 1
                    else "needs three positive ints (antennas, subcarriers, packets)"),
        "n_classes": Key(int, 7, lambda v: None if v >= 2 else "must be at least 2"),
        "n_per_class": Key(int, 40, lambda v: None if v >= 3 else "must be at least 3"),
        "ratios": Key(_list(float), [0.7, 0.1, 0.2],
                      lambda v: None if len(v) == 3 and min(v) > 0 and abs(sum(v) - 1) < 1e-9
                      else "needs three positive fractions summing to 1"),
        "normalize": Key(_bool, True),
        "temporal_smoothing": Key(_bool, False),
        "smoothing_width": Key(int, 5, _at_least_one),
        **{k: Key(type(getattr(_channel_defaults, k)), getattr(_channel_defaults, k))
           for k in ("pdp_kind", "tau_rms", "subcarrier_spacing", "doppler_max",
                     "packet_rate", "noise_std", "rician_k", "modulation_depth",
                     "antenna_corr")},
    },
    "model": {
        "name": Key(str, None, required=True),
        "family": Key(str, None, _choice(FAMILIES), required=True),
        "width": Key(_optional(int), None),
        "depth": Key(_optional(int), None),
        "latent_dim": Key(int, 8, _at_least_one),
        "head_width": Key(_optional(int), None),
        **_hyper_schema(),
    },
    "attack": {
        "name": Key(_optional(str), None),
        "method": Key(str, None, _choice(METHODS), required=True),
        "budgets": Key(_list(float), [10.0, 20.0, 40.0], _budgets),
        "mode": Key(str, "untargeted", _choice(("untargeted", "targeted"))),
        "steps": Key(int, 100, _at_least_one),
        "restarts": Key(int, 5, _at_least_one),
        "alpha_fraction": Key(float, 1.0, _positive),
        "sign_step": Key(_bool, False),
        "df_max_iter": Key(int, 100, _at_least_one),
        "overshoot": Key(float, 0.02, _non_negative),
        "passes": Key(int, 5, _at_least_one),
        "fooling_target": Key(float, 0.9, _fraction),
        "aggregate": Key(_bool, False),
        "preserve_corr": Key(_bool, False),
        "uap_batch_size": Key(int, 32, _at_least_one),
        "norm_batches": Key(int, 50, _at_least_one),
        "uap_df_iter": Key(int, 10, _at_least_one),
        "surrogate": Key(_optional(str, "none"), None),
        "base": Key(str, "pgd", _choice(ATTACKS)),
        "models": Key(_list(str), []),
        "defenses": Key(_list(str), []),
        "n_eval": Key(int, 0, _non_negative),
        **_phys_defaults,
    },
    "defense": {
        "name": Key(_optional(str), None),
        "kind": Key(str, None, _choice(("none",) + DEFENSES), required=True),
        "models": Key(_list(str), []),
        "train_snr_db": Key(float, 20.0, lambda v: None if 0 <= v <= MAX_DB
                            else f"{v:g} dB outside [0, {MAX_DB:g}]"),
        "inner_steps": Key(int, 20, _at_least_one),
        "inner_restarts": Key(int, 5, _at_least_one),
        "alpha_fraction": Key(float, 1.0, _positive),
        "beta": Key(float, 2.0, _positive),
        "val_steps": Key(int, 10, _at_least_one),
        **_hyper_schema(inherit=True),
    },
    "run": {
        "seeds": Key(_list(int), [1, 2, 3, 4, 5],
                     lambda v: None if v and min(v) >= 0 and len(set(v)) == len(v)
                     else "needs distinct non-negative seeds"),
        "output_dir": Key(str, "results"),
        "format": Key(str, "csv", _choice(("csv", "json"))),
        "jobs": Key(int, 1, _at_least_one),
        "resume": Key(_bool, True),
        "checkpoint_dir": Key(_optional(str), None),
        "record_wall_time": Key(_bool, False),
    },
}
SINGLE = ("dataset", "run")
ORDER = ("dataset", "model", "defense", "attack", "run")


# ---------------------------------------------------------------- blocks

@dataclass
class Block:
    kind: str
    values: dict
    line: int = 0

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def name(self):
        return self.values.get("name")


@dataclass
class ExperimentConfig:
    dataset: Block
    models: list
    attacks: list
    defenses: list
    run: Block
    source: str = "<memory>"
    extra: dict = field(default_factory=dict)

    @property
    def seeds(self):
        return list(self.run["seeds"])

    def model(self, name):
        for m in self.models:
            if m.name == name:
                return m
        raise KeyError(name)

    def echo(self):
        """Complete effective config as parseable text (defaults included)."""
        lines = [f"# effective config (schema {SCHEMA_VERSION})"]
        blocks = [self.dataset] + self.models + self.defenses + self.attacks + [self.run]
        for b in blocks:
            lines.append(f"[{b.kind}]")
            for key, spec in SCHEMA[b.kind].items():
                word = getattr(spec.parse, "none_word", "auto")
                lines.append(f"{key} = {_fmt(b.values[key], word)}")
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        return hashlib.sha256(self.echo().encode()).hexdigest()[:16]

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "dataset": self.dataset.values,
            "models": [m.values for m in self.models],
            "defenses": [d.values for d in self.defenses],
            "attacks": [a.values for a in self.attacks],
            "run": self.run.values,
        }


def _convert(kind, key, raw, line):
    spec = SCHEMA[kind].get(key)
    if spec is None:
        raise ConfigError(f"unknown key in [{kind}]", line, key)
    try:
        value = spec.parse(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} ({exc})", line, key) from None
    if spec.check is not None and value is not None:
        problem = spec.check(value)
        if problem:
            raise ConfigError(problem, line, key)
    return value


def _materialize(kind, given, header_line):
    values = {}
    for key, spec in SCHEMA[kind].items():
        if key in given:
            values[key] = given[key]
        elif spec.required:
            raise ConfigError(f"[{kind}] block is missing required key", header_line, key)
        else:
            values[key] = list(spec.default) if isinstance(spec.default, list) else spec.default
    return Block(kind, values, header_line)


def parse_config_text(text, source="<memory>") -> ExperimentConfig:
    raw_blocks = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            kind = line[1:-1].strip().lower()
            if kind not in SCHEMA:
                raise ConfigError(f"unknown section [{kind}]", lineno)
            if kind in SINGLE and any(b[0] == kind for b in raw_blocks):
                raise ConfigError(f"section [{kind}] may appear only once", lineno)
            current = (kind, {}, lineno)
            raw_blocks.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        kind, given, _ = current
        if key in given:
            raise ConfigError("key given twice in the same block", lineno, key)
        given[key] = _convert(kind, key, value, lineno)

    blocks = [_materialize(kind, given, line) for kind, given, line in raw_blocks]
    by_kind = {k: [b for b in blocks if b.kind == k] for k in SCHEMA}
    dataset = by_kind["dataset"][0] if by_kind["dataset"] else _materialize("dataset", {}, 0)
    run = by_kind["run"][0] if by_kind["run"] else _materialize("run", {}, 0)
    models, attacks, defenses = by_kind["model"], by_kind["attack"], by_kind["defense"]
    if not models:
        raise ConfigError("at least one [model] block is required")
    if not attacks:
        raise ConfigError("at least one [attack] block is required")
    if not defenses:
        defenses = [_materialize("defense", {"kind": "none"}, 0)]

    for group in (attacks, defenses):
        for b in group:
            if b.values["name"] is None:
                b.values["name"] = b.values.get("method") or b.values["kind"]
    for label, group in (("model", models), ("attack", attacks), ("defense", defenses)):
        seen = {}
        for b in group:
            if b.name in seen:
                raise ConfigError(f"duplicate {label} name {b.name!r} (first at line "
                                  f"{seen[b.name]})", b.line, "name")
            seen[b.name] = b.line

    if dataset["source"] == "csib" and not dataset["path"]:
        raise ConfigError("csib source needs a path", dataset.line, "path")
    if dataset["packet_rate"] <= 2 * dataset["doppler_max"]:
        raise ConfigError("packet_rate must exceed twice doppler_max (Nyquist)",
                          dataset.line, "packet_rate")
    if "none" not in {d.name for d in defenses}:
        defenses.insert(0, _materialize("defense", {"kind": "none", "name": "none"}, 0))
    model_names = {m.name for m in models}
    defense_names = {d.name for d in defenses}
    for b in defenses:
        if b["kind"] == "none" and b["models"]:
            raise ConfigError("the 'none' defense applies to every model", b.line, "models")
        _check_refs(b, "models", model_names)
    for b in attacks:
        _check_refs(b, "models", model_names)
        _check_refs(b, "defenses", defense_names)
        if b["method"] == "transfer":
            if b["surrogate"] not in model_names:
                raise ConfigError(f"transfer needs a surrogate among {sorted(model_names)}",
                                  b.line, "surrogate")
        elif b["surrogate"] is not None:
            raise ConfigError("surrogate only applies to transfer attacks", b.line, "surrogate")
        if b["mode"] == "targeted" and b["method"] not in ("pgd", "pgd-corr"):
            raise ConfigError(f"{b['method']} has no targeted mode", b.line, "mode")
    for m in models:
        if m["patience"] > m["max_epochs"]:
            raise ConfigError("patience exceeds max_epochs", m.line, "patience")
    return ExperimentConfig(dataset, models, attacks, defenses, run, source)


def _check_refs(block, key, known):
    missing = [n for n in block[key] if n not in known]
    if missing:
        raise ConfigError(f"unknown name {missing[0]!r}", block.line, key)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def hyper_from(model_block: Block, seed, overrides: Block | None = None) -> TrainHyper:
    values = {k: model_block[k] for k in HYPER_KEYS}
    if overrides is not None:
        values.update({k: overrides[k] for k in HYPER_KEYS if overrides[k] is not None})
    return TrainHyper(seed=seed, **values)


def canonical(obj):
    """Stable JSON used for cache keys and sidecars."""
    return json.dumps(obj, sort_keys=True, default=str)
