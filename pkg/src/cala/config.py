"""Experiment configuration as flat dotted keys.

A config file holds one ``key = value`` pair per line; ``#`` starts a comment.
Every key has a parser and a default. Values given on the command line
override file values. :meth:`ExperimentConfig.digest` hashes everything
except the ``output.*`` keys, so the same experiment written to two places
carries the same hash.
"""

import hashlib
import json
from pathlib import Path

from ._validation import ValidationError


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(parse):
    def inner(text):
        if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none", "null")):
            return None
        return parse(text)
    return inner


def _offsets(text):
    """One distance, or a comma-separated list with one distance per novel class."""
    if isinstance(text, (int, float)):
        return float(text)
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    parts = [p for p in str(text).split(",") if p.strip()]
    if len(parts) == 1:
        return float(parts[0])
    return tuple(float(p) for p in parts)


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(p) for p in str(text).split(",") if p.strip())


def _str(text):
    return str(text).strip()


def _path(text):
    """Paths are taken literally; only an empty value means unset."""
    if text is None:
        return None
    text = str(text).strip()
    return text or None


# key -> (parser, default)
FIELDS = {
    "data.path": (_path, None),
    "data.format": (_optional(_str), None),
    "synth.dim": (int, 32),
    "synth.base_classes": (int, 20),
    "synth.novel_classes": (int, 10),
    "synth.per_class_train": (int, 100),
    "synth.per_class_test": (int, 50),
    "synth.cluster_std": (float, 0.15),
    "synth.novel_offset": (_offsets, 0.3),
    "schedule.base_classes": (int, 20),
    "schedule.sessions": (int, 2),
    "schedule.ways": (int, 5),
    "schedule.shots": (int, 5),
    "schedule.pseudo_sessions": (_optional(int), None),
    "backbone.variant": (_str, "identity"),
    "backbone.out_dim": (_optional(int), None),
    "backbone.hidden": (int, 64),
    "backbone.seed": (int, 0),
    "model.logit_mode": (_str, "dot"),
    "model.logit_scale": (float, 1.0),
    "corrector.kind": (_str, "none"),
    "agnostic.mode": (_str, "gd"),
    "agnostic.alpha": (_optional(float), None),
    "adapter.path": (_path, None),
    "adapter.hidden": (int, 64),
    "adapter.gamma": (float, 10.0),
    "adapter.mu": (float, 1.0),
    "adapter.lr": (float, 0.001),
    "adapter.momentum": (float, 0.9),
    "adapter.epochs": (int, 20),
    "adapter.batch_size": (int, 128),
    "adapter.test_per_class": (int, 15),
    "adapter.query_per_class": (int, 15),
    "adapter.episodes_per_epoch": (int, 25),
    "adapter.reg_scale": (_str, "instance"),
    "ablate.gammas": (_floats, (0.0, 1.0, 10.0, 100.0)),
    "eval.predictions": (_path, None),
    "eval.pooled_novel": (_bool, False),
    "run.baseline": (_path, None),
    "seed.data": (int, 0),
    "seed.pseudo": (int, 0),
    "seed.train": (int, 0),
    "output.path": (_path, None),
    "output.dir": (_path, None),
}

CHOICES = {
    "data.format": (None, "csv", "binary"),
    "backbone.variant": ("identity", "frozen_random_mlp"),
    "model.logit_mode": ("dot", "cosine"),
    "corrector.kind": ("none", "agnostic", "cala"),
    "agnostic.mode": ("gd", "grid"),
    "adapter.reg_scale": ("instance", "batch"),
}


def parse_value(key, raw):
    if key not in FIELDS:
        raise ValidationError(f"unknown config key {key!r}")
    parse, _ = FIELDS[key]
    try:
        return parse(raw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad value for {key}: {raw!r} ({exc})") from None


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into a dict of typed values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        try:
            values[key] = parse_value(key, raw)
        except ValidationError as exc:
            raise ValidationError(f"{source}:{lineno}: {exc}") from None
    return values


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


class ExperimentConfig:
    """Typed, validated view over the flat key space.

    Parameters
    ----------
    values : dict
        Overrides on top of the defaults in :data:`FIELDS`.
    """

    def __init__(self, values=None):
        self.values = {k: default for k, (_, default) in FIELDS.items()}
        for key, raw in (values or {}).items():
            self.values[key] = parse_value(key, raw)

    @classmethod
    def load(cls, path=None, overrides=None):
        """Defaults, then the file at ``path`` (if any), then ``overrides``."""
        merged = {}
        if path is not None:
            merged.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
        merged.update(overrides or {})
        return cls(merged)

    def __getitem__(self, key):
        return self.values[key]

    def as_dict(self):
        return {k: _jsonable(v) for k, v in sorted(self.values.items())}

    def digest(self) -> str:
        echo = {k: v for k, v in self.as_dict().items() if not k.startswith("output.")}
        blob = json.dumps(echo, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            if isinstance(v, list):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{k} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"

    def validate(self, require_paths=()):
        """Check ranges and choices, and that every key in ``require_paths`` names an existing file."""
        v = self.values
        for key, allowed in CHOICES.items():
            if v[key] not in allowed:
                raise ValidationError(f"{key} must be one of {[a for a in allowed if a is not None]}, got {v[key]!r}")
        if v["adapter.gamma"] < 0:
            raise ValidationError("adapter.gamma must be >= 0")
        if v["adapter.mu"] < 0:
            raise ValidationError("adapter.mu must be >= 0")
        if v["adapter.hidden"] < 1:
            raise ValidationError("adapter.hidden must be >= 1")
        if not v["adapter.lr"] > 0:
            raise ValidationError("adapter.lr must be > 0")
        if not 0 <= v["adapter.momentum"] < 1:
            raise ValidationError("adapter.momentum must lie in [0, 1)")
        if not v["model.logit_scale"] > 0:
            raise ValidationError("model.logit_scale must be > 0")
        for key in ("adapter.epochs", "adapter.batch_size", "adapter.test_per_class", "adapter.query_per_class",
                    "adapter.episodes_per_epoch", "schedule.base_classes", "schedule.ways", "schedule.shots",
                    "synth.dim", "synth.base_classes", "synth.per_class_train", "synth.per_class_test",
                    "backbone.hidden"):
            if v[key] < 1:
                raise ValidationError(f"{key} must be >= 1")
        if v["schedule.sessions"] < 0 or v["synth.novel_classes"] < 0:
            raise ValidationError("schedule.sessions and synth.novel_classes must be >= 0")
        if v["schedule.pseudo_sessions"] is not None and v["schedule.pseudo_sessions"] < 1:
            raise ValidationError("schedule.pseudo_sessions must be >= 1")
        if v["backbone.out_dim"] is not None and v["backbone.out_dim"] < 1:
            raise ValidationError("backbone.out_dim must be >= 1")
        if any(s < 0 for s in (v["seed.data"], v["seed.pseudo"], v["seed.train"], v["backbone.seed"])):
            raise ValidationError("seeds must be non-negative")
        if not v["synth.cluster_std"] > 0:
            raise ValidationError("synth.cluster_std must be > 0")
        offsets = v["synth.novel_offset"]
        if min(offsets if isinstance(offsets, tuple) else (offsets,)) < 0:
            raise ValidationError("synth.novel_offset must be >= 0")
        if any(g < 0 for g in v["ablate.gammas"]):
            raise ValidationError("ablate.gammas must all be >= 0")
        for key in require_paths:
            if v[key] is None:
                raise ValidationError(f"{key} is required")
            if not Path(v[key]).is_file():
                raise ValidationError(f"{key}: no such file {v[key]!r}")
        return self
