"""Flat key-value run configuration.

Format: one ``key = value`` per line, ``#`` starts a comment, blank lines
ignored. Keys are ``section.field`` for the sections ``corpus``,
``extractor``, ``model`` and ``train``, plus these top-level keys:

==================  ===========================================  ===========
key                 meaning                                      default
==================  ===========================================  ===========
seed                corpus / split / training seed               0
extractor_seed      seed of the frozen feature extractor         0
split.ratios        train,val,test speaker fractions             0.8,0.1,0.1
corpus_dir          where gen-corpus writes / train reads        corpus
run_dir             training outputs (checkpoints, logs)         run
synth.acoustic_ref  utterance id for a post-training preview     (empty)
synth.duration_ref  duration reference for that preview          (empty)
==================  ===========================================  ===========

Values are typed by the field's default: ints, floats, booleans
(true/false), strings, and comma-separated float tuples. Unknown keys and
unparsable values raise :class:`ConfigError` naming the key. The fields
``model.n_classes``, ``model.n_mels``, ``model.hop_seconds``,
``model.ssl_layers`` and ``model.ssl_dim`` are derived from the corpus and
extractor sections and cannot be set directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .acoustic import ModelConfig
from .corpus import CorpusConfig
from .errors import ConfigError
from .features import ExtractorConfig
from .training import TrainConfig

DERIVED_MODEL_FIELDS = ("n_classes", "n_mels", "hop_seconds", "ssl_layers", "ssl_dim")


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(model=ModelConfig()))
    seed: int = 0
    extractor_seed: int = 0
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    corpus_dir: str = "corpus"
    run_dir: str = "run"
    synth_acoustic_ref: str = ""
    synth_duration_ref: str = ""

    def resolved(self) -> "RunConfig":
        """Fill derived model fields and sync the training config."""
        model = replace(
            self.model,
            n_classes=self.corpus.n_classes,
            n_mels=self.corpus.n_mels,
            hop_seconds=self.corpus.mel_hop,
            ssl_layers=self.extractor.n_blocks + 1,
            ssl_dim=self.extractor.dim,
        )
        model.validate()
        train = replace(self.train, model=model, seed=self.seed)
        if not train.checkpoint_dir:
            train = replace(train, checkpoint_dir=self.run_dir)
        train.validate()
        self.corpus.validate()
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9 or min(self.split_ratios) < 0:
            raise ConfigError(f"split.ratios must be three nonnegative numbers summing to 1, got {self.split_ratios}")
        if model.mode == "common" and self.synth_duration_ref:
            raise ConfigError("synth.duration_ref: common conditioning cannot take a separate duration reference")
        return replace(self, model=model, train=train)


_SECTIONS = {"corpus": "corpus", "extractor": "extractor", "model": "model", "train": "train"}
_TOP = {
    "seed": "seed",
    "extractor_seed": "extractor_seed",
    "split.ratios": "split_ratios",
    "corpus_dir": "corpus_dir",
    "run_dir": "run_dir",
    "synth.acoustic_ref": "synth_acoustic_ref",
    "synth.duration_ref": "synth_duration_ref",
}


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(","))
        if default is None or isinstance(default, str):
            return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from exc
    raise ConfigError(f"{key}: unsupported value type")


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def apply_overrides(cfg: RunConfig, items: dict[str, str]) -> RunConfig:
    cfg = replace(cfg)
    for key, raw in items.items():
        if key in _TOP:
            attr = _TOP[key]
            setattr(cfg, attr, _convert(key, raw, getattr(cfg, attr)))
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        sub = getattr(cfg, _SECTIONS[section])
        names = {f.name for f in fields(sub)}
        if name not in names or (section == "train" and name == "model"):
            raise ConfigError(f"unknown config key {key!r}")
        if section == "model" and name in DERIVED_MODEL_FIELDS:
            raise ConfigError(f"{key} is derived from the corpus/extractor sections and cannot be set")
        value = _convert(key, raw, getattr(sub, name))
        setattr(cfg, _SECTIONS[section], replace(sub, **{name: value}))
    return cfg


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Read ``path`` (optional), apply ``key=value`` overrides, and resolve."""
    items = {}
    if path is not None:
        try:
            items.update(parse_lines(Path(path).read_text().splitlines()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    items.update(parse_lines(overrides or []))
    # A resolved config lists the derived model keys too; accept them when
    # they agree with what resolution derives, so run directories reload.
    derived = {k: items.pop(k) for k in list(items) if k.startswith("model.") and k[6:] in DERIVED_MODEL_FIELDS}
    cfg = apply_overrides(RunConfig(), items).resolved()
    for key, raw in derived.items():
        expected = getattr(cfg.model, key[6:])
        if _convert(key, raw, expected) != expected:
            raise ConfigError(f"{key} = {raw} disagrees with the value {expected} derived from the corpus/extractor sections")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Render every key, including defaults, in the flat format."""
    lines = []
    for key, attr in _TOP.items():
        lines.append(f"{key} = {_render(getattr(cfg, attr))}")
    for section, attr in _SECTIONS.items():
        sub = getattr(cfg, attr)
        for f in fields(sub):
            if section == "train" and f.name == "model":
                continue
            lines.append(f"{section}.{f.name} = {_render(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)
