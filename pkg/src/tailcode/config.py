"""Flat ``key=value`` run configuration shared by every CLI command.

Values resolve in three layers: built-in defaults, then a config file,
then command-line flags. The resolved mapping is echoed into every output
artifact.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from tailcode import boost, codec
from tailcode.dft import DftConfig
from tailcode.pipeline import PipelineConfig
from tailcode.synth import GeneratorConfig


class UsageError(ValueError):
    """Bad flag, unknown config key or out-of-range value."""


_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True,
               "0": False, "false": False, "no": False, "off": False}


@dataclass(frozen=True)
class RunConfig:
    # paths
    data: str = ""
    model: str = ""
    out: str = ""
    # generator
    contexts: int = 10
    relations_per_context: int = 8
    zipf: float = 2.0
    samples: int = 12000
    a_dims: int = 8
    b_dims: int = 8
    noise_dims: int = 8
    sigma: float = 1.0
    view_b_informative: float = 0.3
    # training
    seed: int = 7
    scheme: str = "hybrid"
    preset: str = "paper-small"
    rare_threshold: int = 10
    hamming_k: int = codec.DEFAULT_HAMMING_K
    feature_selection: bool = True
    select_mode: str = "top_k"
    select_k: int = 1000
    dft_loss: str = "focal"
    two_query: bool = True
    k_clusters: int = 8
    lda_shrinkage: float = 0.05
    lda_priors: str = "empirical"
    threads: int = 1
    # evaluation and ablation
    split: str = "test"
    schemes: str = "one_hot,binary,hamming,hybrid"
    feature_selection_grid: str = "on,off"
    two_query_grid: str = "on,off"

    def to_dict(self) -> dict:
        return asdict(self)

    def generator_config(self) -> GeneratorConfig:
        try:
            return GeneratorConfig(
                num_contexts=self.contexts, relations_per_context=self.relations_per_context,
                zipf_exponent=self.zipf, total_samples=self.samples, view_a_dims=self.a_dims,
                view_b_dims=self.b_dims, noise_dims=self.noise_dims, cluster_sigma=self.sigma,
                view_b_informative=self.view_b_informative, rare_threshold=self.rare_threshold,
                seed=self.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def pipeline_config(self, **overrides) -> PipelineConfig:
        try:
            cfg = PipelineConfig(
                scheme=self.scheme, rare_threshold=self.rare_threshold, hamming_k=self.hamming_k,
                boost=boost.preset(self.preset), dft=DftConfig(loss_kind=self.dft_loss),
                feature_selection=self.feature_selection, select_mode=self.select_mode,
                select_k=self.select_k, two_query=self.two_query, k_clusters=self.k_clusters,
                lda_shrinkage=self.lda_shrinkage, lda_priors=self.lda_priors, seed=self.seed)
            return replace(cfg, **overrides)
        except (KeyError, ValueError) as exc:
            raise UsageError(str(exc).strip("'\"")) from None


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key].type
    text = raw.strip()
    try:
        if kind == "bool":
            return _BOOL_WORDS[text.lower()]
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except (KeyError, ValueError):
        raise UsageError(f"{key}: cannot read {raw!r} as {kind}") from None
    return text


def parse_config_text(text: str, origin: str = "config") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, blanks are skipped."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{origin}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise UsageError(f"{origin}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def format_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config_text` for a full RunConfig."""
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def resolve(file_text: Optional[str] = None, overrides: Optional[dict] = None,
            origin: str = "config") -> RunConfig:
    """Defaults, then the file, then ``overrides`` (raw strings or typed values)."""
    values = parse_config_text(file_text, origin) if file_text else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise UsageError(f"unknown key {key!r}")
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.scheme not in codec.SCHEMES:
        raise UsageError(f"scheme: unknown scheme {cfg.scheme!r}; choose from {', '.join(codec.SCHEMES)}")
    if cfg.preset not in boost.PRESETS:
        raise UsageError(f"preset: unknown preset {cfg.preset!r}; choose from {', '.join(boost.PRESETS)}")
    if cfg.threads < 1:
        raise UsageError("threads: must be >= 1")
    if cfg.split not in ("train", "val", "test"):
        raise UsageError(f"split: must be train, val or test, got {cfg.split!r}")
    for name in split_list(cfg.schemes):
        if name not in codec.SCHEMES:
            raise UsageError(f"schemes: unknown grid entry {name!r}")
    grid_values(cfg.feature_selection_grid, "feature_selection_grid")
    grid_values(cfg.two_query_grid, "two_query_grid")


def split_list(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


def grid_values(text: str, key: str) -> list:
    out = []
    for word in split_list(text):
        if word.lower() not in _BOOL_WORDS:
            raise UsageError(f"{key}: unknown grid entry {word!r}")
        out.append(_BOOL_WORDS[word.lower()])
    if not out:
        raise UsageError(f"{key}: empty grid")
    return out
