"""Declarative run configuration.

Configs are plain-text ``key = value`` files with dotted keys; ``#``
starts a comment.  Lists are comma separated and integer ranges may be
written ``lo:hi`` (inclusive).  Command-line flags override single
scalars.  The canonical serialization of the effective config is hashed
into every artifact header for provenance.
"""

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration (exit status 2)."""


class MissingArtifactError(FileNotFoundError):
    """An upstream artifact the subcommand needs is absent (exit status 3)."""


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/out"
    jobs: int = 1
    corpus_dims: tuple = (32, 32, 32)
    corpus_grain_sizes: tuple = tuple(range(4, 16))
    corpus_seeds_per_size: int = 10
    corpus_textured_count: int = 0
    corpus_perturb_deg: float = 10.0
    features: tuple = ("classic",)
    embed_epochs: int = 50
    embed_batch: int = 64
    embed_lr: float = 1e-2
    embed_margin: float = 0.5
    embed_crop: int = 16
    embed_holdout_fraction: float = 0.2
    design_criteria: tuple = ("cmm", "maxpro", "twin", "random")
    design_fractions: tuple = (0.10, 0.25, 0.50)
    design_replicates: int = 10
    eval_val_fraction: float = 0.2
    eval_k: int = 8
    oracle_c11: float = 199.0
    oracle_c12: float = 128.0
    oracle_c44: float = 99.0
    oracle_load: tuple = (0.0, 0.0, 50.0, 0.0, 0.0, 0.0)
    oracle_smooth: bool = False


_KEY_MAP = {
    "seed": ("seed", "int"),
    "out": ("out", "str"),
    "jobs": ("jobs", "int"),
    "corpus.dims": ("corpus_dims", "int_list"),
    "corpus.grain_sizes": ("corpus_grain_sizes", "float_list"),
    "corpus.seeds_per_size": ("corpus_seeds_per_size", "int"),
    "corpus.textured_count": ("corpus_textured_count", "int"),
    "corpus.perturb_deg": ("corpus_perturb_deg", "float"),
    "features": ("features", "str_list"),
    "embed.epochs": ("embed_epochs", "int"),
    "embed.batch": ("embed_batch", "int"),
    "embed.lr": ("embed_lr", "float"),
    "embed.margin": ("embed_margin", "float"),
    "embed.crop": ("embed_crop", "int"),
    "embed.holdout_fraction": ("embed_holdout_fraction", "float"),
    "design.criteria": ("design_criteria", "str_list"),
    "design.fractions": ("design_fractions", "float_list"),
    "design.replicates": ("design_replicates", "int"),
    "eval.val_fraction": ("eval_val_fraction", "float"),
    "eval.k": ("eval_k", "int"),
    "oracle.c11": ("oracle_c11", "float"),
    "oracle.c12": ("oracle_c12", "float"),
    "oracle.c44": ("oracle_c44", "float"),
    "oracle.load": ("oracle_load", "float_list"),
    "oracle.smooth": ("oracle_smooth", "bool"),
}


def _parse_value(raw: str, kind: str, key: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if kind in ("int_list", "float_list"):
            cast = int if kind == "int_list" else float
            values = []
            for part in raw.split(","):
                part = part.strip()
                if not part:
                    continue
                if ":" in part:
                    lo, hi = part.split(":")
                    values.extend(cast(v) for v in range(int(lo), int(hi) + 1))
                else:
                    values.append(cast(part))
            return tuple(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: cannot parse value {raw!r}") from exc
    raise ConfigError(f"unknown value kind {kind!r}")


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config = RunConfig()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _KEY_MAP:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        attr, kind = _KEY_MAP[key]
        config = replace(config, **{attr: _parse_value(raw, kind, key)})
    validate_config(config)
    return config


def validate_config(config: RunConfig) -> None:
    if config.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    for name in config.features:
        if name in ("classic", "contrastive"):
            continue
        if name.startswith("external:"):
            source = name.split(":", 1)[1]
            if not Path(source).exists():
                raise ConfigError(f"external feature file not found: {source}")
            continue
        raise ConfigError(
            f"unknown feature set {name!r}; expected classic, contrastive, or external:PATH"
        )
    for criterion in config.design_criteria:
        if criterion not in ("cmm", "maxpro", "twin", "random"):
            raise ConfigError(f"unknown design criterion {criterion!r}")
    if not 0.0 < config.eval_val_fraction < 1.0:
        raise ConfigError("eval.val_fraction must lie in (0, 1)")
    for fraction in config.design_fractions:
        if not 0.0 < fraction <= 1.0:
            raise ConfigError("design.fractions must lie in (0, 1]")
    if len(config.oracle_load) != 6:
        raise ConfigError("oracle.load must have six components")
    if config.embed_margin <= 0:
        raise ConfigError("embed.margin must be positive")


#: Execution details that locate or parallelize a run without affecting
#: artifact content; they stay out of the provenance hash.
_NON_SEMANTIC_KEYS = ("out", "jobs")


def canonical_text(config: RunConfig) -> str:
    """Stable one-line-per-key serialization of the effective config."""
    lines = []
    for key in sorted(_KEY_MAP):
        if key in _NON_SEMANTIC_KEYS:
            continue
        attr, kind = _KEY_MAP[key]
        value = getattr(config, attr)
        if isinstance(value, tuple):
            token = ",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            token = f"{value:.17g}"
        else:
            token = str(value)
        lines.append(f"{key}={token}")
    return "\n".join(lines) + "\n"


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(canonical_text(config).encode("utf-8")).hexdigest()[:16]
