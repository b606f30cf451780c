"""Run configuration: a single JSON key-value file, validated up front.

Schema (all paths resolved relative to the config file's directory):

    {
      "manifest":       "manifest.json",          required
      "embeddings":     {"en": "emb_en.pteb"},    required for ctm/tcctm/eval
      "model":          "ctm",                    prodlda | ctm | tcctm
      "tau":            100,
      "lambda":         1.0,                      tcctm only
      "alpha":          null,                     LDA doc-topic prior (null = 50/tau)
      "eta":            0.01,                     LDA topic-word prior
      "prior_alpha":    null,                     NTM Dirichlet conc. (null = 1/tau)
      "vocab_cap":      5000,
      "lda_iterations": 400,
      "lda_grid":       [10, 20, ...],            optional tau search grid
      "epochs":         60,
      "lr":             0.002,
      "batch_size":     64,
      "dropout":        0.2,
      "hidden":         [100, 100],
      "seeds":          [0],
      "labels":         "labels.jsonl",           optional, reused by tcctm training
      "precision":      "f64",                    f32 | f64
      "threads":        1
    }

Command-line flags (--seed, --threads, --precision) override file values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError

_DEFAULTS = {
    "model": "ctm",
    "tau": 100,
    "alpha": None,
    "eta": 0.01,
    "prior_alpha": None,
    "vocab_cap": 5000,
    "lda_iterations": 400,
    "lda_grid": None,
    "epochs": 60,
    "lr": 2e-3,
    "batch_size": 64,
    "dropout": 0.2,
    "hidden": [100, 100],
    "seeds": [0],
    "labels": None,
    "precision": "f64",
    "threads": 1,
}


@dataclass
class RunConfig:
    manifest: Path
    embeddings: dict[str, Path]
    model: str
    tau: int
    lam: float
    alpha: Optional[float]
    eta: float
    prior_alpha: Optional[float]
    vocab_cap: int
    lda_iterations: int
    lda_grid: Optional[list[int]]
    epochs: int
    lr: float
    batch_size: int
    dropout: float
    hidden: tuple[int, int]
    seeds: list[int]
    labels: Optional[Path]
    precision: str
    threads: int
    raw: dict = field(repr=False, default_factory=dict)

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def load_config(path: str | Path, *, seed: Optional[int] = None,
                threads: Optional[int] = None,
                precision: Optional[str] = None) -> RunConfig:
    """Parse and validate a config file; keyword arguments are the CLI
    flag overrides. Raises :class:`ConfigError` with a field-level message
    on any invalid value."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    base = path.parent
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    unknown = set(raw) - set(_DEFAULTS) - {"manifest", "embeddings", "lambda"}
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")

    merged = dict(_DEFAULTS)
    merged.update(raw)
    if seed is not None:
        merged["seeds"] = [seed]
    if threads is not None:
        merged["threads"] = threads
    if precision is not None:
        merged["precision"] = precision

    if "manifest" not in merged:
        raise ConfigError("manifest: required")
    manifest = base / merged["manifest"]
    if not manifest.is_file():
        raise ConfigError(f"manifest: file not found: {manifest}")

    embeddings = {}
    for lang, p in merged.get("embeddings", {}).items():
        ep = base / p
        if not ep.is_file():
            raise ConfigError(f"embeddings.{lang}: file not found: {ep}")
        embeddings[lang] = ep

    model = merged["model"]
    if model not in ("prodlda", "ctm", "tcctm"):
        raise ConfigError(f"model: must be prodlda, ctm or tcctm, got {model!r}")
    if "lambda" in raw and model != "tcctm":
        raise ConfigError("lambda: lambda requires tcctm")
    lam = float(merged.get("lambda", 1.0))
    if lam < 0:
        raise ConfigError(f"lambda: must be >= 0, got {lam}")

    tau = merged["tau"]
    if not isinstance(tau, int) or tau < 2:
        raise ConfigError(f"tau: must be an integer >= 2, got {tau!r}")
    dropout = float(merged["dropout"])
    if not 0.0 <= dropout < 1.0:
        raise ConfigError(f"dropout: must be in [0, 1), got {dropout}")
    precision_v = merged["precision"]
    if precision_v not in ("f32", "f64"):
        raise ConfigError(f"precision: must be f32 or f64, got {precision_v!r}")
    hidden = merged["hidden"]
    if (not isinstance(hidden, (list, tuple)) or len(hidden) != 2
            or not all(isinstance(h, int) and h >= 1 for h in hidden)):
        raise ConfigError(f"hidden: must be two positive integers, got {hidden!r}")
    seeds = merged["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError(f"seeds: must be a non-empty list of integers, got {seeds!r}")
    for key in ("epochs", "batch_size", "lda_iterations", "vocab_cap", "threads"):
        v = merged[key]
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"{key}: must be a positive integer, got {v!r}")
    lr = float(merged["lr"])
    if lr <= 0:
        raise ConfigError(f"lr: must be positive, got {lr}")
    eta = float(merged["eta"])
    if eta <= 0:
        raise ConfigError(f"eta: must be positive, got {eta}")
    for key in ("alpha", "prior_alpha"):
        if merged[key] is not None and float(merged[key]) <= 0:
            raise ConfigError(f"{key}: must be positive when given")
    grid = merged["lda_grid"]
    if grid is not None:
        if (not isinstance(grid, list) or not grid
                or not all(isinstance(g, int) and g >= 2 for g in grid)):
            raise ConfigError(f"lda_grid: must be a list of integers >= 2, got {grid!r}")
    labels = merged["labels"]
    if labels is not None:
        labels = base / labels
        if not labels.is_file():
            raise ConfigError(f"labels: file not found: {labels}")

    if model in ("ctm", "tcctm") and not embeddings:
        raise ConfigError(f"embeddings: required for model {model}")

    canonical = dict(merged)
    canonical["manifest"] = str(merged["manifest"])
    return RunConfig(
        manifest=manifest, embeddings=embeddings, model=model, tau=tau, lam=lam,
        alpha=None if merged["alpha"] is None else float(merged["alpha"]),
        eta=eta,
        prior_alpha=None if merged["prior_alpha"] is None else float(merged["prior_alpha"]),
        vocab_cap=merged["vocab_cap"], lda_iterations=merged["lda_iterations"],
        lda_grid=grid, epochs=merged["epochs"], lr=lr,
        batch_size=merged["batch_size"], dropout=dropout,
        hidden=(hidden[0], hidden[1]), seeds=list(seeds), labels=labels,
        precision=precision_v, threads=merged["threads"], raw=canonical,
    )
