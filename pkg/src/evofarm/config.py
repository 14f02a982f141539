"""Run configuration: flat key=value files, overrides, and run manifests.

The config format is plain text, one ``section.key = value`` per line, with
``#`` comments.  Sections are ``ga`` (evolution), ``env`` (what to run,
including ``env.params.*`` passthroughs), ``farm`` (in-process threads or a
worker address list) and ``out`` (artifacts).  A run manifest is the fully
resolved config plus the seed, a git describe string, and the measured
per-generation wall times, which is everything needed to reproduce a run's
stats file byte for byte.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .envs import EnvDescriptor, GAME_NAMES
from .ga import GaConfig

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config_text",
    "load_config",
    "apply_overrides",
    "build_run_config",
    "config_items",
    "git_describe",
    "write_manifest",
    "load_manifest",
    "MANIFEST_VERSION",
]

MANIFEST_VERSION = 1

_GAME_IDS = dict(GAME_NAMES)
_ID_GAMES = {gid: name for name, gid in GAME_NAMES.items()}

# every accepted key, with its type converter
_GA_KEYS = {
    "population": int, "truncation": int, "elites": int,
    "mutation_power": float, "reevals": int, "generations": int,
    "master_seed": int,
}
_ENV_KEYS = {"game": str, "action_count": int, "frame_cap": int}
_FARM_KEYS = {"mode": str, "threads": int, "workers": str, "push": bool,
              "latency": float}
_OUT_KEYS = {"dir": str, "checkpoint_interval": int}


class ConfigError(ValueError):
    """A rejected config; the message always names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs."""

    ga: GaConfig
    env: EnvDescriptor
    farm_mode: str = "threads"  # threads | workers
    threads: int = 1
    workers: tuple[str, ...] = ()
    push: bool = False
    latency: float = 0.0
    out_dir: str = ""
    checkpoint_interval: int = 5

    def __post_init__(self) -> None:
        if self.farm_mode not in ("threads", "workers"):
            raise ConfigError(
                f"farm.mode: must be 'threads' or 'workers', got {self.farm_mode!r}")
        if self.threads < 1:
            raise ConfigError(f"farm.threads: must be at least 1, got {self.threads}")
        if self.farm_mode == "workers" and not self.workers:
            raise ConfigError("farm.workers: required when farm.mode is 'workers'")
        for address in self.workers:
            if ":" not in address:
                raise ConfigError(f"farm.workers: {address!r} is not host:port")
        if self.latency < 0:
            raise ConfigError(f"farm.latency: must be non-negative, got {self.latency}")
        if not self.out_dir:
            raise ConfigError("out.dir: required")
        if self.checkpoint_interval < 1:
            raise ConfigError(
                f"out.checkpoint_interval: must be at least 1, got {self.checkpoint_interval}")


def _convert(key: str, raw: Any, kind) -> Any:
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}")


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Parse key=value lines into a flat string map (later keys win)."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().lower()] = value.strip()
    return out


def load_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), origin=str(path))


def apply_overrides(items: dict[str, str], overrides: Mapping[str, Any]) -> dict[str, str]:
    """Overlay CLI overrides (already key=value shaped) onto file items."""
    merged = dict(items)
    for key, value in overrides.items():
        if value is not None:
            merged[key.lower()] = str(value)
    return merged


def _env_param_value(raw: str) -> Any:
    # params pass through as JSON scalars where possible, else strings
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def build_run_config(items: Mapping[str, Any]) -> RunConfig:
    """Validate a flat key map into a RunConfig; errors name the field."""
    ga_kwargs: dict[str, Any] = {}
    env_kwargs: dict[str, Any] = {"game_id": _GAME_IDS["catch"]}
    env_params: dict[str, Any] = {}
    run_kwargs: dict[str, Any] = {}

    for key, raw in items.items():
        section, _, name = key.partition(".")
        if section == "ga" and name in _GA_KEYS:
            ga_kwargs[name] = _convert(key, raw, _GA_KEYS[name])
        elif section == "env" and name == "game":
            game = str(raw).strip().lower()
            if game.isdigit():
                env_kwargs["game_id"] = int(game)
            elif game in _GAME_IDS:
                env_kwargs["game_id"] = _GAME_IDS[game]
            else:
                raise ConfigError(f"env.game: unknown game {raw!r}")
        elif section == "env" and name in _ENV_KEYS:
            env_kwargs[name] = _convert(key, raw, _ENV_KEYS[name])
        elif section == "env" and name.startswith("params."):
            env_params[name[len("params."):]] = (
                _env_param_value(raw) if isinstance(raw, str) else raw)
        elif section == "farm" and name in _FARM_KEYS:
            if name == "workers":
                addresses = [a.strip() for a in str(raw).split(",") if a.strip()]
                run_kwargs["workers"] = tuple(addresses)
            elif name == "mode":
                run_kwargs["farm_mode"] = str(raw).strip().lower()
            else:
                run_kwargs[name] = _convert(key, raw, _FARM_KEYS[name])
        elif section == "out" and name in _OUT_KEYS:
            run_kwargs["out_dir" if name == "dir" else name] = \
                _convert(key, raw, _OUT_KEYS[name])
        else:
            raise ConfigError(f"{key}: unknown configuration key")

    try:
        ga = GaConfig(**ga_kwargs)
    except ValueError as exc:
        msg = str(exc)
        hits = []
        for f in fields(GaConfig):
            spots = [p for p in (msg.find(f.name), msg.find(f.name.replace("_", " ")))
                     if p >= 0]
            if spots:
                hits.append((min(spots), f.name))
        bad = min(hits)[1] if hits else "config"
        raise ConfigError(f"ga.{bad}: {msg}")
    try:
        env = EnvDescriptor(params=env_params, **env_kwargs)
    except ValueError as exc:
        raise ConfigError(f"env: {exc}")
    return RunConfig(ga=ga, env=env, **run_kwargs)


def config_items(cfg: RunConfig) -> dict[str, str]:
    """Flatten a RunConfig back to the key=value form (manifest format)."""
    items: dict[str, str] = {}
    for f in fields(GaConfig):
        if f.name == "spec":
            continue
        items[f"ga.{f.name}"] = str(getattr(cfg.ga, f.name))
    items["env.game"] = _ID_GAMES.get(cfg.env.game_id, str(cfg.env.game_id))
    items["env.action_count"] = str(cfg.env.action_count)
    items["env.frame_cap"] = str(cfg.env.frame_cap)
    for key, value in sorted(cfg.env.params.items()):
        items[f"env.params.{key}"] = json.dumps(value)
    items["farm.mode"] = cfg.farm_mode
    items["farm.threads"] = str(cfg.threads)
    if cfg.workers:
        items["farm.workers"] = ",".join(cfg.workers)
    items["farm.push"] = str(cfg.push).lower()
    items["farm.latency"] = repr(cfg.latency)
    items["out.dir"] = cfg.out_dir
    items["out.checkpoint_interval"] = str(cfg.checkpoint_interval)
    return items


def git_describe(cwd: str | Path | None = None) -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             cwd=cwd, capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def write_manifest(path: str | Path, cfg: RunConfig,
                   wall_seconds: list[float] | None = None) -> None:
    doc = {
        "version": MANIFEST_VERSION,
        "config": config_items(cfg),
        "git_describe": git_describe(),
        "wall_seconds": list(wall_seconds or []),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_manifest(path: str | Path) -> tuple[RunConfig, list[float]]:
    """A manifest parses back into the exact run config plus its timings."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"manifest {path}: {exc}")
    if not isinstance(doc, dict) or doc.get("version") != MANIFEST_VERSION:
        raise ConfigError(f"manifest {path}: unsupported or missing version")
    cfg = build_run_config(doc.get("config", {}))
    wall = [float(x) for x in doc.get("wall_seconds", [])]
    return cfg, wall
