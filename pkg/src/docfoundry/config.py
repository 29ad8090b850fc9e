"""Service configuration: TOML file plus DOCFOUNDRY_* env overrides.

Recognized keys: [stores] root; [backend] kind, base_url, model;
[service] port, allowlist. Unknown keys are rejected by name so typos
fail fast at startup.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .llm import BackendConfig


class ConfigError(Exception):
    pass


_KNOWN = {
    "stores": {"root"},
    "backend": {"kind", "base_url", "model"},
    "service": {"port", "allowlist"},
}


@dataclass
class ServiceConfig:
    stores_root: Path = Path("docfoundry_data")
    allowlist: list[Path] = field(default_factory=list)
    backend: BackendConfig = field(
        default_factory=lambda: BackendConfig(kind="echo", model="echo"))
    port: int = 8080

    @property
    def sessions_dir(self) -> Path:
        return self.stores_root / "sessions"

    @property
    def jobs_dir(self) -> Path:
        return self.stores_root / "jobs"


def load_config(path: str | Path | None = None) -> ServiceConfig:
    """Read TOML config (optional) and apply DOCFOUNDRY_* env overrides."""
    raw: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        for section, keys in raw.items():
            if section not in _KNOWN:
                raise ConfigError(f"unknown config section: {section!r}")
            if not isinstance(keys, dict):
                raise ConfigError(f"config section {section!r} must be a table")
            for key in keys:
                if key not in _KNOWN[section]:
                    raise ConfigError(f"unknown config key: {section}.{key}")

    stores = raw.get("stores", {})
    backend = raw.get("backend", {})
    service = raw.get("service", {})

    stores_root = os.environ.get("DOCFOUNDRY_STORES_ROOT") or \
        stores.get("root", "docfoundry_data")
    kind = os.environ.get("DOCFOUNDRY_BACKEND_KIND") or backend.get("kind", "echo")
    base_url = os.environ.get("DOCFOUNDRY_BASE_URL") or backend.get("base_url")
    model = os.environ.get("DOCFOUNDRY_BACKEND_MODEL") or backend.get("model", kind)
    port = int(os.environ.get("DOCFOUNDRY_PORT") or service.get("port", 8080))

    allowlist_env = os.environ.get("DOCFOUNDRY_ALLOWLIST")
    if allowlist_env:
        allowlist = [Path(p) for p in allowlist_env.split(":") if p]
    else:
        allowlist = [Path(p) for p in service.get("allowlist", [])]

    try:
        backend_cfg = BackendConfig(kind=kind, model=model, base_url=base_url)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return ServiceConfig(stores_root=Path(stores_root),
                         allowlist=[p.resolve() for p in allowlist],
                         backend=backend_cfg, port=port)
