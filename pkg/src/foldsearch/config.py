"""Layered configuration: flags > environment > file > defaults.

Defaults live in the packaged, annotated ``default_config.yaml``. Every key
in an override must already exist there, and scalar types must match.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from foldsearch.errors import ConfigError
from foldsearch.history import TokenEstimator
from foldsearch.runtime.client import ChatCompletionsClient, ContextLimitedClient, MockPolicyClient, ModelClient
from foldsearch.runtime.episode import EpisodeConfig, ModelEndpoint
from foldsearch.scoring.reward import RewardWeights
from foldsearch.tools.base import ToolBackendConfig
from foldsearch.vfold.fold import FoldPolicy
from foldsearch.vfold.render import RenderConfig

ENV_PREFIX = "FOLDSEARCH_"
PROFILES = ("default", "mock")

# sections whose contents are free-form and passed through
_OPAQUE = {("model", "decode")}


@lru_cache(maxsize=1)
def _defaults_text() -> str:
    return (resources.files("foldsearch.data") / "default_config.yaml").read_text(encoding="utf-8")


def default_config() -> dict[str, Any]:
    data = yaml.safe_load(_defaults_text())
    data["profile"] = "default"
    return data


def _check_type(path: tuple[str, ...], default: Any, value: Any) -> Any:
    where = ".".join(path)
    if default is None or value is None:
        if isinstance(value, (dict, list)):
            raise ConfigError(f"{where}: expected a scalar")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    elif isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {value!r}")
    return value


def merge(base: Mapping[str, Any], override: Mapping[str, Any], path: tuple[str, ...] = ()) -> dict[str, Any]:
    """Deep-merge ``override`` onto ``base``, rejecting unknown keys."""
    out = copy.deepcopy(dict(base))
    if not isinstance(override, Mapping):
        raise ConfigError(f"{'.'.join(path) or 'config'}: expected a mapping")
    for key, value in override.items():
        here = path + (str(key),)
        if key not in out:
            raise ConfigError(f"unknown configuration key {'.'.join(here)!r}")
        default = out[key]
        if isinstance(default, dict) and here not in _OPAQUE:
            out[key] = merge(default, value if value is not None else {}, here)
        else:
            out[key] = _check_type(here, default, value)
    return out


def _nest(path: list[str], value: Any) -> dict[str, Any]:
    out: dict[str, Any] = {}
    cur = out
    for p in path[:-1]:
        cur = cur.setdefault(p, {})
    cur[path[-1]] = value
    return out


def _scalar(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def env_overrides(environ: Mapping[str, str]) -> list[dict[str, Any]]:
    """``FOLDSEARCH_FOLD__THRESHOLD_TOKENS=9000`` -> ``{"fold": {"threshold_tokens": 9000}}``."""
    out = []
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__")]
        out.append(_nest(path, _scalar(environ[name])))
    return out


def parse_assignment(text: str) -> dict[str, Any]:
    """``"fold.fresh_window_k=3"`` -> ``{"fold": {"fresh_window_k": 3}}``."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"expected section.key=value, got {text!r}")
    return _nest(key.strip().split("."), _scalar(value))


def load_file(path: str | Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return data


@dataclass(frozen=True)
class GlobalConfig:
    data: dict[str, Any]

    @classmethod
    def resolve(
        cls,
        file: str | Path | None = None,
        environ: Mapping[str, str] | None = None,
        flags: list[dict[str, Any]] | None = None,
        mock: bool = False,
    ) -> "GlobalConfig":
        data = default_config()
        if file is not None:
            data = merge(data, load_file(file))
        for layer in env_overrides(os.environ if environ is None else environ):
            data = merge(data, layer)
        for layer in flags or ():
            data = merge(data, layer)
        if mock:
            data = merge(data, {"profile": "mock", "tools": {"search_provider": "mock"}})
        cfg = cls(data)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    @property
    def mock(self) -> bool:
        return self.data["profile"] == "mock"

    def validate(self) -> None:
        if self.data["profile"] not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}")
        try:
            self.episode_config()
            self.tool_config()
            self.reward_weights()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if self.data["eval"]["concurrency"] < 1:
            raise ConfigError("eval.concurrency must be >= 1")

    def dump(self) -> str:
        """The effective configuration as YAML, keys sorted."""
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False, allow_unicode=True)

    # typed views

    def estimator(self) -> TokenEstimator:
        f = self.data["fold"]
        return TokenEstimator(f["estimator"], f["estimator_counter"])

    def fold_policy(self) -> FoldPolicy:
        f = self.data["fold"]
        return FoldPolicy(f["threshold_tokens"], f["fresh_window_k"], self.estimator(), f["visual_patch_px"])

    def render_config(self) -> RenderConfig:
        return RenderConfig.from_dict(self.data["render"])

    def model_endpoint(self) -> ModelEndpoint | None:
        m = self.data["model"]
        if not m["url"]:
            return None
        return ModelEndpoint(m["url"], m["name"] or "", m["api_key_env"], dict(m["decode"]), float(m["timeout_s"]))

    def episode_config(self) -> EpisodeConfig:
        e = self.data["episode"]
        return EpisodeConfig(
            max_turns=e["max_turns"],
            fold_policy=self.fold_policy(),
            fold_enabled=self.data["fold"]["enabled"],
            render_config=self.render_config(),
            model_endpoint=self.model_endpoint(),
            strict_protocol=e["strict_protocol"],
            max_consecutive_parse_failures=e["max_consecutive_parse_failures"],
        )

    def tool_config(self, environ: Mapping[str, str] | None = None) -> ToolBackendConfig:
        env = os.environ if environ is None else environ
        t = self.data["tools"]
        s = t["summarizer"]
        return ToolBackendConfig(
            search_provider=t["search_provider"],
            api_key=env.get(t["api_key_env"]) if t["api_key_env"] else None,
            google_cse_id=t["google_cse_id"],
            summarizer_url=s["url"],
            summarizer_model=s["name"],
            summarizer_api_key=env.get(s["api_key_env"]) if s["api_key_env"] else None,
            fetch_timeout=float(t["fetch_timeout_s"]),
            max_results_web=t["max_results_web"],
            max_results_image=t["max_results_image"],
            max_output_bytes=t["max_output_bytes"],
            retries=t["retries"],
            backoff_s=t["backoff_s"],
            min_interval_s=t["min_interval_s"],
            image_search_thumbnails=t["image_search_thumbnails"],
        )

    def reward_weights(self) -> RewardWeights:
        r = self.data["reward"]
        return RewardWeights(r["acc"], r["format"], r["tool"])

    # clients

    def _chat_client(self, section: str, decode: Mapping[str, Any] | None = None) -> ChatCompletionsClient | None:
        s = self.data[section]
        if not s["url"]:
            return None
        if not s["name"]:
            raise ConfigError(f"{section}.name is required when {section}.url is set")
        key = os.environ.get(s["api_key_env"]) if s["api_key_env"] else None
        timeout = float(s.get("timeout_s", 120))
        return ChatCompletionsClient(s["url"], s["name"], api_key=key, decode_params=decode, timeout=timeout)

    def model_client(self) -> ModelClient:
        if self.mock:
            return MockPolicyClient()
        client = self._chat_client("model", self.data["model"]["decode"])
        if client is None:
            raise ConfigError("model.url is not set (use --mock for an offline run)")
        limit = self.data["model"]["context_limit_tokens"]
        if limit:
            return ContextLimitedClient(client, int(limit), self.estimator(), self.data["fold"]["visual_patch_px"])
        return client

    def judge_client(self) -> ModelClient | None:
        """None means the normalized exact-match rule."""
        if self.mock:
            return None
        return self._chat_client("judge")

    def teacher_client(self) -> ModelClient | None:
        if self.mock:
            return None
        client = self._chat_client("teacher")
        if client is None:
            raise ConfigError("teacher.url is not set (use --mock for an offline run)")
        return client

    def gateway(self):
        from foldsearch.tools.gateway import ToolGateway

        try:
            return ToolGateway.from_config(self.tool_config())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
