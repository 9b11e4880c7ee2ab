import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

Policy = Literal["rebact", "react"]
FormatId = Literal["textcraft", "alfworld", "webshop"]
Termination = Literal["success", "budget_exhausted", "parse_abort", "backend_unavailable"]


class BackendConfig(BaseModel):
    kind: Literal["scripted", "planner", "faulty", "http"] = "planner"

    # scripted
    script_path: Optional[str] = None

    # faulty
    p: float = Field(default=0.0, ge=0.0, le=1.0)
    seed: Optional[int] = None
    inner: Optional["BackendConfig"] = None  # defaults to planner

    # planner
    max_plan_states: int = Field(default=100_000, ge=1)
    max_total_items: int = Field(default=256, ge=1)

    # http
    url: Optional[str] = None
    model: Optional[str] = None
    token_env: str = "REBACT_API_TOKEN"
    timeout_ms: int = Field(default=60_000, ge=1)
    max_retries: int = Field(default=3, ge=0)
    max_in_flight: int = Field(default=4, ge=1)
    backoff_base_ms: int = Field(default=500, ge=0)
    response_path: str = "choices.0.message.content"
    extra_body: Dict[str, Any] = Field(default_factory=dict)

    @field_validator('*', mode='before')
    @classmethod
    def expand_env_vars(cls, v):
        """Expand environment variables in string values."""
        if isinstance(v, str) and v.startswith('${') and v.endswith('}'):
            env_var = v[2:-1]
            return os.getenv(env_var, v)
        return v

    @model_validator(mode='after')
    def check_required_fields(self):
        if self.kind == "scripted" and not self.script_path:
            raise ValueError("scripted backend requires script_path")
        if self.kind == "http" and not (self.url and self.model):
            raise ValueError("http backend requires url and model")
        return self

    @property
    def token(self) -> Optional[str]:
        return os.getenv(self.token_env)


class AgentConfig(BaseModel):
    policy: Policy = "rebact"
    format_id: FormatId = "textcraft"
    window: int = Field(default=1, ge=1)  # reflection window W
    budget: int = Field(default=40, ge=1)  # max environment steps
    max_parse_retries: int = Field(default=2, ge=0)
    seed: int = 0


class RunConfig(BaseModel):
    agent: AgentConfig = Field(default_factory=AgentConfig)
    backend: BackendConfig = Field(default_factory=BackendConfig)
    tasks: List[str] = Field(default_factory=list)
    jobs: int = Field(default=1, ge=1)  # max episodes in flight
    out: str = "runs/latest"

    @model_validator(mode='after')
    def check_format_is_executable(self):
        # The webshop grammar only admits name[...] actions, which craft commands are not.
        if self.agent.policy == "rebact" and self.agent.format_id == "webshop":
            raise ValueError("webshop replies cannot drive the crafting environment")
        return self

    @property
    def method_label(self) -> str:
        return self.agent.policy


class EpisodeResult(BaseModel):
    task_id: str
    method: str
    success: bool
    score: float = Field(ge=0, le=100)
    steps: int = Field(ge=0)
    llm_calls: int = Field(ge=0)
    modifications: int = Field(ge=0)
    retries: int = Field(ge=0)
    termination: Termination

    @model_validator(mode='after')
    def check_counters(self):
        if self.modifications > self.steps:
            raise ValueError("modifications cannot exceed steps")
        if self.steps > self.llm_calls:
            raise ValueError("steps cannot exceed llm_calls")
        if (self.score == 100) != self.success:
            raise ValueError("score must be 100 exactly when the episode succeeded")
        return self


class Summary(BaseModel):
    method: str
    n_tasks: int
    success_rate: float = Field(ge=0, le=100)
    avg_score: float = Field(ge=0, le=100)
    avg_llm_calls: float
    modification_proportion: float = Field(ge=0, le=1)
    avg_retries: float


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            base_value = merged.get(key)
            merged[key] = _merge(base_value if isinstance(base_value, dict) else {}, value)
        else:
            merged[key] = value
    return merged


def load_backend_config(path: Path) -> BackendConfig:
    """Load a backend configuration from a JSON file."""
    try:
        with open(path, 'r') as f:
            return BackendConfig(**json.load(f))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise ConfigError(f"Invalid backend config {path}: {e}") from e


def load_run_config(config_file: Optional[Path] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load a run configuration from JSON, with command-line overrides on top."""
    config_data: Dict[str, Any] = {}
    if config_file:
        try:
            with open(config_file, 'r') as f:
                config_data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Failed to load configuration {config_file}: {e}") from e

    config_data = _merge(config_data, overrides or {})
    try:
        return RunConfig(**config_data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
