import logging
import threading
from typing import Optional

from ..config import BackendConfig
from ..env.craft_env import CraftEnvironment, CraftTask
from .base import Backend
from .faulty import FaultyBackend
from .http_client import HttpBackend
from .planner import PlannerBackend
from .scripted import ScriptedBackend, script_for_task

logger = logging.getLogger(__name__)


class BackendFactory:
    """Builds one backend per episode. The HTTP backend is shared across episodes."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self._http: Optional[HttpBackend] = None
        self._lock = threading.Lock()

    def create(self, task: CraftTask, environment: CraftEnvironment, seed) -> Backend:
        return self._build(self.config, task, environment, seed)

    def _build(self, config: BackendConfig, task: CraftTask, environment: CraftEnvironment, seed) -> Backend:
        if config.kind == "scripted":
            return ScriptedBackend(script_for_task(config.script_path, task.id))
        if config.kind == "planner":
            return PlannerBackend(task, environment, config.max_plan_states, config.max_total_items)
        if config.kind == "faulty":
            inner = self._build(config.inner or BackendConfig(kind="planner"), task, environment, seed)
            fault_seed = f"{config.seed}:{task.id}" if config.seed is not None else seed
            return FaultyBackend(inner, config.p, fault_seed, task)
        return self._shared_http(config)

    def prepare(self) -> None:
        """Build the shared HTTP backend up front when the config needs one."""
        config: Optional[BackendConfig] = self.config
        while config is not None and config.kind == "faulty":
            config = config.inner
        if config is not None and config.kind == "http":
            self._shared_http(config)

    def _shared_http(self, config: BackendConfig) -> HttpBackend:
        with self._lock:
            if self._http is None:
                logger.info(f"Connecting to completion endpoint {config.url} (model {config.model})")
                self._http = HttpBackend(config)
            return self._http

    def close(self) -> None:
        if self._http is not None:
            self._http.close()
