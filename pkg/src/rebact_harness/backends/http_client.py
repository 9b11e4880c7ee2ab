"""Chat-completions HTTP backend.

One instance is shared by all episodes of a run; a bounded semaphore caps the
requests in flight and further callers wait for a slot.
"""
import logging
import threading
import time
from typing import Any, Dict, Optional

import backoff
import httpx

from ..config import BackendConfig
from ..errors import AuthError, BackendUnavailable, DeadlineExceeded
from .base import CompletionRequest

logger = logging.getLogger(__name__)


class TransientHTTPError(Exception):
    """A failure worth retrying: 429, 5xx, timeouts and transport errors."""


def extract_text(data: Any, path: str) -> str:
    """Follow a dotted path such as ``choices.0.message.content``."""
    node = data
    for part in path.split("."):
        try:
            node = node[int(part)] if part.isdigit() else node[part]
        except (KeyError, IndexError, TypeError):
            raise BackendUnavailable(f"response has no field '{path}'") from None
    if not isinstance(node, str):
        raise BackendUnavailable(f"response field '{path}' is not text")
    return node


class HttpBackend:
    def __init__(self, config: BackendConfig, transport: Optional[httpx.BaseTransport] = None):
        token = config.token
        if not token:
            raise AuthError(f"environment variable {config.token_env} is not set")

        self.config = config
        self.retries = 0
        self._retry_lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._client = httpx.Client(
            timeout=config.timeout_ms / 1000,
            transport=transport,
            headers={"Authorization": f"Bearer {token}"},
        )
        self._post = backoff.on_exception(
            backoff.expo,
            TransientHTTPError,
            max_tries=config.max_retries + 1,
            factor=config.backoff_base_ms / 1000,
            jitter=None,
            on_backoff=self._on_backoff,
        )(self._post_once)

    def _on_backoff(self, details: Dict[str, Any]) -> None:
        with self._retry_lock:
            self.retries += 1
        logger.warning(f"Retrying completion request (attempt {details['tries']}): {details['exception']}")

    def _body(self, prompt: str) -> Dict[str, Any]:
        return {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            **self.config.extra_body,
        }

    def _post_once(self, body: Dict[str, Any], deadline: Optional[float]) -> Any:
        if deadline is not None and time.monotonic() >= deadline:
            raise DeadlineExceeded("request deadline passed")
        try:
            response = self._client.post(self.config.url, json=body)
        except httpx.TransportError as e:
            raise TransientHTTPError(f"{type(e).__name__}: {e}") from e

        status = response.status_code
        if status in (401, 403):
            raise AuthError(f"completion endpoint rejected credentials (HTTP {status})")
        if status == 429 or status >= 500:
            raise TransientHTTPError(f"HTTP {status}")
        try:
            response.raise_for_status()
            return response.json()
        except httpx.HTTPStatusError as e:
            raise BackendUnavailable(f"completion request failed: HTTP {status}") from e
        except ValueError as e:
            raise BackendUnavailable(f"completion response is not JSON: {e}") from e

    def complete(self, request: CompletionRequest) -> str:
        with self._slots:
            try:
                data = self._post(self._body(request.prompt), request.deadline)
            except TransientHTTPError as e:
                raise BackendUnavailable(
                    f"completion request failed after {self.config.max_retries + 1} attempts: {e}"
                ) from e
        return extract_text(data, self.config.response_path)

    def close(self) -> None:
        self._client.close()
