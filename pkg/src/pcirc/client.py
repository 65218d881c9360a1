"""Client used by the command line: in-process by default, HTTP when a
server address is given.

The in-process mode drives the FastAPI app through its test transport,
so the command line exercises exactly the service code path without a
network.  Error envelopes are turned back into the matching package
exception so exit-code mapping works the same either way.
"""

from __future__ import annotations

from .errors import (
    CircuitValidationError,
    FormatError,
    NumericError,
    PcircError,
    UsageError,
)

__all__ = ["ServiceClient"]

_CATEGORY_ERRORS = {
    "usage": UsageError,
    "validation": CircuitValidationError,
    "numeric": NumericError,
    "format": FormatError,
}


class ServiceClient:
    def __init__(self, server: str | None = None):
        self.server = server
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app)

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        if method == "get":
            resp = self._client.get(path)
        else:
            resp = self._client.post(path, json=payload)
        try:
            body = resp.json()
        except ValueError:
            raise UsageError(
                f"server returned non-JSON response (status {resp.status_code})"
            ) from None
        if isinstance(body, dict) and "error" in body:
            err = body["error"]
            cls = _CATEGORY_ERRORS.get(err.get("category", ""), UsageError)
            raise cls(err.get("message", "unknown server error"))
        if resp.status_code >= 400:
            raise UsageError(f"server error {resp.status_code}: {body}")
        return body

    def health(self) -> dict:
        return self._request("get", "/health")

    def build(self, config: str, seed: int | None = None) -> dict:
        return self._request("post", "/build", {"config": config, "seed": seed})

    def compile(self, model: str, *, block_size: int = 32, groups: int = 8,
                tolerance: float = 0.25) -> dict:
        return self._request(
            "post",
            "/compile",
            {
                "model": model,
                "block_size": block_size,
                "groups": groups,
                "tolerance": tolerance,
            },
        )

    def train(self, model: str, data_b64: str, **options) -> dict:
        payload = {"model": model, "data_b64": data_b64}
        payload.update(options)
        return self._request("post", "/train", payload)

    def evaluate(self, model: str, data_b64: str, metric: str = "nll",
                 block_size: int = 32) -> dict:
        return self._request(
            "post",
            "/eval",
            {
                "model": model,
                "data_b64": data_b64,
                "metric": metric,
                "block_size": block_size,
            },
        )

    def bench(self, model: str, **options) -> dict:
        payload = {"model": model}
        payload.update(options)
        return self._request("post", "/bench", payload)
