"""Thin HTTP client for the session service."""

from __future__ import annotations

import httpx


class SessionApiError(RuntimeError):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(f"{code}: {message}")
        self.status = status
        self.code = code
        self.detail = detail


class SessionClient:
    """Synchronous client mirroring the service endpoints one-to-one."""

    def __init__(self, base_url: str, client: httpx.Client | None = None, timeout: float = 60.0):
        self._client = client or httpx.Client(base_url=base_url, timeout=timeout)

    def _check(self, response: httpx.Response) -> httpx.Response:
        if response.status_code >= 400:
            try:
                body = response.json()
            except ValueError:
                raise SessionApiError(response.status_code, "http_error", response.text)
            raise SessionApiError(response.status_code, body.get("code", "error"),
                                  body.get("message", ""), body.get("detail"))
        return response

    def healthz(self) -> dict:
        return self._check(self._client.get("/healthz")).json()

    def create(self, scenario: str, config: dict | None = None) -> dict:
        body = {"scenario": scenario}
        if config:
            body["config"] = config
        return self._check(self._client.post("/sessions", json=body)).json()

    def state(self, session_id: str) -> dict:
        return self._check(self._client.get(f"/sessions/{session_id}/state")).json()

    def ask(self, session_id: str) -> dict:
        return self._check(self._client.post(f"/sessions/{session_id}/ask")).json()

    def answer(self, session_id: str, text: str, responding_user: str) -> dict:
        return self._check(self._client.post(
            f"/sessions/{session_id}/answer",
            json={"text": text, "responding_user": responding_user})).json()

    def metrics_csv(self, session_id: str) -> str:
        return self._check(self._client.get(f"/sessions/{session_id}/metrics.csv")).text

    def close(self):
        self._client.close()
