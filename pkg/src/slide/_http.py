"""Minimal JSON-over-HTTP client used by the chat and scoring backends."""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request

from .errors import FormatError, TransportError


def post_json(
    url: str,
    payload: dict,
    headers: dict[str, str] | None = None,
    timeout: float = 30.0,
    retries: int = 1,
) -> dict:
    """POST a JSON body and parse a JSON response.

    Connection failures and non-2xx statuses raise TransportError (after the
    configured retries); a response that is not a JSON object raises
    FormatError carrying the raw text.
    """
    body = json.dumps(payload).encode("utf-8")
    base_headers = {"Content-Type": "application/json"}
    if headers:
        base_headers.update(headers)
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        try:
            req = urllib.request.Request(url, data=body, headers=base_headers, method="POST")
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                raw = resp.read().decode("utf-8")
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError:
                raise FormatError(f"endpoint returned non-JSON payload: {raw[:500]!r}") from None
            if not isinstance(doc, dict):
                raise FormatError(f"endpoint returned non-object payload: {raw[:500]!r}")
            return doc
        except urllib.error.HTTPError as exc:
            last_error = TransportError(f"endpoint {url} returned status {exc.code}")
        except (urllib.error.URLError, OSError) as exc:
            last_error = TransportError(f"endpoint {url} unreachable: {exc}")
        if attempt < retries:
            time.sleep(0.1 * (attempt + 1))
    raise last_error
