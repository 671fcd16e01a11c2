"""Product and service aliases: remote knowledge-graph fetch plus a file store.

The store is newline-delimited JSON, one record per line, so researchers can
hand-edit alias lists. Loading applies last-write-wins per company, which
makes appends a cheap way to override earlier fetches.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import AliasStoreError, CredentialError, RemoteUnavailableError

logger = logging.getLogger(__name__)

MAX_ALIASES = 20
SOURCES = ("remote", "manual", "fixture")
DEFAULT_KEY_ENV = "KNOWLEDGE_GRAPH_API_KEY"


@dataclass(frozen=True)
class AliasRecord:
    company_id: str
    query: str
    aliases: tuple[str, ...]
    fetched_at: dt.datetime
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise AliasStoreError(f"unknown alias source {self.source!r}")
        if len(self.aliases) > MAX_ALIASES:
            raise AliasStoreError(
                f"{self.company_id}: {len(self.aliases)} aliases exceeds "
                f"the limit of {MAX_ALIASES}"
            )
        if len(set(self.aliases)) != len(self.aliases):
            raise AliasStoreError(f"{self.company_id}: duplicate aliases")
        if any(not a or not a.strip() for a in self.aliases):
            raise AliasStoreError(f"{self.company_id}: empty alias string")


def _record_to_json(record: AliasRecord) -> str:
    return json.dumps(
        {
            "company_id": record.company_id,
            "query": record.query,
            "aliases": list(record.aliases),
            "fetched_at": record.fetched_at.isoformat(),
            "source": record.source,
        },
        ensure_ascii=False,
    )


def _record_from_json(payload: dict, index: int) -> AliasRecord:
    try:
        return AliasRecord(
            company_id=payload["company_id"],
            query=payload["query"],
            aliases=tuple(payload["aliases"]),
            fetched_at=dt.datetime.fromisoformat(payload["fetched_at"]),
            source=payload["source"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise AliasStoreError(f"store record {index}: {exc}") from exc


class AliasStore:
    """Serialized writer over one JSONL file; reads are concurrent-safe."""

    def __init__(self, path):
        self.path = Path(path)

    def load(self) -> list[AliasRecord]:
        """All records, later lines overriding earlier ones per company."""
        if not self.path.exists():
            return []
        by_company: dict[str, AliasRecord] = {}
        with open(self.path, encoding="utf-8") as fh:
            for index, line in enumerate(fh, start=1):
                text = line.strip()
                if not text:
                    continue
                try:
                    payload = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise AliasStoreError(
                        f"store record {index}: invalid JSON ({exc.msg})"
                    ) from exc
                record = _record_from_json(payload, index)
                by_company[record.company_id] = record
        return list(by_company.values())

    def save(self, records) -> None:
        """Rewrite the store atomically with one line per record."""
        records = list(records)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(
            dir=self.path.parent, prefix=self.path.name, suffix=".tmp"
        )
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                for record in records:
                    fh.write(_record_to_json(record) + "\n")
            os.replace(tmp_name, self.path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    def upsert(self, record: AliasRecord) -> None:
        existing = [r for r in self.load() if r.company_id != record.company_id]
        existing.append(record)
        self.save(existing)

    def alias_map(self) -> dict[str, tuple[str, ...]]:
        return {r.company_id: r.aliases for r in self.load()}


class KnowledgeGraphClient:
    """Thin GET wrapper around a knowledge-graph search endpoint.

    The transport is injectable so tests never open sockets; the default
    transport uses requests. The credential comes from the environment.
    """

    def __init__(
        self,
        base_url: str,
        key_env: str = DEFAULT_KEY_ENV,
        timeout: float = 10.0,
        transport=None,
    ):
        self.base_url = base_url
        self.key_env = key_env
        self.timeout = timeout
        self._transport = transport or self._http_get

    def _http_get(self, url: str, params: dict):
        response = requests.get(url, params=params, timeout=self.timeout)
        try:
            payload = response.json()
        except ValueError:
            payload = {}
        return response.status_code, payload

    def search(self, query: str, limit: int) -> list[str]:
        """Entity names in relevance order; raises on auth or bad status."""
        key = os.environ.get(self.key_env)
        if not key:
            raise CredentialError(
                f"no credential in environment variable {self.key_env}"
            )
        status, payload = self._transport(
            self.base_url, {"query": query, "limit": limit, "key": key}
        )
        if status in (401, 403):
            raise CredentialError(f"endpoint rejected credential (HTTP {status})")
        if status == 429 or status >= 500:
            raise RemoteUnavailableError(f"transient HTTP {status}")
        if status != 200:
            raise AliasStoreError(f"unexpected HTTP {status} from alias endpoint")
        names = []
        for element in payload.get("itemListElement", []):
            name = element.get("result", {}).get("name")
            if name:
                names.append(str(name))
        return names


def fetch_aliases(
    query: str,
    company_id: str,
    client: KnowledgeGraphClient,
    limit: int = 20,
    retries: int = 3,
    backoff: float = 0.5,
    sleep=time.sleep,
    now=lambda: dt.datetime.now(dt.timezone.utc),
) -> AliasRecord:
    """One remote lookup with bounded retries and exponential backoff.

    Credential failures are permanent and surface immediately; transient
    failures retry up to `retries` attempts before giving up.
    """
    limit = min(int(limit), MAX_ALIASES)
    if limit <= 0:
        return AliasRecord(
            company_id=company_id,
            query=query,
            aliases=(),
            fetched_at=now(),
            source="remote",
        )
    last_error: Exception | None = None
    for attempt in range(retries):
        try:
            names = client.search(query, limit)
            break
        except CredentialError:
            raise
        except (RemoteUnavailableError, requests.RequestException) as exc:
            last_error = exc
            if attempt + 1 < retries:
                delay = backoff * (2.0**attempt)
                logger.warning(
                    "alias fetch for %r failed (%s); retrying in %.1fs",
                    query,
                    exc,
                    delay,
                )
                sleep(delay)
    else:
        raise RemoteUnavailableError(
            f"alias fetch for {query!r} failed after {retries} attempts: "
            f"{last_error}"
        )
    deduped: list[str] = []
    for name in names:
        cleaned = name.strip()
        if cleaned and cleaned not in deduped:
            deduped.append(cleaned)
        if len(deduped) == limit:
            break
    return AliasRecord(
        company_id=company_id,
        query=query,
        aliases=tuple(deduped),
        fetched_at=now(),
        source="remote",
    )
