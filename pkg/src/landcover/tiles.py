"""Satellite tile harvesting from a static-map HTTP service.

Every address ends up in the fetch ledger as either ``retrieved`` (with a
cached 640x640 tile) or ``failed`` (with a reason), so gaps between the
address list and the tile set are always accounted for.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import threading
import time
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
import requests
from PIL import Image

from landcover.exceptions import SchemaError

logger = logging.getLogger(__name__)

RETRIEVED = "retrieved"
FAILED = "failed"
FAILURE_REASONS = ("bad_address", "http_error", "decode_error", "rate_limited_exhausted")
# terminal failures are not retried when a campaign is resumed
TERMINAL_REASONS = frozenset({"bad_address", "decode_error"})

RECORD_FIELDS = ("record_id", "address_line", "city", "state", "postal_code")


@dataclass(frozen=True)
class PropertyRecord:
    record_id: str
    address_line: str
    city: str = ""
    state: str = ""
    postal_code: str = ""

    @property
    def fetchable(self) -> bool:
        return bool(self.address_line.strip())

    def query(self) -> str:
        parts = [self.address_line, self.city, " ".join(p for p in (self.state, self.postal_code) if p)]
        return ", ".join(p.strip() for p in parts if p and p.strip())


@dataclass
class FetchResult:
    record_id: str
    status: str
    failure_reason: Optional[str] = None
    tile_path: Optional[str] = None
    attempts: int = 0

    def __post_init__(self):
        if self.status == RETRIEVED and (self.tile_path is None or self.failure_reason is not None):
            raise ValueError(f"{self.record_id}: retrieved results need a tile_path and no failure_reason")
        if self.status == FAILED and self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"{self.record_id}: failed results need a reason from {FAILURE_REASONS}")
        if self.status not in (RETRIEVED, FAILED):
            raise ValueError(f"unknown status {self.status!r}")


@dataclass
class ServiceConfig:
    base_url: str = "https://maps.googleapis.com/maps/api/staticmap"
    api_key_env: str = "LANDCOVER_MAPS_API_KEY"
    zoom: int = 18
    size: int = 640
    maptype: str = "satellite"
    max_attempts: int = 3
    backoff_base: float = 0.5
    timeout: float = 30.0

    def params(self, center: str) -> dict:
        return {
            "center": center,
            "zoom": str(self.zoom),
            "size": f"{self.size}x{self.size}",
            "maptype": self.maptype,
            "key": os.environ.get(self.api_key_env, ""),
        }

    def snapshot(self) -> dict:
        # never includes the key itself
        return asdict(self)


@dataclass
class FetchLedger:
    results: list[FetchResult] = field(default_factory=list)
    campaign_config: dict = field(default_factory=dict)

    def by_id(self) -> dict[str, FetchResult]:
        return {r.record_id: r for r in self.results}

    def retrieved(self) -> list[FetchResult]:
        return [r for r in self.results if r.status == RETRIEVED]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"campaign_config": self.campaign_config, "results": [asdict(r) for r in self.results]}
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "FetchLedger":
        payload = json.loads(Path(path).read_text())
        try:
            results = [FetchResult(**r) for r in payload["results"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"invalid ledger file {path}: {exc}") from None
        return cls(results=results, campaign_config=payload.get("campaign_config", {}))


class MapService(Protocol):
    """Anything that answers a static-map query with (HTTP status, body bytes)."""

    def get(self, params: dict) -> tuple[int, bytes]: ...


class HttpMapService:
    def __init__(self, config: ServiceConfig):
        self.config = config

    def get(self, params: dict) -> tuple[int, bytes]:
        resp = requests.get(self.config.base_url, params=params, timeout=self.config.timeout)
        return resp.status_code, resp.content


class RateLimiter:
    """Token bucket with capacity one: requests are spaced at least 1/rate apart."""

    def __init__(self, rate: float, clock=time.monotonic, sleep=time.sleep):
        if not rate > 0:
            raise ValueError(f"rate limit must be > 0, got {rate}")
        self.interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            slot = max(now, self._next)
            self._next = slot + self.interval
        delay = slot - now
        if delay > 0:
            self._sleep(delay)


_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_SAFE = re.compile(r"[^A-Za-z0-9._-]")


def tile_filename(record_id: str) -> str:
    safe = _SAFE.sub("_", record_id)
    if safe != record_id:
        # keep distinct ids distinct after sanitising
        safe = f"{safe}-{zlib.crc32(record_id.encode('utf-8')):08x}"
    return f"{safe}.png"


def _valid_tile(data, size: int) -> Optional[np.ndarray]:
    try:
        with Image.open(data if isinstance(data, (str, Path)) else io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("RGB"))
    except Exception:
        return None
    if arr.shape != (size, size, 3):
        return None
    return arr


def load_property_records(csv_path, column_map: Optional[dict] = None) -> list[PropertyRecord]:
    """Read address rows; ``column_map`` maps record field -> CSV column name.

    Unmapped fields default to the same-named column when present; only
    ``record_id`` and ``address_line`` are required.
    """
    csv_path = Path(csv_path)
    column_map = dict(column_map or {})
    with open(csv_path, newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        try:
            dialect = csv.Sniffer().sniff(sample, delimiters=",;\t|")
        except csv.Error:
            dialect = csv.excel
        reader = csv.DictReader(fh, dialect=dialect)
        columns = reader.fieldnames or []
        mapping = {}
        for name in RECORD_FIELDS:
            col = column_map.get(name, name)
            if col in columns:
                mapping[name] = col
            elif name in column_map or name in ("record_id", "address_line"):
                raise SchemaError(f"{csv_path}: column {col!r} (for {name}) not found; have {columns}")
        records = []
        seen = set()
        for row in reader:
            values = {name: (row.get(col) or "").strip() for name, col in mapping.items()}
            rec = PropertyRecord(**values)
            if rec.record_id in seen:
                raise SchemaError(f"{csv_path}: duplicate record_id {rec.record_id!r}")
            seen.add(rec.record_id)
            records.append(rec)
    return records


class TileFetcher:
    """Fetches single tiles into ``cache_dir/tiles``; network access goes through ``service``."""

    def __init__(self, cache_dir, config: ServiceConfig, service: Optional[MapService] = None,
                 limiter: Optional[RateLimiter] = None, sleep=time.sleep):
        self.cache_dir = Path(cache_dir)
        self.tile_dir = self.cache_dir / "tiles"
        self.config = config
        self.service = service if service is not None else HttpMapService(config)
        self.limiter = limiter
        self._sleep = sleep

    def tile_path(self, record: PropertyRecord) -> Path:
        return self.tile_dir / tile_filename(record.record_id)

    def relative(self, path: Path) -> str:
        return path.relative_to(self.cache_dir).as_posix()

    def cached(self, record: PropertyRecord) -> Optional[FetchResult]:
        path = self.tile_path(record)
        if path.is_file() and _valid_tile(path, self.config.size) is not None:
            return FetchResult(record.record_id, RETRIEVED, tile_path=self.relative(path))
        return None

    def fetch(self, record: PropertyRecord) -> FetchResult:
        hit = self.cached(record)
        if hit is not None:
            return hit
        if not record.fetchable:
            return FetchResult(record.record_id, FAILED, failure_reason="bad_address")

        params = self.config.params(record.query())
        reason = "http_error"
        for attempt in range(1, self.config.max_attempts + 1):
            if self.limiter is not None:
                self.limiter.acquire()
            try:
                status, body = self.service.get(params)
            except Exception as exc:
                logger.debug("%s: request failed: %s", record.record_id, type(exc).__name__)
                status, body = None, b""
            if status == 200:
                arr = _valid_tile(body, self.config.size)
                if arr is None:
                    return FetchResult(record.record_id, FAILED, failure_reason="decode_error", attempts=attempt)
                path = self.tile_path(record)
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                if body.startswith(_PNG_MAGIC):
                    tmp.write_bytes(body)
                else:
                    Image.fromarray(arr).save(tmp, format="PNG")
                tmp.replace(path)
                return FetchResult(record.record_id, RETRIEVED, tile_path=self.relative(path), attempts=attempt)
            if status in (400, 404):
                return FetchResult(record.record_id, FAILED, failure_reason="bad_address", attempts=attempt)
            if status is not None and 400 <= status < 500 and status != 429:
                return FetchResult(record.record_id, FAILED, failure_reason="http_error", attempts=attempt)
            reason = "rate_limited_exhausted" if status == 429 else "http_error"
            if attempt < self.config.max_attempts:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
        return FetchResult(record.record_id, FAILED, failure_reason=reason, attempts=self.config.max_attempts)


def fetch_tile(record: PropertyRecord, service: ServiceConfig, cache_dir, client: Optional[MapService] = None) -> FetchResult:
    """Fetch one tile; never raises for per-record problems."""
    return TileFetcher(cache_dir, service, client).fetch(record)


def run_fetch_campaign(records: Sequence[PropertyRecord], service: ServiceConfig, cache_dir,
                       parallelism: int = 4, rate_limit: float = 10.0,
                       client: Optional[MapService] = None, retry_failed: bool = False,
                       ledger_name: str = "ledger.json") -> FetchLedger:
    """Fetch all records with a bounded worker pool and a shared rate limiter.

    A previous ledger in ``cache_dir`` makes the campaign resumable: cached
    tiles are not re-requested, and records that failed terminally
    (bad address, undecodable response) are carried over unless
    ``retry_failed`` is set.
    """
    if int(parallelism) < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")
    cache_dir = Path(cache_dir)
    limiter = RateLimiter(rate_limit)
    fetcher = TileFetcher(cache_dir, service, client, limiter)
    ids = [r.record_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("record ids must be unique")

    previous: dict[str, FetchResult] = {}
    ledger_path = cache_dir / ledger_name
    if ledger_path.is_file() and not retry_failed:
        previous = FetchLedger.load(ledger_path).by_id()

    def work(record: PropertyRecord) -> FetchResult:
        prior = previous.get(record.record_id)
        if prior is not None:
            if prior.status == FAILED and prior.failure_reason in TERMINAL_REASONS:
                return prior
            if prior.status == RETRIEVED and fetcher.cached(record) is not None:
                return prior
        return fetcher.fetch(record)

    with ThreadPoolExecutor(max_workers=int(parallelism)) as pool:
        results = list(pool.map(work, records))

    config = service.snapshot()
    config.update(parallelism=int(parallelism), rate_limit=float(rate_limit))
    ledger = FetchLedger(results=results, campaign_config=config)
    ledger.save(ledger_path)
    return ledger


def ledger_summary(ledger: FetchLedger) -> dict:
    reasons = Counter(r.failure_reason for r in ledger.results if r.status == FAILED)
    retrieved = sum(1 for r in ledger.results if r.status == RETRIEVED)
    return {
        "total": len(ledger.results),
        "retrieved": retrieved,
        "failed": len(ledger.results) - retrieved,
        "by_reason": dict(sorted(reasons.items())),
    }
