"""Vector storage and remote embedding retrieval.

Binary store format: magic bytes ``RGRV1``, u32 little-endian dimension,
then records of (u16 id-length, UTF-8 id, u8 mode, dim x f32
little-endian). Mode bytes: 0 = query, 1 = doc.

Every vector is L2-normalized at ingest, so inner products are cosine
similarities. Evaluation code never fetches implicitly: a run requires a
fully materialized store, and fetch_remote exists only for the embed
step of the CLI.

Text ids are namespaced to keep questions, passages, and derived texts
(selected sentences, knockout variants) from colliding:

    q::<query-id>    question text        (query mode)
    p::<passage-id>  passage doc text     (doc mode; also query mode
                                           when a bridge body is embedded
                                           as a query-side text)
    t::<sha256-24>   any derived text     (query mode)
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"RGRV1"
MODE_QUERY = "query"
MODE_DOC = "doc"
_MODE_TO_BYTE = {MODE_QUERY: 0, MODE_DOC: 1}
_BYTE_TO_MODE = {v: k for k, v in _MODE_TO_BYTE.items()}


class VectorFormatError(ValueError):
    """Store file violates the binary layout."""


class DimensionMismatchError(ValueError):
    pass


class NonFiniteVectorError(ValueError):
    pass


class MissingEmbeddingError(KeyError):
    def __init__(self, text_id: str, mode: str) -> None:
        self.text_id = text_id
        self.mode = mode
        super().__init__(f"no vector for id {text_id!r} in mode {mode!r}")


class TransportError(RuntimeError):
    """Network failure that persisted through all retries."""


class ProviderError(RuntimeError):
    """Non-success response from the embedding provider; payload verbatim."""


def question_key(query_id: str) -> str:
    return f"q::{query_id}"


def passage_key(passage_id: str) -> str:
    return f"p::{passage_id}"


def text_key(text: str) -> str:
    return "t::" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:24]


def _normalize(values, dim: int | None = None) -> np.ndarray:
    vec = np.asarray(values, dtype=float).reshape(-1)
    if dim is not None and vec.size != dim:
        raise DimensionMismatchError(f"expected dim {dim}, got {vec.size}")
    if not np.all(np.isfinite(vec)):
        raise NonFiniteVectorError("vector contains non-finite values")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise NonFiniteVectorError("cannot normalize a zero vector")
    return vec / norm


class VectorStore:
    """Immutable map from (text-id, mode) to a unit-norm vector."""

    def __init__(self, dim: int, entries: dict[tuple[str, str], np.ndarray] | None = None) -> None:
        if dim < 1:
            raise DimensionMismatchError("dim must be positive")
        self.dim = int(dim)
        self._entries: dict[tuple[str, str], np.ndarray] = {}
        for (text_id, mode), values in (entries or {}).items():
            if mode not in _MODE_TO_BYTE:
                raise VectorFormatError(f"unknown mode {mode!r}")
            vec = _normalize(values, self.dim)
            vec.setflags(write=False)
            self._entries[(text_id, mode)] = vec

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._entries

    def keys(self):
        return self._entries.keys()

    def get(self, text_id: str, mode: str) -> np.ndarray:
        try:
            return self._entries[(text_id, mode)]
        except KeyError:
            raise MissingEmbeddingError(text_id, mode) from None

    def score(self, text_id: str, mode: str, candidate_ids) -> np.ndarray:
        """Inner products of one query-side vector against doc-mode candidates."""
        qv = self.get(text_id, mode)
        return np.array([float(np.dot(qv, self.get(cid, MODE_DOC))) for cid in candidate_ids])

    def merged(self, other_entries: dict[tuple[str, str], np.ndarray]) -> VectorStore:
        combined = dict(self._entries)
        for key, values in other_entries.items():
            combined[key] = np.asarray(values, dtype=float)
        return VectorStore(self.dim, combined)


def save_vectors(store: VectorStore, path: Path | str) -> None:
    """Write the binary format; records sorted by (id, mode) for determinism."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", store.dim))
        for (text_id, mode) in sorted(store.keys()):
            vec = store.get(text_id, mode)
            id_bytes = text_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise VectorFormatError(f"id too long ({len(id_bytes)} bytes)")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<B", _MODE_TO_BYTE[mode]))
            fh.write(vec.astype("<f4").tobytes())


def load_vectors(path: Path | str) -> VectorStore:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise VectorFormatError("bad magic bytes")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise VectorFormatError("truncated header")
    (dim,) = struct.unpack_from("<I", data, off)
    off += 4
    if dim < 1:
        raise VectorFormatError("non-positive dimension")
    entries: dict[tuple[str, str], np.ndarray] = {}
    vec_bytes = 4 * dim
    while off < len(data):
        if off + 2 > len(data):
            raise VectorFormatError(f"truncated record header at offset {off}")
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + id_len + 1 + vec_bytes > len(data):
            raise VectorFormatError(f"truncated record at offset {off}")
        text_id = data[off : off + id_len].decode("utf-8")
        off += id_len
        mode_byte = data[off]
        off += 1
        if mode_byte not in _BYTE_TO_MODE:
            raise VectorFormatError(f"unknown mode byte {mode_byte} at offset {off - 1}")
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(float)
        off += vec_bytes
        entries[(text_id, _BYTE_TO_MODE[mode_byte])] = vec
    return VectorStore(dim, entries)


@dataclass(frozen=True)
class EmbedProviderConfig:
    endpoint: str
    model_name: str
    mode_instructions: dict[str, str] = field(default_factory=dict)
    auth_env_var: str = ""
    timeout: float = 30.0
    max_retries: int = 3
    batch_size: int = 64
    parallelism: int = 4
    retry_base_delay: float = 0.5


def _requests_transport(url: str, payload: dict, headers: dict, timeout: float):
    import requests

    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    if resp.status_code != 200:
        raise ProviderError(resp.text)
    return resp.json()


class EmbeddingClient:
    """Batched, cached, retrying client for the provider HTTP contract.

    POST JSON {"model", "input": [...], "mode"} -> {"vectors": [[...], ...]}.
    The cache file maps (sha256(text), mode, model) to the raw vector, so
    repeat fetches make no network calls. ``calls`` counts HTTP requests.
    """

    def __init__(self, cfg: EmbedProviderConfig, cache_path: Path | str | None = None, transport=None) -> None:
        self.cfg = cfg
        self.cache_path = Path(cache_path) if cache_path else None
        self._transport = transport or _requests_transport
        self._lock = threading.Lock()
        self.calls = 0
        self._cache: dict[str, list[float]] = {}
        if self.cache_path and self.cache_path.exists():
            self._cache = json.loads(self.cache_path.read_text(encoding="utf-8"))

    def _cache_key(self, text: str, mode: str) -> str:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return f"{digest}|{mode}|{self.cfg.model_name}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.cfg.auth_env_var:
            import os

            token = os.environ.get(self.cfg.auth_env_var, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post_batch(self, texts: list[str], mode: str) -> list[list[float]]:
        prefix = self.cfg.mode_instructions.get(mode, "")
        payload = {
            "model": self.cfg.model_name,
            "input": [prefix + t for t in texts],
            "mode": mode,
        }
        last_exc: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                with self._lock:
                    self.calls += 1
                body = self._transport(self.cfg.endpoint, payload, self._headers(), self.cfg.timeout)
                break
            except TransportError as exc:
                last_exc = exc
                if attempt == self.cfg.max_retries:
                    raise
                time.sleep(self.cfg.retry_base_delay * (2**attempt))
        else:  # pragma: no cover - loop always breaks or raises
            raise TransportError(str(last_exc))
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderError(f"provider returned {0 if vectors is None else len(vectors)} vectors for {len(texts)} inputs")
        return vectors

    def _write_cache(self) -> None:
        if not self.cache_path:
            return
        try:
            tmp = self.cache_path.with_suffix(self.cache_path.suffix + ".tmp")
            tmp.write_text(json.dumps(self._cache), encoding="utf-8")
            tmp.replace(self.cache_path)
        except OSError as exc:
            logger.warning("embedding cache write failed: %s", exc)

    def fetch(self, texts: list[str], mode: str, expected_dim: int | None = None) -> list[np.ndarray]:
        """One normalized vector per text, order-aligned with the input."""
        if mode not in _MODE_TO_BYTE:
            raise ValueError(f"unknown mode {mode!r}")
        results: list[np.ndarray | None] = [None] * len(texts)
        missing: list[int] = []
        for i, text in enumerate(texts):
            cached = self._cache.get(self._cache_key(text, mode))
            if cached is not None:
                results[i] = _normalize(cached, expected_dim)
            else:
                missing.append(i)

        if missing:
            batches: list[list[int]] = [
                missing[lo : lo + self.cfg.batch_size]
                for lo in range(0, len(missing), self.cfg.batch_size)
            ]
            def run(batch: list[int]) -> tuple[list[int], list[list[float]]]:
                return batch, self._post_batch([texts[i] for i in batch], mode)

            if self.cfg.parallelism > 1 and len(batches) > 1:
                with ThreadPoolExecutor(max_workers=self.cfg.parallelism) as pool:
                    outcomes = list(pool.map(run, batches))
            else:
                outcomes = [run(b) for b in batches]
            with self._lock:
                for batch, vectors in outcomes:
                    for i, raw in zip(batch, vectors):
                        vec = _normalize(raw, expected_dim)
                        if expected_dim is None:
                            expected_dim = vec.size
                        results[i] = vec
                        self._cache[self._cache_key(texts[i], mode)] = [float(v) for v in raw]
                self._write_cache()

        filled = [r for r in results if r is not None]
        if len(filled) != len(texts):
            raise ProviderError("provider response left some inputs without vectors")
        dims = {r.size for r in filled}
        if len(dims) > 1:
            raise DimensionMismatchError(f"provider returned mixed dimensions {sorted(dims)}")
        return filled


def fetch_remote(
    cfg: EmbedProviderConfig,
    texts: list[str],
    mode: str,
    cache_path: Path | str | None = None,
    transport=None,
    expected_dim: int | None = None,
) -> list[np.ndarray]:
    """Functional wrapper over EmbeddingClient for one-shot fetches."""
    client = EmbeddingClient(cfg, cache_path=cache_path, transport=transport)
    return client.fetch(texts, mode, expected_dim=expected_dim)
