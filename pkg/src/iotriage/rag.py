"""Knowledge retrieval for prompt enrichment.

Attack descriptions and device specifications are embedded into unit-norm
vectors and indexed for exact nearest-neighbor lookup, so prompts can be
enriched with the right context even when attack naming varies between
datasets. The default embedder is deterministic and local (hashed character
trigrams plus word unigrams); a pretrained sentence embedder can be plugged
in as a remote endpoint.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from importlib import resources as importlib_resources
from pathlib import Path

import numpy as np

from .errors import DataError, GatewayError

DEFAULT_DIMENSION = 384
DEFAULT_SIMILARITY_FLOOR = 0.15

INDEX_FORMAT_VERSION = 1

_WORD = re.compile(r"\w+")


@dataclass(frozen=True)
class KnowledgeEntry:
    key: str
    text: str
    kind: str  # attack | device
    source: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise DataError(f"knowledge entry {self.key!r} has empty text")
        if self.kind not in ("attack", "device"):
            raise DataError(f"knowledge entry {self.key!r} has unknown kind {self.kind!r}")


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    cpu: str
    memory: str
    os: str
    network_interface: str

    def __post_init__(self):
        for field_name in ("name", "cpu", "memory", "os", "network_interface"):
            if not getattr(self, field_name).strip():
                raise DataError(f"device spec missing field: {field_name}")

    def describe(self) -> str:
        return (
            f"{self.name}: CPU {self.cpu}; memory {self.memory}; "
            f"OS {self.os}; network interface {self.network_interface}"
        )


@dataclass
class EmbeddingVector:
    values: np.ndarray
    norm: float

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "EmbeddingVector":
        raw = np.asarray(raw, dtype=np.float64)
        norm = float(np.linalg.norm(raw))
        if norm == 0.0:
            raise DataError("embedding collapsed to the zero vector")
        return cls(values=raw / norm, norm=1.0)


def _bucket(term: str, dim: int) -> tuple[int, float]:
    digest = hashlib.md5(term.encode("utf-8")).digest()
    index = int.from_bytes(digest[:8], "big") % dim
    sign = 1.0 if digest[8] & 1 else -1.0
    return index, sign


class LocalEmbedder:
    """Deterministic bag-of-features embedder.

    Word unigrams and character trigrams of the lowercased text are hashed
    into ``dim`` signed buckets as term frequencies (signed so collision
    noise between unrelated texts cancels instead of accumulating).
    Identical text always yields the identical vector, with no model
    weights or network needed.
    """

    spec = "local"

    def __init__(self, dim: int = DEFAULT_DIMENSION):
        if dim < 8:
            raise DataError("embedding dimension too small")
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        normalized = re.sub(r"\s+", " ", text.lower()).strip()
        terms = [f"w:{w}" for w in _WORD.findall(normalized)]
        terms += [f"t:{normalized[i : i + 3]}" for i in range(len(normalized) - 2)]
        if not terms:
            terms = [f"r:{normalized}"]
        raw = np.zeros(self.dim, dtype=np.float64)
        for term in terms:
            index, sign = _bucket(term, self.dim)
            raw[index] += sign
        return raw


class RemoteEmbedder:
    """Wrapper for a remote embedding endpoint with a text-hash cache.

    ``endpoint`` is any callable mapping text to a vector. Failures retry up
    to ``max_retries`` attempts and then raise, unless a fallback embedder
    was configured explicitly.
    """

    spec = "remote"

    def __init__(self, endpoint, dim: int = DEFAULT_DIMENSION, max_retries: int = 3, fallback=None):
        self.endpoint = endpoint
        self.dim = dim
        self.max_retries = max_retries
        self.fallback = fallback
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def __call__(self, text: str) -> np.ndarray:
        key = hashlib.sha256(text.encode("utf-8")).hexdigest()
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        last_error: Exception | None = None
        raw: np.ndarray | None = None
        for _ in range(self.max_retries):
            try:
                raw = np.asarray(self.endpoint(text), dtype=np.float64)
                break
            except Exception as exc:  # endpoint contract is opaque
                last_error = exc
        if raw is None:
            if self.fallback is None:
                raise GatewayError(
                    f"remote embedder failed after {self.max_retries} attempts: {last_error}"
                )
            raw = np.asarray(self.fallback(text), dtype=np.float64)
        with self._lock:
            self._cache[key] = raw
        return raw


def embed(text: str, embedder) -> EmbeddingVector:
    """Embed non-empty text into a unit-norm vector."""
    if not text or not text.strip():
        raise DataError("cannot embed empty text")
    return EmbeddingVector.from_raw(embedder(text))


@dataclass
class VectorIndex:
    """Exact inner-product index over embedded knowledge entries.

    Immutable after build; queries embed with the same embedder the index
    was built with.
    """

    entries: list[KnowledgeEntry]
    vectors: np.ndarray  # (n, dim) unit rows
    dim: int
    embedder: object

    def __len__(self) -> int:
        return len(self.entries)


def build_index(entries: list[KnowledgeEntry], embedder) -> VectorIndex:
    """Embed one vector per entry; duplicate keys within a kind are rejected."""
    if not entries:
        raise DataError("cannot build an index from zero entries")
    seen: set[tuple[str, str]] = set()
    for entry in entries:
        ident = (entry.kind, entry.key)
        if ident in seen:
            raise DataError(f"duplicate knowledge key within kind: {entry.key!r}")
        seen.add(ident)
    vectors = np.stack([embed(e.text, embedder).values for e in entries])
    return VectorIndex(entries=list(entries), vectors=vectors, dim=int(vectors.shape[1]), embedder=embedder)


def query(index: VectorIndex, text: str, k: int) -> list[tuple[KnowledgeEntry, float]]:
    """Exact top-k by cosine (inner product of unit vectors), descending.

    Exhaustive scan over all entries; score ties break by key order.
    """
    if len(index) == 0:
        raise DataError("empty index")
    if not 1 <= k <= len(index):
        raise DataError(f"k must be in [1, {len(index)}], got {k}")
    qv = embed(text, index.embedder).values
    scores = index.vectors @ qv
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.entries[i].key))
    return [(index.entries[i], float(scores[i])) for i in order[:k]]


@dataclass
class RetrievedContext:
    attack_entry: KnowledgeEntry
    attack_score: float
    device_spec: DeviceSpec
    device_score: float

    def provenance(self) -> dict:
        return {
            "attack_key": self.attack_entry.key,
            "attack_score": self.attack_score,
            "device_name": self.device_spec.name,
            "device_score": self.device_score,
        }


class KnowledgeBase:
    """Attack and device indices plus the device spec registry."""

    def __init__(
        self,
        attack_index: VectorIndex,
        device_index: VectorIndex,
        devices: dict[str, DeviceSpec],
        similarity_floor: float = DEFAULT_SIMILARITY_FLOOR,
    ):
        self.attack_index = attack_index
        self.device_index = device_index
        self.devices = devices
        self.similarity_floor = similarity_floor

    def retrieve_context(self, attack_label: str, device_name: str) -> RetrievedContext:
        """Top-1 attack description and device spec for a detection.

        Raises:
            DataError: best similarity below the confidence floor; wrong
                context is worse than no context.
        """
        (attack_entry, attack_score), = query(self.attack_index, attack_label, 1)
        if attack_score < self.similarity_floor:
            raise DataError(
                f"no confident attack match for {attack_label!r} "
                f"(best {attack_score:.3f} < floor {self.similarity_floor})"
            )
        (device_entry, device_score), = query(self.device_index, device_name, 1)
        if device_score < self.similarity_floor:
            raise DataError(
                f"no confident device match for {device_name!r} "
                f"(best {device_score:.3f} < floor {self.similarity_floor})"
            )
        return RetrievedContext(
            attack_entry=attack_entry,
            attack_score=attack_score,
            device_spec=self.devices[device_entry.key],
            device_score=device_score,
        )


def retrieve_context(kb: KnowledgeBase, attack_label: str, device_name: str) -> RetrievedContext:
    return kb.retrieve_context(attack_label, device_name)


# ---------------------------------------------------------------------------
# Shipped knowledge bases and index persistence
# ---------------------------------------------------------------------------

def _read_resource(name: str) -> str:
    return (
        importlib_resources.files("iotriage.resources").joinpath(name).read_text(encoding="utf-8")
    )


def parse_attack_kb(text: str) -> list[KnowledgeEntry]:
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"attack KB is not valid JSON: {exc}") from None
    entries = []
    for item in items:
        key = item.get("key", "<missing key>")
        for required in ("key", "kind", "text", "source"):
            if required not in item:
                raise DataError(f"malformed attack KB entry {key!r}: missing {required!r}")
        entries.append(
            KnowledgeEntry(key=item["key"], text=item["text"], kind=item["kind"], source=item["source"])
        )
    return entries


def parse_device_kb(text: str) -> list[DeviceSpec]:
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"device KB is not valid JSON: {exc}") from None
    devices = []
    for item in items:
        name = item.get("name", "<missing name>")
        for required in ("name", "cpu", "memory", "os", "network_interface"):
            if required not in item:
                raise DataError(f"malformed device KB entry {name!r}: missing {required!r}")
        devices.append(DeviceSpec(**{k: item[k] for k in ("name", "cpu", "memory", "os", "network_interface")}))
    return devices


def load_attack_entries(path: str | Path | None = None) -> list[KnowledgeEntry]:
    """Attack KB entries from a file, or the shipped resource when None."""
    text = Path(path).read_text(encoding="utf-8") if path else _read_resource("kb_attacks.json")
    return parse_attack_kb(text)


def load_device_specs(path: str | Path | None = None) -> list[DeviceSpec]:
    """Device KB specs from a file, or the shipped resource when None."""
    text = Path(path).read_text(encoding="utf-8") if path else _read_resource("kb_devices.json")
    return parse_device_kb(text)


def device_entries(devices: list[DeviceSpec]) -> list[KnowledgeEntry]:
    return [
        KnowledgeEntry(key=d.name, text=d.describe(), kind="device", source="device KB")
        for d in devices
    ]


def build_knowledge_base(
    embedder=None,
    attack_kb_path: str | Path | None = None,
    device_kb_path: str | Path | None = None,
    similarity_floor: float = DEFAULT_SIMILARITY_FLOOR,
) -> KnowledgeBase:
    """Build both indices from KB files (shipped resources by default)."""
    embedder = embedder or LocalEmbedder()
    attacks = load_attack_entries(attack_kb_path)
    devices = load_device_specs(device_kb_path)
    return KnowledgeBase(
        attack_index=build_index(attacks, embedder),
        device_index=build_index(device_entries(devices), embedder),
        devices={d.name: d for d in devices},
        similarity_floor=similarity_floor,
    )


def save_index(index: VectorIndex, path: str | Path) -> None:
    payload = {
        "format_version": INDEX_FORMAT_VERSION,
        "dim": index.dim,
        "embedder": getattr(index.embedder, "spec", "remote"),
        "entries": [
            {
                "key": e.key,
                "kind": e.kind,
                "text": e.text,
                "source": e.source,
                "vector": index.vectors[i].tolist(),
            }
            for i, e in enumerate(index.entries)
        ],
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_index(path: str | Path, embedder=None) -> VectorIndex:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != INDEX_FORMAT_VERSION:
        raise DataError(
            f"index format version {version} not supported (expected {INDEX_FORMAT_VERSION})"
        )
    dim = int(payload["dim"])
    if embedder is None:
        if payload["embedder"] != "local":
            raise DataError("index was built with a remote embedder; pass it explicitly")
        embedder = LocalEmbedder(dim)
    entries = []
    vectors = []
    for item in payload["entries"]:
        entries.append(
            KnowledgeEntry(key=item["key"], text=item["text"], kind=item["kind"], source=item["source"])
        )
        vector = np.array(item["vector"], dtype=np.float64)
        if vector.shape != (dim,):
            raise DataError(f"index entry {item['key']!r} has wrong vector dimension")
        vectors.append(vector)
    return VectorIndex(entries=entries, vectors=np.stack(vectors), dim=dim, embedder=embedder)
