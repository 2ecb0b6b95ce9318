"""Titled episode storage with deterministic embeddings and exact retrieval.

Episodes persist as canonical sequence files under a storage root, with a
flat TSV index holding metadata plus a 256-bucket signed-hash embedding.
Retrieval is an exact scan: location filter, keyword/title match, cosine
against a context graph. No approximate structures; a desk-scale store
never needs them and exactness keeps the ranking oracle-checkable.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from filelock import FileLock

from .errors import (
    DuplicateEpisodeError,
    EpisodeIntegrityError,
    RecallGraphError,
    UnknownEpisodeError,
)
from .scene_graph import (
    EdgeCategory,
    SceneGraph,
    canonical_decode,
    canonical_encode,
    diff_graphs,
    ensure_valid,
    fnv1a64,
)

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 256
DATA_ENV_VAR = "RECALLGRAPH_DATA"
EPISODE_SUFFIX = ".sgseq"

DEFAULT_TITLE_WEIGHT = 0.6
DEFAULT_CONTEXT_WEIGHT = 0.4
KEYFRAME_THRESHOLD = 1


@dataclass(frozen=True)
class EpisodeMeta:
    id: str
    title: str
    recorded_at: datetime
    location: str
    duration: int


@dataclass(frozen=True)
class Episode:
    meta: EpisodeMeta
    graphs: tuple[SceneGraph, ...]
    keyframes: tuple[int, ...]
    embedding: np.ndarray


def embed_graph(g: SceneGraph) -> np.ndarray:
    """256-bucket signed-hash embedding of the graph's labeled relation triples.

    Each non-Guidance triple hashes as "src|kind|tgt"; the hash picks the
    bucket (mod 256) and the top bit the sign. The result is L2-normalized;
    a graph with no such triples stays all-zero. Identical triple multisets
    embed bit-identically regardless of node ids.
    """
    vec = np.zeros(EMBEDDING_DIM, dtype=np.float64)
    for (src, kind, tgt), count in sorted(g.triples(include_guidance=False).items()):
        h = fnv1a64(f"{src}|{kind}|{tgt}".encode("utf-8"))
        sign = 1.0 if (h >> 63) == 0 else -1.0
        vec[h % EMBEDDING_DIM] += sign * count
    return normalize(vec)


def normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 0.0 else vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def extract_keyframes(graphs, threshold: int = KEYFRAME_THRESHOLD) -> list[int]:
    """Indices where physical interaction changed by at least ``threshold``.

    The first and last frame are always kept so the sequence stays
    reconstructable end to end.
    """
    if not graphs:
        raise ValueError("empty graph sequence")
    keep = [0]
    for i in range(1, len(graphs)):
        if diff_graphs(graphs[i - 1], graphs[i]).magnitude >= threshold:
            keep.append(i)
    last = len(graphs) - 1
    if keep[-1] != last:
        keep.append(last)
    return keep


def episode_embedding(graphs, keyframes) -> np.ndarray:
    total = np.zeros(EMBEDDING_DIM, dtype=np.float64)
    for i in keyframes:
        total += embed_graph(graphs[i])
    return normalize(total)


def _format_utc(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_utc(raw: str) -> datetime:
    return datetime.strptime(raw, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def _episode_id(title: str, location: str, recorded_at: datetime, encoded_graphs: list[bytes]) -> str:
    acc = fnv1a64(f"{title}\x1f{location}\x1f{_format_utc(recorded_at)}".encode("utf-8"))
    for blob in encoded_graphs:
        acc = fnv1a64(acc.to_bytes(8, "big") + blob)
    return f"ep{acc:016x}"


def _content_checksum(encoded_graphs) -> str:
    acc = fnv1a64(b"sgseq")
    for blob in encoded_graphs:
        acc = fnv1a64(acc.to_bytes(8, "big") + blob)
    return f"{acc:016x}"


def title_match(keywords, title: str) -> float:
    """Fraction of keywords present as words of the title, case-insensitive."""
    if not keywords:
        return 0.0
    words = {w.lower() for w in title.split()}
    return sum(1 for k in keywords if k.lower() in words) / len(keywords)


def score_episode(
    meta: EpisodeMeta,
    embedding: np.ndarray,
    keywords,
    context: SceneGraph | None,
    title_weight: float = DEFAULT_TITLE_WEIGHT,
    context_weight: float = DEFAULT_CONTEXT_WEIGHT,
) -> float:
    """Weighted retrieval score in [0, 1]; absent components renormalize.

    The cosine component is clamped at zero so signed-hash collisions can
    never drive a score negative.
    """
    parts: list[tuple[float, float]] = []
    if keywords:
        parts.append((title_weight, title_match(keywords, meta.title)))
    if context is not None:
        parts.append((context_weight, max(0.0, cosine(embed_graph(context), embedding))))
    if not parts:
        return 0.0
    total_weight = sum(w for w, _ in parts)
    return sum(w * v for w, v in parts) / total_weight


class MemoryStore:
    """File-backed episode store: `<root>/episodes/*.sgseq` plus `<root>/index.tsv`.

    Many readers, one writer; writes are serialized by a lock file next to
    the index and land via temp-file + rename so a crash never exposes a
    half-written episode or index.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.episodes_dir = self.root / "episodes"
        self.index_path = self.root / "index.tsv"
        self.episodes_dir.mkdir(parents=True, exist_ok=True)
        # the file lock fences other processes; it is reentrant within one
        # process, so same-process writers also serialize on a thread lock
        self._lock = FileLock(str(self.root / ".store.lock"))
        self._thread_lock = threading.Lock()
        self._entries: dict[str, tuple[EpisodeMeta, np.ndarray]] = {}
        if self.index_path.exists():
            self._entries = self._read_index()

    # -- index ---------------------------------------------------------

    def _read_index(self) -> dict[str, tuple[EpisodeMeta, np.ndarray]]:
        entries: dict[str, tuple[EpisodeMeta, np.ndarray]] = {}
        for line in self.index_path.read_text("utf-8").splitlines():
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise EpisodeIntegrityError(f"index row with {len(fields)} fields in {self.index_path}")
            ep_id, title, recorded_at, location, duration, emb = fields
            vec = np.array([float(x) for x in emb.split(" ")], dtype=np.float64)
            if vec.shape != (EMBEDDING_DIM,):
                raise EpisodeIntegrityError(f"bad embedding length for {ep_id} in {self.index_path}")
            meta = EpisodeMeta(ep_id, title, _parse_utc(recorded_at), location, int(duration))
            entries[ep_id] = (meta, vec)
        return entries

    def _index_row(self, meta: EpisodeMeta, vec: np.ndarray) -> str:
        emb = " ".join(repr(float(x)) for x in vec)
        return "\t".join(
            [meta.id, meta.title, _format_utc(meta.recorded_at), meta.location, str(meta.duration), emb]
        )

    def _write_index(self, entries: dict[str, tuple[EpisodeMeta, np.ndarray]]) -> None:
        rows = [self._index_row(meta, vec) for _, (meta, vec) in sorted(entries.items())]
        body = ("\n".join(rows) + "\n") if rows else ""
        tmp = self.index_path.with_suffix(".tsv.tmp")
        tmp.write_text(body, "utf-8")
        os.replace(tmp, self.index_path)

    def rebuild_index(self) -> None:
        """Regenerate index.tsv purely from the episode files on disk."""
        with self._thread_lock, self._lock:
            entries: dict[str, tuple[EpisodeMeta, np.ndarray]] = {}
            for path in sorted(self.episodes_dir.glob(f"*{EPISODE_SUFFIX}")):
                episode = self._load_file(path)
                entries[episode.meta.id] = (episode.meta, episode.embedding)
            self._entries = entries
            self._write_index(entries)

    # -- storage -------------------------------------------------------

    def store_episode(
        self,
        graphs,
        title: str,
        location: str,
        recorded_at: datetime,
    ) -> EpisodeMeta:
        """Persist a validated graph sequence as a new titled episode.

        The write is atomic: episode file first, index second, each via
        temp + rename, all under the store lock.
        """
        graphs = tuple(graphs)
        if not graphs:
            raise ValueError("episode needs at least one graph")
        if not title or any(c in title for c in "\t\n"):
            raise ValueError("title must be non-empty and free of tabs/newlines")
        if any(c in location for c in "\t\n"):
            raise ValueError("location must be free of tabs/newlines")
        for a, b in zip(graphs, graphs[1:]):
            if b.t <= a.t:
                raise ValueError(f"graph timesteps must strictly increase ({a.t} then {b.t})")
        encoded = [canonical_encode(ensure_valid(g)) for g in graphs]
        ep_id = _episode_id(title, location, recorded_at, encoded)
        keyframes = extract_keyframes(graphs)
        vec = episode_embedding(graphs, keyframes)
        meta = EpisodeMeta(ep_id, title, recorded_at, location, len(graphs))
        with self._thread_lock, self._lock:
            if ep_id in self._entries or self._path_for(ep_id).exists():
                raise DuplicateEpisodeError(f"episode {ep_id} already stored")
            header = {
                "id": ep_id,
                "title": title,
                "recorded_at": _format_utc(recorded_at),
                "location": location,
                "duration": len(graphs),
                "keyframes": list(keyframes),
                "checksum": _content_checksum(encoded),
            }
            lines = [json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False)]
            lines.extend(blob.decode("utf-8") for blob in encoded)
            body = "\n".join(lines) + "\n"
            path = self._path_for(ep_id)
            tmp = path.with_suffix(EPISODE_SUFFIX + ".tmp")
            try:
                tmp.write_text(body, "utf-8")
                os.replace(tmp, path)
                entries = dict(self._entries)
                entries[ep_id] = (meta, vec)
                self._write_index(entries)
            except OSError:
                tmp.unlink(missing_ok=True)
                raise
            self._entries = entries
        return meta

    def _path_for(self, ep_id: str) -> Path:
        return self.episodes_dir / f"{ep_id}{EPISODE_SUFFIX}"

    def _load_file(self, path: Path) -> Episode:
        try:
            text = path.read_text("utf-8")
        except OSError as exc:
            raise EpisodeIntegrityError(f"cannot read episode file {path}: {exc}") from exc
        lines = text.splitlines()
        if not lines:
            raise EpisodeIntegrityError(f"episode file {path} is empty")
        try:
            header = json.loads(lines[0])
            meta = EpisodeMeta(
                header["id"],
                header["title"],
                _parse_utc(header["recorded_at"]),
                header["location"],
                int(header["duration"]),
            )
            keyframes = tuple(int(i) for i in header["keyframes"])
        except (ValueError, KeyError, TypeError) as exc:
            raise EpisodeIntegrityError(f"bad episode header in {path}: {exc}") from exc
        graph_lines = [line for line in lines[1:] if line.strip()]
        stored_checksum = header.get("checksum")
        actual = _content_checksum(line.encode("utf-8") for line in graph_lines)
        if stored_checksum != actual:
            raise EpisodeIntegrityError(
                f"episode file {path} failed its content checksum ({actual} != {stored_checksum})"
            )
        try:
            graphs = tuple(canonical_decode(line) for line in graph_lines)
        except RecallGraphError as exc:
            raise EpisodeIntegrityError(f"corrupt graph in {path}: {exc}") from exc
        if len(graphs) != meta.duration:
            raise EpisodeIntegrityError(
                f"episode file {path} holds {len(graphs)} graphs, header says {meta.duration}"
            )
        if any(k < 0 or k >= len(graphs) for k in keyframes):
            raise EpisodeIntegrityError(f"keyframe index out of range in {path}")
        return Episode(meta, graphs, keyframes, episode_embedding(graphs, keyframes))

    def load_into_working_memory(self, ep_id: str) -> Episode:
        """Materialize the full validated graph sequence for one episode."""
        if ep_id not in self._entries:
            raise UnknownEpisodeError(f"no episode with id {ep_id!r}")
        return self._load_file(self._path_for(ep_id))

    # -- retrieval -----------------------------------------------------

    def metas(self) -> list[EpisodeMeta]:
        return [meta for meta, _ in (self._entries[k] for k in sorted(self._entries))]

    def __len__(self) -> int:
        return len(self._entries)

    def retrieve(
        self,
        location: str | None = None,
        keywords: list[str] | None = None,
        context: SceneGraph | None = None,
        k: int = 5,
    ) -> list[tuple[EpisodeMeta, float]]:
        """Exact top-k scan: filter by location, score, sort, slice.

        Ties break by recency (newer first) then id.
        """
        if location is None and not keywords and context is None:
            raise ValueError("query needs at least one of location, keywords, context")
        if k <= 0 or not self._entries:
            return []
        candidates = [
            (meta, vec)
            for meta, vec in self._entries.values()
            if location is None or meta.location == location
        ]
        scored = [
            (meta, score_episode(meta, vec, keywords, context))
            for meta, vec in candidates
        ]
        scored.sort(key=lambda pair: (-pair[1], pair[0].recorded_at.timestamp() * -1, pair[0].id))
        return scored[:k]


def resolve_data_root(explicit: str | None = None) -> Path:
    """Storage root: explicit flag, then RECALLGRAPH_DATA, then ./recallgraph_data."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(DATA_ENV_VAR)
    if env:
        return Path(env)
    return Path.cwd() / "recallgraph_data"
