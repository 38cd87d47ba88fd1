"""Answer ranking by cosine similarity between a generated answer and each candidate."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Protocol, Sequence

import numpy as np
import requests

from ..data.batching import pad_ids
from ..data.vocab import UNK, Vocabulary, tokenize
from ..errors import ProviderError
from ..generator import ToyLM
from ..numerics import no_grad
from .retrieval import RankedCandidates, order_by_scores

log = logging.getLogger(__name__)


class EmbeddingProvider(Protocol):
    kind: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """(len(texts), dim) unit-norm rows."""
        ...


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


class BuiltinEmbedder:
    """Mean-pooled toy-LM encoder states over the text's tokens, L2-normalised.

    Texts longer than the encoder's maximum length are truncated; empty texts
    embed as a single unknown token.
    """

    kind = "builtin"

    def __init__(self, lm: ToyLM, vocab: Vocabulary, batch_size: int = 64):
        self.lm = lm
        self.vocab = vocab
        self.dim = lm.dim
        self.batch_size = batch_size

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = []
        for lo in range(0, len(texts), self.batch_size):
            rows = [tokenize(t, self.vocab)[: self.lm.max_enc_len] or [UNK] for t in texts[lo : lo + self.batch_size]]
            ids, valid = pad_ids(rows)
            with no_grad():
                states = self.lm.embed_text(ids, valid).data.astype(np.float64)
            w = valid[..., None].astype(np.float64)
            out.append((states * w).sum(axis=1) / w.sum(axis=1))
        if not out:
            return np.zeros((0, self.dim))
        return normalize_rows(np.concatenate(out))


class RemoteEmbedder:
    """HTTP provider: POST {url}/embed with {"texts": [...]} → {"embeddings": [[...]], "dim": d}."""

    kind = "remote"

    def __init__(
        self,
        url: str,
        batch_size: int = 32,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        self.url = url.rstrip("/") + "/embed"
        self.batch_size = batch_size
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.max_in_flight = max_in_flight
        self.session = session or requests.Session()
        self.dim = 0

    def _post(self, index: int, texts: list[str]) -> np.ndarray:
        last = "no attempt made"
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.post(self.url, json={"texts": texts}, timeout=self.timeout)
                resp.raise_for_status()
                body = resp.json()
                emb = np.asarray(body["embeddings"], dtype=np.float64)
                if emb.ndim != 2 or emb.shape[0] != len(texts):
                    raise ValueError(f"expected {len(texts)} embeddings, got shape {emb.shape}")
                if "dim" in body and int(body["dim"]) != emb.shape[1]:
                    raise ValueError(f"dim {body['dim']} disagrees with vectors of width {emb.shape[1]}")
                return emb
            except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("embedding batch %d attempt %d failed: %s", index, attempt + 1, last)
        raise ProviderError(f"embedding provider {self.url} failed on batch {index} ({len(texts)} texts): {last}")

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        chunks = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        if not chunks:
            return np.zeros((0, self.dim))
        with ThreadPoolExecutor(max_workers=max(1, self.max_in_flight)) as pool:
            parts = list(pool.map(self._post, range(len(chunks)), chunks))
        emb = np.concatenate(parts)
        self.dim = emb.shape[1]
        return normalize_rows(emb)


def rank_candidates(
    generated: str,
    candidates: Sequence[str],
    provider: EmbeddingProvider,
    gt_index: int = 0,
    relevance: Sequence[float] | None = None,
) -> RankedCandidates:
    """Order candidates by cosine similarity to the generated answer (ties: lower index first)."""
    if not candidates:
        raise ValueError("no candidates to rank")
    emb = normalize_rows(provider.embed([generated, *candidates]))
    scores = np.clip(emb[1:] @ emb[0], -1.0, 1.0)
    return RankedCandidates(order_by_scores(scores), scores, gt_index, relevance)
