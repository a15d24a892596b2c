"""Condition construction: fused text/identity/audio embeddings.

Encoders are pluggable clients. The mock backends are deterministic and
hermetic (hash-seeded); an HTTP adapter exists for hosted embedding services
but tests never touch the network. Fused layout is fixed by modality:
per-frame [text, identity, audio[n]] regardless of client registration order.
"""

from __future__ import annotations

import hashlib
import json
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError

D_TEXT_DEFAULT = 32
D_IDENTITY_DEFAULT = 16
D_AUDIO_DEFAULT = 16

MODALITIES = ("text", "identity", "audio")


@dataclass
class ConditionVector:
    """Per-video condition: text and identity are global, audio is per-frame."""

    text_emb: np.ndarray  # (d_T,)
    identity_emb: np.ndarray  # (d_I,)
    audio_emb: np.ndarray  # (N, d_A)

    def __post_init__(self):
        self.text_emb = np.asarray(self.text_emb, dtype=np.float32)
        self.identity_emb = np.asarray(self.identity_emb, dtype=np.float32)
        self.audio_emb = np.asarray(self.audio_emb, dtype=np.float32)
        if self.text_emb.ndim != 1 or self.identity_emb.ndim != 1 or self.audio_emb.ndim != 2:
            raise ShapeError(
                "expected text (d_T,), identity (d_I,), audio (N, d_A); got "
                f"{self.text_emb.shape}, {self.identity_emb.shape}, {self.audio_emb.shape}"
            )
        for name, arr in (("text", self.text_emb), ("identity", self.identity_emb), ("audio", self.audio_emb)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name} embedding")

    @property
    def num_frames(self):
        return self.audio_emb.shape[0]

    @property
    def fused_dim(self):
        return self.text_emb.shape[0] + self.identity_emb.shape[0] + self.audio_emb.shape[1]

    def fused(self) -> np.ndarray:
        """(N, d_T + d_I + d_A) per-frame concatenation, order text/identity/audio."""
        n = self.num_frames
        text = np.broadcast_to(self.text_emb, (n, self.text_emb.shape[0]))
        ident = np.broadcast_to(self.identity_emb, (n, self.identity_emb.shape[0]))
        return np.concatenate([text, ident, self.audio_emb], axis=1).astype(np.float32)


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"cosine inputs differ in shape: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


class MockTextEncoder:
    """Hash-seeded unit vectors: deterministic, but nearby strings share no
    structure (a documented limitation of the mock)."""

    modality = "text"

    def __init__(self, dim: int = D_TEXT_DEFAULT):
        self.name = "mock-text"
        self.dim = dim

    def encode(self, text: str) -> np.ndarray:
        if not isinstance(text, str) or not text.strip():
            raise DataError("text to encode must be a nonempty string")
        normalized = " ".join(text.lower().split())
        rng = np.random.default_rng(_stable_seed("mock-text", normalized))
        v = rng.standard_normal(self.dim)
        norm = np.linalg.norm(v)
        return (v / max(norm, 1e-12)).astype(np.float32)


class MockImageEncoder:
    """Channel means plus 4x4 pooled intensities, through a fixed projection."""

    modality = "identity"

    def __init__(self, dim: int = D_IDENTITY_DEFAULT):
        self.name = "mock-image"
        self.dim = dim
        rng = np.random.default_rng(_stable_seed("mock-image-proj", dim))
        self._proj = rng.standard_normal((19, dim)) / np.sqrt(19.0)

    def encode(self, frame) -> np.ndarray:
        pixels = np.asarray(getattr(frame, "pixels", frame), dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[0] != 3:
            raise ShapeError(f"expected (3, H, W) pixels, got {pixels.shape}")
        h, w = pixels.shape[1:]
        if h % 4 or w % 4:
            raise ShapeError(f"image sides must be divisible by 4, got {h}x{w}")
        gray = pixels.mean(axis=0)
        pooled = gray.reshape(4, h // 4, 4, w // 4).mean(axis=(1, 3)).ravel()
        feats = np.concatenate([pixels.mean(axis=(1, 2)), pooled])
        return (feats @ self._proj).astype(np.float32)


class MockAudioEncoder:
    """Fixed seeded linear projection from raw per-frame features."""

    modality = "audio"

    def __init__(self, dim: int = D_AUDIO_DEFAULT):
        self.name = "mock-audio"
        self.dim = dim
        self._proj_cache = {}

    def _proj(self, d_raw: int) -> np.ndarray:
        if d_raw not in self._proj_cache:
            rng = np.random.default_rng(_stable_seed("mock-audio-proj", d_raw, self.dim))
            self._proj_cache[d_raw] = rng.standard_normal((d_raw, self.dim)) / np.sqrt(d_raw)
        return self._proj_cache[d_raw]

    def encode(self, audio: np.ndarray) -> np.ndarray:
        audio = np.asarray(audio, dtype=np.float64)
        if audio.ndim != 2:
            raise ShapeError(f"expected (N, d_raw) audio features, got {audio.shape}")
        return (audio @ self._proj(audio.shape[1])).astype(np.float32)


class HttpEncoderClient:
    """Adapter for a hosted embedding service; never used by tests directly.

    POSTs {"input": ...} as JSON and expects {"embedding": [...]} back.
    """

    def __init__(self, modality: str, endpoint: str, dim: int, timeout: float = 10.0):
        if modality not in MODALITIES:
            raise ConfigError(f"unknown modality {modality!r}")
        self.modality = modality
        self.name = f"http-{modality}"
        self.endpoint = endpoint
        self.dim = dim
        self.timeout = timeout

    def _post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode()
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode())

    def encode(self, raw) -> np.ndarray:
        if isinstance(raw, np.ndarray):
            payload = {"input": raw.tolist()}
        elif hasattr(raw, "pixels"):
            payload = {"input": np.asarray(raw.pixels).tolist()}
        else:
            payload = {"input": raw}
        out = np.asarray(self._post(payload)["embedding"], dtype=np.float32)
        if out.shape[-1] != self.dim:
            raise DataError(
                f"endpoint returned dim {out.shape[-1]}, client declared {self.dim}"
            )
        return out


def clients_from_config(blocks: list[dict]) -> dict:
    """Build {modality: client} from config blocks
    {modality, backend: mock|http, endpoint?, dim}."""
    mocks = {"text": MockTextEncoder, "identity": MockImageEncoder, "audio": MockAudioEncoder}
    clients = {}
    for block in blocks:
        modality = block.get("modality")
        if modality not in MODALITIES:
            raise ConfigError(f"unknown modality {modality!r} in client config")
        backend = block.get("backend", "mock")
        dim = int(block.get("dim", {"text": D_TEXT_DEFAULT, "identity": D_IDENTITY_DEFAULT, "audio": D_AUDIO_DEFAULT}[modality]))
        if backend == "mock":
            clients[modality] = mocks[modality](dim=dim)
        elif backend == "http":
            endpoint = block.get("endpoint")
            if not endpoint:
                raise ConfigError(f"http backend for {modality!r} requires an endpoint")
            clients[modality] = HttpEncoderClient(modality, endpoint, dim)
        else:
            raise ConfigError(f"unknown backend {backend!r}")
    return clients


def default_clients() -> dict:
    return {
        "text": MockTextEncoder(),
        "identity": MockImageEncoder(),
        "audio": MockAudioEncoder(),
    }


def build_condition(text: str, identity, audio: np.ndarray, clients: dict) -> ConditionVector:
    """Encode all three modalities and assemble the condition vector."""
    missing = [m for m in MODALITIES if m not in clients]
    if missing:
        raise ConfigError(f"missing encoder clients for: {', '.join(missing)}")
    return ConditionVector(
        text_emb=clients["text"].encode(text),
        identity_emb=clients["identity"].encode(identity),
        audio_emb=clients["audio"].encode(audio),
    )
