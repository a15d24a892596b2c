"""Emotion-text annotation pipeline.

Per video: threshold AU intensities into activations with three-level labels,
have an LLM client phrase candidate sentences that mention the emotion and
every activated AU, rank candidates by cosine similarity between their text
embedding and the mean frame embedding, keep the top five, and sample one of
the five per training iteration.

The LLM and the text/image embedders are pluggable; the bundled backends are
deterministic templates and hash-seeded encoders, so re-running the pipeline
on the same corpus and config is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditioning import MockImageEncoder, MockTextEncoder, cosine_similarity
from .errors import ConfigError, DataError, PipelineError

INTENSITY_MIN, INTENSITY_MAX = 0.0, 5.0
DEFAULT_THRESHOLD = 0.5
DEFAULT_LEVEL_BOUNDS = (1.5, 3.0)
NUM_RETAINED = 5

# The 17 action units with continuous intensity estimates, with the phrase
# each contributes to a generated sentence.
AU_REGISTRY = {
    "AU01": "raised inner brow",
    "AU02": "raised outer brow",
    "AU04": "lowered brow",
    "AU05": "raised upper lid",
    "AU06": "raised cheeks",
    "AU07": "tightened lids",
    "AU09": "wrinkled nose",
    "AU10": "raised upper lip",
    "AU12": "pulled lip corners",
    "AU14": "dimpled cheeks",
    "AU15": "depressed lip corners",
    "AU17": "raised chin",
    "AU20": "stretched lips",
    "AU23": "tightened lips",
    "AU25": "parted lips",
    "AU26": "dropped jaw",
    "AU45": "closing eyes",
}
AU_IDS = tuple(AU_REGISTRY)

LEVEL_ADJECTIVES = {1: "slightly", 2: "moderately", 3: "strongly"}

EMOTION_SYNONYMS = {
    "angry": ("angry", "furious", "irritated"),
    "contempt": ("contemptuous", "scornful", "disdainful"),
    "disgusted": ("disgusted", "revolted", "grossed-out"),
    "fear": ("fearful", "frightened", "terrified"),
    "happy": ("happy", "joyful", "cheerful"),
    "neutral": ("neutral", "calm", "composed"),
    "sad": ("sad", "sorrowful", "downcast"),
    "surprised": ("surprised", "astonished", "startled"),
}

_TEMPLATES = (
    "A {emotion} face with {aus}.",
    "The speaker looks {emotion}, showing {aus}.",
    "An expression of {emotion} feeling, marked by {aus}.",
    "This person appears {emotion}; their face has {aus}.",
    "{emotion} in expression, with {aus} visible.",
    "A clearly {emotion} look featuring {aus}.",
    "The face reads as {emotion} and displays {aus}.",
    "Someone {emotion}, whose face carries {aus}.",
    "With {aus}, the overall expression is {emotion}.",
    "A portrait of a {emotion} person exhibiting {aus}.",
)

_TEMPLATES_NO_AU = (
    "A {emotion} face.",
    "The speaker looks {emotion}.",
    "An expression of {emotion} feeling.",
    "This person appears {emotion}.",
    "A {emotion} expression overall.",
    "A clearly {emotion} look.",
    "The face reads as {emotion}.",
    "Someone looking {emotion}.",
    "The overall expression is {emotion}.",
    "A portrait of a {emotion} person.",
)


@dataclass
class AUAnnotation:
    au_id: str
    activated: bool
    level: int | None = None

    def __post_init__(self):
        if self.au_id not in AU_REGISTRY:
            raise DataError(f"unknown action unit {self.au_id!r}")
        if self.activated and self.level not in (1, 2, 3):
            raise DataError(f"activated {self.au_id} needs a level in {{1,2,3}}, got {self.level}")
        if not self.activated and self.level is not None:
            raise DataError(f"inactivated {self.au_id} must not carry a level")

    def phrase(self) -> str:
        return f"{LEVEL_ADJECTIVES[self.level]} {AU_REGISTRY[self.au_id]}"


@dataclass
class EmotionTextRecord:
    video_id: str
    emotion_class: str
    au_annotations: list
    candidates: list  # exactly five (sentence, score) pairs, score descending

    def __post_init__(self):
        if len(self.candidates) != NUM_RETAINED:
            raise DataError(f"expected exactly {NUM_RETAINED} candidates, got {len(self.candidates)}")
        scores = [s for _, s in self.candidates]
        if any(s1 < s2 for s1, s2 in zip(scores, scores[1:])):
            raise DataError("candidate scores must be sorted descending")
        if any(not -1.0 <= s <= 1.0 for s in scores):
            raise DataError("similarity scores must lie in [-1, 1]")

    def to_dict(self):
        return {
            "video_id": self.video_id,
            "emotion_class": self.emotion_class,
            "au_annotations": [
                {"au_id": a.au_id, "activated": a.activated, "level": a.level}
                for a in self.au_annotations
            ],
            "candidates": [[s, float(score)] for s, score in self.candidates],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            video_id=d["video_id"],
            emotion_class=d["emotion_class"],
            au_annotations=[
                AUAnnotation(a["au_id"], a["activated"], a.get("level")) for a in d["au_annotations"]
            ],
            candidates=[(s, float(score)) for s, score in d["candidates"]],
        )


def activate_and_level(
    intensities,
    threshold: float = DEFAULT_THRESHOLD,
    level_bounds: tuple = DEFAULT_LEVEL_BOUNDS,
) -> list:
    """Threshold per-AU intensities; strict inequality activates.

    Activated intensities bin into level 1 (<= bounds[0]), level 2
    (<= bounds[1]), else level 3.
    """
    lo, hi = level_bounds
    if not (threshold < lo < hi):
        raise ConfigError(f"level bounds must satisfy threshold < lo < hi, got {threshold}, {lo}, {hi}")
    intensities = np.asarray(intensities, dtype=np.float64)
    if intensities.shape != (len(AU_IDS),):
        raise DataError(f"expected {len(AU_IDS)} intensities, got shape {intensities.shape}")
    if np.any(intensities < INTENSITY_MIN) or np.any(intensities > INTENSITY_MAX):
        raise DataError("AU intensities must lie in [0, 5]")
    annotations = []
    for au_id, value in zip(AU_IDS, intensities):
        if value <= threshold:
            annotations.append(AUAnnotation(au_id, activated=False))
        elif value <= lo:
            annotations.append(AUAnnotation(au_id, activated=True, level=1))
        elif value <= hi:
            annotations.append(AUAnnotation(au_id, activated=True, level=2))
        else:
            annotations.append(AUAnnotation(au_id, activated=True, level=3))
    return annotations


class TemplateLLM:
    """Deterministic stand-in for a hosted language model: fills sentence
    templates with an emotion synonym and the activated AU phrases."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def generate(self, emotion_class: str, annotations: list, k: int) -> list:
        synonyms = EMOTION_SYNONYMS.get(emotion_class)
        if synonyms is None:
            raise DataError(f"unknown emotion class {emotion_class!r}")
        active = [a for a in annotations if a.activated]
        templates = _TEMPLATES if active else _TEMPLATES_NO_AU
        max_k = len(templates) * len(synonyms)
        if k > max_k:
            raise ConfigError(f"template backend supports at most {max_k} candidates, got k={k}")
        rng = np.random.default_rng([self.seed, len(active), k])
        order = rng.permutation(len(templates))
        aus = ", ".join(a.phrase() for a in active)
        sentences = []
        for i in range(k):
            template = templates[order[i % len(templates)]]
            synonym = synonyms[(i // len(templates)) % len(synonyms)]
            sentences.append(template.format(emotion=synonym, aus=aus))
        return sentences


def generate_candidates(emotion_class: str, annotations: list, llm, k: int = 8) -> list:
    """k candidate sentences via the LLM client; failures surface as retriable
    pipeline errors so the batch runner can skip and report the video."""
    if k < NUM_RETAINED:
        raise ConfigError(f"k must be >= {NUM_RETAINED}, got {k}")
    if llm is None:
        raise ConfigError("no LLM client registered")
    try:
        sentences = llm.generate(emotion_class, annotations, k)
    except (ConfigError, DataError):
        raise
    except Exception as exc:
        raise PipelineError(f"candidate generation failed: {exc}", retriable=True) from exc
    if len(sentences) != k:
        raise PipelineError(f"LLM returned {len(sentences)} sentences, expected {k}", retriable=True)
    return sentences


def mean_frame_embedding(frames: list, image_encoder) -> np.ndarray:
    if not frames:
        raise DataError("need at least one frame to embed")
    embs = [np.asarray(image_encoder.encode(f), dtype=np.float64) for f in frames]
    return np.mean(embs, axis=0)


def rank_and_filter(candidates: list, frames: list, text_encoder, image_encoder) -> list:
    """Score candidates against the mean frame embedding, keep the top five.

    Sorted by descending similarity; ties break lexicographically by sentence.
    """
    if len(candidates) < NUM_RETAINED:
        raise DataError(f"need at least {NUM_RETAINED} candidates, got {len(candidates)}")
    try:
        frame_emb = mean_frame_embedding(frames, image_encoder)
        scored = [
            (sentence, cosine_similarity(text_encoder.encode(sentence), frame_emb))
            for sentence in candidates
        ]
    except (ConfigError, DataError):
        raise
    except Exception as exc:
        raise PipelineError(f"embedding failed: {exc}", retriable=True) from exc
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:NUM_RETAINED]


def sample_training_text(record: EmotionTextRecord, rng) -> str:
    """Uniform pick among the five retained candidates."""
    idx = int(rng.integers(0, NUM_RETAINED))
    return record.candidates[idx][0]


# --- mock AU backend --------------------------------------------------------

# Characteristic action units per emotion class, used by the mock intensity
# backend in place of a detector.
_CLASS_AUS = {
    "angry": ("AU04", "AU07", "AU23"),
    "contempt": ("AU12", "AU14"),
    "disgusted": ("AU09", "AU10", "AU17"),
    "fear": ("AU01", "AU02", "AU05", "AU20"),
    "happy": ("AU06", "AU12", "AU25"),
    "neutral": (),
    "sad": ("AU01", "AU04", "AU15"),
    "surprised": ("AU01", "AU02", "AU26"),
}


def mock_au_intensities(emotion_class: str, coeffs: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic per-video AU intensities on the 0-5 scale.

    Class-characteristic AUs get strong values modulated by the coefficient
    magnitude; the rest stay near zero.
    """
    if emotion_class not in _CLASS_AUS:
        raise DataError(f"unknown emotion class {emotion_class!r}")
    rng = np.random.default_rng([int(seed), 17])
    base = rng.uniform(0.0, 0.4, size=len(AU_IDS))
    strength = float(np.clip(np.abs(coeffs).mean() * 2.0, 0.8, 2.0))
    for au in _CLASS_AUS[emotion_class]:
        base[AU_IDS.index(au)] = rng.uniform(1.0, 2.2) * strength
    return np.clip(base, INTENSITY_MIN, INTENSITY_MAX)


# --- batch pipeline ---------------------------------------------------------

def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def load_au_intensities(video_dir: Path) -> np.ndarray:
    aus_path = Path(video_dir) / "aus.json"
    if not aus_path.exists():
        raise DataError(f"missing aus.json under {video_dir}")
    data = json.loads(aus_path.read_text())
    try:
        return np.asarray([data["intensities"][au] for au in AU_IDS], dtype=np.float64)
    except KeyError as exc:
        raise DataError(f"aus.json under {video_dir} misses {exc}") from exc


def write_au_intensities(video_dir: Path, intensities: np.ndarray) -> None:
    payload = {"intensities": {au: float(v) for au, v in zip(AU_IDS, intensities)}}
    _atomic_write_text(Path(video_dir) / "aus.json", json.dumps(payload, sort_keys=True))


def annotate_corpus(
    corpus_dir,
    out_dir,
    threshold: float = DEFAULT_THRESHOLD,
    level_bounds: tuple = DEFAULT_LEVEL_BOUNDS,
    num_candidates: int = 8,
    seed: int = 0,
    llm=None,
    text_encoder=None,
    image_encoder=None,
) -> dict:
    """Annotate every corpus video; per-video failures are recorded, not fatal.

    Writes records/<video_id>.json plus summary.json, atomically. Returns the
    summary dict.
    """
    from .coeffspace import load_corpus

    corpus_dir = Path(corpus_dir)
    out_dir = Path(out_dir)
    records_dir = out_dir / "records"
    records_dir.mkdir(parents=True, exist_ok=True)

    llm = llm if llm is not None else TemplateLLM(seed=seed)
    text_encoder = text_encoder if text_encoder is not None else MockTextEncoder()
    image_encoder = image_encoder if image_encoder is not None else MockImageEncoder()

    videos = load_corpus(corpus_dir, load_frames=True)
    written, failures = [], []
    for video in videos:
        vid = video.video_id
        try:
            intensities = load_au_intensities(corpus_dir / vid)
            annotations = activate_and_level(intensities, threshold, level_bounds)
            candidates = generate_candidates(video.emotion_class, annotations, llm, num_candidates)
            retained = rank_and_filter(candidates, video.frames, text_encoder, image_encoder)
            record = EmotionTextRecord(
                video_id=vid,
                emotion_class=video.emotion_class,
                au_annotations=annotations,
                candidates=retained,
            )
            _atomic_write_text(
                records_dir / f"{vid}.json", json.dumps(record.to_dict(), sort_keys=True)
            )
            written.append(vid)
        except PipelineError as exc:
            failures.append({"video_id": vid, "error": str(exc), "retriable": exc.retriable})
        except DataError as exc:
            failures.append({"video_id": vid, "error": str(exc), "retriable": False})
    summary = {
        "num_videos": len(videos),
        "num_written": len(written),
        "written": written,
        "failures": failures,
        "config": {
            "threshold": threshold,
            "level_bounds": list(level_bounds),
            "num_candidates": num_candidates,
            "seed": seed,
        },
    }
    _atomic_write_text(out_dir / "summary.json", json.dumps(summary, sort_keys=True))
    return summary


def load_records(records_dir) -> dict:
    records_dir = Path(records_dir)
    if (records_dir / "records").is_dir():
        records_dir = records_dir / "records"
    records = {}
    for path in sorted(records_dir.glob("*.json")):
        record = EmotionTextRecord.from_dict(json.loads(path.read_text()))
        records[record.video_id] = record
    if not records:
        raise DataError(f"no annotation records under {records_dir}")
    return records
