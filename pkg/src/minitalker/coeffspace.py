"""Expression-coefficient sequences and the procedural synthetic face corpus.

A desk-scale stand-in for real talking-face footage: coefficient rows drive a
deterministic cartoon-face renderer whose landmarks are analytic outputs (no
detector). The renderer is ground truth only; nothing ever backpropagates
through it.
"""

from __future__ import annotations

import colorsys
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, ShapeError

D_EXP_DEFAULT = 64
AUDIO_DIM = 16
DEFAULT_FPS = 25.0
SUPPORTED_RESOLUTIONS = (32, 64, 128, 256)

EMOTION_CLASSES = (
    "angry",
    "contempt",
    "disgusted",
    "fear",
    "happy",
    "neutral",
    "sad",
    "surprised",
)

# Palette table indexed by art_palette_id (modulo). Palette 0 is the "real
# footage" look; the others act as art-style targets.
PALETTES = (
    {
        "name": "plain",
        "bg": (0.93, 0.93, 0.90),
        "skin": (0.87, 0.70, 0.58),
        "line": (0.12, 0.10, 0.10),
        "lip": (0.65, 0.30, 0.30),
        "iris": (0.25, 0.35, 0.55),
        "sclera": (0.98, 0.98, 0.97),
    },
    {
        "name": "comic",
        "bg": (1.00, 0.85, 0.45),
        "skin": (0.98, 0.80, 0.55),
        "line": (0.05, 0.05, 0.15),
        "lip": (0.85, 0.15, 0.25),
        "iris": (0.10, 0.60, 0.45),
        "sclera": (1.00, 1.00, 1.00),
    },
    {
        "name": "pastel",
        "bg": (0.75, 0.85, 0.95),
        "skin": (0.95, 0.85, 0.80),
        "line": (0.35, 0.30, 0.40),
        "lip": (0.80, 0.50, 0.60),
        "iris": (0.45, 0.40, 0.70),
        "sclera": (0.99, 0.97, 0.97),
    },
    {
        "name": "noir",
        "bg": (0.15, 0.15, 0.18),
        "skin": (0.55, 0.52, 0.50),
        "line": (0.02, 0.02, 0.02),
        "lip": (0.35, 0.20, 0.22),
        "iris": (0.20, 0.20, 0.20),
        "sclera": (0.85, 0.85, 0.88),
    },
)

LANDMARK_NAMES = (
    "mouth_left",
    "mouth_right",
    "lip_top_mid",
    "lip_bottom_mid",
    "lip_top_left",
    "lip_bottom_left",
    "brow_left_inner",
    "brow_left_outer",
    "brow_right_inner",
    "brow_right_outer",
    "eye_left_outer",
    "eye_left_inner",
    "eye_right_inner",
    "eye_right_outer",
    "eye_left_top",
    "eye_left_bottom",
    "eye_right_top",
    "eye_right_bottom",
)
NUM_LANDMARKS = len(LANDMARK_NAMES)
# The six mouth points used for mouth-only landmark metrics.
MOUTH_LANDMARK_IDX = (0, 1, 2, 3, 4, 5)


@dataclass
class ExpressionSequence:
    """N x D_exp face-motion coefficients for one video."""

    values: np.ndarray
    fps: float
    video_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ShapeError(f"expected (N>=1, D) coefficients, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"non-finite coefficients in {self.video_id!r}")
        if self.fps <= 0:
            raise DataError(f"fps must be positive, got {self.fps}")

    @property
    def num_frames(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass
class SynthFaceParams:
    """Low-dimensional knobs of the procedural face renderer."""

    mouth_open: float
    brow_raise: float
    eye_open: float
    identity_hue: float
    art_palette_id: int

    def __post_init__(self):
        if not (0.0 <= self.mouth_open <= 1.0):
            raise DataError(f"mouth_open outside [0,1]: {self.mouth_open}")
        if not (-1.0 <= self.brow_raise <= 1.0):
            raise DataError(f"brow_raise outside [-1,1]: {self.brow_raise}")
        if not (0.0 <= self.eye_open <= 1.0):
            raise DataError(f"eye_open outside [0,1]: {self.eye_open}")
        if not (0.0 <= self.identity_hue <= 1.0):
            raise DataError(f"identity_hue outside [0,1]: {self.identity_hue}")


@dataclass
class Frame:
    """A rendered image plus its analytic landmark set."""

    pixels: np.ndarray  # (3, H, W) in [0,1]
    landmarks: np.ndarray  # (NUM_LANDMARKS, 2) as (x, y) pixel coordinates

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        self.landmarks = np.asarray(self.landmarks, dtype=np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ShapeError(f"expected (3, H, W) pixels, got {self.pixels.shape}")
        h, w = self.pixels.shape[1:]
        if h & (h - 1) or w & (w - 1) or h == 0 or w == 0:
            raise ShapeError(f"H and W must be powers of two, got {h}x{w}")
        if self.landmarks.shape != (NUM_LANDMARKS, 2):
            raise ShapeError(f"expected ({NUM_LANDMARKS}, 2) landmarks, got {self.landmarks.shape}")
        if (
            self.landmarks[:, 0].min() < 0
            or self.landmarks[:, 0].max() > w - 1
            or self.landmarks[:, 1].min() < 0
            or self.landmarks[:, 1].max() > h - 1
        ):
            raise DataError("landmarks outside image bounds")

    @property
    def resolution(self):
        return self.pixels.shape[1]


@dataclass
class CorpusVideo:
    """One synthetic video: coefficients, pseudo-audio, class label, frames."""

    sequence: ExpressionSequence
    audio: np.ndarray  # (N, AUDIO_DIM) float32
    emotion_class: str
    frames: list = field(default_factory=list)
    identity_hue: float = 0.5

    @property
    def video_id(self):
        return self.sequence.video_id


def landmark_positions(params: SynthFaceParams, resolution: int) -> np.ndarray:
    """Analytic landmark coordinates for the given face parameters.

    The mouth is an ellipse of half-width 0.17R and half-height
    mouth_open*0.09R; its six landmarks sit at parametric angles
    180/0/270/90/210/150 degrees. Brow inner points rise with brow_raise,
    eye top/bottom points open with eye_open.
    """
    r = float(resolution)
    cx = 0.5 * r
    my = 0.72 * r
    mw = 0.17 * r
    mh = params.mouth_open * 0.09 * r

    ey = 0.40 * r
    ex_l, ex_r = 0.33 * r, 0.67 * r
    ew = 0.07 * r
    eh = params.eye_open * 0.045 * r

    by = 0.30 * r - params.brow_raise * 0.04 * r
    by_inner = by - params.brow_raise * 0.03 * r
    bw = 0.07 * r

    s30 = 0.5
    c30 = np.sqrt(3.0) / 2.0
    pts = [
        (cx - mw, my),  # mouth_left
        (cx + mw, my),  # mouth_right
        (cx, my - mh),  # lip_top_mid
        (cx, my + mh),  # lip_bottom_mid
        (cx - mw * c30, my - mh * s30),  # lip_top_left
        (cx - mw * c30, my + mh * s30),  # lip_bottom_left
        (ex_l + bw, by_inner),  # brow_left_inner
        (ex_l - bw, by),  # brow_left_outer
        (ex_r - bw, by_inner),  # brow_right_inner
        (ex_r + bw, by),  # brow_right_outer
        (ex_l - ew, ey),  # eye_left_outer
        (ex_l + ew, ey),  # eye_left_inner
        (ex_r - ew, ey),  # eye_right_inner
        (ex_r + ew, ey),  # eye_right_outer
        (ex_l, ey - eh),  # eye_left_top
        (ex_l, ey + eh),  # eye_left_bottom
        (ex_r, ey - eh),  # eye_right_top
        (ex_r, ey + eh),  # eye_right_bottom
    ]
    return np.asarray(pts, dtype=np.float32)


def _shift_hue(rgb, amount):
    h, s, v = colorsys.rgb_to_hsv(*rgb)
    return colorsys.hsv_to_rgb((h + amount) % 1.0, s, v)


def _ellipse_alpha(xs, ys, cx, cy, ax, ay):
    """Anti-aliased ellipse coverage; edge softness ~1 pixel."""
    if ax <= 0.0 or ay <= 0.0:
        return np.zeros_like(xs)
    d = np.sqrt(((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2)
    return np.clip((1.0 - d) * min(ax, ay) + 0.5, 0.0, 1.0)


def _segment_alpha(xs, ys, p0, p1, half_width):
    """Anti-aliased thick line segment (capsule) coverage."""
    px, py = p1[0] - p0[0], p1[1] - p0[1]
    denom = max(px * px + py * py, 1e-12)
    t = np.clip(((xs - p0[0]) * px + (ys - p0[1]) * py) / denom, 0.0, 1.0)
    dist = np.sqrt((xs - (p0[0] + t * px)) ** 2 + (ys - (p0[1] + t * py)) ** 2)
    return np.clip(half_width - dist + 0.5, 0.0, 1.0)


def _blend(canvas, alpha, color):
    for c in range(3):
        canvas[c] = canvas[c] * (1.0 - alpha) + color[c] * alpha


def render_synthetic_frame(params: SynthFaceParams, resolution: int) -> Frame:
    """Render a deterministic stylized cartoon face.

    Mouth opening, brow position, and eye aperture are monotone in the
    corresponding params; landmarks come from ``landmark_positions`` (no
    detection). Pure function: equal inputs give bit-identical pixels.
    """
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ConfigError(f"resolution {resolution} not in {SUPPORTED_RESOLUTIONS}")

    palette = PALETTES[params.art_palette_id % len(PALETTES)]
    skin = _shift_hue(palette["skin"], (params.identity_hue - 0.5) * 0.5)

    r = float(resolution)
    ys, xs = np.mgrid[0:resolution, 0:resolution].astype(np.float64) + 0.5
    lm = landmark_positions(params, resolution)

    canvas = np.empty((3, resolution, resolution), dtype=np.float64)
    for c in range(3):
        canvas[c].fill(palette["bg"][c])

    # head
    _blend(canvas, _ellipse_alpha(xs, ys, 0.5 * r, 0.52 * r, 0.38 * r, 0.44 * r), skin)

    # brows: from outer to inner landmark, drawn as capsules
    half_w = 0.016 * r
    _blend(canvas, _segment_alpha(xs, ys, lm[7], lm[6], half_w), palette["line"])
    _blend(canvas, _segment_alpha(xs, ys, lm[9], lm[8], half_w), palette["line"])

    # eyes: aperture ellipse (sclera), iris disc clipped by the aperture
    eh = params.eye_open * 0.045 * r
    ew = 0.07 * r
    for ex in (0.33 * r, 0.67 * r):
        aperture = _ellipse_alpha(xs, ys, ex, 0.40 * r, ew, eh)
        _blend(canvas, aperture, palette["sclera"])
        iris = _ellipse_alpha(xs, ys, ex, 0.40 * r, 0.03 * r, 0.03 * r) * aperture
        _blend(canvas, iris, palette["iris"])

    # mouth: lip band around the opening, dark interior when open
    mh = params.mouth_open * 0.09 * r
    band = 0.018 * r
    lips = _ellipse_alpha(xs, ys, 0.5 * r, 0.72 * r, 0.17 * r + band, mh + band)
    _blend(canvas, lips, palette["lip"])
    interior = _ellipse_alpha(xs, ys, 0.5 * r, 0.72 * r, 0.17 * r * 0.88, mh * 0.75)
    _blend(canvas, interior, palette["line"])

    return Frame(pixels=canvas.astype(np.float32), landmarks=lm)


def coeffs_to_params(coeffs: np.ndarray) -> SynthFaceParams:
    """Fixed affine readout from a coefficient row to renderer params.

    The map is clamp(A @ coeffs + b) with b giving the neutral face
    (mouth_open=0.5, brow_raise=0, eye_open=0.5, identity_hue=0.5) and A
    averaging four-coefficient groups: coeffs[0:4] -> mouth (gain 0.5),
    coeffs[4:8] -> brow (gain 1), coeffs[8:12] -> eye (gain 0.5),
    coeffs[12:16] -> hue (gain 0.25). art_palette_id is not
    coefficient-driven and stays 0.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 1 or coeffs.shape[0] < 16:
        raise ShapeError(f"expected a coefficient row with >=16 dims, got shape {coeffs.shape}")
    mouth = float(np.clip(0.5 + 0.5 * coeffs[0:4].mean(), 0.0, 1.0))
    brow = float(np.clip(coeffs[4:8].mean(), -1.0, 1.0))
    eye = float(np.clip(0.5 + 0.5 * coeffs[8:12].mean(), 0.0, 1.0))
    hue = float(np.clip(0.5 + 0.25 * coeffs[12:16].mean(), 0.0, 1.0))
    return SynthFaceParams(
        mouth_open=mouth, brow_raise=brow, eye_open=eye, identity_hue=hue, art_palette_id=0
    )


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def emotion_offset(emotion_class: str, d_exp: int = D_EXP_DEFAULT) -> np.ndarray:
    """Class-dependent coefficient offset; fixed table independent of corpus seed."""
    if emotion_class not in EMOTION_CLASSES:
        raise DataError(f"unknown emotion class {emotion_class!r}")
    rng = np.random.default_rng(_stable_seed("emotion-offset", emotion_class))
    return rng.normal(0.0, 0.35, size=d_exp).astype(np.float32)


def _smooth_trajectories(rng, num_frames, d_exp, fps):
    """Band-limited coefficient curves: 1..4 random sinusoids per dimension."""
    n_sin = 4
    amps = rng.uniform(0.05, 0.30, size=(d_exp, n_sin))
    freqs = rng.uniform(0.2, 2.0, size=(d_exp, n_sin))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(d_exp, n_sin))
    active = rng.integers(1, n_sin + 1, size=d_exp)
    mask = np.arange(n_sin)[None, :] < active[:, None]
    t = np.arange(num_frames)[:, None, None] / fps
    waves = amps[None] * np.sin(2.0 * np.pi * freqs[None] * t + phases[None])
    return (waves * mask[None]).sum(axis=2)


def _pseudo_audio(rng, coeffs):
    """Per-frame features that track mouth-coefficient velocity plus noise."""
    mouth = coeffs[:, :4].mean(axis=1)
    vel = np.gradient(mouth)
    vel = vel / max(float(vel.std()), 1e-8)
    direction = rng.normal(size=AUDIO_DIM)
    direction /= np.linalg.norm(direction)
    noise = 0.05 * rng.normal(size=(coeffs.shape[0], AUDIO_DIM))
    return (vel[:, None] * direction[None, :] + noise).astype(np.float32)


def generate_corpus(
    num_videos: int,
    frames_per_video: int,
    seed: int,
    d_exp: int = D_EXP_DEFAULT,
    resolution: int = 32,
    fps: float = DEFAULT_FPS,
    render_frames: bool = True,
) -> list[CorpusVideo]:
    """Procedural corpus: smooth per-class coefficient tracks with paired frames.

    Fully reproducible from ``seed``; emotion classes cycle through all eight
    so any corpus of >=8 videos covers every class.
    """
    if num_videos < 1:
        raise ConfigError(f"num_videos must be >= 1, got {num_videos}")
    if frames_per_video < 2:
        raise ConfigError(f"frames_per_video must be >= 2, got {frames_per_video}")
    if d_exp < 16:
        raise ConfigError(f"d_exp must be >= 16, got {d_exp}")

    videos = []
    for idx in range(num_videos):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), idx]))
        emotion = EMOTION_CLASSES[idx % len(EMOTION_CLASSES)]
        coeffs = _smooth_trajectories(rng, frames_per_video, d_exp, fps)
        coeffs = (coeffs + emotion_offset(emotion, d_exp)[None, :]).astype(np.float32)
        seq = ExpressionSequence(values=coeffs, fps=fps, video_id=f"vid{idx:04d}")
        audio = _pseudo_audio(rng, coeffs.astype(np.float64))
        hue = float(rng.uniform(0.2, 0.8))
        frames = []
        if render_frames:
            for n in range(frames_per_video):
                params = replace(coeffs_to_params(coeffs[n]), identity_hue=hue)
                frames.append(render_synthetic_frame(params, resolution))
        videos.append(
            CorpusVideo(
                sequence=seq, audio=audio, emotion_class=emotion, frames=frames, identity_hue=hue
            )
        )
    return videos


def stylized_target(
    sequence: ExpressionSequence, frame_index: int, identity_hue: float, art_palette_id: int, resolution: int
) -> Frame:
    """Ground-truth art-stylized frame: same params, alternate palette."""
    params = replace(
        coeffs_to_params(sequence.values[frame_index]),
        identity_hue=identity_hue,
        art_palette_id=art_palette_id,
    )
    return render_synthetic_frame(params, resolution)


# --- corpus serialization -------------------------------------------------

def frame_to_image(frame: Frame) -> Image.Image:
    arr = np.clip(frame.pixels, 0.0, 1.0)
    arr = (arr.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    return Image.fromarray(arr)


def load_frame_pixels(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def save_corpus(videos: list[CorpusVideo], out_dir) -> None:
    """Corpus layout: one directory per video with coeffs.bin, audio.bin,
    frames/%05d.png, and meta.json (ids, fps, class, shapes, landmarks)."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for video in videos:
        vdir = out_dir / video.video_id
        (vdir / "frames").mkdir(parents=True, exist_ok=True)
        seq = video.sequence
        vals = np.ascontiguousarray(seq.values, dtype="<f4")
        (vdir / "coeffs.bin").write_bytes(vals.tobytes())
        (vdir / "audio.bin").write_bytes(np.ascontiguousarray(video.audio, dtype="<f4").tobytes())
        landmarks = [f.landmarks.tolist() for f in video.frames]
        meta = {
            "video_id": seq.video_id,
            "fps": seq.fps,
            "emotion_class": video.emotion_class,
            "N": seq.num_frames,
            "D_exp": seq.dim,
            "resolution": video.frames[0].resolution if video.frames else None,
            "identity_hue": video.identity_hue,
            "landmarks": landmarks,
        }
        (vdir / "meta.json").write_text(json.dumps(meta, sort_keys=True))
        for n, frame in enumerate(video.frames):
            frame_to_image(frame).save(vdir / "frames" / f"{n:05d}.png")


def load_corpus(corpus_dir, load_frames: bool = True) -> list[CorpusVideo]:
    from pathlib import Path

    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise DataError(f"corpus directory not found: {corpus_dir}")
    videos = []
    for vdir in sorted(p for p in corpus_dir.iterdir() if p.is_dir()):
        meta_path = vdir / "meta.json"
        if not meta_path.exists():
            continue
        meta = json.loads(meta_path.read_text())
        n, d = meta["N"], meta["D_exp"]
        vals = np.frombuffer((vdir / "coeffs.bin").read_bytes(), dtype="<f4").reshape(n, d)
        seq = ExpressionSequence(values=vals.copy(), fps=meta["fps"], video_id=meta["video_id"])
        audio = np.frombuffer((vdir / "audio.bin").read_bytes(), dtype="<f4").reshape(n, AUDIO_DIM).copy()
        frames = []
        if load_frames:
            lms = np.asarray(meta["landmarks"], dtype=np.float32)
            for idx in range(n):
                pixels = load_frame_pixels(vdir / "frames" / f"{idx:05d}.png")
                frames.append(Frame(pixels=pixels, landmarks=lms[idx]))
        videos.append(
            CorpusVideo(
                sequence=seq,
                audio=audio,
                emotion_class=meta["emotion_class"],
                frames=frames,
                identity_hue=meta.get("identity_hue", 0.5),
            )
        )
    if not videos:
        raise DataError(f"no videos found under {corpus_dir}")
    return videos
