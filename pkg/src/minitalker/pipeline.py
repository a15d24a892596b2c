"""Training loops for both stages, end-to-end generation, and corpus synthesis.

Stage E optimizes the denoiser with the diffusion objective, sampling one of
the five retained sentences per iteration. Stage A first pretrains the
inversion encoder, generator, and style-merge block as an autoencoder on the
procedural corpus (the stand-in for pretrained generator weights), freezes
them, then optimizes the content encoder, motion generator, refiner, and
discriminator. Everything is deterministic given (config, seed).

Logs are newline-delimited JSON records (step, losses, wall clock).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import annotation, checkpoint, coeffspace, conditioning, diffusion, losses, stylea
from .config import RunConfig
from .denoiser import DenoiserConfig, MLPDenoiser
from .errors import ConfigError, DataError, InvariantViolation, ShapeError

TRAIN_LOG = "train_log.ndjson"


class JsonlLogger:
    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records = []
        self._t0 = time.monotonic()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def log(self, **fields):
        record = {"wall_clock": round(time.monotonic() - self._t0, 4), **fields}
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class TrainResult:
    checkpoint_dir: Path
    losses: list
    logger: JsonlLogger


def synth_data(out_dir, num_videos, frames_per_video, seed, resolution=32, d_exp=64):
    """Generate and persist a corpus, including mock AU intensity files."""
    videos = coeffspace.generate_corpus(
        num_videos, frames_per_video, seed, d_exp=d_exp, resolution=resolution
    )
    coeffspace.save_corpus(videos, out_dir)
    for idx, video in enumerate(videos):
        intensities = annotation.mock_au_intensities(
            video.emotion_class, video.sequence.values, seed=seed * 100003 + idx
        )
        annotation.write_au_intensities(Path(out_dir) / video.video_id, intensities)
    return videos


def _corpus_dims(videos):
    ns = {v.sequence.num_frames for v in videos}
    ds = {v.sequence.dim for v in videos}
    if len(ns) != 1 or len(ds) != 1:
        raise DataError(f"corpus is not homogeneous: N={sorted(ns)}, D={sorted(ds)}")
    return ns.pop(), ds.pop()


def _condition_dim(clients):
    return clients["text"].dim + clients["identity"].dim + clients["audio"].dim


class _ConditionCache:
    """Per-video embeddings reused across training steps."""

    def __init__(self, videos, clients):
        self.clients = clients
        self.identity = {}
        self.audio = {}
        self.text = {}
        for video in videos:
            vid = video.video_id
            self.identity[vid] = clients["identity"].encode(video.frames[0])
            self.audio[vid] = clients["audio"].encode(video.audio)

    def fused(self, video, sentence):
        if sentence not in self.text:
            self.text[sentence] = self.clients["text"].encode(sentence)
        vec = conditioning.ConditionVector(
            text_emb=self.text[sentence],
            identity_emb=self.identity[video.video_id],
            audio_emb=self.audio[video.video_id],
        )
        return vec.fused()


def build_denoiser_config(run_config: RunConfig, sequence_length: int, d_exp: int, condition_dim: int):
    se = run_config.style_e
    return DenoiserConfig(
        hidden_width=se.hidden_width,
        num_blocks=se.num_blocks,
        time_embed_dim=se.time_embed_dim,
        sequence_length=sequence_length,
        d_exp=d_exp,
        condition_dim=condition_dim,
    )


def train_style_e(run_config: RunConfig, corpus_dir=None, records_dir=None, out_dir=None, resume_from=None):
    """Optimize the denoiser; every iteration draws (video, step, noise, one of
    the five candidate sentences)."""
    run_config.validate()
    corpus_dir = Path(corpus_dir or run_config.corpus_dir)
    records_dir = Path(records_dir or run_config.records_dir)
    out_dir = Path(out_dir or run_config.out_dir) / "style_e"
    se = run_config.style_e

    videos = coeffspace.load_corpus(corpus_dir, load_frames=True)
    records = annotation.load_records(records_dir)
    missing = [v.video_id for v in videos if v.video_id not in records]
    if missing:
        raise DataError(f"missing annotation records for: {', '.join(missing)}")

    n, d_exp = _corpus_dims(videos)
    clients = conditioning.clients_from_config(run_config.clients)
    cond_dim = _condition_dim(clients)
    dn_config = build_denoiser_config(run_config, n, d_exp, cond_dim)

    torch.manual_seed(run_config.seed)
    denoiser = MLPDenoiser(dn_config)
    if resume_from is not None:
        checkpoint.load_checkpoint(resume_from, {"denoiser": denoiser})
    schedule = diffusion.make_schedule(se.T, se.schedule_kind, se.beta_start, se.beta_end)
    optimizer = torch.optim.Adam(denoiser.parameters(), lr=se.lr)

    cache = _ConditionCache(videos, clients)
    rng = np.random.default_rng(run_config.seed)
    noise_gen = torch.Generator().manual_seed(run_config.seed + 1)
    logger = JsonlLogger(out_dir / TRAIN_LOG)
    clean_all = torch.stack([torch.from_numpy(v.sequence.values) for v in videos])

    def save(step):
        return checkpoint.save_checkpoint(
            out_dir / "checkpoint",
            stage="E",
            step=step,
            config=run_config.to_dict(),
            modules={"denoiser": denoiser},
            schedule=schedule,
            extra={
                "denoiser_config": dn_config.to_dict(),
                "fps": videos[0].sequence.fps,
                "num_sample_steps": se.num_sample_steps,
            },
        )

    step_losses = []
    for step in range(1, se.steps + 1):
        picks = rng.integers(0, len(videos), size=se.batch_size)
        ts = rng.integers(1, se.T + 1, size=se.batch_size)
        conds, cleans = [], []
        for v_idx in picks:
            video = videos[v_idx]
            sentence = annotation.sample_training_text(records[video.video_id], rng)
            conds.append(torch.from_numpy(cache.fused(video, sentence)))
            cleans.append(clean_all[v_idx])
        batch = diffusion.DiffusionBatch(
            clean=torch.stack(cleans),
            t=torch.from_numpy(ts.astype(np.int64)),
            noise=torch.randn(se.batch_size, n, d_exp, generator=noise_gen),
        )
        loss = diffusion.training_loss(denoiser, batch, torch.stack(conds), schedule)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        step_losses.append(float(loss))
        logger.log(step=step, loss=float(loss))
        if se.checkpoint_every and step % se.checkpoint_every == 0:
            save(step)
    ckpt = save(se.steps)
    return TrainResult(checkpoint_dir=ckpt, losses=step_losses, logger=logger)


# --- stage A ----------------------------------------------------------------

def build_stage_a_modules(run_config: RunConfig, d_exp: int, seed: int | None = None):
    sa = run_config.style_a
    gcfg = stylea.GeneratorConfig(
        resolution=sa.resolution,
        d_w=sa.d_w,
        warp_resolution=sa.warp_resolution,
        use_skips=sa.use_skips,
        use_refiner=sa.use_refiner,
    )
    torch.manual_seed(run_config.seed if seed is None else seed)
    warp_ch = gcfg.channels_at(gcfg.warp_resolution)
    return gcfg, {
        "e_s": stylea.InversionEncoder(gcfg),
        "g": stylea.StyleGenerator(gcfg),
        "modres": stylea.ModResBlock(gcfg.d_w),
        "e_c": stylea.ContentEncoder(gcfg),
        "g_m": stylea.MotionGenerator(gcfg, d_exp),
        "refiner": stylea.RefinementNetwork(warp_ch, warp_ch),
        "disc": losses.Discriminator(sa.resolution),
    }


def art_reference_frame(art_palette_id: int, resolution: int) -> coeffspace.Frame:
    """Neutral-pose exemplar rendered in the art palette."""
    params = coeffspace.SynthFaceParams(
        mouth_open=0.5, brow_raise=0.0, eye_open=0.5, identity_hue=0.5, art_palette_id=art_palette_id
    )
    return coeffspace.render_synthetic_frame(params, resolution)


def _frame_batch(frames):
    return torch.stack([torch.from_numpy(f.pixels) for f in frames])


def pretrain_inversion(run_config: RunConfig, corpus_dir=None, out_dir=None):
    """Joint autoencoder pretraining of the inversion encoder, generator, and
    style-merge block on identity frames and their art-stylized twins; the
    result is frozen by stage-A training."""
    run_config.validate()
    corpus_dir = Path(corpus_dir or run_config.corpus_dir)
    out_dir = Path(out_dir or run_config.out_dir) / "inversion"
    sa = run_config.style_a

    videos = coeffspace.load_corpus(corpus_dir, load_frames=True)
    _, d_exp = _corpus_dims(videos)
    gcfg, modules = build_stage_a_modules(run_config, d_exp)
    e_s, g, modres = modules["e_s"], modules["g"], modules["modres"]
    params = list(e_s.parameters()) + list(g.parameters()) + list(modres.parameters())
    optimizer = torch.optim.Adam(params, lr=sa.pretrain_lr)

    ref = torch.from_numpy(art_reference_frame(sa.art_palette_id, sa.resolution).pixels)
    rng = np.random.default_rng(run_config.seed + 2)
    logger = JsonlLogger(out_dir / TRAIN_LOG)
    batch_size = 4

    step_losses = []
    for step in range(1, sa.pretrain_steps + 1):
        picks = rng.integers(0, len(videos), size=batch_size)
        frame_ids = [int(rng.integers(0, videos[v].sequence.num_frames)) for v in picks]
        identity = _frame_batch([videos[v].frames[i] for v, i in zip(picks, frame_ids)])
        targets = _frame_batch(
            [
                coeffspace.stylized_target(
                    videos[v].sequence, i, videos[v].identity_hue, sa.art_palette_id, sa.resolution
                )
                for v, i in zip(picks, frame_ids)
            ]
        )
        w_id = e_s(identity)
        rec_id = losses.reconstruction_loss(g(w_id), identity)
        w_ref = e_s(ref.unsqueeze(0).expand(batch_size, -1, -1, -1))
        w_art = stylea.modres_merge(w_id, w_ref, 1.0, modres)
        rec_art = losses.reconstruction_loss(g(w_art), targets)
        loss = rec_id + rec_art
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        step_losses.append(float(loss))
        logger.log(step=step, loss=float(loss), rec_id=float(rec_id), rec_art=float(rec_art))

    ckpt = checkpoint.save_checkpoint(
        out_dir / "checkpoint",
        stage="A",
        step=sa.pretrain_steps,
        config=run_config.to_dict(),
        modules={"e_s": e_s, "g": g, "modres": modres},
        extra={"phase": "pretrain", "d_exp": d_exp},
    )
    return TrainResult(checkpoint_dir=ckpt, losses=step_losses, logger=logger)


def _stage_a_forward(modules, gcfg, sa, identity, coeffs, w_merged):
    flow = modules["g_m"](identity, coeffs)
    content = modules["e_c"](identity)
    refiner = modules["refiner"] if sa.use_refiner else None
    return modules["g"](
        w_merged,
        content_feats=content,
        flow=flow,
        refiner=refiner,
        use_skips=sa.use_skips,
    )


def stage_a_heldout_rec(run_config: RunConfig, modules, videos) -> float:
    """Mean reconstruction error on each video's held-out last frame."""
    sa = run_config.style_a
    ref = torch.from_numpy(art_reference_frame(sa.art_palette_id, sa.resolution).pixels)
    gcfg = modules["g"].config
    total = 0.0
    with torch.no_grad():
        for video in videos:
            idx = video.sequence.num_frames - 1
            identity = torch.from_numpy(video.frames[0].pixels)
            target = torch.from_numpy(
                coeffspace.stylized_target(
                    video.sequence, idx, video.identity_hue, sa.art_palette_id, sa.resolution
                ).pixels
            )
            w = stylea.modres_merge(
                modules["e_s"](identity), modules["e_s"](ref), sa.blend, modules["modres"]
            )
            pred = _stage_a_forward(
                modules, gcfg, sa, identity, torch.from_numpy(video.sequence.values[idx]), w
            )
            total += float(losses.reconstruction_loss(pred, target))
    return total / len(videos)


def train_style_a(run_config: RunConfig, inversion_ckpt, corpus_dir=None, out_dir=None):
    """Optimize content encoder, motion generator, refiner, and discriminator
    against stylized targets; the inversion encoder, generator, and merge
    block stay frozen (verified by content hash).

    Training samples frame indices below N-1, keeping each video's last frame
    held out for evaluation.
    """
    run_config.validate()
    corpus_dir = Path(corpus_dir or run_config.corpus_dir)
    out_dir = Path(out_dir or run_config.out_dir) / "style_a"
    sa = run_config.style_a

    videos = coeffspace.load_corpus(corpus_dir, load_frames=True)
    _, d_exp = _corpus_dims(videos)
    gcfg, modules = build_stage_a_modules(run_config, d_exp)
    checkpoint.load_checkpoint(inversion_ckpt, {k: modules[k] for k in ("e_s", "g", "modres")})

    frozen = {name: modules[name] for name in ("e_s", "g", "modres")}
    for module in frozen.values():
        module.requires_grad_(False)
    frozen_hashes = {name: checkpoint.module_param_hash(m) for name, m in frozen.items()}

    trainable = list(modules["e_c"].parameters()) + list(modules["g_m"].parameters())
    if sa.use_refiner:
        trainable += list(modules["refiner"].parameters())
    opt_g = torch.optim.Adam(trainable, lr=sa.lr)
    opt_d = torch.optim.Adam(modules["disc"].parameters(), lr=sa.disc_lr)
    backbone = losses.fixed_random_backbone(sa.backbone_seed, sa.backbone_depth)

    ref = torch.from_numpy(art_reference_frame(sa.art_palette_id, sa.resolution).pixels)
    rng = np.random.default_rng(run_config.seed + 3)
    logger = JsonlLogger(out_dir / TRAIN_LOG)
    batch_size = 4

    step_losses = []
    for step in range(1, sa.steps + 1):
        picks = rng.integers(0, len(videos), size=batch_size)
        # last frame of each video is held out
        frame_ids = [int(rng.integers(0, videos[v].sequence.num_frames - 1)) for v in picks]
        identity = _frame_batch([videos[v].frames[0] for v in picks])
        coeffs = torch.stack(
            [torch.from_numpy(videos[v].sequence.values[i]) for v, i in zip(picks, frame_ids)]
        )
        target = _frame_batch(
            [
                coeffspace.stylized_target(
                    videos[v].sequence, i, videos[v].identity_hue, sa.art_palette_id, sa.resolution
                )
                for v, i in zip(picks, frame_ids)
            ]
        )
        with torch.no_grad():
            w = stylea.modres_merge(
                modules["e_s"](identity),
                modules["e_s"](ref.unsqueeze(0).expand(batch_size, -1, -1, -1)),
                sa.blend,
                modules["modres"],
            )
        pred = _stage_a_forward(modules, gcfg, sa, identity, coeffs, w)
        l_rec = losses.reconstruction_loss(pred, target)
        l_prec = losses.perceptual_distance(backbone, pred, target)
        disc_loss, gen_adv = losses.adversarial_losses(modules["disc"], target, pred)
        g_total = l_rec + sa.perceptual_weight * l_prec + sa.adversarial_weight * gen_adv

        opt_g.zero_grad()
        g_total.backward()
        torch.nn.utils.clip_grad_norm_(trainable, sa.grad_clip)
        opt_g.step()

        opt_d.zero_grad()
        disc_loss.backward()
        opt_d.step()

        step_losses.append(float(g_total))
        logger.log(
            step=step,
            loss=float(g_total),
            l_rec=float(l_rec),
            l_prec=float(l_prec),
            gen_adv=float(gen_adv),
            disc_loss=float(disc_loss),
        )

    for name, module in frozen.items():
        if checkpoint.module_param_hash(module) != frozen_hashes[name]:
            raise InvariantViolation(f"frozen module {name!r} changed during stage-A training")

    ckpt = checkpoint.save_checkpoint(
        out_dir / "checkpoint",
        stage="A",
        step=sa.steps,
        config=run_config.to_dict(),
        modules=modules,
        extra={"phase": "train", "d_exp": d_exp, "frozen_hashes": frozen_hashes},
    )
    return TrainResult(checkpoint_dir=ckpt, losses=step_losses, logger=logger)


# --- end-to-end generation ---------------------------------------------------

def load_style_e(ckpt_dir, allow_hash_mismatch=False):
    manifest = checkpoint.read_manifest(ckpt_dir, allow_hash_mismatch=allow_hash_mismatch)
    dn_config = DenoiserConfig.from_dict(manifest["extra"]["denoiser_config"])
    denoiser = MLPDenoiser(dn_config)
    checkpoint.load_checkpoint(ckpt_dir, {"denoiser": denoiser}, allow_hash_mismatch=allow_hash_mismatch)
    schedule = diffusion.NoiseSchedule.from_dict(manifest["schedule"])
    run_config = RunConfig.from_dict(manifest["config"])
    return denoiser, schedule, run_config, manifest


def load_style_a(ckpt_dir, allow_hash_mismatch=False):
    manifest = checkpoint.read_manifest(ckpt_dir, allow_hash_mismatch=allow_hash_mismatch)
    run_config = RunConfig.from_dict(manifest["config"])
    d_exp = manifest["extra"]["d_exp"]
    _, modules = build_stage_a_modules(run_config, d_exp)
    checkpoint.load_checkpoint(ckpt_dir, modules, allow_hash_mismatch=allow_hash_mismatch)
    for module in modules.values():
        module.requires_grad_(False)
    return modules, run_config, manifest


def generate(
    identity_pixels,
    audio_raw,
    text,
    art,
    style_e_ckpt,
    style_a_ckpt,
    num_steps: int = 5,
    seed: int = 0,
    out_dir=None,
    allow_hash_mismatch: bool = False,
):
    """Full pipeline: condition -> coefficient sampling -> per-frame warping
    and synthesis. Returns (frames, landmarks, coefficients); deterministic
    given the seed, and strictly read-only on the checkpoints."""
    denoiser, schedule, run_e, manifest_e = load_style_e(style_e_ckpt, allow_hash_mismatch)
    modules, run_a, _ = load_style_a(style_a_ckpt, allow_hash_mismatch)
    sa = run_a.style_a

    clients = conditioning.clients_from_config(run_e.clients)
    audio_raw = np.asarray(audio_raw, dtype=np.float32)
    if audio_raw.ndim != 2:
        raise ShapeError(f"audio features must be (N, d_raw), got {audio_raw.shape}")
    n_expected = denoiser.config.sequence_length
    if audio_raw.shape[0] != n_expected:
        raise DataError(
            f"this checkpoint generates N={n_expected} frames; audio has {audio_raw.shape[0]} rows"
        )
    cond = conditioning.build_condition(text, identity_pixels, audio_raw, clients)
    fused = torch.from_numpy(cond.fused())

    coeffs = diffusion.ddim_sample(denoiser, fused, schedule, num_steps, seed).numpy()

    identity = torch.as_tensor(np.asarray(identity_pixels), dtype=torch.float32)
    if identity.shape[-1] != sa.resolution:
        raise DataError(
            f"identity image must be {sa.resolution}px to match the stage-A checkpoint"
        )
    palette_id = int(art.get("palette_id", sa.art_palette_id)) if isinstance(art, dict) else sa.art_palette_id
    if isinstance(art, dict) and art.get("reference"):
        ref = torch.from_numpy(coeffspace.load_frame_pixels(art["reference"]))
    else:
        ref = torch.from_numpy(art_reference_frame(palette_id, sa.resolution).pixels)

    frames_out = []
    landmarks_out = []
    gcfg = modules["g"].config
    with torch.no_grad():
        w = stylea.modres_merge(
            modules["e_s"](identity), modules["e_s"](ref), sa.blend, modules["modres"]
        )
        for idx in range(coeffs.shape[0]):
            pred = _stage_a_forward(
                modules, gcfg, sa, identity, torch.from_numpy(coeffs[idx]), w
            )
            frames_out.append(pred.numpy().astype(np.float32))
            params = coeffspace.coeffs_to_params(coeffs[idx])
            landmarks_out.append(coeffspace.landmark_positions(params, sa.resolution))

    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "frames").mkdir(parents=True, exist_ok=True)
        for idx, pixels in enumerate(frames_out):
            frame = coeffspace.Frame(pixels=np.clip(pixels, 0.0, 1.0), landmarks=landmarks_out[idx])
            coeffspace.frame_to_image(frame).save(out_dir / "frames" / f"{idx:05d}.png")
        index = {
            "video_id": out_dir.name,
            "fps": manifest_e["extra"].get("fps", 25.0),
            "N": len(frames_out),
            "resolution": sa.resolution,
            "num_sample_steps": num_steps,
            "seed": seed,
            "landmarks": [lm.tolist() for lm in landmarks_out],
        }
        (out_dir / "index.json").write_text(json.dumps(index, sort_keys=True))
    return frames_out, np.stack(landmarks_out), coeffs
