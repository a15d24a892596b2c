"""Checkpoints: a flat little-endian float32 parameter blob plus a JSON
manifest describing layout, producing config, and noise schedule.

The manifest embeds the config it was trained with and that config's hash;
loading verifies the hash (tamper/mismatch guard) unless explicitly
overridden.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, DataError

PARAMS_FILE = "params.bin"
MANIFEST_FILE = "manifest.json"


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def module_param_hash(module: torch.nn.Module) -> str:
    """Content hash over a module's parameters and buffers, in state-dict order."""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().astype("<f4").tobytes())
    return h.hexdigest()


def save_checkpoint(
    out_dir,
    stage: str,
    step: int,
    config: dict,
    modules: dict,
    schedule=None,
    extra: dict | None = None,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for mod_name, module in modules.items():
        for key, tensor in module.state_dict().items():
            arr = tensor.detach().cpu().numpy().astype("<f4")
            entries.append(
                {
                    "name": f"{mod_name}.{key}",
                    "shape": list(arr.shape),
                    "offset": offset,
                    "numel": int(arr.size),
                }
            )
            chunks.append(arr.tobytes())
            offset += arr.size
    (out_dir / PARAMS_FILE).write_bytes(b"".join(chunks))
    manifest = {
        "stage": stage,
        "step": int(step),
        "config": config,
        "config_hash": config_hash(config),
        "schedule": schedule.to_dict() if schedule is not None else None,
        "params_file": PARAMS_FILE,
        "params": entries,
        "extra": extra or {},
    }
    (out_dir / MANIFEST_FILE).write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return out_dir


def read_manifest(ckpt_dir, allow_hash_mismatch: bool = False) -> dict:
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / MANIFEST_FILE
    if not manifest_path.exists():
        raise DataError(f"no {MANIFEST_FILE} under {ckpt_dir}")
    manifest = json.loads(manifest_path.read_text())
    actual = config_hash(manifest.get("config", {}))
    if actual != manifest.get("config_hash") and not allow_hash_mismatch:
        raise ConfigError(
            f"checkpoint config hash mismatch under {ckpt_dir} "
            "(pass the override flag to load anyway)"
        )
    return manifest


def load_checkpoint(
    ckpt_dir,
    modules: dict,
    allow_hash_mismatch: bool = False,
) -> dict:
    """Restore parameters for the given {name: module} mapping; returns the
    manifest. Modules not named in the mapping are ignored; missing or
    shape-mismatched entries are errors."""
    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir, allow_hash_mismatch=allow_hash_mismatch)
    blob = np.frombuffer((ckpt_dir / manifest["params_file"]).read_bytes(), dtype="<f4")
    by_name = {e["name"]: e for e in manifest["params"]}
    for mod_name, module in modules.items():
        state = module.state_dict()
        new_state = {}
        for key, tensor in state.items():
            entry = by_name.get(f"{mod_name}.{key}")
            if entry is None:
                raise DataError(f"checkpoint misses parameter {mod_name}.{key}")
            if list(tensor.shape) != entry["shape"]:
                raise DataError(
                    f"shape mismatch for {mod_name}.{key}: checkpoint {entry['shape']}, module {list(tensor.shape)}"
                )
            chunk = blob[entry["offset"] : entry["offset"] + entry["numel"]]
            new_state[key] = torch.from_numpy(chunk.reshape(entry["shape"]).copy()).to(tensor.dtype)
        module.load_state_dict(new_state)
    return manifest
