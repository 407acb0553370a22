"""
Checkpoint directories.

    manifest.json              config, step, seed and tensor index
    params/<name>.blob         backbone parameters
    context/<name>.blob        context-model parameters (contextual models only)
    ema/<name>.blob            EMA shadow weights
    optim/<index>.<key>.blob   AdamW moments and step counters
    rng.blob                   sampling-generator state
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch
import torch.nn as nn

from ..numerics.blobs import BlobError, read_blob, write_blob
from .backbone import P3D
from .config import ModelConfig
from .context import ContextConfig, ContextualP3D

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CONTEXT_PREFIX = "context."


class CheckpointError(Exception):
    """Raised for unreadable or incompatible checkpoints"""
    def __init__(self, message: str, path: Union[str, Path, None] = None):
        self.message = message
        self.path = str(path) if path is not None else None
        super().__init__(f"{message} ({self.path})" if self.path else message)


@dataclass
class Checkpoint:
    """Everything restored from a checkpoint directory"""
    model: nn.Module
    step: int = 0
    seed: int = 0
    ema: Optional[Dict[str, torch.Tensor]] = None
    optimizer: Optional[Dict[int, Dict[str, torch.Tensor]]] = None
    rng_state: Optional[torch.Tensor] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def _tensor_path(root: Path, name: str, namespace: str) -> Path:
    if namespace == "params" and name.startswith(CONTEXT_PREFIX):
        return root / "context" / f"{name[len(CONTEXT_PREFIX):]}.blob"
    return root / namespace / f"{name}.blob"


def build_model(manifest: Dict[str, Any]) -> nn.Module:
    if not manifest.get("model"):
        raise CheckpointError("checkpoint does not describe a P3D model; pass the model explicitly")
    config = ModelConfig.from_dict(manifest["model"])
    backbone = P3D(config)
    if manifest.get("context"):
        return ContextualP3D(backbone, ContextConfig(**manifest["context"]))
    return backbone


def model_manifest(model: nn.Module) -> Dict[str, Any]:
    if isinstance(model, ContextualP3D):
        return {"model": model.backbone.config.to_dict(), "context": asdict(model.context_config)}
    config = getattr(model, "config", None)
    return {"model": config.to_dict() if isinstance(config, ModelConfig) else None, "context": None}


def save_checkpoint(
    path: Union[str, Path],
    model: nn.Module,
    step: int = 0,
    seed: int = 0,
    ema: Optional[Dict[str, torch.Tensor]] = None,
    optimizer: Optional[Dict[int, Dict[str, torch.Tensor]]] = None,
    rng_state: Optional[torch.Tensor] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    params = {name: p.detach() for name, p in model.named_parameters()}
    for name, value in params.items():
        write_blob(_tensor_path(root, name, "params"), name, value)
    for name, value in (ema or {}).items():
        write_blob(_tensor_path(root, name, "ema"), name, value)
    optim_index = {}
    for index, state in (optimizer or {}).items():
        optim_index[str(index)] = sorted(state)
        for key, value in state.items():
            write_blob(root / "optim" / f"{index}.{key}.blob", f"{index}.{key}", value)
    if rng_state is not None:
        write_blob(root / "rng.blob", "rng", rng_state)

    manifest = {
        **model_manifest(model),
        "step": int(step),
        "seed": int(seed),
        "params": sorted(params),
        "ema": sorted(ema) if ema else [],
        "optim": optim_index,
        "rng": rng_state is not None,
        "extra": extra or {},
    }
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"Saved checkpoint at step {step} to {root}")
    return root


def _read(path: Path) -> np.ndarray:
    try:
        return read_blob(path)[1]
    except BlobError as e:
        logger.error(f"Checkpoint tensor unreadable: {e}")
        raise CheckpointError(e.message, path) from e


def _read_manifest(root: Path) -> Dict[str, Any]:
    manifest_path = root / MANIFEST
    if not manifest_path.is_file():
        raise CheckpointError("manifest.json not found", root)
    try:
        return json.loads(manifest_path.read_text())
    except ValueError as e:
        raise CheckpointError(f"invalid manifest: {e}", manifest_path) from e


def load_checkpoint(path: Union[str, Path], model: Optional[nn.Module] = None) -> Checkpoint:
    """Restore a checkpoint, building the model from the manifest unless one is given."""
    root = Path(path)
    manifest = _read_manifest(root)
    if model is None:
        model = build_model(manifest)
    own = dict(model.named_parameters())
    if set(own) != set(manifest["params"]):
        missing = sorted(set(own) ^ set(manifest["params"]))
        raise CheckpointError(f"parameter names differ from the model: {missing[:5]}", root)
    with torch.no_grad():
        for name, p in own.items():
            value = torch.from_numpy(_read(_tensor_path(root, name, "params")))
            if value.shape != p.shape:
                raise CheckpointError(f"{name}: shape {tuple(value.shape)} != {tuple(p.shape)}", root)
            p.copy_(value)

    ema = {name: torch.from_numpy(_read(_tensor_path(root, name, "ema"))) for name in manifest.get("ema", [])}
    optimizer = {
        int(index): {key: torch.from_numpy(_read(root / "optim" / f"{index}.{key}.blob")) for key in keys}
        for index, keys in manifest.get("optim", {}).items()
    }
    rng_state = torch.from_numpy(_read(root / "rng.blob")) if manifest.get("rng") else None
    return Checkpoint(
        model=model,
        step=manifest.get("step", 0),
        seed=manifest.get("seed", 0),
        ema=ema or None,
        optimizer=optimizer or None,
        rng_state=rng_state,
        extra=manifest.get("extra", {}),
    )


def load_backbone_weights(backbone: P3D, path: Union[str, Path], use_ema: bool = False) -> None:
    """Copy pretrained backbone weights (plain or EMA) into `backbone`."""
    ckpt = load_checkpoint(path)
    source = ckpt.model.backbone if isinstance(ckpt.model, ContextualP3D) else ckpt.model
    prefix = "backbone." if isinstance(ckpt.model, ContextualP3D) else ""
    with torch.no_grad():
        for name, p in backbone.named_parameters():
            if use_ema and ckpt.ema:
                p.copy_(ckpt.ema[prefix + name])
            else:
                p.copy_(dict(source.named_parameters())[name])


def checkpoint_digest(path: Union[str, Path]) -> str:
    """SHA-256 over the manifest and parameter blobs."""
    root = Path(path)
    manifest = _read_manifest(root)
    digest = hashlib.sha256((root / MANIFEST).read_bytes())
    for name in manifest["params"]:
        digest.update(_tensor_path(root, name, "params").read_bytes())
    return digest.hexdigest()
