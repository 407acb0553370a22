"""
Command-line entry point.

    p3d gen|train|finetune|rollout|sample|gradcheck <config.json> [--seed N] [--out DIR] [--threads K]

Every command writes plain files below its output directory and exits with
status 0 only when all of them were written and read back successfully.
"""
import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from .config import (
    ConfigError,
    DataSection,
    FinetuneConfig,
    GenConfig,
    GradcheckConfig,
    RolloutConfig,
    RunConfig,
    SampleConfig,
    SCHEMAS,
    TrainConfig,
    configure_logging,
    load_run_config,
)
from .datagen.families import get_family
from .datagen.simulate import SimConfig, SimulationError, simulate
from .datagen.storage import (
    MANIFEST,
    DatasetContainer,
    DatasetError,
    dataset_digest,
    list_datasets,
    read_dataset,
    split_indices,
    write_dataset,
)
from .evaluation.metrics import enstrophy_graph, enstrophy_l2, nrmse, profile_l2, profile_moments, vorticity_fd
from .evaluation.reporting import write_graph_csv, write_metrics_csv, write_pgm_slice, write_profile_csv
from .evaluation.rollout import RolloutSpec, Strategy, predict_step, rollout
from .models.backbone import P3D
from .models.checkpoint import CheckpointError, checkpoint_digest, load_backbone_weights, load_checkpoint
from .models.conditioning import Conditioning
from .models.config import ModelConfig
from .models.context import ContextConfig, ContextualP3D, RegionLayout
from .numerics.blobs import BlobError, write_blob
from .numerics.gradcheck import check_module_gradients, perturb_parameters
from .numerics.runtime import configure_threads, deterministic_mode, resolve_threads, seed_everything
from .training.cache import LatentCache
from .training.data import PairDataset
from .training.losses import mse_loss
from .training.setups import Objective, TrainMode
from .training.trainer import Trainer, TrainingError
from .validation import ValidationError

logger = logging.getLogger(__name__)

DOMAIN_ERRORS = (
    ConfigError, ValidationError, SimulationError, DatasetError, CheckpointError, TrainingError, BlobError,
)

Artifacts = List[Path]


# ---------------------------------------------------------------- data helpers

def dataset_paths(section: DataSection) -> List[Path]:
    """Dataset directories named by the section, expanded and filtered to its split."""
    paths: List[Path] = []
    for entry in section.datasets:
        root = Path(entry)
        found = [root] if (root / MANIFEST).is_file() else list_datasets(root)
        if not found:
            raise DatasetError("no datasets found", root)
        if section.split != "all":
            found = [found[i] for i in split_indices(len(found))[section.split]]
        paths.extend(found)
    if not paths:
        raise DatasetError(f"the {section.split} split is empty")
    return paths


def load_containers(section: DataSection) -> Tuple[List[DatasetContainer], List[str]]:
    paths = dataset_paths(section)
    return [read_dataset(p) for p in paths], [p.name for p in paths]


def channel_count(section: DataSection, containers: Sequence[DatasetContainer]) -> int:
    widest = max(c.snapshots.shape[1] for c in containers)
    if section.channels is None:
        return widest
    if section.channels < widest:
        raise ConfigError(f"channels={section.channels} is below the widest dataset ({widest})", "data.channels")
    return section.channels


def padded_frames(container: DatasetContainer, channels: int) -> torch.Tensor:
    """All snapshots as float32 [T, channels, X, Y, Z], zero-padded."""
    frames = torch.from_numpy(np.ascontiguousarray(container.snapshots, dtype=np.float32))
    missing = channels - frames.shape[1]
    if missing:
        frames = torch.cat([frames, frames.new_zeros((frames.shape[0], missing) + tuple(frames.shape[2:]))], dim=1)
    return frames


def conditioning_for(container: DatasetContainer, param_keys: Sequence[str], batch: int = 1) -> Optional[Conditioning]:
    if not param_keys:
        return None
    try:
        values = [float(container.params[k]) for k in param_keys]
    except KeyError as e:
        raise DatasetError(f"dataset has no parameter {e.args[0]!r}") from e
    return Conditioning(params=torch.tensor([values] * batch, dtype=torch.float32))


def load_eval_model(path: str, use_ema: bool) -> nn.Module:
    ckpt = load_checkpoint(path)
    model = ckpt.model
    if use_ema:
        if ckpt.ema:
            with torch.no_grad():
                for name, p in model.named_parameters():
                    p.copy_(ckpt.ema[name])
        else:
            logger.warning(f"{path} has no EMA weights; evaluating the raw parameters")
    model.eval()
    return model


def backbone_of(model: nn.Module) -> P3D:
    return model.backbone if isinstance(model, ContextualP3D) else model


def check_history(model: nn.Module, history: int, flow: bool) -> int:
    config = backbone_of(model).config
    channels = config.out_channels
    expected = channels * history + (channels if flow else 0)
    if config.in_channels != expected:
        raise ConfigError(
            f"model takes {config.in_channels} input channels; history {history} "
            f"{'with' if flow else 'without'} a noisy state needs {expected}",
            "data.history",
        )
    return channels


def validate_artifacts(paths: Artifacts) -> None:
    for path in paths:
        path = Path(path)
        if path.is_dir():
            if not any(path.iterdir()):
                raise ValidationError(f"artifact directory {path} is empty", "artifacts")
        elif not path.is_file() or path.stat().st_size == 0:
            raise ValidationError(f"artifact {path} is missing or empty", "artifacts")
        elif path.suffix == ".csv":
            pd.read_csv(path)
        elif path.suffix == ".json":
            json.loads(path.read_text())


# ---------------------------------------------------------------- commands

def cmd_gen(config: GenConfig, threads: int) -> Artifacts:
    """Simulate `simulations` runs of one family with seeds seed, seed+1, ..."""
    spec = get_family(config.family)
    out = Path(config.out)

    def run(i: int) -> Path:
        sim = SimConfig(
            resolution=tuple(config.resolution), extent=config.extent, dt_store=config.dt_store,
            substeps=config.substeps, warmup=config.warmup, snapshots=config.snapshots,
            seed=config.seed + i, order=config.order, store_dtype=config.store_dtype,
        )
        container = simulate(spec, sim, params=config.params)
        return write_dataset(container, out / f"{config.family}_{i:04d}")

    with ThreadPoolExecutor(max_workers=threads) as pool:
        paths = list(pool.map(run, range(config.simulations)))

    index = {}
    for path in paths:
        read_dataset(path)
        index[path.name] = dataset_digest(path)
    index_path = out / "index.json"
    index_path.write_text(json.dumps({"family": config.family, "seed": config.seed, "datasets": index}, indent=2))
    logger.info(f"Generated {len(paths)} {config.family} datasets in {out}")
    return paths + [index_path]


def _train_model_config(config: TrainConfig, channels: int, objective: Objective) -> ModelConfig:
    history = config.data.history
    in_channels = channels * history + (channels if objective is Objective.FLOW else 0)
    return replace(
        ModelConfig.from_dict(config.model),
        in_channels=in_channels, out_channels=channels, num_params=len(config.data.param_keys),
    )


def _run_trainer(trainer: Trainer, resume: Optional[str]) -> Artifacts:
    if resume:
        trainer.resume(resume)
    checkpoints = list(trainer.train_loop())
    if not checkpoints:
        checkpoints = [trainer.save()]
    for path in checkpoints[-1:]:
        checkpoint_digest(path)
        load_checkpoint(path)
    return checkpoints + [Path(trainer.out_dir) / "loss.csv"]


def cmd_train(config: TrainConfig, threads: int) -> Artifacts:
    setup = config.build_setup()
    if setup.mode.uses_context:
        raise ConfigError(f"{setup.mode.value} is a finetuning setup; use 'p3d finetune'", "setup.mode")
    containers, names = load_containers(config.data)
    channels = channel_count(config.data, containers)
    model = P3D(_train_model_config(config, channels, setup.objective))
    data = PairDataset(containers, channels, config.data.history, config.data.param_keys, names)
    trainer = Trainer(model, setup, data, config.out, seed=config.seed)
    return _run_trainer(trainer, config.resume)


def cmd_finetune(config: FinetuneConfig, threads: int) -> Artifacts:
    setup = config.build_setup()
    if not setup.mode.uses_context:
        raise ConfigError(f"{setup.mode.value} does not use the context model; use 'p3d train'", "setup.mode")
    backbone = backbone_of(load_checkpoint(config.pretrained).model)
    if config.use_ema:
        load_backbone_weights(backbone, config.pretrained, use_ema=True)
    containers, names = load_containers(config.data)
    channels = check_history(backbone, config.data.history, setup.objective is Objective.FLOW)
    data = PairDataset(containers, channels, config.data.history, config.data.param_keys, names)

    model = ContextualP3D(backbone, ContextConfig(**config.context))
    if setup.mode is TrainMode.CONTEXT_FROZEN_ENCODER:
        for p in backbone.encoder_parameters():
            p.requires_grad_(False)
    cache = None
    if setup.cache_latents:
        cache = LatentCache(Path(config.out) / "latent_cache", checkpoint_digest(config.pretrained))
    trainer = Trainer(model, setup, data, config.out, seed=config.seed, cache=cache)
    return _run_trainer(trainer, config.resume)


def enstrophy_crop_size(domain: Sequence[int], strategy: Strategy) -> int:
    """Crop extent for enstrophy graphs: the training crop when it tiles the domain, else the whole cubic domain."""
    domain = tuple(int(n) for n in domain)
    if all(n % strategy.train_res == 0 for n in domain):
        return strategy.train_res
    if len(set(domain)) == 1:
        logger.warning(f"{strategy.train_res}³ crops do not tile {domain}; enstrophy graphs use the whole domain")
        return domain[0]
    raise ValidationError(
        f"enstrophy graphs need {strategy.train_res}³ crops or a cubic domain, got {domain}", "domain"
    )


def _enstrophy_crops(velocity: np.ndarray, extent: float, size: int, window: str, periodic: bool):
    n = velocity.shape[-1]
    vorticity = vorticity_fd(velocity, extent / n, periodic=periodic)
    layout = RegionLayout.cubic(vorticity.shape[1:], size)
    crops = layout.split(torch.from_numpy(vorticity)[None])
    return enstrophy_graph(torch.cat(crops).numpy(), window=window)


def cmd_rollout(config: RolloutConfig, threads: int) -> Artifacts:
    model = load_eval_model(config.checkpoint, config.use_ema)
    strategy = Strategy.parse(config.strategy)
    history = config.data.history
    channels = check_history(model, history, config.sample_steps is not None)
    generator = torch.Generator().manual_seed(config.seed)
    out = Path(config.out)
    containers, names = load_containers(config.data)

    rows, artifacts = [], []
    for container, name in zip(containers, names):
        frames = padded_frames(container, channels)
        real = container.snapshots.shape[1]
        first = config.start + history - 1
        steps = min(config.steps, len(container) - 1 - first)
        if steps < 1:
            raise DatasetError(f"{name} has no snapshot after index {first}")
        window = frames[config.start:first + 1]
        u0 = window[-1][None] if history == 1 else window[None]
        spec = RolloutSpec(strategy, steps, conditioning_for(container, config.data.param_keys), history,
                           config.sample_steps)
        crop = enstrophy_crop_size(frames.shape[2:], strategy) if real == 3 else None
        states = rollout(model, u0, spec, generator)

        error = float("nan")
        for k, state in enumerate(states[1:], start=1):
            pred = state[:, :real]
            ref = frames[first + k][None, :real]
            error = nrmse(pred, ref)
            rows.append({"run_id": name, "step": k, "metric": "nrmse", "value": error})
            if real == 3:
                extent = float(container.manifest.get("extent", 1.0))
                g_pred = _enstrophy_crops(pred[0].numpy(), extent, crop, config.window, config.periodic)
                g_ref = _enstrophy_crops(ref[0].numpy(), extent, crop, config.window, config.periodic)
                rows.append({"run_id": name, "step": k, "metric": "enstrophy_l2", "value": enstrophy_l2(g_pred, g_ref)})
                if k == len(states) - 1:
                    artifacts.append(write_graph_csv(g_pred, out / "graphs" / f"{name}_pred.csv"))
                    artifacts.append(write_graph_csv(g_ref, out / "graphs" / f"{name}_ref.csv"))
            write_blob(out / "states" / name / f"{k:04d}.blob", f"{name}_{k}", state[0])
        artifacts.append(out / "states" / name)
        logger.info(f"{name}: {steps} steps under {strategy.tag}, final nRMSE {error:.4e}")

        if config.slices:
            final = states[-1][0, 0].numpy()
            reference = frames[first + steps][0].numpy()
            value_range = (float(reference.min()), float(reference.max()))
            artifacts.append(write_pgm_slice(final, out / "slices" / f"{name}_pred.pgm", value_range=value_range))
            artifacts.append(write_pgm_slice(reference, out / "slices" / f"{name}_ref.pgm", value_range=value_range))

    artifacts.insert(0, write_metrics_csv(rows, out / "metrics.csv"))
    return artifacts


def cmd_sample(config: SampleConfig, threads: int) -> Artifacts:
    """Flow-matching samples for every input state, and velocity-profile moments per group and pooled."""
    model = load_eval_model(config.checkpoint, config.use_ema)
    history = config.data.history
    channels = check_history(model, history, flow=True)
    generator = torch.Generator().manual_seed(config.seed)
    out = Path(config.out)
    containers, names = load_containers(config.data)

    groups: Dict[str, Dict[str, list]] = {}
    artifacts: Artifacts = []
    for container, name in zip(containers, names):
        frames = padded_frames(container, channels)
        domain = tuple(frames.shape[2:])
        if config.strategy is not None:
            strategy = Strategy.parse(config.strategy)
        elif len(set(domain)) == 1:
            strategy = Strategy(domain[0], domain[0])
        else:
            raise ConfigError(f"{name} is not cubic; give an explicit strategy", "strategy")
        label = "all"
        if config.group_by is not None:
            label = f"{config.group_by}={container.params.get(config.group_by)}"
        group = groups.setdefault(label, {"pred": [], "ref": []})
        spec = RolloutSpec(strategy, 1, conditioning_for(container, config.data.param_keys, config.samples),
                           history, config.steps)

        for t in range(history - 1, len(container) - 1):
            u_in = frames[t - history + 1:t + 1].reshape((-1,) + domain)[None]
            u_in = u_in.expand((config.samples,) + tuple(u_in.shape[1:]))
            with torch.no_grad():
                samples = predict_step(model, u_in, spec, generator)
            write_blob(out / "samples" / name / f"{t + 1:04d}.blob", f"{name}_{t + 1}", samples)
            group["pred"].extend(s.numpy() for s in samples)
            group["ref"].append(frames[t + 1].numpy())
        artifacts.append(out / "samples" / name)
        logger.info(f"{name}: sampled {config.samples} x {len(container) - history} states with {config.steps} Euler steps")

    pooled = {"pred": [s for g in groups.values() for s in g["pred"]],
              "ref": [s for g in groups.values() for s in g["ref"]]}
    if len(groups) > 1:
        groups["pooled"] = pooled
    rows = []
    for label, group in groups.items():
        p_pred = profile_moments(group["pred"], config.flow_axis, config.wall_axis)
        p_ref = profile_moments(group["ref"], config.flow_axis, config.wall_axis)
        tag = label.replace("=", "_")
        for m in (1, 2, 3):
            rows.append({"run_id": label, "step": m, "metric": f"profile_l2_m{m}", "value": profile_l2(p_pred, p_ref, m)})
            artifacts.append(write_profile_csv(p_pred, m, out / "profiles" / f"{tag}_m{m}_pred.csv"))
            artifacts.append(write_profile_csv(p_ref, m, out / "profiles" / f"{tag}_m{m}_ref.csv"))
    artifacts.insert(0, write_metrics_csv(rows, out / "metrics.csv"))
    return artifacts


def cmd_gradcheck(config: GradcheckConfig, threads: int) -> Artifacts:
    """Finite-difference audit of every parameter of a small P3D in float64."""
    generator = torch.Generator().manual_seed(config.seed)
    model = P3D(ModelConfig.from_dict(config.model)).double()
    # zero-initialised projections would hide most of the graph
    perturb_parameters(model, config.perturb, generator)
    c = model.config
    shape = (config.batch, c.in_channels) + tuple(config.extents)
    x = torch.randn(shape, generator=generator, dtype=torch.float64)
    target = torch.randn((config.batch, c.out_channels) + tuple(config.extents), generator=generator,
                         dtype=torch.float64)

    results = check_module_gradients(
        model, lambda: mse_loss(model(x), target), config.samples_per_tensor, config.step, generator,
    )
    frame = pd.DataFrame([
        {"name": r.name, "index": r.index, "analytic": r.analytic, "numeric": r.numeric,
         "rel_error": r.rel_error, "passed": r.passes(config.rtol)}
        for r in results
    ])
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "gradcheck.csv", index=False)
    failed = frame[~frame["passed"]]
    report = {
        "entries": len(frame), "tensors": int(frame["name"].nunique()), "failed": len(failed),
        "worst_rel_error": float(frame["rel_error"].max()) if len(frame) else 0.0, "rtol": config.rtol,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    if len(failed):
        logger.error(f"{len(failed)} gradient entries exceed rtol {config.rtol}: {sorted(set(failed['name']))[:5]}")
        raise ValidationError(f"{len(failed)} gradient entries failed the audit", "gradients")
    logger.info(f"All {len(frame)} sampled gradient entries within rtol {config.rtol}")
    return [out / "gradcheck.csv", out / "report.json"]


COMMANDS: Dict[str, Callable[[RunConfig, int], Artifacts]] = {
    "gen": cmd_gen,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "rollout": cmd_rollout,
    "sample": cmd_sample,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p3d", description="3-D PDE surrogate toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCHEMAS:
        cmd = sub.add_parser(name, help=(COMMANDS[name].__doc__ or "").split("\n")[0] or None)
        cmd.add_argument("config", help="JSON run config")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument("--threads", type=int, default=None, help="worker/thread cap (default: $P3D_THREADS or 1)")
    return parser


def run(command: str, config_path: str, seed=None, out=None, threads=None) -> Artifacts:
    config = load_run_config(command, config_path, {"seed": seed, "out": out, "threads": threads})
    configure_logging(config.logging.level, config.logging.format)
    workers = resolve_threads(config.threads)
    configure_threads(workers)
    seed_everything(config.seed)
    logger.info(f"p3d {command} {config_path} (seed {config.seed}, threads {workers}, out {config.out})")
    with deterministic_mode(config.deterministic):
        artifacts = COMMANDS[command](config, workers)
    validate_artifacts(artifacts)
    return artifacts


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        artifacts = run(args.command, args.config, args.seed, args.out, args.threads)
    except DOMAIN_ERRORS as e:
        logger.error(f"p3d {args.command} failed: {e}")
        return 1
    logger.info(f"p3d {args.command} wrote {len(artifacts)} artifacts")
    return 0


if __name__ == "__main__":
    sys.exit(main())
