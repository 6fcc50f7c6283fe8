"""Training and evaluation harness over prepared dataset directories.

Determinism contract: sample order within an epoch is a pure function
of (seed, epoch), evaluation iterates the manifest order, and all
randomness is seeded up front, so a command rerun with the same config,
seed, and checkpoint reproduces its outputs.
"""

import json
import random
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import config_from_dict, config_to_dict
from .errors import CheckpointError, DataError
from .metrics import evaluate_predictions
from .model import build_model, compute_loss

BEST_CHECKPOINT = "best.pt"
LAST_CHECKPOINT = "last.pt"


class ManifestDataset:
    """Lazy (left, right, label) access for one split of a prepared set."""

    def __init__(self, data_dir, split=None):
        self.root = Path(data_dir)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise DataError(f"prepared dataset manifest not found: {manifest_path}")
        self.manifest = json.loads(manifest_path.read_text())
        records = self.manifest["samples"]
        if split is not None:
            records = [r for r in records if r["split"] == split]
        self.records = records
        self.split = split

    def __len__(self):
        return len(self.records)

    def load(self, index):
        record = self.records[index]
        left = _image_tensor(self.root / record["left"])
        right = _image_tensor(self.root / record["right"])
        label = torch.tensor(record["labels"], dtype=torch.float32)
        return left, right, label

    def load_batch(self, indices):
        triples = [self.load(i) for i in indices]
        return tuple(torch.stack(items) for items in zip(*triples))


def _image_tensor(path):
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def epoch_order(seed, epoch, n):
    """Deterministic per-epoch shuffle, independent of call history."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def iter_batches(n, batch_size, order=None):
    indices = order if order is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield indices[start:start + batch_size]


@torch.no_grad()
def collect_scores(model, dataset, batch_size=16, device="cpu"):
    """Class scores and truth vectors over a whole split, manifest order."""
    model.eval()
    mode = model.config.task_mode
    scores, truths = [], []
    for batch in iter_batches(len(dataset), batch_size):
        left, right, labels = dataset.load_batch(batch)
        logits = model(left.to(device), right.to(device))
        probs = (torch.softmax(logits, dim=1) if mode == "multiclass"
                 else torch.sigmoid(logits))
        scores.append(probs.cpu().numpy())
        truths.append(labels.numpy())
    if not scores:
        raise DataError(f"split '{dataset.split}' of {dataset.root} is empty")
    return np.concatenate(scores), np.concatenate(truths)


def evaluate_split(model, dataset, batch_size=16, device="cpu", require_auc=False):
    scores, truths = collect_scores(model, dataset, batch_size, device)
    return evaluate_predictions(scores, truths, model.config.task_mode,
                                require_auc=require_auc)


def save_checkpoint(path, model, optimizer=None, scheduler=None, epoch=0,
                    run_config=None, best_kappa=None):
    """Single-archive checkpoint: parameters, optimizer state, epoch
    counter, run config, and RNG states, enough to resume bit-compatible
    evaluation."""
    payload = {
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer else None,
        "scheduler_state": scheduler.state_dict() if scheduler else None,
        "epoch": epoch,
        "config": config_to_dict(run_config) if run_config else None,
        "best_kappa": best_kappa,
        "rng": {
            "torch": torch.get_rng_state(),
            "numpy": np.random.get_state(),
            "python": random.getstate(),
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        return torch.load(path, map_location="cpu", weights_only=False)
    except (RuntimeError, EOFError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc


def restore_model(payload, expected_model_config=None):
    """Rebuild the network a checkpoint was saved from.

    Raises CheckpointError when the stored architecture disagrees with
    the caller's expectation or the weights do not fit.
    """
    if payload.get("config") is None:
        raise CheckpointError("checkpoint carries no run config")
    run_cfg = config_from_dict(payload["config"])
    if expected_model_config is not None and run_cfg.model != expected_model_config:
        raise CheckpointError(
            "checkpoint architecture does not match the requested config: "
            f"saved {run_cfg.model}, requested {expected_model_config}")
    model = build_model(run_cfg.model)
    try:
        model.load_state_dict(payload["model_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint weights do not fit the model: {exc}") from exc
    return model, run_cfg


def restore_rng(payload):
    rng = payload.get("rng") or {}
    if "torch" in rng:
        torch.set_rng_state(rng["torch"])
    if "numpy" in rng:
        np.random.set_state(rng["numpy"])
    if "python" in rng:
        random.setstate(rng["python"])


def train_run(run_cfg, resume_from=None, log_path=None):
    """Train per the config; returns a small summary dict.

    Writes one JSON line per epoch (train loss plus the validation
    report) and keeps two checkpoints in the output dir: the last epoch
    and the best validation kappa.
    """
    out_dir = Path(run_cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path else out_dir / "training_log.jsonl"

    seed_everything(run_cfg.seed)
    device = torch.device(run_cfg.device)
    train_set = ManifestDataset(run_cfg.data_dir, "train")
    val_set = ManifestDataset(run_cfg.data_dir, "val")
    if len(train_set) == 0:
        raise DataError(f"train split of {run_cfg.data_dir} is empty")

    tc = run_cfg.train
    start_epoch = 0
    best_kappa = None
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        model, _ = restore_model(payload, expected_model_config=run_cfg.model)
        model.to(device)
        optimizer = torch.optim.Adam(model.parameters(), lr=tc.learning_rate,
                                     weight_decay=tc.weight_decay)
        scheduler = _make_scheduler(optimizer, tc)
        if payload.get("optimizer_state"):
            optimizer.load_state_dict(payload["optimizer_state"])
        if scheduler is not None and payload.get("scheduler_state"):
            scheduler.load_state_dict(payload["scheduler_state"])
        start_epoch = payload["epoch"]
        best_kappa = payload.get("best_kappa")
        restore_rng(payload)
    else:
        model = build_model(run_cfg.model).to(device)
        optimizer = torch.optim.Adam(model.parameters(), lr=tc.learning_rate,
                                     weight_decay=tc.weight_decay)
        scheduler = _make_scheduler(optimizer, tc)

    steps_done = 0
    epochs_run = 0
    log_mode = "a" if resume_from is not None else "w"
    with open(log_path, log_mode) as log:
        for epoch in range(start_epoch, tc.epochs):
            epochs_run += 1
            model.train()
            order = epoch_order(run_cfg.seed, epoch, len(train_set))
            losses = []
            for batch in iter_batches(len(train_set), tc.batch_size, order):
                if tc.max_steps is not None and steps_done >= tc.max_steps:
                    break
                left, right, labels = train_set.load_batch(batch)
                optimizer.zero_grad()
                loss = compute_loss(model(left.to(device), right.to(device)),
                                    labels.to(device), run_cfg.model.task_mode)
                loss.backward()
                optimizer.step()
                losses.append(loss.item())
                steps_done += 1
            if scheduler is not None:
                scheduler.step()

            val_report = evaluate_split(model, val_set, tc.batch_size, device)
            record = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)) if losses else None,
                "val": val_report.to_dict(),
            }
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()

            save_checkpoint(out_dir / LAST_CHECKPOINT, model, optimizer, scheduler,
                            epoch + 1, run_cfg, best_kappa)
            if best_kappa is None or val_report.kappa > best_kappa:
                best_kappa = val_report.kappa
                save_checkpoint(out_dir / BEST_CHECKPOINT, model, optimizer, scheduler,
                                epoch + 1, run_cfg, best_kappa)
            if tc.max_steps is not None and steps_done >= tc.max_steps:
                break

    return {
        "epochs_run": epochs_run,
        "steps": steps_done,
        "best_kappa": best_kappa,
        "last_checkpoint": str(out_dir / LAST_CHECKPOINT),
        "best_checkpoint": str(out_dir / BEST_CHECKPOINT),
        "log": str(log_path),
    }


def _make_scheduler(optimizer, train_cfg):
    if not train_cfg.cosine_schedule:
        return None
    return torch.optim.lr_scheduler.CosineAnnealingLR(optimizer,
                                                      T_max=max(train_cfg.epochs, 1))
