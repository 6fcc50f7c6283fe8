"""Paired-image ingestion, illumination correction, CutMix, and splits.

The dataset is a CSV index of patients (one row per patient with the
left/right image filenames and 8 indicator label columns) plus an image
directory. ``prepare_dataset`` turns that into a self-contained
directory of illumination-corrected, resized PNGs, class-preserving
CutMix augmentations, and a manifest JSON that is byte-identical across
re-runs with the same seed.

Randomness contract: every augmented sample draws from its own stream
``default_rng([seed, sample_index])``, so parallel and serial
generation produce identical outputs.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import (
    DataError,
    EmptyDatasetError,
    FormatError,
    HomogeneityError,
    SchemaError,
    ShapeError,
)
from .model import CLASS_NAMES

METADATA_COLUMNS = ("ID", "Patient Age", "Patient Sex", "Left-Fundus", "Right-Fundus")
REQUIRED_COLUMNS = METADATA_COLUMNS + CLASS_NAMES

PARTITIONS = ("train", "val", "test")


@dataclass
class PairedSample:
    """One patient record: both eye images plus the 8-dim label vector."""

    patient_id: str
    age: int
    sex: str
    left_path: Path
    right_path: Path
    labels: tuple
    provenance: str = "original"
    source_ids: tuple = ()
    box: tuple | None = None  # CutMix paste box (y0, x0, y1, x1), augmented only


@dataclass
class LoadReport:
    total_rows: int = 0
    loaded: int = 0
    skipped: int = 0
    skipped_ids: list = field(default_factory=list)

    def to_dict(self):
        return {
            "total_rows": self.total_rows,
            "loaded": self.loaded,
            "skipped": self.skipped,
            "skipped_ids": list(self.skipped_ids),
        }


@dataclass
class SplitManifest:
    """Deterministic patient -> partition assignment."""

    seed: int
    ratios: tuple
    assignment: dict


def load_odir_index(csv_path, image_dir=None):
    """Read the patient index; returns (samples, report).

    Rows whose image files are missing are skipped and counted in the
    report. Image filenames resolve against ``image_dir`` (defaults to
    an ``images`` directory beside the CSV).
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise DataError(f"index file not found: {csv_path}")
    image_dir = Path(image_dir) if image_dir is not None else csv_path.parent / "images"

    with open(csv_path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise EmptyDatasetError(f"index file is empty: {csv_path}")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"index is missing required columns: {missing}")
        rows = list(reader)
    if not rows:
        raise EmptyDatasetError(f"index has a header but no rows: {csv_path}")

    samples = []
    report = LoadReport(total_rows=len(rows))
    for row in rows:
        left = image_dir / row["Left-Fundus"]
        right = image_dir / row["Right-Fundus"]
        if not left.exists() or not right.exists():
            report.skipped += 1
            report.skipped_ids.append(row["ID"])
            continue
        labels = tuple(int(row[c]) for c in CLASS_NAMES)
        samples.append(PairedSample(
            patient_id=str(row["ID"]),
            age=int(float(row["Patient Age"])),
            sex=row["Patient Sex"],
            left_path=left,
            right_path=right,
            labels=labels,
        ))
        report.loaded += 1
    return samples, report


def illumination_correct(image):
    """Flatten non-uniform illumination in an 8-bit RGB array.

    Per channel, the background is estimated by a Gaussian blur with
    standard deviation width/30 (slow enough to spare vessels and
    lesions), subtracted, and the channel mean added back; the result
    is clipped to [0, 255]. A spatially constant image is a fixed point
    up to rounding.
    """
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise FormatError(
            f"expected an 8-bit RGB array (H, W, 3), got shape {arr.shape} dtype {arr.dtype}")
    sigma = arr.shape[1] / 30.0
    out = np.empty_like(arr)
    for c in range(3):
        channel = arr[..., c].astype(np.float64)
        background = gaussian_filter(channel, sigma=sigma, mode="reflect")
        corrected = channel - background + channel.mean()
        out[..., c] = np.clip(np.rint(corrected), 0, 255).astype(np.uint8)
    return out


def resize_center_crop(image, size):
    """Aspect-preserving resize (short side to ``size``) + center crop."""
    img = Image.fromarray(image) if isinstance(image, np.ndarray) else image
    width, height = img.size
    scale = size / min(width, height)
    img = img.resize((max(size, round(width * scale)), max(size, round(height * scale))),
                     Image.BILINEAR)
    width, height = img.size
    left = (width - size) // 2
    top = (height - size) // 2
    return np.asarray(img.crop((left, top, left + size, top + size)))


def sample_cutmix_box(height, width, rng):
    """One paste rectangle: area ratio from Beta(1, 1), square-root
    scaling of both sides, uniformly placed center, clipped to bounds."""
    lam = rng.beta(1.0, 1.0)
    ratio = math.sqrt(1.0 - lam)
    cut_h = int(round(height * ratio))
    cut_w = int(round(width * ratio))
    cy = int(rng.integers(0, height))
    cx = int(rng.integers(0, width))
    y0 = max(cy - cut_h // 2, 0)
    x0 = max(cx - cut_w // 2, 0)
    y1 = min(cy + cut_h // 2, height)
    x1 = min(cx + cut_w // 2, width)
    return y0, x0, y1, x1


def cutmix_arrays(base, donor, box):
    """Paste the donor's pixels into a copy of the base inside the box."""
    if base.shape != donor.shape:
        raise ShapeError(f"image shapes differ: {base.shape} vs {donor.shape}")
    y0, x0, y1, x1 = box
    out = base.copy()
    out[y0:y1, x0:x1] = donor[y0:y1, x0:x1]
    return out


def _load_rgb(path):
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc


def paired_cutmix(base, donor, rng, out_dir, index=0):
    """Mix two same-label samples; one box is applied to both eyes.

    Both samples must already be at a common resolution. Writes
    ``aug_<baseID>_<donorID>_<index>_{left,right}.png`` under
    ``out_dir`` and returns the new sample with its paste box recorded.
    """
    if base.labels != donor.labels:
        raise HomogeneityError(
            f"cutmix requires matching labels, got {base.labels} vs {donor.labels} "
            f"for patients {base.patient_id} and {donor.patient_id}")
    base_left, base_right = _load_rgb(base.left_path), _load_rgb(base.right_path)
    donor_left, donor_right = _load_rgb(donor.left_path), _load_rgb(donor.right_path)
    for arr in (base_right, donor_left, donor_right):
        if arr.shape != base_left.shape:
            raise ShapeError("cutmix inputs must share one resolution; run prepare first")

    box = sample_cutmix_box(base_left.shape[0], base_left.shape[1], rng)
    mixed_left = cutmix_arrays(base_left, donor_left, box)
    mixed_right = cutmix_arrays(base_right, donor_right, box)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"aug_{base.patient_id}_{donor.patient_id}_{index}"
    left_path = out_dir / f"{stem}_left.png"
    right_path = out_dir / f"{stem}_right.png"
    Image.fromarray(mixed_left).save(left_path)
    Image.fromarray(mixed_right).save(right_path)

    return PairedSample(
        patient_id=stem,
        age=base.age,
        sex=base.sex,
        left_path=left_path,
        right_path=right_path,
        labels=base.labels,
        provenance="augmented",
        source_ids=(base.patient_id, donor.patient_id),
        box=box,
    )


def _largest_remainder_counts(n, ratios):
    ideals = [n * r for r in ratios]
    counts = [int(math.floor(v)) for v in ideals]
    leftover = n - sum(counts)
    remainders = sorted(range(len(ratios)), key=lambda i: (ideals[i] - counts[i], -i),
                        reverse=True)
    for i in remainders[:leftover]:
        counts[i] += 1
    return counts


def stratified_split(samples, ratios=(0.8, 0.1, 0.1), seed=42):
    """Assign patients to train/val/test preserving class proportions.

    Per label vector, partition counts are the largest-remainder
    rounding of the ideal fractions, so every class lands within one
    sample of its global proportion in every partition. Deterministic
    for a fixed seed.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != len(PARTITIONS):
        raise DataError(f"expected {len(PARTITIONS)} ratios, got {len(ratios)}")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must be positive and sum to 1, got {ratios}")

    groups = {}
    for sample in samples:
        groups.setdefault(sample.labels, []).append(sample.patient_id)

    rng = np.random.default_rng(seed)
    assignment = {}
    for key in sorted(groups):
        ids = groups[key]
        if len(ids) < len(PARTITIONS):
            warnings.warn(
                f"class {key} has only {len(ids)} sample(s) for {len(PARTITIONS)} "
                f"partitions; assignment is best-effort", stacklevel=2)
        order = rng.permutation(len(ids))
        counts = _largest_remainder_counts(len(ids), ratios)
        cursor = 0
        for partition, count in zip(PARTITIONS, counts):
            for idx in order[cursor:cursor + count]:
                assignment[ids[idx]] = partition
            cursor += count
    return SplitManifest(seed=seed, ratios=ratios, assignment=assignment)


def _sample_to_manifest(sample, root):
    return {
        "patient_id": sample.patient_id,
        "age": sample.age,
        "sex": sample.sex,
        "left": str(Path(sample.left_path).relative_to(root)),
        "right": str(Path(sample.right_path).relative_to(root)),
        "labels": list(sample.labels),
        "provenance": sample.provenance,
        "source_ids": list(sample.source_ids),
        "box": list(sample.box) if sample.box is not None else None,
    }


def prepare_dataset(csv_path, out_dir, image_dir=None, resolution=224,
                    ratios=(0.8, 0.1, 0.1), seed=42, multiplier=2.0,
                    per_class=None, augment_partitions=("train",)):
    """Build a processed dataset directory plus its manifest.

    Originals are illumination-corrected, resized, and re-encoded as
    PNG; augmented samples are CutMix blends of same-label, same-
    partition originals (so augmentation never leaks across splits).
    ``multiplier`` scales each class toward ``multiplier * n`` samples;
    ``per_class`` overrides it for single-label classes by class letter.
    Returns the manifest dict, which is also written to
    ``out_dir/manifest.json`` with sorted keys (byte-identical across
    re-runs with the same inputs and seed).
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    per_class = per_class or {}

    raw_samples, report = load_odir_index(csv_path, image_dir)
    if not raw_samples:
        raise EmptyDatasetError(f"no usable samples in {csv_path}")
    split = stratified_split(raw_samples, ratios, seed)

    processed = []
    for sample in raw_samples:
        pair = {}
        for side, path in (("left", sample.left_path), ("right", sample.right_path)):
            arr = illumination_correct(resize_center_crop(_load_rgb(path), resolution))
            target = images_dir / f"{sample.patient_id}_{side}.png"
            Image.fromarray(arr).save(target)
            pair[side] = target
        processed.append(PairedSample(
            patient_id=sample.patient_id, age=sample.age, sex=sample.sex,
            left_path=pair["left"], right_path=pair["right"], labels=sample.labels,
        ))

    assignment = dict(split.assignment)
    augmented = []
    aug_index = 0
    for partition in augment_partitions:
        members = [s for s in processed if assignment[s.patient_id] == partition]
        groups = {}
        for sample in members:
            groups.setdefault(sample.labels, []).append(sample)
        for key in sorted(groups):
            group = groups[key]
            factor = multiplier
            if sum(key) == 1:
                factor = per_class.get(CLASS_NAMES[key.index(1)], multiplier)
            extra = int(round((factor - 1.0) * len(group)))
            for j in range(max(extra, 0)):
                rng = np.random.default_rng([seed, aug_index])
                base = group[j % len(group)]
                donor = group[int(rng.integers(0, len(group)))]
                new_sample = paired_cutmix(base, donor, rng, images_dir, aug_index)
                assignment[new_sample.patient_id] = partition
                augmented.append(new_sample)
                aug_index += 1

    manifest = {
        "seed": seed,
        "ratios": list(split.ratios),
        "resolution": resolution,
        "class_names": list(CLASS_NAMES),
        "load_report": report.to_dict(),
        "samples": [
            dict(_sample_to_manifest(s, out_dir), split=assignment[s.patient_id])
            for s in processed + augmented
        ],
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest
