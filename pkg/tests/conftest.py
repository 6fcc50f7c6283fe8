import csv
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from dmsnet.config import config_from_dict


def make_toy_corpus(root, per_class=((("N",), 6), (("D",), 6)), image_size=64, seed=7):
    """Write a small patient index plus decodable images.

    ``per_class`` maps single-label class letters to patient counts.
    Class N images are dark, class D images bright, so the two are
    trivially separable for learnability checks.
    """
    root = Path(root)
    image_dir = root / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    class_order = ("N", "D", "G", "C", "A", "H", "M", "O")

    rows = []
    patient = 0
    for letters, count in per_class:
        labels = [1 if c in letters else 0 for c in class_order]
        base = 60 if "N" in letters else 190
        for _ in range(count):
            pid = f"p{patient:03d}"
            for side in ("left", "right"):
                arr = np.clip(
                    rng.normal(base, 25, size=(image_size, image_size, 3)), 0, 255
                ).astype(np.uint8)
                Image.fromarray(arr).save(image_dir / f"{pid}_{side}.jpg")
            rows.append([pid, 55, "Male", f"{pid}_left.jpg", f"{pid}_right.jpg"] + labels)
            patient += 1

    csv_path = root / "index.csv"
    with open(csv_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["ID", "Patient Age", "Patient Sex", "Left-Fundus",
                         "Right-Fundus"] + list(class_order))
        writer.writerows(rows)
    return csv_path, image_dir


def tiny_run_config(csv_path, data_dir, out_dir, seed=11, **model_overrides):
    """Desk-scale run config: resnet50 at 128 px, small embedding."""
    model = {
        "backbone_name": "resnet50",
        "input_resolution": 128,
        "embedding_dim": 32,
        "heads": 4,
        "dense_growth": 8,
        **model_overrides,
    }
    return config_from_dict({
        "data_csv": str(csv_path),
        "data_dir": str(data_dir),
        "output_dir": str(out_dir),
        "seed": seed,
        "split_ratios": [0.5, 0.25, 0.25],
        "model": model,
        "train": {
            "learning_rate": 1e-3,
            "batch_size": 8,
            "epochs": 1,
            "cosine_schedule": False,
        },
        "augment": {"multiplier": 1.5},
    })


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    csv_path, image_dir = make_toy_corpus(root)
    return {"root": root, "csv": csv_path, "images": image_dir}


@pytest.fixture(scope="session")
def prepared_toy(toy_corpus, tmp_path_factory):
    """A prepared dataset directory shared by harness-level tests."""
    from dmsnet.dataio import prepare_dataset

    data_dir = tmp_path_factory.mktemp("prepared")
    manifest = prepare_dataset(
        toy_corpus["csv"], data_dir, resolution=128,
        ratios=(0.5, 0.25, 0.25), seed=11, multiplier=1.5,
    )
    return {"dir": data_dir, "manifest": manifest, "csv": toy_corpus["csv"]}


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)


# ---------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion at the end of the run

_ACCEPTANCE_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or "test_acceptance" not in str(item.fspath):
        return
    marker = item.get_closest_marker("criterion")
    if marker:
        key = (marker.args[0], marker.args[1])
        passed = report.passed and _ACCEPTANCE_RESULTS.get(key, True)
        _ACCEPTANCE_RESULTS[key] = passed


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title): acceptance criterion metadata")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for (number, title), passed in sorted(_ACCEPTANCE_RESULTS.items()):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} [{status}]: {title}")
