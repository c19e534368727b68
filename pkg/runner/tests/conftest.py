"""Shared fixtures: small dataset directories in the toolkit's on-disk layout.

Tests construct inputs with the abspos library and judge outputs with the
abspos CLI; the runner package under test never imports abspos itself.
"""

import pytest

from abspos.dataset import Dataset, save_dataset
from abspos.synth import build_eval_set, build_train_set, iter_images


def _save(samples, name, path):
    ds = Dataset(name, 0, samples)
    save_dataset(ds, path, images=iter_images(ds))
    return path


@pytest.fixture(scope="session")
def slice20(tmp_path_factory):
    """A 20-sample synthetic dataset directory with images."""
    samples = build_eval_set(seed=0).samples[:20]
    return _save(samples, "slice20", tmp_path_factory.mktemp("data") / "slice20")


@pytest.fixture(scope="session")
def split_dataset(tmp_path_factory):
    """A dataset root with recorded train/ (50 samples) and val/ (18) splits."""
    train, val = build_train_set(seed=0)
    root = tmp_path_factory.mktemp("data") / "split"
    _save(train.samples[:50], "mini-train", root / "train")
    _save(val.samples[:18], "mini-val", root / "val")
    return root
