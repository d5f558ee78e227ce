import numpy as np
import pytest

import altfreeze as af

TINY_SHAPE = (3, 8, 16, 16)


@pytest.fixture(scope="session")
def ref_spec():
    return af.reference_model_spec()


@pytest.fixture(scope="session")
def tiny_spec():
    """Reference architecture on a small input, for cheap training tests."""
    return af.reference_model_spec(TINY_SHAPE)


@pytest.fixture(scope="session")
def tiny_data():
    spec = af.DatasetSpec(
        clip_shape=TINY_SHAPE,
        seed=5,
        train_real=24,
        train_fake=24,
        probe_real=12,
        probe_fake=12,
    )
    return spec, af.build_training_set(spec)


@pytest.fixture(scope="session")
def quick_trained(tiny_spec, tiny_data):
    """A briefly trained model on the tiny training set; shared across tests."""
    spec, train_ds = tiny_data
    cfg = af.TrainConfig(
        batch_size=8,
        epochs=30,
        lr=0.05,
        seed=3,
        freezing=False,
        flip=True,
        cutout=False,
        noise=False,
        fake_clip_augs=False,
    )
    model = af.build_model(tiny_spec, seed=3)
    model, rows = af.train(model, train_ds, cfg)
    return model, train_ds, rows
