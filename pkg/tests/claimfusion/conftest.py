# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
import pytest

from claimfusion.core.models import Dims
from claimfusion.core.records import ClaimRecord
from claimfusion.tools.synth_tools import SynthConfig, SynthDraw, SynthTools
from claimfusion.tools.train_tools import TrainConfig


TINY_DIMS = Dims(
    mm_dim=8,
    out_dim=8,
    chunks=2,
    rank=2,
    pool_factor=2,
    fusion_hidden=(8,),
    mlp_hidden=(8,),
    encoder_hidden=8,
    dropout_p=0.1,
)
TINY_SYNTH = SynthConfig(n_claims=80, fraud_rate=0.25, images=(1, 2), seed=3)
TINY_TRAIN = TrainConfig(max_epochs=2, patience=1, batch_size=16, seeds=(0,), dtype="float64")


@pytest.fixture(scope="session")
def tiny_draw() -> SynthDraw:
    return SynthTools.generate_synthetic(TINY_SYNTH)


@pytest.fixture(scope="session")
def tiny_records(tiny_draw: SynthDraw) -> list[ClaimRecord]:
    return tiny_draw.records


@pytest.fixture()
def tiny_dims() -> Dims:
    return TINY_DIMS


@pytest.fixture()
def tiny_train() -> TrainConfig:
    return TINY_TRAIN
