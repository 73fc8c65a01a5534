# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Claimfusion: multimodal fusion for insurance-claim fraud detection.
"""

from claimfusion.core.enums import *
from claimfusion.core.exceptions import *
from claimfusion.core.fusion import FusionBlock, FusionConfig
from claimfusion.core.models import *
from claimfusion.core.records import *
from claimfusion.tools.experiment_tools import ExperimentUtils
from claimfusion.tools.feature_tools import FeatureUtils
from claimfusion.tools.grad_tools import GradUtils
from claimfusion.tools.io_tools import IoUtils
from claimfusion.tools.json_tools import JsonUtils
from claimfusion.tools.metric_tools import MetricUtils
from claimfusion.tools.report_tools import ReportUtils
from claimfusion.tools.synth_tools import SynthUtils
from claimfusion.tools.train_tools import TrainUtils


class Utils(
    ExperimentUtils,
    FeatureUtils,
    GradUtils,
    IoUtils,
    JsonUtils,
    MetricUtils,
    ReportUtils,
    SynthUtils,
    TrainUtils,
):
    """
    All claimfusion utilities in one namespace.
    """


Tools = Utils()
