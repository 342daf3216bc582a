# Copyright 2026 The irfsod Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Shared fixtures for the Python smoke tests."""

import os
from pathlib import Path

import pytest

CONFIG_DIR = Path(os.environ.get("IRFSOD_CONFIG_DIR", Path(__file__).resolve().parents[2] / "configs"))

# A detector small enough to train in a second or two.
TINY = [
    "backbone.channels=4,4",
    "backbone.strides=2,2",
    "rpn.scales=12,20",
    "rpn.ratios=1",
    "rpn.hidden_channels=4",
    "rpn.pre_nms_top_n=40",
    "rpn.post_nms_top_n=8",
    "heads.roi_resolution=2",
    "heads.comparison_hidden=4",
    "heads.regressor_hidden=6",
    "heads.roi_samples=8",
    "heads.score_threshold=0.05",
    "train.shots=3",
    "train.iterations=3",
]


@pytest.fixture(scope="session")
def shapes_config():
    return CONFIG_DIR / "shapes.cfg"
