# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Static loss-curve images from metrics files.
"""

import logging
from pathlib import Path
from typing import Sequence

import matplotlib.pyplot as plt

from gats_engine.core.exceptions import ConfigurationError
from gats_engine.core.metrics import read_metrics

logger = logging.getLogger(__name__)

plt.switch_backend("Agg")


def plot_metrics(metrics_path: Path, output: Path, keys: Sequence[str] = ("loss",), log_scale: bool = True) -> Path:
    """
    Plot ``keys`` against ``step`` and save a PNG.

    Raises
    ------
    ConfigurationError
        If the file holds none of the requested series
    """
    records = read_metrics(metrics_path)
    plt.figure()
    drawn = 0
    for key in keys:
        points = [(r["step"], r[key]) for r in records if isinstance(r.get(key), (int, float)) and "step" in r]
        if not points:
            continue
        steps, values = zip(*points)
        plt.plot(steps, values, label=key)
        drawn += 1
    if not drawn:
        plt.close()
        raise ConfigurationError(f"{metrics_path} has no numeric series named {', '.join(keys)}")
    plt.xlabel("Step")
    plt.ylabel("Loss")
    if log_scale:
        plt.yscale("log")
    plt.title(Path(metrics_path).name)
    plt.legend()
    plt.grid(True)
    plt.tight_layout()
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(output)
    plt.close()
    logger.info(f"Loss curve written to {output}")
    return output
