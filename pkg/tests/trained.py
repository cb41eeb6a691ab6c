"""Shared trained-model fixture for the desk-scale checks.

The model and its dataset live under ``.cache/acceptance`` (override with
``FLOWRADIO_ACCEPTANCE_DIR``). When absent they are produced with the CLI
defaults, which takes roughly half an hour on one CPU core.
"""

import functools
import os
import time
from pathlib import Path

from flowradio.activeloop import STRATEGIES, LoopConfig, run_strategy
from flowradio.cli import main
from flowradio.flowmodel import VelocityField
from flowradio.scenegen import GeneratorConfig, generate_scenario, load_dataset, render_map, scenario_seed

ROOT = Path(__file__).resolve().parents[1]


def acceptance_dir() -> Path:
    return Path(os.environ.get("FLOWRADIO_ACCEPTANCE_DIR", ROOT / ".cache" / "acceptance"))


@functools.cache
def ensure_model():
    d = acceptance_dir()
    data, model = d / "data", d / "model.bin"
    if not (data / "test" / "manifest.json").exists():
        assert main(["gen", "--out", str(data)]) == 0
    if not model.exists():
        assert main(["train", "--data", str(data), "--out", str(model)]) == 0
    return VelocityField.load(model), model, load_dataset(data / "test")


@functools.cache
def active_runs(budget=400, n_seeds=10):
    """All three strategies on the held-out scenario seeds, run once per session."""
    field, _, _ = ensure_model()
    start = time.perf_counter()
    runs = {s: [] for s in STRATEGIES}
    for i in range(n_seeds):
        truth = render_map(generate_scenario(field.shape_, GeneratorConfig(), scenario_seed(0, i, "test")))
        for s in STRATEGIES:
            runs[s].append(run_strategy(s, truth, field, LoopConfig(budget=budget, seed=i)))
    return runs, time.perf_counter() - start
