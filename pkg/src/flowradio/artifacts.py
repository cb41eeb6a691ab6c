"""PNG snapshots, CSV curves and config echoes written by the CLI."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

UPSCALE = 4


def _scaled(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(v.shape, dtype=np.uint8), lo, hi
    return np.round((v - lo) / (hi - lo) * 255.0).astype(np.uint8), lo, hi


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write_grayscale(path, values, units: str = "dB") -> None:
    """8-bit grayscale PNG scaled to the image's own min/max, plus a sidecar JSON."""
    path = Path(path)
    pix, lo, hi = _scaled(values)
    pix = np.kron(pix, np.ones((UPSCALE, UPSCALE), dtype=np.uint8))
    path.write_bytes(_png_bytes(Image.fromarray(pix, mode="L")))
    write_json(path.with_suffix(".json"), {"min": lo, "max": hi, "units": units,
                                           "scaling": "linear min-max to 0..255",
                                           "upscale": UPSCALE})


def write_trajectory_overlay(path, background, trajectories, observed_mask) -> None:
    """Background in gray, initial/visited samples in blue, flight paths in red."""
    pix, lo, hi = _scaled(background)
    rgb = np.stack([pix] * 3, axis=-1)
    rgb[observed_mask] = (40, 90, 255)
    for traj in trajectories:
        for c in traj.cells:
            rgb[c[0], c[1]] = (255, 40, 40)
    if trajectories and trajectories[0].cells:
        s = trajectories[0].cells[0]
        rgb[s[0], s[1]] = (40, 220, 40)
    rgb = np.kron(rgb, np.ones((UPSCALE, UPSCALE, 1), dtype=np.uint8))
    path = Path(path)
    path.write_bytes(_png_bytes(Image.fromarray(rgb, mode="RGB")))
    write_json(path.with_suffix(".json"), {"background_min": lo, "background_max": hi,
                                           "upscale": UPSCALE,
                                           "colors": {"path": "red", "observed": "blue", "start": "green"}})


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_curve_csv(path, records) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "samples", "nmse"])
    for r in records:
        w.writerow([r["steps"], r["samples"], repr(float(r["nmse"]))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
