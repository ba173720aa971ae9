"""Deterministic synthetic frame sequences with known motion ground truth.

Fixtures are built from one seeded noise texture, blurred so the local
gradients are smooth enough for polynomial-expansion flow, then animated by
toroidal integer shifts (every pixel keeps a true correspondent, so there
is no border-induced flow bias). The sidecar records the true per-transition
motion magnitude, which is what the sampler and flow tests score against.

Kinds: "translate" (one shifted transition), "burst" (per-transition shifts
inside intervals), "flicker" (global intensity alternation, zero motion),
"constant" (one frame repeated).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .frameio import FrameSequence, LumaImage, save_luma_png

__all__ = [
    "FixtureSpec",
    "FixtureError",
    "generate_frames",
    "generate",
    "base_texture",
]

KINDS = ("translate", "burst", "flicker", "constant")

# Blur of the raw noise; raw white noise violates the local-polynomial
# assumption the flow estimator relies on.
TEXTURE_BLUR_SIGMA = 1.5

_FRAME_NAME = "frame_{:05d}.png"
SIDECAR_NAME = "ground_truth.json"


class FixtureError(ValueError):
    """Raised for inconsistent fixture specifications."""


@dataclass(frozen=True)
class FixtureSpec:
    """Recipe for one synthetic sequence; (kind, params, seed) fix the output.

    ``at`` is the shifted transition for "translate"; ``intervals`` are
    inclusive [a, b] transition ranges for "burst" and frame ranges for
    "flicker"; ``shift`` is the integer (dx, dy) applied per shifted
    transition.
    """

    kind: str
    n: int
    width: int = 64
    height: int = 64
    seed: int = 0
    shift: tuple[int, int] = (0, 0)
    at: int | None = None
    intervals: tuple[tuple[int, int], ...] = ()
    amplitude: float = 0.2

    def __post_init__(self) -> None:
        problems = []
        if self.kind not in KINDS:
            problems.append(f"unknown kind {self.kind!r}: expected one of {KINDS}")
        if self.n < 1:
            problems.append("n must be >= 1")
        if min(self.width, self.height) < 8:
            problems.append("size must be at least 8x8")
        if self.kind == "translate":
            if self.at is None or not 0 <= self.at <= self.n - 2:
                problems.append(
                    f"translate needs a transition index 'at' in [0, {self.n - 1})"
                )
            if self.shift == (0, 0):
                problems.append("translate needs a non-zero shift")
        if self.kind == "burst":
            if not self.intervals:
                problems.append("burst needs at least one interval")
            if self.shift == (0, 0):
                problems.append("burst needs a non-zero shift")
            for a, b in self.intervals:
                if not 0 <= a <= b <= self.n - 2:
                    problems.append(
                        f"burst interval [{a}, {b}] outside transition range "
                        f"[0, {self.n - 1})"
                    )
        if self.kind == "flicker":
            if not self.intervals:
                problems.append("flicker needs at least one interval")
            if self.amplitude <= 0.0:
                problems.append("flicker needs amplitude > 0")
            for a, b in self.intervals:
                if not 0 <= a <= b <= self.n - 1:
                    problems.append(
                        f"flicker interval [{a}, {b}] outside frame range "
                        f"[0, {self.n})"
                    )
        if problems:
            raise FixtureError("; ".join(problems))


def _gaussian(sigma: float) -> np.ndarray:
    half = max(1, int(round(sigma * 2.5)))
    t = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def base_texture(seed: int, height: int, width: int) -> np.ndarray:
    """Seeded blurred noise in [0.1, 0.9], toroidally smooth."""
    rng = np.random.default_rng(seed)
    img = rng.random((height, width))
    g = _gaussian(TEXTURE_BLUR_SIGMA)
    img = correlate1d(img, g, axis=1, mode="wrap")
    img = correlate1d(img, g, axis=0, mode="wrap")
    lo, hi = float(img.min()), float(img.max())
    return 0.1 + 0.8 * (img - lo) / (hi - lo)


def _transition_shifts(spec: FixtureSpec) -> list[tuple[int, int]]:
    shifts = [(0, 0)] * max(0, spec.n - 1)
    if spec.kind == "translate":
        shifts[spec.at] = spec.shift
    elif spec.kind == "burst":
        for a, b in spec.intervals:
            for t in range(a, b + 1):
                shifts[t] = spec.shift
    return shifts


def generate_frames(spec: FixtureSpec) -> tuple[list[LumaImage], list[float]]:
    """Build the frames in memory plus the true per-transition magnitudes."""
    base = base_texture(spec.seed, spec.height, spec.width)
    shifts = _transition_shifts(spec)

    frames = []
    cum_dx = cum_dy = 0
    for i in range(spec.n):
        if i > 0:
            dx, dy = shifts[i - 1]
            cum_dx += dx
            cum_dy += dy
        data = np.roll(base, shift=(cum_dy, cum_dx), axis=(0, 1))
        if spec.kind == "flicker" and any(a <= i <= b for a, b in spec.intervals):
            sign = 1.0 if i % 2 == 0 else -1.0
            data = np.clip(data + sign * spec.amplitude, 0.0, 1.0)
        frames.append(LumaImage(data=data))

    magnitudes = [float(math.hypot(dx, dy)) for dx, dy in shifts]
    return frames, magnitudes


def generate(spec: FixtureSpec, out_dir) -> FrameSequence:
    """Write the fixture frames as PNGs plus a ground-truth sidecar.

    Returns the in-memory (unquantized) sequence; the files on disk are
    8-bit renderings of the same frames.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, magnitudes = generate_frames(spec)

    paths = []
    for i, frame in enumerate(frames):
        path = out_dir / _FRAME_NAME.format(i)
        save_luma_png(frame, path)
        paths.append(path)

    sidecar = asdict(spec)
    sidecar["intervals"] = [list(iv) for iv in spec.intervals]
    sidecar["shift"] = list(spec.shift)
    sidecar["magnitudes"] = magnitudes
    with open(out_dir / SIDECAR_NAME, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")

    return FrameSequence(
        frames=tuple(frames),
        source_id=out_dir.name,
        frame_paths=tuple(paths),
    )
