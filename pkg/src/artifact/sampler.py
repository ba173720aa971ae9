"""Flow-magnitude-guided dynamic frame sampling.

Pipeline: per-transition instability scores from dense optical flow, a
centered moving-average smooth, minimum-distance peak detection, top-K peak
selection, clip assembly around each peak, and finalization (merge, trim,
gap-fill) down to exactly M frame indices. Degenerate inputs (short videos,
flat profiles) fall back to uniform spacing.

Scores are indexed by transition: S[t] measures the motion from frame t
into frame t+1, so a peak at transition t is materialized by frame t+1.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .frameio import FrameSequence
from .optflow import (
    FlowParams,
    flow_sequence_fields,
    flow_two_frame,
    magnitude_stat,
)

__all__ = [
    "SamplerParams",
    "InstabilityProfile",
    "Clip",
    "SampledIndices",
    "SamplerError",
    "instability_profile",
    "smooth",
    "find_peaks",
    "top_k_peaks",
    "build_clips",
    "finalize_clips",
    "fmg_dfs",
    "uniform_indices",
    "random_indices",
]

TAG_CLIP = "clip"
TAG_GAP_FILL = "gap_fill"
TAG_FALLBACK = "fallback_uniform"


class SamplerError(ValueError):
    """Raised for invalid sampler inputs."""


@dataclass(frozen=True)
class SamplerParams:
    """Knobs of the sampling pipeline.

    k: number of motion peaks to keep; w: minimum distance between accepted
    peaks, in frames; m: total number of frames to sample; w_s: smoothing
    window length applied to the raw scores.
    """

    k: int = 3
    w: int = 5
    m: int = 10
    w_s: int = 3

    def __post_init__(self) -> None:
        for name in ("k", "w", "m", "w_s"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class InstabilityProfile:
    """Per-transition motion scores for one video.

    scores[t] is the flow-magnitude statistic of the transition from frame t
    to frame t+1; there are n_frames - 1 of them.
    """

    scores: tuple[float, ...]
    n_frames: int
    params_digest: str = ""
    stat: str = "mean"
    source_id: str = ""

    def __post_init__(self) -> None:
        if len(self.scores) != self.n_frames - 1:
            raise SamplerError(
                f"expected {self.n_frames - 1} scores for {self.n_frames} frames, "
                f"got {len(self.scores)}"
            )
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.size and not (np.isfinite(arr).all() and (arr >= 0.0).all()):
            raise SamplerError("scores must be finite and non-negative")


@dataclass(frozen=True)
class Clip:
    """Half-open frame interval [start, end) built around a motion peak.

    peak is the frame index the originating peak transition enters;
    peak_score the smoothed score at that transition.
    """

    start: int
    end: int
    peak: int
    peak_score: float

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise SamplerError(f"invalid clip [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SampledIndices:
    """Final sample: sorted unique frame indices plus a per-index tag.

    Tags: "clip" (inside a peak clip), "gap_fill" (added to reach m),
    "fallback_uniform" (degenerate input, uniform spacing).
    """

    indices: tuple[int, ...]
    provenance: tuple[str, ...]
    n_frames: int
    peaks: tuple[int, ...] = ()
    clips: tuple[Clip, ...] = ()

    def __post_init__(self) -> None:
        if len(self.indices) != len(self.provenance):
            raise SamplerError("indices and provenance lengths differ")
        prev = -1
        for i in self.indices:
            if not prev < i < self.n_frames:
                raise SamplerError(
                    f"indices must be strictly increasing in [0, {self.n_frames})"
                )
            prev = i


def instability_profile(
    seq: FrameSequence,
    fp: FlowParams = FlowParams(),
    stat: str = "mean",
    jobs: int = 1,
) -> InstabilityProfile:
    """Score every adjacent frame pair of ``seq`` by its flow magnitude.

    Parameters
    ----------
    seq : FrameSequence
        At least two frames, uniform dimensions.
    fp : FlowParams
        Flow estimator parameters.
    stat : str
        Reduction of each flow field: "mean", "max", or "p95".
    jobs : int
        Worker threads; transitions are independent frame pairs.

    Returns
    -------
    InstabilityProfile
    """
    frames = seq.frames
    if len(frames) < 2:
        raise SamplerError("sequence too short for flow")

    if jobs > 1 and len(frames) > 2:
        pairs = list(zip(frames[:-1], frames[1:]))

        def score(pair):
            return magnitude_stat(flow_two_frame(pair[0], pair[1], fp), stat)

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(score, pairs))
    else:
        # Single-threaded path shares each frame's pyramid expansions
        # between its two transitions.
        scores = [
            magnitude_stat(field, stat)
            for field in flow_sequence_fields(frames, fp)
        ]
    return InstabilityProfile(
        scores=tuple(scores),
        n_frames=len(frames),
        params_digest=fp.digest(),
        stat=stat,
        source_id=seq.source_id,
    )


def smooth(scores, w_s: int) -> list[float]:
    """Centered moving average of window ``w_s``, truncated at the ends.

    Boundary windows shrink to the valid index range and the average is
    taken over the actual count, so constants are preserved exactly and
    w_s=1 is the identity.
    """
    if w_s < 1:
        raise SamplerError("w_s must be >= 1")
    vals = list(scores)
    if not vals:
        raise SamplerError("cannot smooth an empty score list")
    left = (w_s - 1) // 2
    right = w_s // 2
    out = []
    for i in range(len(vals)):
        lo = max(0, i - left)
        hi = min(len(vals), i + right + 1)
        out.append(sum(vals[lo:hi]) / (hi - lo))
    return out


def find_peaks(scores, w: int) -> list[int]:
    """Strict local maxima, greedily thinned to pairwise distance >= w.

    Candidates are interior indices with scores[i] > both neighbors.
    They are accepted in descending score order (ties broken toward the
    lower index); a candidate within distance < w of an already accepted
    peak is discarded. Result is sorted ascending.
    """
    if w < 1:
        raise SamplerError("w must be >= 1")
    vals = list(scores)
    candidates = [
        i
        for i in range(1, len(vals) - 1)
        if vals[i] > vals[i - 1] and vals[i] > vals[i + 1]
    ]
    accepted: list[int] = []
    for i in sorted(candidates, key=lambda i: (-vals[i], i)):
        if all(abs(i - a) >= w for a in accepted):
            accepted.append(i)
    return sorted(accepted)


def top_k_peaks(peaks, scores_smooth, k: int) -> list[int]:
    """The min(k, len(peaks)) highest-scoring peaks, re-sorted by index.

    Ties go to the lower index.
    """
    if k < 1:
        raise SamplerError("k must be >= 1")
    ranked = sorted(peaks, key=lambda i: (-scores_smooth[i], i))
    return sorted(ranked[:k])


def build_clips(peaks_top, scores_smooth, n: int, m: int, k: int) -> list[Clip]:
    """One clip of f_per = max(1, m // k) frames around each selected peak.

    A peak at transition t enters frame p = t + 1; the clip is
    [max(0, p - f_per // 2), min(n, start + f_per)).
    """
    f_per = max(1, m // k)
    clips = []
    for t in peaks_top:
        p = t + 1
        start = max(0, p - f_per // 2)
        end = min(n, start + f_per)
        clips.append(Clip(start=start, end=end, peak=p, peak_score=scores_smooth[t]))
    return clips


def _frame_score(j: int, scores_smooth) -> float:
    # Frame j is scored by the transition entering it; frame 0 borrows S[0].
    return scores_smooth[j - 1] if j > 0 else scores_smooth[0]


def _merge_clips(clips) -> list[Clip]:
    merged: list[Clip] = []
    for c in sorted(clips, key=lambda c: (c.start, c.end)):
        if merged and c.start <= merged[-1].end:
            prev = merged[-1]
            keep = prev if prev.peak_score >= c.peak_score else c
            merged[-1] = Clip(
                start=prev.start,
                end=max(prev.end, c.end),
                peak=keep.peak,
                peak_score=keep.peak_score,
            )
        else:
            merged.append(c)
    return merged


def finalize_clips(clips, n: int, m: int, scores_smooth) -> SampledIndices:
    """Merge overlapping clips, then trim or gap-fill to exactly m indices.

    Trimming removes one frame at a time from a clip end, choosing the clip
    whose last frame has the lowest smoothed score (ties: longest clip, then
    lowest start). Gap-filling adds the uncovered frame with the highest
    smoothed score (ties: lowest index) until m is reached or every frame is
    covered.
    """
    merged = _merge_clips(clips)

    def total() -> int:
        return sum(len(c) for c in merged)

    while total() > m:
        victim = min(
            range(len(merged)),
            key=lambda i: (
                _frame_score(merged[i].end - 1, scores_smooth),
                -len(merged[i]),
                merged[i].start,
            ),
        )
        c = merged[victim]
        if len(c) == 1:
            merged.pop(victim)
        else:
            merged[victim] = replace(c, end=c.end - 1)

    covered = sorted({j for c in merged for j in range(c.start, c.end)})
    fills: list[int] = []
    if total() < m:
        uncovered = sorted(set(range(n)) - set(covered))
        uncovered.sort(key=lambda j: (-_frame_score(j, scores_smooth), j))
        fills = sorted(uncovered[: m - total()])

    tagged = [(j, TAG_CLIP) for j in covered] + [(j, TAG_GAP_FILL) for j in fills]
    tagged.sort()
    return SampledIndices(
        indices=tuple(j for j, _ in tagged),
        provenance=tuple(tag for _, tag in tagged),
        n_frames=n,
        clips=tuple(merged),
    )


def uniform_indices(n: int, m: int) -> list[int]:
    """m near-evenly spaced indices over [0, n); all of them when n <= m.

    Spacing follows round(i * (n-1) / (m-1)) with half-up rounding; m=1
    takes the middle frame.
    """
    if n < 1 or m < 1:
        raise SamplerError("n and m must be >= 1")
    if n <= m:
        return list(range(n))
    if m == 1:
        return [(n - 1) // 2]
    raw = [math.floor(i * (n - 1) / (m - 1) + 0.5) for i in range(m)]
    return sorted(set(raw))


def random_indices(n: int, m: int, seed: int = 0) -> list[int]:
    """min(m, n) distinct indices drawn uniformly without replacement."""
    if n < 1 or m < 1:
        raise SamplerError("n and m must be >= 1")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(n, size=min(m, n), replace=False))


def _uniform_result(n: int, m: int, scores_smooth=None) -> SampledIndices:
    idxs = uniform_indices(n, m)
    want = min(m, n)
    if len(idxs) < want and scores_smooth is not None:
        rest = sorted(set(range(n)) - set(idxs))
        rest.sort(key=lambda j: (-_frame_score(j, scores_smooth), j))
        idxs = sorted(idxs + rest[: want - len(idxs)])
    return SampledIndices(
        indices=tuple(idxs),
        provenance=(TAG_FALLBACK,) * len(idxs),
        n_frames=n,
    )


def fmg_dfs(
    seq_or_profile,
    sp: SamplerParams = SamplerParams(),
    fp: FlowParams = FlowParams(),
    stat: str = "mean",
    jobs: int = 1,
) -> SampledIndices:
    """Full sampling pipeline: profile, smooth, peaks, clips, finalize.

    Accepts either a FrameSequence (flow is computed here) or a precomputed
    InstabilityProfile. Videos with n <= m short-circuit to all indices, and
    profiles with no strict local maxima fall back to uniform spacing; both
    fallbacks are tagged "fallback_uniform".
    """
    if isinstance(seq_or_profile, InstabilityProfile):
        profile = seq_or_profile
        n = profile.n_frames
    else:
        profile = None
        n = len(seq_or_profile.frames)

    if n <= sp.m:
        return SampledIndices(
            indices=tuple(range(n)),
            provenance=(TAG_FALLBACK,) * n,
            n_frames=n,
        )

    if profile is None:
        profile = instability_profile(seq_or_profile, fp, stat=stat, jobs=jobs)

    scores_smooth = smooth(profile.scores, sp.w_s)
    peaks = find_peaks(scores_smooth, sp.w)
    top = top_k_peaks(peaks, scores_smooth, sp.k)
    if not top:
        return _uniform_result(n, sp.m, scores_smooth)

    clips = build_clips(top, scores_smooth, n, sp.m, sp.k)
    result = finalize_clips(clips, n, sp.m, scores_smooth)
    return replace(result, peaks=tuple(top))
