"""Dense two-frame optical flow via pyramidal polynomial expansion.

Each pixel's neighborhood is approximated by a quadratic model
f(x) ~ x'Ax + b'x + c fitted with Gaussian-weighted least squares
(separable correlations; weights renormalized over the valid support at
image borders, no reflection padding). Displacement between two frames is
solved from the paired expansions, with the per-pixel normal equations
averaged over a Gaussian window, inside a coarse-to-fine Gaussian pyramid.

All operations are pure functions of immutable inputs and are bit
deterministic for identical inputs and parameters.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .frameio import LumaImage

__all__ = [
    "FlowParams",
    "FlowField",
    "QuadCoeffs",
    "FlowError",
    "poly_expansion",
    "flow_two_frame",
    "flow_sequence_fields",
    "flow_mean_magnitude",
    "magnitude_stat",
    "write_flow",
    "read_flow",
]

# Ridge added to the window-averaged normal matrix so textureless regions
# solve to zero displacement instead of erroring.
SINGULARITY_EPS = 1e-6

# Tiny relative ridge on the expansion normal matrix; keeps degenerate
# corner supports solvable without measurably biasing the fit.
_EXPANSION_RIDGE = 1e-10

_MIN_LEVEL_DIM = 16

FLOW_MAGIC = b"FMGF"


class FlowError(ValueError):
    """Raised for invalid flow inputs (dimension mismatch, bad dump file)."""


@dataclass(frozen=True)
class FlowParams:
    """Parameters of the pyramidal polynomial-expansion flow estimator."""

    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    window_size: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def __post_init__(self) -> None:
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not (0.0 < self.pyramid_scale < 1.0):
            raise ValueError("pyramid_scale must be in (0, 1)")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and >= 3")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.poly_n < 3 or self.poly_n % 2 == 0:
            raise ValueError("poly_n must be odd and >= 3")
        if self.poly_sigma <= 0.0:
            raise ValueError("poly_sigma must be > 0")

    def digest(self) -> str:
        """Short stable identifier of this parameter set."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement field in pixels. u is horizontal, v vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise FlowError(
                f"u/v must be matching 2-D arrays, got {self.u.shape} and {self.v.shape}"
            )
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise FlowError("flow field contains non-finite values")

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class QuadCoeffs:
    """Per-pixel quadratic expansion: A = [[axx, axy], [axy, ayy]], b = (bx, by)."""

    c: np.ndarray
    bx: np.ndarray
    by: np.ndarray
    axx: np.ndarray
    axy: np.ndarray
    ayy: np.ndarray


# Basis ordering [1, x, y, x^2, y^2, xy] as (x exponent, y exponent).
_BASIS_EXP = ((0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1))


def _poly_kernels(poly_n: int, poly_sigma: float):
    """1-D Gaussian moment kernels t^m * g(t) for m = 0..4."""
    n = poly_n // 2
    t = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-(t * t) / (2.0 * poly_sigma * poly_sigma))
    g /= g.sum()
    return [g * t**m for m in range(5)], n


def _expand_arrays(img: np.ndarray, poly_n: int, poly_sigma: float) -> np.ndarray:
    """Quadratic-fit coefficients r[..., 0:6] for every pixel of ``img``.

    Implements normalized convolution: both the moment projections and the
    per-pixel normal matrix are correlations against a zero-certainty
    exterior, so border fits are renormalized over the valid support.
    """
    h, w = img.shape
    kernels, n = _poly_kernels(poly_n, poly_sigma)

    # Moment projections of the image: v_i = corr(f, g(u) * basis_i(u)).
    vx = {
        m: correlate1d(img, kernels[m], axis=1, mode="constant", cval=0.0)
        for m in (0, 1, 2)
    }
    v = np.empty((6, h, w))
    for i, (mx, my) in enumerate(_BASIS_EXP):
        v[i] = correlate1d(vx[mx], kernels[my], axis=0, mode="constant", cval=0.0)

    # The normal matrix G(p) is separable: each entry is the product of a
    # per-column and a per-row moment profile of the valid-support indicator.
    cx = [
        correlate1d(np.ones(w), kernels[m], mode="constant", cval=0.0)
        for m in range(5)
    ]
    cy = [
        correlate1d(np.ones(h), kernels[m], mode="constant", cval=0.0)
        for m in range(5)
    ]
    full = [float(k.sum()) for k in kernels]

    g0 = np.empty((6, 6))
    for i, (mxi, myi) in enumerate(_BASIS_EXP):
        for j, (mxj, myj) in enumerate(_BASIS_EXP):
            g0[i, j] = full[mxi + mxj] * full[myi + myj]
    ridge = _EXPANSION_RIDGE * float(np.max(np.diag(g0)))
    g0[np.diag_indices(6)] += ridge

    r = np.empty((h, w, 6))

    # Interior pixels share the constant normal matrix.
    yi0, yi1 = min(n, h), max(h - n, 0)
    xi0, xi1 = min(n, w), max(w - n, 0)
    if yi1 > yi0 and xi1 > xi0:
        v_int = v[:, yi0:yi1, xi0:xi1].reshape(6, -1)
        r_int = np.linalg.solve(g0, v_int)
        r[yi0:yi1, xi0:xi1, :] = r_int.T.reshape(yi1 - yi0, xi1 - xi0, 6)

    # Border band: per-pixel normal matrices assembled from the profiles.
    border = np.ones((h, w), dtype=bool)
    if yi1 > yi0 and xi1 > xi0:
        border[yi0:yi1, xi0:xi1] = False
    ys, xs = np.nonzero(border)
    if ys.size:
        gb = np.empty((ys.size, 6, 6))
        for i, (mxi, myi) in enumerate(_BASIS_EXP):
            for j, (mxj, myj) in enumerate(_BASIS_EXP):
                gb[:, i, j] = cy[myi + myj][ys] * cx[mxi + mxj][xs]
        gb[:, np.arange(6), np.arange(6)] += ridge
        vb = v[:, ys, xs].T[..., None]
        try:
            rb = np.linalg.solve(gb, vb)[..., 0]
        except np.linalg.LinAlgError:
            rb = (np.linalg.pinv(gb) @ vb)[..., 0]
        r[ys, xs, :] = rb
    return r


def poly_expansion(
    img: LumaImage, poly_n: int = 5, poly_sigma: float = 1.1
) -> QuadCoeffs:
    """Fit f(x) ~ x'Ax + b'x + c over each pixel's Gaussian-weighted window.

    ``poly_n`` is the odd neighborhood width (the window spans
    ``poly_n // 2`` pixels to each side); ``poly_sigma`` the Gaussian std of
    the applicability weights. Coefficients are finite everywhere; border
    windows are renormalized over the in-image support.
    """
    if poly_n < 3 or poly_n % 2 == 0:
        raise ValueError("poly_n must be odd and >= 3")
    r = _expand_arrays(np.asarray(img.data, dtype=np.float64), poly_n, poly_sigma)
    return QuadCoeffs(
        c=r[..., 0],
        bx=r[..., 1],
        by=r[..., 2],
        axx=r[..., 3],
        ayy=r[..., 4],
        axy=0.5 * r[..., 5],
    )


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    t = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def _blur_renorm(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with border weights renormalized in-image."""
    if sigma <= 0.0:
        return img
    half = max(1, int(round(sigma * 2.5)))
    g = _gaussian_kernel(2 * half + 1, sigma)
    num = correlate1d(img, g, axis=1, mode="constant", cval=0.0)
    num = correlate1d(num, g, axis=0, mode="constant", cval=0.0)
    den_x = correlate1d(np.ones(img.shape[1]), g, mode="constant", cval=0.0)
    den_y = correlate1d(np.ones(img.shape[0]), g, mode="constant", cval=0.0)
    return num / np.outer(den_y, den_x)


def _resize_bilinear(arr: np.ndarray, h2: int, w2: int) -> np.ndarray:
    h1, w1 = arr.shape
    if (h1, w1) == (h2, w2):
        return arr
    ys = np.clip((np.arange(h2) + 0.5) * (h1 / h2) - 0.5, 0.0, h1 - 1.0)
    xs = np.clip((np.arange(w2) + 0.5) * (w1 / w2) - 0.5, 0.0, w1 - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h1 - 1)
    x1 = np.minimum(x0 + 1, w1 - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = arr[np.ix_(y0, x0)] * (1.0 - wx) + arr[np.ix_(y0, x1)] * wx
    bot = arr[np.ix_(y1, x0)] * (1.0 - wx) + arr[np.ix_(y1, x1)] * wx
    return top * (1.0 - wy) + bot * wy


def _warp_stack(stack: np.ndarray, u: np.ndarray, v: np.ndarray, grid):
    """Bilinearly sample every plane of ``stack`` at x + d, clamped."""
    h, w = u.shape
    ys, xs = grid
    fx = np.clip(xs + u, 0.0, w - 1.0)
    fy = np.clip(ys + v, 0.0, h - 1.0)
    x0 = fx.astype(np.intp)
    y0 = fy.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = fx - x0
    wy = fy - y0
    top = stack[:, y0, x0] * (1.0 - wx) + stack[:, y0, x1] * wx
    bot = stack[:, y1, x0] * (1.0 - wx) + stack[:, y1, x1] * wx
    return top * (1.0 - wy) + bot * wy


def _solve_level(r0, r1w_stack, u, v, kernel, norm, grid):
    """One displacement update at a single pyramid level.

    ``r1w_stack`` holds the second frame's (axx, axy, ayy, bx, by) planes;
    they are warped here by the current estimate before averaging.
    """
    if u.any() or v.any():
        waxx, waxy, wayy, wbx, wby = _warp_stack(r1w_stack, u, v, grid)
    else:
        waxx, waxy, wayy, wbx, wby = r1w_stack
    axx = 0.5 * (r0[..., 3] + waxx)
    axy = 0.5 * (0.5 * r0[..., 5] + waxy)
    ayy = 0.5 * (r0[..., 4] + wayy)
    dbx = -0.5 * (wbx - r0[..., 1]) + axx * u + axy * v
    dby = -0.5 * (wby - r0[..., 2]) + axy * u + ayy * v

    fields = np.empty((5,) + u.shape)
    np.multiply(axx, axx, out=fields[0])
    fields[0] += axy * axy
    np.multiply(axy, axx + ayy, out=fields[1])
    np.multiply(axy, axy, out=fields[2])
    fields[2] += ayy * ayy
    np.multiply(axx, dbx, out=fields[3])
    fields[3] += axy * dby
    np.multiply(axy, dbx, out=fields[4])
    fields[4] += ayy * dby

    fields = correlate1d(fields, kernel, axis=2, mode="constant", cval=0.0)
    fields = correlate1d(fields, kernel, axis=1, mode="constant", cval=0.0)
    fields /= norm
    g11, g12, g22, h1, h2 = fields

    eps = SINGULARITY_EPS
    det = (g11 + eps) * (g22 + eps) - g12 * g12
    u_new = ((g22 + eps) * h1 - g12 * h2) / det
    v_new = ((g11 + eps) * h2 - g12 * h1) / det
    return u_new, v_new


def _level_sizes(h0: int, w0: int, params: FlowParams) -> list[tuple[int, int]]:
    sizes: list[tuple[int, int]] = [(h0, w0)]
    for k in range(1, params.pyramid_levels):
        s = params.pyramid_scale**k
        hk, wk = round(h0 * s), round(w0 * s)
        if min(hk, wk) < _MIN_LEVEL_DIM:
            break
        sizes.append((hk, wk))
    return sizes


def _pyramid_expansions(base: np.ndarray, params: FlowParams, sizes) -> list:
    """Per-level expansion coefficients of one frame, finest first.

    Level k is the base frame blurred with sigma = (1/scale_k - 1)/2 and
    bilinearly resized; expansions of the same frame can then be shared
    between the two flow computations it participates in.
    """
    out = []
    for k, (hk, wk) in enumerate(sizes):
        scale = params.pyramid_scale**k
        sigma = (1.0 / scale - 1.0) * 0.5
        lvl = _resize_bilinear(_blur_renorm(base, sigma), hk, wk)
        out.append(_expand_arrays(lvl, params.poly_n, params.poly_sigma))
    return out


def _flow_from_expansions(ra, rb, sizes, params: FlowParams) -> FlowField:
    win_kernel = _gaussian_kernel(params.window_size, 0.15 * params.window_size)
    u = v = None
    for k in range(len(sizes) - 1, -1, -1):
        hk, wk = sizes[k]
        if u is None:
            u = np.zeros((hk, wk))
            v = np.zeros((hk, wk))
        else:
            u = _resize_bilinear(u, hk, wk) / params.pyramid_scale
            v = _resize_bilinear(v, hk, wk) / params.pyramid_scale

        norm_x = correlate1d(np.ones(wk), win_kernel, mode="constant", cval=0.0)
        norm_y = correlate1d(np.ones(hk), win_kernel, mode="constant", cval=0.0)
        norm = np.outer(norm_y, norm_x)
        grid = np.meshgrid(
            np.arange(hk, dtype=np.float64),
            np.arange(wk, dtype=np.float64),
            indexing="ij",
        )
        r1 = rb[k]
        r1w = np.stack(
            [r1[..., 3], 0.5 * r1[..., 5], r1[..., 4], r1[..., 1], r1[..., 2]]
        )
        for _ in range(params.iterations):
            u, v = _solve_level(ra[k], r1w, u, v, win_kernel, norm, grid)
    return FlowField(u=u, v=v)


def flow_two_frame(
    a: LumaImage, b: LumaImage, params: FlowParams = FlowParams()
) -> FlowField:
    """Estimate dense flow from frame ``a`` to frame ``b``.

    Coarse-to-fine: Gaussian pyramids of both frames, zero initialization at
    the coarsest level, each finer level seeded with the upsampled and
    rescaled coarser estimate. Per level the displacement is re-solved
    ``iterations`` times from the polynomial expansions, warping the second
    frame's coefficients by the current estimate. Textureless regions are
    pinned to zero by the eps-ridge on the averaged normal matrix.
    """
    if (a.height, a.width) != (b.height, b.width):
        raise FlowError(
            f"dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    base_a = np.asarray(a.data, dtype=np.float64)
    base_b = np.asarray(b.data, dtype=np.float64)
    sizes = _level_sizes(*base_a.shape, params)
    ra = _pyramid_expansions(base_a, params, sizes)
    rb = _pyramid_expansions(base_b, params, sizes)
    return _flow_from_expansions(ra, rb, sizes, params)


def flow_sequence_fields(frames, params: FlowParams = FlowParams()):
    """Yield the flow field of every adjacent pair of ``frames``.

    Equivalent to flow_two_frame over each pair, but each frame's pyramid
    expansions are computed once and shared between its two transitions, so
    a sequence costs roughly half. Only two frames' expansions are held at
    a time.
    """
    frames = list(frames)
    if len(frames) < 2:
        return
    sizes = _level_sizes(frames[0].height, frames[0].width, params)
    prev = _pyramid_expansions(
        np.asarray(frames[0].data, dtype=np.float64), params, sizes
    )
    for frame in frames[1:]:
        if (frame.height, frame.width) != (frames[0].height, frames[0].width):
            raise FlowError("sequence frames must share dimensions")
        cur = _pyramid_expansions(
            np.asarray(frame.data, dtype=np.float64), params, sizes
        )
        yield _flow_from_expansions(prev, cur, sizes, params)
        prev = cur


def flow_mean_magnitude(field: FlowField) -> float:
    """Mean over all pixels of sqrt(u^2 + v^2), in pixels."""
    return float(field.magnitude().mean())


def magnitude_stat(field: FlowField, stat: str = "mean") -> float:
    """Reduce a flow field to one scalar: mean, max, or 95th percentile."""
    mag = field.magnitude()
    if stat == "mean":
        return float(mag.mean())
    if stat == "max":
        return float(mag.max())
    if stat == "p95":
        return float(np.percentile(mag, 95.0))
    raise ValueError(f"unknown magnitude stat {stat!r} (expected mean, max, or p95)")


def write_flow(field: FlowField, path) -> None:
    """Write the binary flow dump: magic, u32le dims, f32le (u, v) pairs."""
    h, w = field.u.shape
    interleaved = np.empty((h, w, 2), dtype="<f4")
    interleaved[..., 0] = field.u
    interleaved[..., 1] = field.v
    with open(Path(path), "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(interleaved.tobytes())


def read_flow(path) -> FlowField:
    """Read a flow dump written by :func:`write_flow`."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != FLOW_MAGIC:
        raise FlowError(f"{path}: not a flow dump (bad magic)")
    w, h = struct.unpack_from("<II", data, 4)
    expected = 12 + w * h * 8
    if len(data) != expected:
        raise FlowError(
            f"{path}: truncated flow dump: expected {expected} bytes, got {len(data)}"
        )
    interleaved = np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2)
    return FlowField(
        u=interleaved[..., 0].astype(np.float64),
        v=interleaved[..., 1].astype(np.float64),
    )
