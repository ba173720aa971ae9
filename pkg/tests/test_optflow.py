import numpy as np
import pytest

from artifact.frameio import LumaImage
from artifact.optflow import (
    FlowError,
    FlowField,
    FlowParams,
    flow_mean_magnitude,
    flow_sequence_fields,
    flow_two_frame,
    magnitude_stat,
    poly_expansion,
    read_flow,
    write_flow,
)
from artifact.synthgen import base_texture


def _lsq_oracle(img, y0, x0, poly_n, poly_sigma):
    """Direct Gaussian-weighted least-squares fit at one pixel.

    Assembles the windowed design matrix over the in-image samples only and
    solves it outright; no separable-correlation machinery involved.
    """
    n = poly_n // 2
    h, w = img.shape
    rows, targets, weights = [], [], []
    for dy in range(-n, n + 1):
        for dx in range(-n, n + 1):
            y, x = y0 + dy, x0 + dx
            if not (0 <= y < h and 0 <= x < w):
                continue
            rows.append([1.0, dx, dy, dx * dx, dy * dy, dx * dy])
            targets.append(img[y, x])
            weights.append(
                np.exp(-(dx * dx + dy * dy) / (2.0 * poly_sigma**2))
            )
    sw = np.sqrt(np.array(weights))
    design = np.array(rows) * sw[:, None]
    rhs = np.array(targets) * sw
    sol, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    return sol  # [c, bx, by, axx, ayy, axy_times_2]


def test_expansion_matches_direct_lsq_oracle():
    rng = np.random.default_rng(11)
    img = rng.random((24, 30))
    coeffs = poly_expansion(LumaImage(data=img), poly_n=5, poly_sigma=1.1)
    # interior, edges, and the corner all go through distinct solve paths
    for y0, x0 in [(12, 15), (0, 15), (12, 0), (0, 0), (23, 29), (1, 28)]:
        c, bx, by, axx, ayy, r6 = _lsq_oracle(img, y0, x0, 5, 1.1)
        assert coeffs.c[y0, x0] == pytest.approx(c, abs=1e-6)
        assert coeffs.bx[y0, x0] == pytest.approx(bx, abs=1e-6)
        assert coeffs.by[y0, x0] == pytest.approx(by, abs=1e-6)
        assert coeffs.axx[y0, x0] == pytest.approx(axx, abs=1e-6)
        assert coeffs.ayy[y0, x0] == pytest.approx(ayy, abs=1e-6)
        assert coeffs.axy[y0, x0] == pytest.approx(r6 / 2.0, abs=1e-6)


def test_expansion_constant_image():
    img = LumaImage(data=np.full((20, 20), 0.37))
    coeffs = poly_expansion(img)
    for field in (coeffs.bx, coeffs.by, coeffs.axx, coeffs.axy, coeffs.ayy):
        assert np.abs(field).max() < 1e-6
    assert np.allclose(coeffs.c, 0.37, atol=1e-6)


def test_expansion_linear_ramp():
    xs = np.arange(32, dtype=np.float64)
    img = LumaImage(data=np.tile(0.5 + 0.01 * xs, (32, 1)))
    coeffs = poly_expansion(img)
    inner = slice(3, -3)
    assert np.allclose(coeffs.bx[inner, inner], 0.01, atol=1e-9)
    assert np.abs(coeffs.by[inner, inner]).max() < 1e-9
    assert np.abs(coeffs.axx[inner, inner]).max() < 1e-9


def test_expansion_quadratic_bowl():
    alpha = 1e-4
    ys, xs = np.mgrid[0:40, 0:40].astype(np.float64)
    img = LumaImage(data=alpha * ((xs - 20) ** 2 + (ys - 20) ** 2) / 2.0)
    coeffs = poly_expansion(img)
    inner = slice(4, -4)
    assert np.allclose(coeffs.axx[inner, inner], alpha / 2, atol=1e-9)
    assert np.allclose(coeffs.ayy[inner, inner], alpha / 2, atol=1e-9)
    assert np.abs(coeffs.axy[inner, inner]).max() < 1e-9
    # b at the bowl center is the local gradient: zero
    assert coeffs.bx[20, 20] == pytest.approx(0.0, abs=1e-9)


def test_expansion_rejects_even_poly_n():
    img = LumaImage(data=np.zeros((8, 8)))
    with pytest.raises(ValueError, match="odd"):
        poly_expansion(img, poly_n=4)


def test_flow_params_validation():
    with pytest.raises(ValueError):
        FlowParams(pyramid_levels=0)
    with pytest.raises(ValueError):
        FlowParams(pyramid_scale=1.0)
    with pytest.raises(ValueError):
        FlowParams(window_size=4)
    with pytest.raises(ValueError):
        FlowParams(poly_sigma=0.0)
    assert FlowParams().digest() == FlowParams().digest()
    assert FlowParams().digest() != FlowParams(poly_n=7).digest()


def test_flow_identical_frames_is_zero():
    img = LumaImage(data=base_texture(3, 96, 96))
    field = flow_two_frame(img, img)
    assert float(field.magnitude().max()) < 1e-3


def test_flow_constant_frames_pinned_to_zero():
    a = LumaImage(data=np.full((64, 64), 0.5))
    field = flow_two_frame(a, a)
    assert float(field.magnitude().max()) == 0.0


def test_flow_dimension_mismatch():
    a = LumaImage(data=np.zeros((32, 32)))
    b = LumaImage(data=np.zeros((32, 48)))
    with pytest.raises(FlowError, match="mismatch"):
        flow_two_frame(a, b)


def test_flow_recovers_small_translation():
    base = base_texture(5, 128, 128)
    a = LumaImage(data=base)
    b = LumaImage(data=np.roll(base, (1, 2), axis=(0, 1)))
    field = flow_two_frame(a, b)
    h, w = field.u.shape
    inner = (slice(h // 10, -h // 10), slice(w // 10, -w // 10))
    err = np.hypot(field.u[inner] - 2, field.v[inner] - 1)
    assert float(np.median(err)) < 0.5


def test_flow_determinism():
    base = base_texture(9, 80, 80)
    a = LumaImage(data=base)
    b = LumaImage(data=np.roll(base, (0, 3), axis=(0, 1)))
    f1 = flow_two_frame(a, b)
    f2 = flow_two_frame(a, b)
    assert np.array_equal(f1.u, f2.u) and np.array_equal(f1.v, f2.v)


def test_sequence_fields_match_pairwise_flow():
    base = base_texture(2, 64, 64)
    frames = [
        LumaImage(data=np.roll(base, (0, s), axis=(0, 1))) for s in (0, 2, 3)
    ]
    seq_fields = list(flow_sequence_fields(frames))
    assert len(seq_fields) == 2
    for (a, b), got in zip(zip(frames[:-1], frames[1:]), seq_fields):
        ref = flow_two_frame(a, b)
        assert np.array_equal(got.u, ref.u) and np.array_equal(got.v, ref.v)


def test_magnitude_stats():
    field = FlowField(u=np.full((4, 4), 3.0), v=np.full((4, 4), 4.0))
    assert flow_mean_magnitude(field) == pytest.approx(5.0)
    assert magnitude_stat(field, "max") == pytest.approx(5.0)

    u = np.zeros((2, 4))
    u[:, 2:] = 2.0
    field = FlowField(u=u, v=np.zeros((2, 4)))
    assert flow_mean_magnitude(field) == pytest.approx(1.0)
    assert magnitude_stat(field, "p95") == pytest.approx(2.0)
    with pytest.raises(ValueError, match="unknown magnitude stat"):
        magnitude_stat(field, "median")


def test_flow_field_validation():
    with pytest.raises(FlowError):
        FlowField(u=np.zeros((2, 2)), v=np.zeros((3, 2)))
    with pytest.raises(FlowError):
        FlowField(u=np.full((2, 2), np.inf), v=np.zeros((2, 2)))


def test_flow_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    u = rng.normal(size=(17, 23)).astype(np.float32).astype(np.float64)
    v = rng.normal(size=(17, 23)).astype(np.float32).astype(np.float64)
    path = tmp_path / "field.fmgf"
    write_flow(FlowField(u=u, v=v), path)

    raw = path.read_bytes()
    assert raw[:4] == b"FMGF"
    assert len(raw) == 12 + 23 * 17 * 8

    again = read_flow(path)
    assert np.array_equal(again.u, u)
    assert np.array_equal(again.v, v)


def test_flow_dump_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.fmgf"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FlowError, match="magic"):
        read_flow(path)


def test_flow_dump_rejects_truncation(tmp_path):
    path = tmp_path / "good.fmgf"
    write_flow(FlowField(u=np.zeros((4, 4)), v=np.zeros((4, 4))), path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FlowError, match="truncated"):
        read_flow(path)
