import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mistnet import ctgeom
from mistnet.ctgeom import (FanBeamGeometry, ImageGrid, Sinogram, back_project, fbp,
                            forward_project, interp_views, ramp_filter, sample_sparse)
from mistnet.ctgeom.fbp import ramp_kernel
from mistnet.ctgeom.phantoms import render_ellipses
from mistnet.ctgeom.projector import pixel_centers, ray_endpoints

DESK = FanBeamGeometry()
SMALL = FanBeamGeometry(n_detectors=12, n_views_full=8, image_size=16)


def disk(geom, radius, size=None):
    size = size or geom.image_size
    r = radius / (geom.fov_diameter / 2.0)
    return ImageGrid(render_ellipses([(1.0, r, r, 0.0, 0.0, 0.0)], size), geom)


def psnr(a, b):
    return 10 * np.log10(1.0 / np.mean((a - b) ** 2))


# -- geometry ---------------------------------------------------------------------------

def test_geometry_rejects_bad_distances():
    with pytest.raises(ValueError):
        FanBeamGeometry(source_to_isocenter=110.0)
    with pytest.raises(ValueError):
        FanBeamGeometry(fov_diameter=120.0)


def test_fan_covers_every_pixel():
    src, det = ray_endpoints(DESK, DESK.full_angles())
    x, y = pixel_centers(DESK)
    half = DESK.fov_diameter / 2.0
    corners = np.array([[half, half], [-half, half], [half, -half], [-half, -half]])
    for v in range(0, DESK.n_views_full, 17):
        s = src[v, 0]
        central = -s / np.linalg.norm(s)
        to_corner = corners - s
        ang = np.arccos(to_corner @ central / np.linalg.norm(to_corner, axis=1))
        assert ang.max() < DESK.fan_half_angle + 1e-12


def test_angle_outside_range_is_rejected():
    img = ImageGrid(np.zeros((16, 16)), SMALL)
    with pytest.raises(ValueError, match="outside"):
        forward_project(img, SMALL, [0.1, 7.0])


def test_image_grid_pitch_matches_fov():
    img = ImageGrid(np.zeros((64, 64)), DESK)
    assert img.size * img.pixel_pitch == pytest.approx(DESK.fov_diameter, abs=1e-12)


# -- projector ----------------------------------------------------------------------------

def test_zero_image_projects_to_zero():
    sino = forward_project(ImageGrid(np.zeros((64, 64)), DESK))
    assert sino.array.shape == (180, 96)
    assert not sino.array.any()


def test_zero_sinogram_backprojects_to_zero():
    sino = Sinogram(np.zeros((180, 96)), DESK.full_angles(), DESK)
    assert not back_project(sino).array.any()


def test_disk_central_ray_is_chord_length():
    radius = 20.0
    sino = forward_project(disk(DESK, radius)).array
    mid = DESK.n_detectors // 2
    gammas = DESK.detector_angles()[[mid - 1, mid]]
    # exact chord for the two detectors straddling the central ray
    offsets = DESK.source_to_isocenter * np.abs(np.sin(gammas))
    chords = 2.0 * np.sqrt(radius ** 2 - offsets ** 2)
    for v in range(0, 180, 15):
        assert np.abs(sino[v, [mid - 1, mid]] - chords).max() <= DESK.pixel_pitch


def test_dense_matrix_oracle_small_geometry():
    angles = SMALL.full_angles()
    n = SMALL.image_size
    dense = np.zeros((angles.size * SMALL.n_detectors, n * n))
    for i in range(n * n):
        unit = np.zeros(n * n)
        unit[i] = 1.0
        dense[:, i] = forward_project(ImageGrid(unit.reshape(n, n), SMALL), SMALL, angles).array.ravel()
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.normal(size=(n, n))
        got = forward_project(ImageGrid(x, SMALL), SMALL, angles).array.ravel()
        assert np.abs(got - dense @ x.ravel()).max() <= 1e-10 * max(1.0, np.abs(got).max())


@pytest.mark.parametrize("geom", [DESK, SMALL])
def test_adjoint_identity_random_pairs(geom):
    rng = np.random.default_rng(11)
    angles = geom.full_angles()
    n = geom.image_size
    worst = 0.0
    for _ in range(50):
        x = ImageGrid(rng.normal(size=(n, n)), geom)
        y = Sinogram(rng.normal(size=(angles.size, geom.n_detectors)), angles, geom)
        ax = forward_project(x, geom, angles).array
        aty = back_project(y).array
        lhs, rhs = float(np.sum(ax * y.array)), float(np.sum(x.array * aty))
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(ax) * np.linalg.norm(y.array)))
    assert worst <= 1e-10


def _liang_barsky(p0, p1, xmin, xmax, ymin, ymax):
    """Length of segment p0->p1 inside an axis-aligned box (independent clipping oracle)."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], p0[0] - xmin), (d[0], xmax - p0[0]), (-d[1], p0[1] - ymin), (d[1], ymax - p0[1])):
        if p == 0.0:
            if q < 0:
                return 0.0
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
    return max(0.0, t1 - t0) * float(np.hypot(*d))


@pytest.mark.parametrize("view,det", [(0, 40), (7, 3), (33, 60), (91, 95), (150, 48)])
def test_single_ray_backprojection_support(view, det):
    geom = DESK
    angles = geom.full_angles()
    delta = np.zeros((angles.size, geom.n_detectors))
    delta[view, det] = 1.0
    img = back_project(Sinogram(delta, angles, geom)).array
    src, dst = ray_endpoints(geom, angles[[view]])
    p0, p1 = src[0, det], dst[0, det]
    n, pitch = geom.image_size, geom.pixel_pitch
    half = geom.fov_diameter / 2.0
    expected = np.zeros((n, n))
    for r in range(n):
        for c in range(n):
            x0 = -half + c * pitch
            y1 = half - r * pitch
            expected[r, c] = _liang_barsky(p0, p1, x0, x0 + pitch, y1 - pitch, y1)
    assert np.array_equal(img > 1e-9, expected > 1e-9)
    assert np.abs(img - expected).max() <= 1e-9


def test_projection_is_linear():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(2, 16, 16))
    f = lambda x: forward_project(ImageGrid(x, SMALL)).array
    assert np.abs(f(2.0 * a - 3.0 * b) - (2.0 * f(a) - 3.0 * f(b))).max() <= 1e-10


def test_disk_rows_equal_under_quarter_turns():
    # the pixel grid is symmetric under 90 degree rotations, so these rows must agree
    sino = forward_project(disk(DESK, 18.0)).array
    quarter = DESK.n_views_full // 4
    for v in (0, 5, 13):
        rows = sino[[v, v + quarter, v + 2 * quarter, v + 3 * quarter]]
        assert np.abs(rows - rows[0]).max() <= 1e-9 * np.linalg.norm(rows[0])


def test_disk_row_deviation_is_discretisation_error():
    # general views differ only through pixelisation, which shrinks as the grid refines
    deviations = []
    for size in (32, 128):
        geom = FanBeamGeometry(image_size=size)
        sino = forward_project(disk(geom, 18.0)).array
        deviations.append(np.abs(sino - sino[0]).max() / np.linalg.norm(sino[0]))
    assert deviations[1] < 0.5 * deviations[0]
    assert deviations[1] < 5e-3


# -- ramp filter and FBP --------------------------------------------------------------------

def test_ramp_impulse_returns_kernel():
    geom = DESK
    tau = geom.detector_spacing
    row = np.zeros((1, geom.n_detectors))
    j = 30
    row[0, j] = 1.0
    out = ramp_filter(Sinogram(row, [0.0], geom)).array[0]
    lags = np.abs(np.arange(geom.n_detectors) - j)
    expected = np.where(lags == 0, 1 / (4 * tau ** 2),
                        np.where(lags % 2 == 1, -1.0 / (np.pi * np.maximum(lags, 1) * tau) ** 2, 0.0))
    assert np.abs(out - expected).max() <= 1e-12 * expected.max()


def test_ramp_kernel_has_zero_dc():
    # full-lag sum vanishes; the tail beyond L lags is bounded by 1/(pi^2 tau^2 L)
    tau = 0.7
    h = ramp_kernel(2_000_001, tau)
    total = h[0] + 2 * h[1:].sum()
    tail = 1.0 / (np.pi ** 2 * tau ** 2 * 2_000_000)
    assert abs(total) <= tail + 1e-12 * h[0]
    assert abs(total) <= 1e-6 * h[0]


def test_ramp_constant_row_response_decays_away_from_edges():
    # on a finite detector the response to a constant row is an edge effect:
    # the centre value falls like 1/N as the row widens
    centres = []
    for n in (64, 256, 1024):
        geom = FanBeamGeometry(n_detectors=n)
        out = ramp_filter(Sinogram(np.ones((1, n)), [0.0], geom)).array[0]
        h0 = 1 / (4 * geom.detector_spacing ** 2)
        centres.append(abs(out[n // 2]) / h0)
    assert centres[0] > centres[1] > centres[2]
    assert centres[2] < 1e-3


def test_ramp_filter_linear():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(2, 10, 96))
    ang = DESK.full_angles()[:10]
    f = lambda x: ramp_filter(Sinogram(x, ang, DESK)).array
    assert np.abs(f(a + b) - f(a) - f(b)).max() <= 1e-12 * np.abs(f(a)).max()


def test_ramp_filter_needs_four_cells():
    geom = FanBeamGeometry(n_detectors=3)
    with pytest.raises(ValueError):
        ramp_filter(Sinogram(np.ones((1, 3)), [0.0], geom))


def test_fbp_zero_and_view_count():
    sino = Sinogram(np.zeros((180, 96)), DESK.full_angles(), DESK)
    assert not fbp(sino).array.any()
    with pytest.raises(ValueError):
        fbp(Sinogram(np.zeros((3, 96)), DESK.full_angles()[:3], DESK))


def test_fbp_disk_interior_density():
    img = disk(DESK, 18.0)
    rec = fbp(forward_project(img)).array
    x, y = pixel_centers(DESK)
    xx, yy = np.meshgrid(x, y)
    interior = np.hypot(xx, yy) < 14.0
    assert abs(rec[interior].mean() - 1.0) <= 0.05
    rel_rmse = np.sqrt(np.mean((rec[interior] - 1.0) ** 2))
    assert rel_rmse <= 0.05


def test_fbp_shepp_logan_psnr():
    ph = ctgeom.shepp_logan(64)
    sino = forward_project(ph)
    full = psnr(fbp(sino).array, ph.array)
    sparse = psnr(fbp(sample_sparse(sino, 6, 30)).array, ph.array)
    assert full >= 30.0
    assert sparse < full


def test_fbp_error_decreases_with_views():
    ph = ImageGrid(render_ellipses([(0.8, 0.6, 0.45, 0.05, 0.0, 20.0), (0.3, 0.2, 0.3, -0.2, 0.1, 0.0)],
                                   64, supersample=8), DESK)
    errors = []
    for views in (45, 90, 180):
        geom = FanBeamGeometry(n_views_full=views)
        rec = fbp(forward_project(ImageGrid(ph.array, geom))).array
        errors.append(np.sqrt(np.mean((rec - ph.array) ** 2)))
    assert errors[0] > errors[1] > errors[2]


def test_fbp_gradient_is_adjoint():
    op = ctgeom.FBPOperator(SMALL, SMALL.full_angles())
    rng = np.random.default_rng(0)
    s = rng.normal(size=(8, 12))
    im = rng.normal(size=(16, 16))
    assert abs(np.sum(op.forward(s) * im) - np.sum(s * op.adjoint(im))) <= 1e-10 * np.abs(op.forward(s)).sum()


# -- view sampling ---------------------------------------------------------------------------

def test_sample_sparse_nonuniform_stride_protocol():
    geom = FanBeamGeometry(n_detectors=8, n_views_full=2200, image_size=16)
    sino = Sinogram(np.arange(2200 * 8, dtype=float).reshape(2200, 8), geom.full_angles(), geom)
    out = sample_sparse(sino, 30, 48)
    assert np.array_equal(out.view_angles, geom.full_angles()[np.arange(0, 1411, 30)])
    assert np.array_equal(out.array, sino.array[0:1411:30])


def test_sample_sparse_desk_and_identity():
    sino = Sinogram(np.random.default_rng(0).normal(size=(180, 96)), DESK.full_angles(), DESK)
    out = sample_sparse(sino, 6, 30)
    assert np.array_equal(out.array, sino.array[0:175:6])
    same = sample_sparse(sino, 1, 180)
    assert np.array_equal(same.array, sino.array)
    with pytest.raises(ValueError):
        sample_sparse(sino, 6, 31)


def _sparse_desk(values):
    angles = DESK.full_angles()[::6]
    return Sinogram(values, angles, DESK)


def test_interp_constant_and_knots():
    const = interp_views(_sparse_desk(np.full((30, 96), 2.5)), DESK.full_angles()).array
    assert np.abs(const - 2.5).max() <= 1e-14
    rng = np.random.default_rng(4)
    data = rng.normal(size=(30, 96))
    back = interp_views(_sparse_desk(data), DESK.full_angles()[::6]).array
    assert np.array_equal(back, data)


def test_interp_midpoint_is_mean():
    rng = np.random.default_rng(6)
    data = rng.normal(size=(30, 96))
    angles = DESK.full_angles()[::6]
    mid = 0.5 * (angles[4] + angles[5])
    out = interp_views(_sparse_desk(data), [mid]).array[0]
    assert np.abs(out - 0.5 * (data[4] + data[5])).max() <= 1e-12


def test_interp_wraps_across_two_pi():
    data = np.zeros((30, 96))
    data[-1] = 1.0
    angles = DESK.full_angles()[::6]
    seam = 0.5 * (angles[-1] + 2 * np.pi)
    out = interp_views(_sparse_desk(data), [seam]).array[0]
    assert np.allclose(out, 0.5)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(1, 6))
def test_interp_exact_on_linear_in_angle(slope, offset, stride):
    geom = FanBeamGeometry(angular_range=math.pi, n_detectors=8, image_size=16)
    full = geom.full_angles()
    det = np.linspace(-1, 1, 8)
    sino = Sinogram(offset + slope * np.outer(full, 1 + det), full, geom)
    count = (len(full) - 1) // stride + 1
    sparse = sample_sparse(sino, stride, count)
    span = full[full <= sparse.view_angles[-1] + 1e-12]
    out = interp_views(sparse, span).array
    assert np.abs(out - sino.array[: span.size]).max() <= 1e-10 * max(1.0, np.abs(sino.array).max())


def test_interp_rejects_empty():
    with pytest.raises(ValueError):
        ctgeom.interpolation_matrix(np.array([]), np.array([0.0]), None)


# -- phantoms and noise ---------------------------------------------------------------------------

def test_shepp_logan_normalised():
    ph = ctgeom.shepp_logan(64).array
    assert abs(ph.max() - 1.0) <= 1e-12
    assert ph.min() >= 0.0


def test_random_phantom_deterministic_and_bounded():
    a = ctgeom.random_ellipse_phantom(64, seed=9).array
    b = ctgeom.random_ellipse_phantom(64, seed=9).array
    c = ctgeom.random_ellipse_phantom(64, seed=10).array
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() >= 0.0 and a.max() <= 1.0
    with pytest.raises(ValueError):
        ctgeom.random_ellipse_phantom(8, seed=0)
    with pytest.raises(ValueError):
        ctgeom.random_ellipse_phantom(64, seed=0, n_ellipses=9)


def test_noise_statistics():
    img = ImageGrid(np.full((64, 64), 0.5), DESK)
    noisy = ctgeom.add_gaussian_noise(img, 0.0, 0.01, seed=1).array - 0.5
    sigma, n = 0.1, noisy.size
    assert abs(noisy.mean()) <= 4 * sigma / np.sqrt(n)
    assert abs(noisy.var() - 0.01) <= 0.2 * 0.01


def test_noise_identity_and_seeds():
    img = ctgeom.shepp_logan(64)
    assert np.array_equal(ctgeom.add_gaussian_noise(img, 0.0, 0.0, seed=3).array, img.array)
    a = ctgeom.add_gaussian_noise(img, 0.0, 0.01, seed=1).array
    assert np.array_equal(a, ctgeom.add_gaussian_noise(img, 0.0, 0.01, seed=1).array)
    assert not np.array_equal(a, ctgeom.add_gaussian_noise(img, 0.0, 0.01, seed=2).array)
    with pytest.raises(ValueError):
        ctgeom.add_gaussian_noise(img, 0.0, -1.0)


# -- binary format ----------------------------------------------------------------------------------

def test_binary_round_trip(tmp_path):
    ph = ctgeom.shepp_logan(64)
    sino = forward_project(ph)
    ctgeom.save_image(ph, tmp_path / "a.bin")
    ctgeom.save_sinogram(sino, tmp_path / "b.bin")
    img = ctgeom.load_image(tmp_path / "a.bin")
    assert np.array_equal(img.array, ph.array.astype(np.float32))
    s2 = ctgeom.load_sinogram(tmp_path / "b.bin", angles=sino.view_angles)
    assert np.array_equal(s2.array, sino.array.astype(np.float32))
    raw = (tmp_path / "b.bin").read_bytes()
    assert raw[:8] == b"MISTARR\x00" and len(raw) == 16 + 8 + 4 * 180 * 96 + 4 * 180


def test_binary_format_errors(tmp_path):
    ph = ctgeom.shepp_logan(32)
    p = tmp_path / "x.bin"
    ctgeom.save_image(ph, p)
    blob = bytearray(p.read_bytes())
    (tmp_path / "trunc.bin").write_bytes(bytes(blob[:-5]))
    with pytest.raises(ctgeom.FormatError, match="bytes"):
        ctgeom.load_image(tmp_path / "trunc.bin")
    blob[0:1] = b"X"
    (tmp_path / "bad.bin").write_bytes(bytes(blob))
    with pytest.raises(ctgeom.FormatError, match="magic"):
        ctgeom.load_image(tmp_path / "bad.bin")
    with pytest.raises(ctgeom.FormatError):
        ctgeom.load_sinogram(p)
