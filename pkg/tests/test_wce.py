import numpy as np
import pytest

import dctomo as dt
from dctomo.geometry import MeasurementMask, RayState
from dctomo.phantoms import disk_spec
from dctomo.wce import fit_water_cylinder, wce_extrapolate


@pytest.fixture(scope="module")
def truncated_cylinder():
    grid = dt.ImageGrid.centered(256, 256, 1, (1.25, 1.25, 1.0))
    vol = dt.make_phantom(disk_spec(100.0, 0.02, supersample=8), grid)
    geom = dt.ScanGeometry(1200.0, 600.0, detector_cols=620, angles_deg=np.arange(0.0, 211.0))
    sino = dt.forward_project(vol, geom)
    trunc = dt.restrict_truncation(sino, 300)
    return grid, vol, geom, sino, trunc


def test_self_fit_recovers_cylinder_sinogram(truncated_cylinder):
    grid, vol, geom, sino, trunc = truncated_cylinder
    wce = wce_extrapolate(trunc)
    err = np.abs(wce.values - sino.values)
    assert err.max() <= 0.05 * sino.values.max()


def test_measured_columns_bit_identical(truncated_cylinder):
    grid, vol, geom, sino, trunc = truncated_cylinder
    wce = wce_extrapolate(trunc)
    measured = trunc.mask.measured
    np.testing.assert_array_equal(wce.values[measured], trunc.values[measured])
    # filled rays flagged extrapolated: data for FBP, still not "measured"
    filled = wce.mask.flags == RayState.EXTRAPOLATED
    assert filled.any()
    assert np.array_equal(filled, ~measured)
    assert not wce.mask.measured[filled].any()


def test_boundary_continuity(truncated_cylinder):
    grid, vol, geom, sino, trunc = truncated_cylinder
    wce = wce_extrapolate(trunc)
    b0 = (620 - 300) // 2
    b1 = b0 + 300 - 1
    s = geom.impact_parameter_mm()
    for iv in range(0, 211, 13):
        row = wce.values[iv, 0]
        for b, outside in ((b0, b0 - 1), (b1, b1 + 1)):
            local_slope = abs(row[b] - row[b + (1 if b == b0 else -1)]) / abs(s[b] - s[outside])
            pitch = abs(s[b] - s[outside])
            assert abs(row[outside] - row[b]) <= max(2.0 * local_slope * pitch, 0.05)


def test_zero_boundary_extrapolates_zero():
    geom = dt.ScanGeometry(1200.0, 600.0, detector_cols=40, angles_deg=np.array([0.0]))
    values = np.zeros((1, 1, 40))
    sino = dt.Sinogram(geom, values, MeasurementMask.all_measured(values.shape))
    trunc = dt.restrict_truncation(sino, 20)
    wce = wce_extrapolate(trunc)
    assert np.all(wce.values == 0.0)


def test_negative_boundary_clamps_to_zero():
    geom = dt.ScanGeometry(1200.0, 600.0, detector_cols=40, angles_deg=np.array([0.0]))
    values = np.full((1, 1, 40), -0.25)
    sino = dt.Sinogram(geom, values, MeasurementMask.all_measured(values.shape))
    trunc = dt.restrict_truncation(sino, 20)
    trunc.values[trunc.mask.measured] = -0.25
    wce = wce_extrapolate(trunc)
    outside = ~trunc.mask.measured
    assert np.all(wce.values[outside] == 0.0)


def test_non_contiguous_band_rejected():
    geom = dt.ScanGeometry(1200.0, 600.0, detector_cols=40, angles_deg=np.array([0.0]))
    sino = dt.Sinogram.zeros(geom)
    sino.values[:] = 1.0
    sino.mask.flags[0, 0, 10:15] = RayState.UNMEASURED
    sino.mask.flags[0, 0, 30:] = RayState.UNMEASURED
    with pytest.raises(ValueError):
        wce_extrapolate(sino)


def test_all_measured_is_identity():
    geom = dt.ScanGeometry(1200.0, 600.0, detector_cols=16, angles_deg=np.array([0.0, 5.0]))
    rng = np.random.default_rng(0)
    values = rng.random((2, 1, 16))
    sino = dt.Sinogram(geom, values, MeasurementMask.all_measured(values.shape))
    out = wce_extrapolate(sino)
    np.testing.assert_array_equal(out.values, values)


def test_fit_water_cylinder_exact_on_true_profile():
    mu_w = 0.02
    s = np.linspace(-40.0, -20.0, 25)
    s0_true, r_true = 5.0, 80.0
    p = 2 * mu_w * np.sqrt(r_true**2 - (s - s0_true) ** 2)
    s0, r2 = fit_water_cylinder(p, s, float(p[0]), float(s[0]), mu_w)
    assert s0 == pytest.approx(s0_true, abs=1e-6)
    assert np.sqrt(r2) == pytest.approx(r_true, abs=1e-6)


def test_cupping_alleviated_by_extrapolation(truncated_cylinder):
    grid, vol, geom, sino, trunc = truncated_cylinder
    r_fov = geom.fov_radius_mm(300)
    fbp_raw = dt.fbp_reconstruct(trunc, grid)
    fbp_wce = dt.fbp_reconstruct(wce_extrapolate(trunc), grid)
    X, Y = grid.xy_mesh()
    r = np.sqrt(X**2 + Y**2)
    center = r <= 10.0
    edge = (r >= 0.75 * r_fov) & (r <= 0.9 * r_fov)

    def bias_hu(rec):
        hu = (rec.values[0] - 0.02) / 0.02 * 1000.0
        return abs(hu[center].mean() - hu[edge].mean())

    raw_bias = bias_hu(fbp_raw)
    wce_bias = bias_hu(fbp_wce)
    assert raw_bias > 50.0  # cupping artifact present without extrapolation
    assert wce_bias <= 0.3 * raw_bias  # reduced by at least 70%
