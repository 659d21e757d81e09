import numpy as np
import pytest

import dctomo as dt


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger numba JIT once so timed tests measure algorithm, not compilation."""
    geom = dt.ScanGeometry(200.0, 100.0, detector_cols=8, angles_deg=np.arange(0.0, 90.0, 45.0))
    grid = dt.ImageGrid.centered(4, 4, 1)
    vol = dt.Volume.full(grid, 1.0, dtype=np.float64)
    sino = dt.forward_project(vol, geom, sampling_per_mm=2.0)
    dt.backproject(sino, grid)
    from dctomo.fbp import fbp_reconstruct

    fbp_reconstruct(sino, grid)
    from dctomo.projector import sart_view_update

    sart_view_update(vol.values.astype(np.float64), np.zeros((1, 8)), 0, geom, grid, 0.5)

    geom3 = dt.ScanGeometry(
        200.0, 100.0, detector_cols=8, detector_rows=4, angles_deg=np.arange(0.0, 90.0, 45.0),
        mode="cone_beam_3d",
    )
    grid3 = dt.ImageGrid.centered(4, 4, 4)
    vol3 = dt.Volume.full(grid3, 1.0, dtype=np.float64)
    sino3 = dt.forward_project(vol3, geom3, sampling_per_mm=2.0)
    dt.backproject(sino3, grid3)
    sart_view_update(vol3.values.astype(np.float64), np.zeros((4, 8)), 0, geom3, grid3, 0.5)


@pytest.fixture
def small_geom():
    return dt.ScanGeometry(400.0, 200.0, detector_cols=48, angles_deg=np.arange(0.0, 360.0, 15.0))


@pytest.fixture
def small_grid():
    return dt.ImageGrid.centered(32, 32, 1, (2.0, 2.0, 1.0))
