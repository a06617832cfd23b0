import numpy as np
import pytest

from mwcalib.camera import CameraParams


@pytest.fixture
def params224():
    return CameraParams(f=12.0, k1=0.0, image_w=224, image_h=224)


@pytest.fixture
def params_distorted():
    return CameraParams(f=6.0, k1=-0.05, image_w=224, image_h=224)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_panorama(height: int = 256, seed: int = 0) -> np.ndarray:
    """Smooth procedural equirectangular test panorama, uint8 RGB.

    Band-limited sinusoidal texture so double-resampling comparisons measure
    the remapping machinery rather than aliasing.
    """
    h, w = height, 2 * height
    y, x = np.mgrid[0:h, 0:w]
    lon = (x / w) * 2.0 * np.pi
    lat = (y / h) * np.pi
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi, size=6)
    r = 128 + 70 * np.sin(3 * lon + phase[0]) * np.cos(2 * lat + phase[1])
    g = 128 + 70 * np.cos(2 * lon + phase[2]) * np.sin(3 * lat + phase[3])
    b = 128 + 60 * np.sin(4 * lon + phase[4]) * np.sin(lat + phase[5])
    return np.clip(np.stack([r, g, b], axis=-1), 0, 255).astype(np.uint8)


@pytest.fixture
def panorama():
    return make_panorama(256)
