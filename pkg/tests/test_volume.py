import numpy as np
import pytest

from hepatex.volume import Volume, trilinear_resample


def make_volume(shape=(6, 5, 4), spacing=(1.0, 1.0, 5.0), seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return Volume(rng.standard_normal(shape).astype(dtype), spacing, "NC")


class TestVolume:
    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError, match="spacing"):
            Volume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))

    def test_rejects_bad_phase(self):
        with pytest.raises(ValueError, match="phase"):
            Volume(np.zeros((2, 2, 2)), (1, 1, 1), phase="X")

    def test_rejects_non_3d(self):
        with pytest.raises(ValueError, match="3D"):
            Volume(np.zeros((2, 2)), (1, 1, 1))


class TestTrilinearResample:
    def test_identity_is_bit_exact(self):
        vol = make_volume()
        out = trilinear_resample(vol, vol.shape)
        assert out.data.dtype == vol.data.dtype
        np.testing.assert_array_equal(out.data, vol.data)
        assert out.spacing_mm == vol.spacing_mm

    def test_linear_ramp_halved(self):
        ramp = np.tile(np.linspace(0.0, 10.0, 9)[:, None, None], (1, 4, 4))
        vol = Volume(ramp, (1, 1, 1))
        out = trilinear_resample(vol, (5, 4, 4))
        expect = np.tile(np.linspace(0.0, 10.0, 5)[:, None, None], (1, 4, 4))
        np.testing.assert_allclose(out.data, expect, atol=1e-12)
        # endpoints preserved exactly
        assert out.data[0, 0, 0] == 0.0
        assert out.data[-1, 0, 0] == 10.0

    def test_constant_stays_constant(self):
        vol = Volume(np.full((4, 6, 5), 3.5), (1, 2, 3))
        out = trilinear_resample(vol, (7, 3, 9))
        np.testing.assert_allclose(out.data, 3.5)

    def test_exact_on_affine_fields(self):
        W, H, D = 7, 6, 5
        xs, ys, zs = np.meshgrid(np.arange(W), np.arange(H), np.arange(D), indexing="ij")
        alpha, beta, gamma, delta = 0.7, -1.3, 2.1, 4.0
        vol = Volume(alpha * xs + beta * ys + gamma * zs + delta, (1, 1, 1))
        tw, th, td = 11, 4, 8
        out = trilinear_resample(vol, (tw, th, td))
        tx = np.arange(tw) * (W - 1) / (tw - 1)
        ty = np.arange(th) * (H - 1) / (th - 1)
        tz = np.arange(td) * (D - 1) / (td - 1)
        gx, gy, gz = np.meshgrid(tx, ty, tz, indexing="ij")
        expect = alpha * gx + beta * gy + gamma * gz + delta
        np.testing.assert_allclose(out.data, expect, rtol=1e-5)

    def test_spacing_preserves_physical_extent(self):
        vol = make_volume(shape=(9, 9, 9), spacing=(0.5, 1.0, 5.0))
        out = trilinear_resample(vol, (5, 3, 17))
        for axis in range(3):
            src_extent = (vol.shape[axis] - 1) * vol.spacing_mm[axis]
            tgt_extent = (out.shape[axis] - 1) * out.spacing_mm[axis]
            assert tgt_extent == pytest.approx(src_extent)

    def test_rejects_degenerate_target(self):
        with pytest.raises(ValueError, match="degenerate"):
            trilinear_resample(make_volume(), (0, 4, 4))

    def test_rejects_tiny_source(self):
        with pytest.raises(ValueError, match=">= 2"):
            trilinear_resample(Volume(np.zeros((1, 4, 4)), (1, 1, 1)), (2, 2, 2))
