import numpy as np
import pytest

from pointprops import image_io


def quantized(rng, shape):
    return np.rint(rng.random(shape) * 255) / 255.0


class TestPNM:
    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = quantized(rng, (12, 17))
        path = tmp_path / "img.pgm"
        image_io.write_pnm(path, img)
        np.testing.assert_allclose(image_io.read_pnm(path), img, atol=1e-9)

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = quantized(rng, (9, 7, 3))
        path = tmp_path / "img.ppm"
        image_io.write_pnm(path, img)
        np.testing.assert_allclose(image_io.read_pnm(path), img, atol=1e-9)

    def test_ascii_variants(self, tmp_path):
        p2 = tmp_path / "a.pgm"
        p2.write_text("P2\n# comment line\n3 2\n255\n0 128 255\n64 32 16\n")
        img = image_io.read_pnm(p2)
        assert img.shape == (2, 3)
        assert img[0, 1] == pytest.approx(128 / 255)
        p3 = tmp_path / "a.ppm"
        p3.write_text("P3\n1 1\n255\n255 0 128\n")
        rgb = image_io.read_pnm(p3)
        assert rgb.shape == (1, 1, 3)
        np.testing.assert_allclose(rgb[0, 0], [1.0, 0.0, 128 / 255])

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"NOTPNM")
        with pytest.raises(ValueError):
            image_io.read_image(path)


class TestPNG:
    def test_gray_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = quantized(rng, (15, 11))
        path = tmp_path / "img.png"
        image_io.write_png(path, img)
        np.testing.assert_allclose(image_io.read_png(path), img, atol=1e-9)

    def test_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = quantized(rng, (8, 13, 3))
        path = tmp_path / "img.png"
        image_io.write_png(path, img)
        np.testing.assert_allclose(image_io.read_png(path), img, atol=1e-9)

    def test_read_image_dispatch(self, tmp_path):
        rng = np.random.default_rng(4)
        img = quantized(rng, (6, 6))
        png = tmp_path / "x.png"
        image_io.write_image(png, img)
        pgm = tmp_path / "x.pgm"
        image_io.write_image(pgm, img)
        np.testing.assert_allclose(image_io.read_image(png), image_io.read_image(pgm),
                                   atol=1e-9)

    def test_decodes_externally_encoded_files(self, tmp_path):
        PIL = pytest.importorskip("PIL.Image")
        rng = np.random.default_rng(5)
        for mode, shape in [("L", (10, 14)), ("RGB", (11, 9, 3)), ("RGBA", (7, 8, 4))]:
            data = np.rint(rng.random(shape) * 255).astype(np.uint8)
            path = tmp_path / f"ext_{mode}.png"
            PIL.fromarray(data, mode=mode).save(path)
            out = image_io.read_png(path)
            if mode == "L":
                np.testing.assert_allclose(out, data / 255.0, atol=1e-9)
            else:
                np.testing.assert_allclose(out, data[:, :, :3] / 255.0, atol=1e-9)

    def test_survives_all_filter_types(self, tmp_path):
        # a gradient image makes encoders pick non-trivial per-row filters
        PIL = pytest.importorskip("PIL.Image")
        rows, cols = np.indices((32, 32))
        img = ((rows * 3 + cols * 7) % 256).astype(np.uint8)
        path = tmp_path / "gradient.png"
        PIL.fromarray(img, mode="L").save(path, optimize=True)
        np.testing.assert_allclose(image_io.read_png(path), img / 255.0, atol=1e-9)


class TestHelpers:
    def test_grayscale_weights(self):
        img = np.zeros((2, 2, 3))
        img[:, :, 1] = 1.0
        np.testing.assert_allclose(image_io.to_grayscale(img), 0.587)

    def test_resize_identity(self):
        rng = np.random.default_rng(6)
        img = rng.random((9, 13))
        np.testing.assert_allclose(image_io.resize_bilinear(img, (9, 13)), img,
                                   atol=1e-12)

    def test_resize_constant_preserved(self):
        img = np.full((10, 10), 0.37)
        out = image_io.resize_bilinear(img, (16, 24))
        assert out.shape == (16, 24)
        np.testing.assert_allclose(out, 0.37, atol=1e-12)

    def test_resize_channels(self):
        rng = np.random.default_rng(7)
        img = rng.random((6, 6, 3))
        out = image_io.resize_bilinear(img, (12, 8))
        assert out.shape == (12, 8, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0
