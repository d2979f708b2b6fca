import numpy as np
import pytest

from cocgan import imageio


class TestPnm:
    def test_pgm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (5, 7), dtype=np.uint8)
        path = imageio.write_pnm(tmp_path / "a.pgm", img)
        assert open(path, "rb").read(2) == b"P5"
        np.testing.assert_array_equal(imageio.read_pnm(path), img)

    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (4, 3, 3), dtype=np.uint8)
        path = imageio.write_pnm(tmp_path / "a.ppm", img)
        np.testing.assert_array_equal(imageio.read_pnm(path), img)

    def test_rejects_two_channel(self, tmp_path):
        with pytest.raises(ValueError):
            imageio.write_pnm(tmp_path / "a.ppm", np.zeros((2, 2, 2), np.uint8))

    def test_png_matches_pgm(self, tmp_path, rng):
        pil = pytest.importorskip("PIL.Image")
        img = rng.integers(0, 256, (6, 6), dtype=np.uint8)
        imageio.write_png(tmp_path / "a.png", img)
        np.testing.assert_array_equal(np.asarray(pil.open(tmp_path / "a.png")), img)


class TestGrid:
    def test_layout(self):
        images = np.stack([np.full((28, 28, 1), v) for v in (-1.0, 0.0, 1.0, 1.0)])
        canvas = imageio.image_grid(images, 2, 2, pad=2)
        assert canvas.shape == (2 * 28 + 6, 2 * 28 + 6)
        assert canvas[2, 2] == 0 and canvas[2, 32] == 128 and canvas[32, 2] == 255
        assert canvas[0, 0] == 0  # padding

    def test_write_grid_files(self, tmp_path, rng):
        images = rng.uniform(-1, 1, (4, 28, 28, 1))
        paths = imageio.write_grid(str(tmp_path / "g"), images, 2, 2)
        assert paths == [str(tmp_path / "g.pgm")]


class TestOverlay:
    def test_blocks_follow_assignment(self):
        a = np.array([0, 1, 2, 3])
        ov = imageio.assignment_overlay(a, (2, 2), 4)
        assert ov.shape == (4, 4, 3)
        for k in range(4):
            i, j = divmod(k, 2)
            block = ov[2 * i:2 * i + 2, 2 * j:2 * j + 2].reshape(-1, 3)
            assert np.all(block == imageio.PALETTE[k])

    def test_palette_colours_distinct(self):
        assert len({tuple(c) for c in imageio.PALETTE}) == len(imageio.PALETTE)

    def test_too_many_clusters(self):
        with pytest.raises(ValueError):
            imageio.assignment_overlay(np.array([len(imageio.PALETTE)]), (1, 1), 1)

    def test_paired_panel(self, rng):
        imgs = rng.uniform(-1, 1, (3, 4, 4, 1))
        ovs = [imageio.assignment_overlay(np.zeros(4, int), (2, 2), 4)] * 3
        panel = imageio.paired_panel(imgs, ovs, pad=1)
        assert panel.shape == (3 * 4 + 4, 2 * 4 + 3, 3)
        assert np.all(panel[1:5, 6:10] == imageio.PALETTE[0])
