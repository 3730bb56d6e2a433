import numpy as np
import pytest

from invarsim.errors import ConfigError
from invarsim.imgio import (
    FLO_MAGIC,
    read_flo,
    read_pfm,
    read_ppm,
    write_flo,
    write_pfm,
    write_ppm,
)


class TestPfm:
    def test_color_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 10, size=(17, 23, 3)).astype(np.float32)
        path = tmp_path / "img.pfm"
        write_pfm(path, img)
        back = read_pfm(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, img)

    def test_gray_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, size=(5, 9)).astype(np.float32)
        path = tmp_path / "depth.pfm"
        write_pfm(path, img)
        assert np.array_equal(read_pfm(path), img)

    def test_header_format(self, tmp_path):
        path = tmp_path / "one.pfm"
        write_pfm(path, np.zeros((2, 3), dtype=np.float32))
        raw = path.read_bytes()
        assert raw.startswith(b"Pf\n3 2\n-1.0\n")

    def test_row_order_bottom_up(self, tmp_path):
        img = np.zeros((2, 1), dtype=np.float32)
        img[0, 0] = 7.0  # top row
        path = tmp_path / "rows.pfm"
        write_pfm(path, img)
        payload = path.read_bytes()[len(b"Pf\n1 2\n-1.0\n"):]
        first_stored = np.frombuffer(payload[:4], dtype="<f4")[0]
        assert first_stored == 0.0  # bottom row is stored first

    def test_infinity_survives(self, tmp_path):
        img = np.full((3, 3), np.inf, dtype=np.float32)
        path = tmp_path / "inf.pfm"
        write_pfm(path, img)
        assert np.all(np.isinf(read_pfm(path)))

    def test_bad_magic_raises(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"XX\n1 1\n-1.0\n" + b"\x00" * 4)
        with pytest.raises(ConfigError):
            read_pfm(path)


class TestPpm:
    def test_8bit_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(11, 7, 3)).astype(np.uint8)
        path = tmp_path / "img.ppm"
        write_ppm(path, img, maxval=255)
        back, maxval = read_ppm(path)
        assert maxval == 255
        assert np.array_equal(back, img)

    def test_16bit_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 1024, size=(6, 5, 3)).astype(np.uint16)
        path = tmp_path / "img10.ppm"
        write_ppm(path, img, maxval=1023)
        back, maxval = read_ppm(path)
        assert maxval == 1023
        assert np.array_equal(back, img)

    def test_header(self, tmp_path):
        path = tmp_path / "h.ppm"
        write_ppm(path, np.zeros((4, 6, 3), dtype=np.uint8), maxval=255)
        assert path.read_bytes().startswith(b"P6\n6 4\n255\n")

    def test_sample_exceeding_maxval_rejected(self, tmp_path):
        img = np.full((2, 2, 3), 300, dtype=np.uint16)
        with pytest.raises(ConfigError):
            write_ppm(tmp_path / "x.ppm", img, maxval=255)


class TestFlo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        flow = rng.normal(0, 3, size=(9, 13, 2)).astype(np.float32)
        path = tmp_path / "flow.flo"
        write_flo(path, flow)
        assert np.array_equal(read_flo(path), flow)

    def test_magic_number(self, tmp_path):
        path = tmp_path / "f.flo"
        write_flo(path, np.zeros((2, 2, 2), dtype=np.float32))
        raw = path.read_bytes()
        assert np.frombuffer(raw[:4], dtype="<f4")[0] == np.float32(FLO_MAGIC)
        w, h = np.frombuffer(raw[4:12], dtype="<i4")
        assert (w, h) == (2, 2)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(b"\x00" * 16)
        with pytest.raises(ConfigError):
            read_flo(path)
