import struct

import numpy as np
import pytest

from brdfdiff.brdf import AnalyticBrdf, constant_brdf
from brdfdiff.errors import DataError
from brdfdiff.experiments import glossy_material
from brdfdiff.metrics import Image
from brdfdiff.render import (
    RenderConfig, float_bytes, load_float_image, parse_float_image, ppm_bytes, radiance, render_sphere, save_float_image,
    save_ppm, sphere_geometry,
)

SMALL = RenderConfig(width=32, height=32)


def zero(th, td, pd):
    return np.zeros(np.shape(th) + (3,))


class TestConfig:
    def test_defaults(self):
        cfg = RenderConfig()
        assert (cfg.width, cfg.height, cfg.gamma) == (256, 256, 2.2)
        assert np.linalg.norm(cfg.light_dir) == pytest.approx(1.0)

    @pytest.mark.parametrize("kw", [{"width": 8}, {"height": 15}, {"light_dir": (0, 0, 2)}, {"gamma": 0},
                                    {"background": 2}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RenderConfig(**kw)


class TestRender:
    def test_zero_brdf(self):
        img = render_sphere(AnalyticBrdf(zero), RenderConfig(width=20, height=20, background=0.25))
        mask, _ = sphere_geometry(RenderConfig(width=20, height=20))
        assert np.all(img.pixels[mask] == 0)
        assert np.all(img.pixels[~mask] == 0.25)

    @pytest.mark.parametrize("c,intensity", [(0.2, 1.0), (0.05, 3.0), (0.9, 2.0)])
    def test_subsolar_lambertian(self, c, intensity):
        cfg = RenderConfig(width=33, height=33, light_dir=(0, 0, 1), intensity=intensity)
        px = render_sphere(AnalyticBrdf(lambda th, td, pd: c + 0 * th), cfg).pixels[16, 16]
        np.testing.assert_allclose(px, min((c * intensity) ** (1 / 2.2), 1.0), rtol=1e-12)

    def test_lambertian_cosine_falloff(self):
        # away from the center the radiance is c * (n . l)
        cfg = RenderConfig(width=33, height=33, light_dir=(0, 0, 1))
        L = radiance(constant_brdf(0.2), cfg)
        mask, n = sphere_geometry(cfg)
        np.testing.assert_allclose(L[mask][:, 0], 0.2 * n[:, 2], rtol=1e-12)

    def test_deterministic(self):
        g = glossy_material()
        a, b = render_sphere(g, SMALL), render_sphere(g, SMALL)
        assert np.array_equal(a.pixels, b.pixels)
        assert ppm_bytes(a) == ppm_bytes(b)

    def test_energy_monotone(self):
        g = glossy_material()
        base = radiance(g, SMALL)
        for s in (1.5, 4.0):
            scaled = radiance(AnalyticBrdf(lambda th, td, pd: s * g.eval(th, td, pd)), SMALL)
            assert np.all(scaled >= base)

    def test_left_right_symmetry(self):
        cfg = RenderConfig(width=32, height=32, light_dir=(0.0, 0.6, 0.8))
        for brdf in (constant_brdf(0.3), glossy_material()):
            px = render_sphere(brdf, cfg).pixels
            np.testing.assert_allclose(px, px[:, ::-1], atol=1e-9)

    def test_tabulated_and_callable(self):
        c = constant_brdf((0.1, 0.2, 0.3))
        a = render_sphere(c, SMALL)
        b = render_sphere(c.values, SMALL)
        d = render_sphere(lambda th, td, pd: np.broadcast_to([0.1, 0.2, 0.3], np.shape(th) + (3,)), SMALL)
        assert np.array_equal(a.pixels, b.pixels)
        np.testing.assert_allclose(a.pixels, d.pixels, rtol=1e-12)


class TestFormats:
    def test_ppm(self, tmp_path):
        px = np.zeros((16, 17, 3))
        px[0, 0] = (1.0, 0.5, 0.0)
        img = Image(px)
        data = save_ppm(tmp_path / "a.ppm", img).read_bytes()
        header = b"P6\n17 16\n255\n"
        assert data.startswith(header)
        assert len(data) == len(header) + 16 * 17 * 3
        assert data[len(header):len(header) + 3] == bytes([255, 128, 0])

    def test_float_round_trip(self, tmp_path):
        img = render_sphere(glossy_material(), SMALL)
        raw = float_bytes(img)
        assert raw[:4] == b"NMFI"
        assert struct.unpack_from("<IIII", raw, 4) == (1, 32, 32, 3)
        assert len(raw) == 20 + 8 * 32 * 32 * 3
        back = load_float_image(save_float_image(tmp_path / "a.nmfi", img))
        assert np.array_equal(back.pixels, img.pixels)

    def test_float_bad(self):
        raw = float_bytes(Image(np.zeros((16, 16, 3))))
        with pytest.raises(DataError):
            parse_float_image(b"XXXX" + raw[4:])
        with pytest.raises(DataError):
            parse_float_image(raw[:-8])
