"""Synthetic scenes, dataset directories and 8-bit raster I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from casinet import pnm
from casinet.config import ConfigError
from casinet.data import (
    SceneSpec,
    Shape,
    class_frequencies,
    generate,
    load_dataset,
    make_split,
    render_scene,
    save_dataset,
)


class TestSceneSpec:
    @pytest.mark.parametrize("kw", [{"size_range": (0.0, 0.5)}, {"size_range": (0.5, 1.5)},
                                    {"num_classes": 1}, {"shapes_per_image": (4, 2)}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SceneSpec(**kw)


class TestGenerate:
    def test_deterministic(self):
        a, b = generate(SceneSpec(), 5), generate(SceneSpec(), 5)
        for x, y in zip(a, b):
            assert x.image == y.image and np.array_equal(x.labels, y.labels)

    def test_seed_changes_output(self):
        a = generate(SceneSpec(data_seed=0), 1)[0]
        b = generate(SceneSpec(data_seed=1), 1)[0]
        assert a.image != b.image

    def test_index_addressable(self):
        """Sample i is the same whether generated alone or in a batch."""
        batch = generate(SceneSpec(), 6)
        alone = generate(SceneSpec(), 1, start=4)[0]
        assert alone.image == batch[4].image

    def test_value_ranges(self):
        s = generate(SceneSpec(), 1)[0]
        assert s.image.shape == (1, 3, 64, 64)
        assert 0.0 <= s.image.data.min() and s.image.data.max() <= 1.0
        assert s.labels.dtype == np.int64 and s.labels.min() >= 0 and s.labels.max() < 4

    def test_single_circle_noise_free(self):
        spec = SceneSpec(image_size=32, noise_stddev=0.0)
        circle = Shape("circle", 1, 16.0, 16.0, 12.0, (0.8, 0.2, 0.4))
        s = render_scene([circle], spec)
        inside = s.labels == 1
        assert inside.sum() > 50 and (s.labels[~inside] == 0).all()
        colors = s.image.data[0][:, inside]
        assert (colors == colors[:, :1]).all()
        assert s.labels[16, 16] == 1 and s.labels[0, 0] == 0

    def test_occlusion_order(self):
        spec = SceneSpec(image_size=32, noise_stddev=0.0)
        big = Shape("rect", 2, 16.0, 16.0, 20.0, (0.1, 0.9, 0.1))
        small = Shape("circle", 1, 16.0, 16.0, 6.0, (0.9, 0.1, 0.1))
        assert render_scene([big, small], spec).labels[16, 16] == 1
        assert render_scene([small, big], spec).labels[16, 16] == 2

    def test_scale_diversity(self):
        """Largest connected shape is at least 4x wider than the smallest over 200 images."""
        diam = []
        for s in generate(SceneSpec(), 200):
            for c in range(1, 4):
                comp, n = ndimage.label(s.labels == c)
                for sl in ndimage.find_objects(comp):
                    diam.append(max(sl[0].stop - sl[0].start, sl[1].stop - sl[1].start))
        assert max(diam) >= 4 * min(diam)


class TestSplit:
    def test_disjoint_by_index(self):
        ds = make_split(SceneSpec(), 10, 4)
        assert len(ds.train) == 10 and len(ds.val) == 4
        ref = generate(SceneSpec(), 14, subseed=ds.subseed)
        assert ds.val[0].image == ref[10].image and ds.train[9].image == ref[9].image

    def test_all_classes_present(self):
        ds = make_split(SceneSpec(), 200, 0)
        assert (class_frequencies(ds.train, 4) > 0).all()

    def test_frequencies_reproducible(self):
        a = class_frequencies(make_split(SceneSpec(), 20, 0).train, 4)
        b = class_frequencies(make_split(SceneSpec(), 20, 0).train, 4)
        assert a.tolist() == b.tolist() and a.sum() == pytest.approx(1.0)

    def test_directory_round_trip(self, tmp_path):
        ds = make_split(SceneSpec(image_size=16), 3, 2)
        save_dataset(ds, tmp_path)
        assert (tmp_path / "img_00004.ppm").exists() and (tmp_path / "lab_00000.pgm").exists()
        back = load_dataset(tmp_path)
        assert back.spec == ds.spec and back.subseed == ds.subseed
        for x, y in zip(ds.train + ds.val, back.train + back.val):
            assert x.image == y.image
            assert np.array_equal(x.labels, y.labels)


class TestPnm:
    def test_label_round_trip(self, tmp_path):
        lab = np.random.default_rng(0).integers(0, 256, size=(7, 9)).astype(np.uint8)
        pnm.write_pgm(tmp_path / "a.pgm", lab)
        assert np.array_equal(pnm.read_pnm(tmp_path / "a.pgm"), lab)

    def test_zero_ppm(self, tmp_path):
        p = tmp_path / "z.ppm"
        pnm.write_ppm(p, np.zeros((4, 5, 3), dtype=np.uint8))
        raw = p.read_bytes()
        assert raw.startswith(b"P6\n5 4\n255\n") and raw.endswith(bytes(60))
        assert not pnm.read_pnm(p).any()

    def test_chw_accepted(self, tmp_path):
        img = np.random.default_rng(1).integers(0, 256, size=(3, 4, 6)).astype(np.uint8)
        pnm.write_ppm(tmp_path / "c.ppm", img)
        assert np.array_equal(pnm.read_pnm(tmp_path / "c.ppm"), img.transpose(1, 2, 0))

    def test_quantize_round_half_up(self):
        q = pnm.quantize(np.array([0.0, 0.5 / 255, 1.5 / 255, 0.5, 1.0, -0.2, 1.3]))
        assert q.tolist() == [0, 1, 2, 128, 255, 0, 255]

    def test_header_comments(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x07\x09")
        assert pnm.read_pnm(p).tolist() == [[7, 9]]

    def test_bad_values(self, tmp_path):
        with pytest.raises(pnm.PnmError):
            pnm.write_pgm(tmp_path / "x.pgm", np.array([[300]]))
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4 4\n255\n\x00")
        with pytest.raises(pnm.PnmError):
            pnm.read_pnm(p)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=12, max_size=12))
    def test_quantized_images_round_trip(self, tmp_path_factory, vals):
        img = pnm.quantize(np.array(vals).reshape(2, 2, 3))
        p = tmp_path_factory.mktemp("q") / "q.ppm"
        pnm.write_ppm(p, img)
        assert np.array_equal(pnm.read_pnm(p), img)
