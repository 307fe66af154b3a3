"""Scene generator and dataset writer: determinism, labels, splits."""

import numpy as np
import pytest

from nightseg.netpbm import read_pgm, read_ppm
from nightseg.scenes import SceneConfig, gen_dataset, generate_scene, parse_manifest


class TestGenerateScene:
    def test_deterministic_per_seed(self):
        cfg = SceneConfig()
        a = generate_scene(cfg, 123)
        b = generate_scene(cfg, 123)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)

    def test_different_seeds_differ(self):
        cfg = SceneConfig()
        a = generate_scene(cfg, 1)
        b = generate_scene(cfg, 2)
        assert not np.array_equal(a.image, b.image)

    def test_image_range_and_mask_labels(self):
        cfg = SceneConfig()
        for seed in range(20):
            s = generate_scene(cfg, seed)
            assert s.image.min() >= 0.0 and s.image.max() <= 1.0
            assert s.mask.min() >= 0 and s.mask.max() < cfg.num_classes

    def test_every_class_present_over_100_seeds(self):
        cfg = SceneConfig()
        for seed in range(100):
            s = generate_scene(cfg, seed)
            present = set(np.unique(s.mask).tolist())
            assert present == set(range(cfg.num_classes))

    def test_flat_background_when_disabled_knobs(self):
        cfg = SceneConfig(ambient=(0.1, 0.1), deceivers=(0, 0), noise_std=0.0,
                          objects_min=0, objects_max=0)
        s = generate_scene(cfg, 5)
        # no objects, no deceivers, no noise: only the smooth gradient and tint
        assert np.all(s.mask == 0)
        assert s.image.std() < 0.05

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError, match="ambient"):
            SceneConfig(ambient=(0.5, 0.2))
        with pytest.raises(ValueError, match="contrast"):
            SceneConfig(contrast_gap=0.0)
        with pytest.raises(ValueError, match="background"):
            SceneConfig(num_classes=1)


class TestGenDataset:
    def test_file_layout_and_split(self, tmp_path):
        cfg = SceneConfig()
        manifest = gen_dataset(cfg, 10, 7, tmp_path)
        images = sorted(tmp_path.glob("img_*.ppm"))
        masks = sorted(tmp_path.glob("msk_*.pgm"))
        assert len(images) == 10 and len(masks) == 10
        meta, entries = parse_manifest(manifest)
        assert meta["num_classes"] == "4"
        assert len(entries) == 10
        splits = [e[2] for e in entries]
        assert splits.count("val") == 2  # 20% of 10
        names = {e[0] for e in entries} | {e[1] for e in entries}
        assert names == {p.name for p in images} | {p.name for p in masks}

    def test_identical_manifests_for_same_seed(self, tmp_path):
        cfg = SceneConfig()
        m1 = gen_dataset(cfg, 8, 3, tmp_path / "a")
        m2 = gen_dataset(cfg, 8, 3, tmp_path / "b")
        assert m1.read_bytes() == m2.read_bytes()
        for i in range(8):
            assert (tmp_path / "a" / f"img_{i:05d}.ppm").read_bytes() == \
                   (tmp_path / "b" / f"img_{i:05d}.ppm").read_bytes()

    def test_partition_disjoint_and_exhaustive(self, tmp_path):
        manifest = gen_dataset(SceneConfig(), 25, 9, tmp_path)
        _, entries = parse_manifest(manifest)
        train = {e[0] for e in entries if e[2] == "train"}
        val = {e[0] for e in entries if e[2] == "val"}
        assert not (train & val)
        assert len(train | val) == 25

    def test_files_decode(self, tmp_path):
        gen_dataset(SceneConfig(), 3, 11, tmp_path)
        img = read_ppm((tmp_path / "img_00000.ppm").read_bytes())
        msk = read_pgm((tmp_path / "msk_00000.pgm").read_bytes())
        assert img.shape == (32, 64, 3)
        assert msk.shape == (32, 64)

    def test_thread_workers_match_sequential(self, tmp_path, monkeypatch):
        cfg = SceneConfig()
        gen_dataset(cfg, 6, 13, tmp_path / "seq")
        monkeypatch.setenv("NF_THREADS", "4")
        gen_dataset(cfg, 6, 13, tmp_path / "par")
        for i in range(6):
            assert (tmp_path / "seq" / f"img_{i:05d}.ppm").read_bytes() == \
                   (tmp_path / "par" / f"img_{i:05d}.ppm").read_bytes()

    def test_malformed_manifest_line_rejected(self, tmp_path):
        path = tmp_path / "manifest.txt"
        path.write_text("img_0.ppm msk_0.pgm nowhere\n")
        with pytest.raises(ValueError, match="malformed"):
            parse_manifest(path)
