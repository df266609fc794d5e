import numpy as np
import pytest

from bodyseg.data import (
    CLASS_NAMES,
    DEFAULT_REMAP_ROWS,
    AugmentConfig,
    RemapTable,
    SampleRecord,
    augment,
    bilinear_resize,
    hsv_to_rgb,
    load_dataset,
    nearest_resize,
    remap_mask,
    resize_pair,
    rgb_to_hsv,
    save_dataset,
    synthetic_dataset,
)
from bodyseg.rng import RngStream


def make_record(seed=0, h=16, w=16):
    rng = RngStream(seed)
    image = rng.child("img").uniform((3, h, w))
    mask = rng.child("mask").integers(0, 12, (h, w)).astype(np.uint8)
    return SampleRecord(image=image, mask=mask, source_id=f"rec{seed}")


class TestRemapTable:
    def test_has_all_26_rows(self):
        table = RemapTable.default()
        assert len(table.rows) == 26

    @pytest.mark.parametrize(
        "name,label",
        [
            ("hair", 1),
            ("head", 2),
            ("left_lower_arm", 7),
            ("right_upper_leg", 6),
            ("torso", 11),
            ("mouth", 8),
            ("neck", 9),
            ("nose", 10),
            ("non_person_objects", 0),
            ("background", 0),
        ],
    )
    def test_documented_labels(self, name, label):
        assert RemapTable.default().label_of(name) == label

    @pytest.mark.parametrize("part,label", [("ear", 3), ("eye", 4), ("eyebrow", 5), ("leg", 6), ("arm", 7)])
    def test_left_right_collapse(self, part, label):
        table = RemapTable.default()
        for prefix in ("left", "right"):
            if part in ("leg", "arm"):
                for seg in ("upper", "lower"):
                    assert table.label_of(f"{prefix}_{seg}_{part}") == label
            else:
                assert table.label_of(f"{prefix}_{part}") == label

    def test_right_foot_carries_leg_label(self):
        table = RemapTable.default()
        assert table.label_of("right_foot") == 6
        assert table.label_of("left_foot") == 6

    def test_hands_are_arms(self):
        table = RemapTable.default()
        assert table.label_of("left_hand") == 7
        assert table.label_of("right_hand") == 7

    def test_name_normalization(self):
        assert RemapTable.default().label_of("Left Lower Arm") == 7

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="unknown source part"):
            RemapTable.default().label_of("left_antenna")

    def test_mapping_file_round_trip(self, tmp_path):
        table = RemapTable.default()
        path = tmp_path / "mapping.tsv"
        table.write_mapping_file(path)
        loaded = RemapTable.from_mapping_file(path)
        assert [(n, l) for n, _, l in loaded.rows] == [(n, l) for n, _, l in table.rows]

    def test_mapping_file_rejects_bad_lines(self):
        with pytest.raises(ValueError, match="name<TAB>label"):
            RemapTable.from_mapping_lines(["hair 1"])
        with pytest.raises(ValueError, match="not an integer"):
            RemapTable.from_mapping_lines(["hair\tone"])
        with pytest.raises(ValueError, match="outside 0..11"):
            RemapTable.from_mapping_lines(["hair\t14"])

    def test_mapping_file_comments_and_blanks_skipped(self):
        table = RemapTable.from_mapping_lines(["# comment", "", "hair\t1", "torso\t11"])
        assert len(table.rows) == 2


class TestRemapMask:
    def test_codes_map_by_row_position(self):
        table = RemapTable.default()
        src = np.array([[table.source_code("left_lower_arm")]], dtype=np.uint8)
        assert remap_mask(src, table)[0, 0] == 7

    def test_full_mask_of_one_part(self):
        table = RemapTable.default()
        src = np.full((6, 6), table.source_code("right_upper_leg"), dtype=np.uint8)
        assert np.all(remap_mask(src, table) == 6)

    def test_background_and_void_pass_through(self):
        table = RemapTable.default()
        src = np.array([0, 255], dtype=np.uint8).reshape(1, 2)
        out = remap_mask(src, table)
        assert out[0, 0] == 0
        assert out[0, 1] == 255

    def test_unknown_codes_listed_in_error(self):
        table = RemapTable.default()
        src = np.array([[30, 40]], dtype=np.uint8)
        with pytest.raises(ValueError, match=r"\[30, 40\]"):
            remap_mask(src, table)

    def test_unknown_codes_become_background_when_allowed(self):
        table = RemapTable.default()
        src = np.array([[30]], dtype=np.uint8)
        assert remap_mask(src, table, allow_unknown=True)[0, 0] == 0

    def test_idempotent_with_identity_rows(self):
        rows = [(CLASS_NAMES[l].lower(), CLASS_NAMES[l], l) for l in range(1, 12)]
        table = RemapTable(rows)
        mask = RngStream(0).integers(0, 12, (8, 8)).astype(np.uint8)
        mask[0, 0] = 255
        once = remap_mask(mask, table)
        twice = remap_mask(once, table)
        assert np.array_equal(once, mask)
        assert np.array_equal(twice, once)

    def test_all_default_rows_map_to_stated_labels(self):
        table = RemapTable.default()
        for code, (_, _, label) in enumerate(DEFAULT_REMAP_ROWS, start=1):
            src = np.array([[code]], dtype=np.uint8)
            assert remap_mask(src, table)[0, 0] == label


class TestAugment:
    def test_identity_config_returns_identical_record(self):
        rec = make_record(1)
        cfg = AugmentConfig(flip_prob=0.0, brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0)
        out = augment(rec, cfg, RngStream(0))
        assert np.array_equal(out.image, rec.image)
        assert np.array_equal(out.mask, rec.mask)

    def test_flip_is_involution(self):
        rec = make_record(2)
        cfg = AugmentConfig(flip_prob=1.0, brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0)
        once = augment(rec, cfg, RngStream(1))
        twice = augment(once, cfg, RngStream(2))
        assert np.array_equal(twice.image, rec.image)
        assert np.array_equal(twice.mask, rec.mask)

    def test_flip_moves_pixels_and_mask_together(self):
        rec = make_record(3)
        cfg = AugmentConfig(flip_prob=1.0, brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0)
        out = augment(rec, cfg, RngStream(1))
        h, w = rec.mask.shape
        assert out.mask[2, 3] == rec.mask[2, w - 1 - 3]
        assert np.allclose(out.image[:, 2, 3], rec.image[:, 2, w - 1 - 3])

    def test_photometric_ops_leave_mask_untouched(self):
        rec = make_record(4)
        cfg = AugmentConfig(flip_prob=0.0)
        for seed in range(10):
            out = augment(rec, cfg, RngStream(seed))
            assert np.array_equal(out.mask, rec.mask)
            hist_in = np.bincount(rec.mask.ravel(), minlength=256)
            hist_out = np.bincount(out.mask.ravel(), minlength=256)
            assert np.array_equal(hist_in, hist_out)

    def test_mask_histogram_invariant_under_flip(self):
        rec = make_record(5)
        cfg = AugmentConfig(flip_prob=1.0)
        out = augment(rec, cfg, RngStream(3))
        assert np.array_equal(
            np.bincount(rec.mask.ravel(), minlength=256),
            np.bincount(out.mask.ravel(), minlength=256),
        )

    def test_output_stays_in_unit_range(self):
        rec = make_record(6)
        cfg = AugmentConfig()
        for seed in range(10):
            out = augment(rec, cfg, RngStream(seed))
            assert out.image.min() >= 0.0
            assert out.image.max() <= 1.0

    def test_deterministic_given_stream(self):
        rec = make_record(7)
        cfg = AugmentConfig()
        a = augment(rec, cfg, RngStream(9))
        b = augment(rec, cfg, RngStream(9))
        assert np.array_equal(a.image, b.image)

    def test_input_record_not_mutated(self):
        rec = make_record(8)
        snapshot = rec.image.copy()
        augment(rec, AugmentConfig(), RngStream(4))
        assert np.array_equal(rec.image, snapshot)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(flip_prob=1.5)
        with pytest.raises(ValueError):
            AugmentConfig(brightness=1.0)
        with pytest.raises(ValueError):
            AugmentConfig(hue=0.7)


class TestColorConversion:
    def test_round_trip(self):
        rgb = RngStream(0).uniform((3, 9, 9))
        back = hsv_to_rgb(rgb_to_hsv(rgb))
        assert np.abs(back - rgb).max() < 1e-12

    def test_known_colors(self):
        red = np.array([1.0, 0.0, 0.0]).reshape(3, 1, 1)
        h, s, v = rgb_to_hsv(red)[:, 0, 0]
        assert np.isclose(h, 0.0) and np.isclose(s, 1.0) and np.isclose(v, 1.0)
        gray = np.full((3, 1, 1), 0.5)
        h, s, v = rgb_to_hsv(gray)[:, 0, 0]
        assert np.isclose(s, 0.0) and np.isclose(v, 0.5)


class TestResize:
    def test_same_size_unchanged(self):
        rec = make_record(9, 32, 32)
        out = resize_pair(rec, (32, 32))
        assert np.array_equal(out.image, rec.image)
        assert np.array_equal(out.mask, rec.mask)

    def test_constant_image_stays_constant(self):
        rec = SampleRecord(
            image=np.full((3, 48, 48), 0.25), mask=np.zeros((48, 48), dtype=np.uint8)
        )
        out = resize_pair(rec, (32, 32))
        assert np.allclose(out.image, 0.25)

    def test_downscale_preserves_mask_value_set(self):
        mask = np.ones((64, 64), dtype=np.uint8)
        mask[:, 32:] = 2
        rec = SampleRecord(image=np.zeros((3, 64, 64)), mask=mask)
        out = resize_pair(rec, (32, 32))
        assert set(np.unique(out.mask)) == {1, 2}

    def test_never_introduces_new_mask_values(self):
        for seed in range(5):
            rec = make_record(seed, 96, 64)
            out = resize_pair(rec, (32, 32))
            assert set(np.unique(out.mask)) <= set(np.unique(rec.mask))

    def test_aspect_change_covers_target(self):
        rec = make_record(10, 64, 128)
        out = resize_pair(rec, (64, 64))
        assert out.image.shape == (3, 64, 64)
        assert out.mask.shape == (64, 64)

    def test_indivisible_target_rejected(self):
        with pytest.raises(ValueError, match="divisible by 32"):
            resize_pair(make_record(11), (30, 30))

    def test_bilinear_matches_average_on_2x_downscale(self):
        img = np.arange(16.0).reshape(1, 4, 4)
        out = bilinear_resize(img, 2, 2)
        # each output pixel center sits exactly between four inputs
        assert np.allclose(out[0, 0, 0], img[0, :2, :2].mean())

    def test_nearest_resize_picks_existing_values(self):
        mask = np.arange(16, dtype=np.uint8).reshape(4, 4)
        up = nearest_resize(mask, 8, 8)
        assert set(np.unique(up)) <= set(np.unique(mask))


class TestSyntheticDataset:
    def test_deterministic(self):
        a = synthetic_dataset(3, seed=5)
        b = synthetic_dataset(3, seed=5)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.image, rb.image)
            assert np.array_equal(ra.mask, rb.mask)
            assert ra.source_id == rb.source_id

    def test_mask_value_contract(self):
        for rec in synthetic_dataset(5, seed=2):
            assert set(np.unique(rec.mask)) <= {0, 2, 6, 7, 11}

    def test_all_parts_present(self):
        for rec in synthetic_dataset(5, seed=3):
            assert {2, 6, 7, 11} <= set(np.unique(rec.mask))

    def test_foreground_coverage_calibration(self):
        records = synthetic_dataset(100, seed=0)
        coverage = np.mean([float(np.mean(r.mask > 0)) for r in records])
        assert 0.10 <= coverage <= 0.60

    def test_image_range_and_shapes(self):
        rec = synthetic_dataset(1, seed=9, canvas=(32, 64))[0]
        assert rec.image.shape == (3, 32, 64)
        assert rec.mask.shape == (32, 64)
        assert rec.image.min() >= 0.0 and rec.image.max() <= 1.0

    def test_canvas_validation(self):
        with pytest.raises(ValueError, match="divisible by 32"):
            synthetic_dataset(1, seed=0, canvas=(30, 30))
        with pytest.raises(ValueError, match="at least one"):
            synthetic_dataset(0, seed=0)


class TestDatasetDirectories:
    def test_save_load_round_trip(self, tmp_path):
        records = synthetic_dataset(2, seed=4, canvas=(32, 32))
        save_dataset(records, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert len(loaded) == 2
        for orig, back in zip(records, loaded):
            assert back.source_id == orig.source_id
            assert np.array_equal(back.mask, orig.mask)
            # images go through 8-bit quantization
            assert np.abs(back.image - orig.image).max() <= 0.5 / 255 + 1e-12

    def test_missing_mask_rejected(self, tmp_path):
        records = synthetic_dataset(1, seed=4, canvas=(32, 32))
        save_dataset(records, tmp_path / "ds")
        (tmp_path / "ds" / "masks" / f"{records[0].source_id}.png").unlink()
        with pytest.raises(ValueError, match="no mask"):
            load_dataset(tmp_path / "ds")

    def test_empty_directory_rejected(self, tmp_path):
        (tmp_path / "ds" / "images").mkdir(parents=True)
        (tmp_path / "ds" / "masks").mkdir(parents=True)
        with pytest.raises(ValueError, match="no PNG images"):
            load_dataset(tmp_path / "ds")


class TestSampleRecord:
    def test_shape_agreement_enforced(self):
        with pytest.raises(ValueError, match="does not match"):
            SampleRecord(image=np.zeros((3, 8, 8)), mask=np.zeros((4, 4), dtype=np.uint8))

    def test_channel_count_enforced(self):
        with pytest.raises(ValueError, match=r"\[3, H, W\]"):
            SampleRecord(image=np.zeros((1, 8, 8)), mask=np.zeros((8, 8), dtype=np.uint8))
