import math

import numpy as np
import pytest

from pamwcnn.imageio import Image
from pamwcnn.phantom import (
    LASER_LADDER,
    LED_LADDER,
    DegradationPreset,
    PhantomSpec,
    build_dataset,
    dataset_from_manifest,
    degrade,
    depth_cnr_rois,
    format_manifest,
    generate_clean,
    get_preset,
    letter_regions,
    make_manifest,
    parse_manifest,
    snr_ladder_psnr,
    stroke_specs,
    target_positions,
)

DEPTH_SPEC = PhantomSpec(height=256, width=256, scene="depth_targets", blur_sigma_px=0.0)


def test_zero_strokes_is_blank():
    (img,) = generate_clean(PhantomSpec(stroke_count=0))
    assert not img.data.any()


def test_strokes_range_and_dtype():
    (img,) = generate_clean(PhantomSpec(seed=3))
    assert img.data.dtype == np.float32
    assert img.data.min() >= 0 and 0.5 < img.data.max() <= 1.0


def test_same_seed_same_scene():
    a = generate_clean(PhantomSpec(seed=11, frames=3))
    b = generate_clean(PhantomSpec(seed=11, frames=3))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)
    assert not np.array_equal(a[0].data, a[1].data)
    assert not np.array_equal(a[0].data, generate_clean(PhantomSpec(seed=12))[0].data)


def test_depth_target_rows():
    rows = sorted({r for r, _ in target_positions(DEPTH_SPEC)})
    assert rows == [25, 75, 125, 175, 225]
    (img,) = generate_clean(DEPTH_SPEC)
    for r, c in target_positions(DEPTH_SPEC):
        assert img.data[r, c] == pytest.approx(1.0)


def test_depth_target_must_fit():
    with pytest.raises(ValueError, match="does not fit"):
        target_positions(PhantomSpec(height=64, scene="depth_targets"))


def test_letters_render_and_regions():
    spec = PhantomSpec(height=64, width=96, scene="letters", text="PACT", blur_sigma_px=0)
    (img,) = generate_clean(spec)
    regions = letter_regions(spec)
    assert [ch for ch, _ in regions] == list("PACT")
    total = sum(roi.extract(img.data).sum() for _, roi in regions)
    assert total == pytest.approx(img.data.sum())
    with pytest.raises(ValueError, match="glyph"):
        generate_clean(PhantomSpec(scene="letters", text="XYZ"))


def test_degrade_top_rung_is_identity():
    (clean,) = generate_clean(PhantomSpec(seed=1))
    np.testing.assert_array_equal(degrade(clean, LASER_LADDER[0], 0).data, clean.data)


def test_degrade_half_scale():
    (clean,) = generate_clean(PhantomSpec(seed=1))
    half = DegradationPreset("x", 1, "mJ", 0.5, 0.0)
    np.testing.assert_array_equal(degrade(clean, half, 0).data, (0.5 * clean.data.astype(np.float64)).astype(np.float32))


def test_degrade_noise_statistics():
    zero = Image(np.zeros((256, 256), np.float32))
    preset = get_preset("0.25mJ")
    noise = degrade(zero, preset, 9).data.astype(np.float64)
    assert noise.std() == pytest.approx(preset.noise_sigma, rel=0.05)
    assert abs(noise.mean()) < 5 * preset.noise_sigma / 256
    np.testing.assert_array_equal(noise, degrade(zero, preset, 9).data)


def test_degrade_attenuation_profile():
    ones = Image(np.ones((50, 4), np.float32), 0.1)
    out = degrade(ones, DegradationPreset("x", 1, "mJ", 1.0, 0.0), 0, attenuation_per_mm=0.2).data
    np.testing.assert_allclose(out[:, 0], np.exp(-0.2 * 0.1 * np.arange(50)), rtol=1e-6)


def test_preset_validation():
    with pytest.raises(ValueError):
        DegradationPreset("x", 1, "mJ", 0.0, 0.1)
    with pytest.raises(ValueError):
        DegradationPreset("x", 1, "mJ", 0.5, -0.1)
    with pytest.raises(KeyError, match="unknown"):
        get_preset("3mJ")


@pytest.mark.parametrize("ladder", [LASER_LADDER, LED_LADDER])
def test_ladders_ordered_by_fluence(ladder):
    fluences = [p.fluence_mj for p in ladder]
    assert fluences == sorted(fluences, reverse=True)
    assert ladder[0].signal_scale == 1.0 and ladder[0].noise_sigma == 0.0


def test_dataset_cartesian_product():
    ds = build_dataset(stroke_specs(10), ["0.95mJ", "0.25mJ", "0.065mJ"], seed=0)
    assert len(ds) == 30
    assert [p.label for p in ds.pairs[:3]] == ["0.95mJ", "0.25mJ", "0.065mJ"]
    assert len(ds.subset([0, 5])) == 2


def test_manifest_noise_seeds_distinct():
    entries = make_manifest(stroke_specs(4), ["0.95mJ", "0.25mJ"], seed=3)
    seeds = [e.noise_seed for e in entries]
    assert len(set(seeds)) == len(seeds)


def test_manifest_round_trip():
    specs = stroke_specs(2, seed=5, stroke_count=4) + [DEPTH_SPEC]
    entries = make_manifest(specs, ["80uJ", "0.25mJ"], seed=1)
    back = parse_manifest(format_manifest(entries))
    assert back == entries
    a, b = dataset_from_manifest(entries), dataset_from_manifest(back)
    for p, q in zip(a.pairs, b.pairs):
        np.testing.assert_array_equal(p.noisy.data, q.noisy.data)


def test_manifest_errors():
    with pytest.raises(ValueError, match="key=value"):
        parse_manifest("scene=strokes junk\n")
    with pytest.raises(ValueError, match="missing"):
        parse_manifest("scene=strokes noise_seed=1\n")
    with pytest.raises(ValueError, match="unknown scene field"):
        parse_manifest("colour=red preset=0.25mJ noise_seed=1\n")
    with pytest.raises(ValueError, match="no pairs"):
        parse_manifest("# nothing\n")


def test_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(scene="blobs")
    with pytest.raises(ValueError):
        PhantomSpec(height=1)


def test_snr_ladder_strictly_decreasing():
    values = [v for _, v in snr_ladder_psnr(PhantomSpec(seed=0))]
    assert values[0] == math.inf
    assert all(a > b for a, b in zip(values, values[1:]))


def test_depth_rois_protocol():
    sets = depth_cnr_rois(DEPTH_SPEC)
    assert [d for d, _, _ in sets] == list(DEPTH_SPEC.depths_mm)
    for d, obj, bg in sets:
        assert len(obj) == 1 and len(bg) == 5
        assert (obj[0].height, obj[0].width) == (10, 10)
        assert all((b.height, b.width) == (30, 30) for b in bg)
        # backgrounds share the target's depth and never overlap the object
        for b in bg:
            assert b.row == obj[0].row - 10
            assert b.col + b.width <= obj[0].col or b.col >= obj[0].col + obj[0].width


def test_depth_rois_need_room():
    with pytest.raises(ValueError, match="background positions"):
        depth_cnr_rois(PhantomSpec(height=256, width=64, scene="depth_targets"))
