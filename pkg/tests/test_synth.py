import numpy as np
import pytest

from towervision.core import ClassLabel, ConfigurationError, Instance
from towervision.seeds import derive_rng
from towervision.synth import (
    BasicAugmentSettings,
    ExemplarCrop,
    SynthSettings,
    basic_augment,
    build_background,
    generate_sample,
    generate_samples,
    load_exemplar,
    load_exemplar_library,
    make_exemplar,
    replay_sample,
    save_exemplar,
    transform_exemplar,
)

from helpers import rect_mask


def solid_crop(color, label, size=(14, 10), target_box=(2, 2, 5, 4), source_id="crop"):
    """Fully opaque solid-color crop; target_box = (x, y, w, h) or None."""
    width, height = size
    patch = np.zeros((height, width, 4), dtype=np.uint8)
    patch[..., :3] = color
    patch[..., 3] = 255
    if target_box is None:
        target = np.zeros((height, width), dtype=bool)
    else:
        x, y, w, h = target_box
        target = rect_mask(width, height, x, y, w, h)
    return ExemplarCrop(patch=patch, label=label, target_mask=target, source_id=source_id)


def solid_pool(colors, size=(60, 44)):
    width, height = size
    return [np.full((height, width, 3), c, dtype=np.uint8) for c in colors]


def plain_settings(canvas=(96, 80), **overrides):
    defaults = dict(
        canvas_size=canvas,
        exemplar_count=(1, 3),
        scale_range=(1.0, 1.0),
        rotation_range=(0.0, 0.0),
        surround_crop_range=(0.0, 0.0),
        seed=0,
    )
    defaults.update(overrides)
    return SynthSettings(**defaults)


# --- exemplar crop invariants ---

def test_crop_validation():
    with pytest.raises(ConfigurationError):
        solid_crop((10, 10, 10), ClassLabel.DAMAGE, target_box=None)  # labeled, no target
    with pytest.raises(ConfigurationError):
        solid_crop((10, 10, 10), None, target_box=(0, 0, 2, 2))  # clean with target
    patch = np.zeros((4, 4, 4), dtype=np.uint8)  # alpha empty
    with pytest.raises(ConfigurationError):
        ExemplarCrop(patch=patch, label=None, target_mask=np.zeros((4, 4), dtype=bool))


# --- background collage ---

def test_background_single_pool_image_is_a_crop():
    pool = [np.arange(40 * 30 * 3, dtype=np.uint8).reshape(30, 40, 3) % 251]
    canvas = build_background(pool, (40, 30), derive_rng(0, "bg"), grid=(1, 1))
    assert np.array_equal(canvas, pool[0])


def test_background_is_deterministic():
    pool = solid_pool([(200, 10, 10), (10, 200, 10), (10, 10, 200), (90, 90, 90)])
    a = build_background(pool, (100, 70), derive_rng(5, "bg"))
    b = build_background(pool, (100, 70), derive_rng(5, "bg"))
    assert np.array_equal(a, b)


def test_background_covers_every_pixel():
    pool = solid_pool([(255, 255, 255), (200, 220, 240)], size=(9, 7))
    for seed in range(10):
        canvas = build_background(pool, (123, 61), derive_rng(seed, "bg"))
        assert (canvas > 0).all()  # collage starts from a zero canvas


# --- exemplar transform ---

def test_transform_identity_settings_change_nothing():
    crop = solid_crop((180, 40, 40), ClassLabel.DAMAGE)
    placed = transform_exemplar(crop, plain_settings(), derive_rng(1, "t"))
    assert placed is not None
    assert np.array_equal(placed.patch, crop.patch)
    assert np.array_equal(placed.target_mask, crop.target_mask)
    height, width = crop.patch.shape[:2]
    assert 0 <= placed.x <= 96 - width
    assert 0 <= placed.y <= 80 - height


def test_transform_half_scale():
    crop = solid_crop((50, 60, 70), ClassLabel.DIRT, size=(100, 80), target_box=(10, 10, 40, 30))
    settings = plain_settings(canvas=(200, 200), scale_range=(0.5, 0.5))
    placed = transform_exemplar(crop, settings, derive_rng(2, "t"))
    assert placed.patch.shape[:2] == (40, 50)  # 80x100 -> 40x50
    original_area = crop.target_mask.sum()
    assert abs(placed.target_mask.sum() - 0.25 * original_area) <= 0.1 * 0.25 * original_area


def test_transform_right_angle_rotation_is_lossless():
    crop = solid_crop((10, 20, 30), ClassLabel.DAMAGE, size=(9, 13), target_box=(1, 2, 3, 6))
    settings = plain_settings(canvas=(64, 64), rotation_range=(90.0, 90.0))
    placed = transform_exemplar(crop, settings, derive_rng(3, "t"))
    assert np.array_equal(placed.target_mask, np.rot90(crop.target_mask, 1))


def test_transform_target_stays_inside_alpha_under_any_rotation():
    rng = derive_rng(4, "t")
    crop = solid_crop((99, 99, 99), ClassLabel.DAMAGE, size=(21, 15), target_box=(4, 3, 9, 7))
    settings = plain_settings(
        canvas=(128, 128),
        rotation_range=(-180.0, 180.0),
        scale_range=(0.4, 1.8),
        surround_crop_range=(0.0, 0.5),
    )
    produced = 0
    for _ in range(60):
        placed = transform_exemplar(crop, settings, rng)
        if placed is None:
            continue
        produced += 1
        alpha = placed.patch[..., 3] > 0
        assert not (placed.target_mask & ~alpha).any()
    assert produced > 40


def test_transform_skips_when_nothing_fits():
    crop = solid_crop((1, 2, 3), ClassLabel.DAMAGE, size=(30, 30), target_box=(5, 5, 4, 4))
    settings = plain_settings(canvas=(8, 8), scale_range=(2.0, 3.0), scale_retries=3)
    assert transform_exemplar(crop, settings, derive_rng(5, "t")) is None


# --- sample generation ---

def test_zero_count_yields_pure_background():
    pool = solid_pool([(120, 130, 140)])
    library = [solid_crop((200, 0, 0), ClassLabel.DAMAGE)]
    settings = plain_settings(exemplar_count=(0, 0))
    sample = generate_sample(library, settings, rng=derive_rng(11, "s"), pool=pool)
    background = build_background(pool, settings.canvas_size, derive_rng(11, "s"))
    assert np.array_equal(sample.image, background)
    assert sample.instances == []


def test_fixed_seed_is_bit_identical():
    pool = solid_pool([(120, 130, 140), (10, 40, 70)])
    library = [
        solid_crop((200, 0, 0), ClassLabel.DAMAGE),
        solid_crop((0, 0, 200), None, target_box=None),
    ]
    settings = plain_settings(exemplar_count=(2, 5), seed=42)
    a = generate_sample(library, settings, pool=pool)
    b = generate_sample(library, settings, pool=pool)
    assert np.array_equal(a.image, b.image)
    assert len(a.instances) == len(b.instances)
    for ia, ib in zip(a.instances, b.instances):
        assert ia.label == ib.label
        assert np.array_equal(ia.mask, ib.mask)
    assert a.log == b.log


def _class_mix(sample, library):
    chosen = [e["value"] for e in sample.log if e["event"] == "exemplar_choice"]
    labels = [library[i].label for i in chosen]
    return (
        labels.count(ClassLabel.DAMAGE),
        labels.count(ClassLabel.DIRT),
        labels.count(None),
    )


def test_six_exemplar_mix_yields_instances_only_for_damage_and_dirt():
    pool = solid_pool([(30, 30, 30)], size=(300, 300))
    library = [
        solid_crop((220, 30, 30), ClassLabel.DAMAGE, size=(20, 16), target_box=(2, 2, 10, 8)),
        solid_crop((220, 200, 40), ClassLabel.DIRT, size=(18, 14), target_box=(3, 3, 8, 6)),
        solid_crop((40, 90, 220), None, size=(16, 16), target_box=None),
    ]
    settings = plain_settings(canvas=(280, 280), exemplar_count=(6, 6), placement_retries=60)
    found = None
    for seed in range(600):
        sample = generate_sample(library, settings, rng=derive_rng(seed, "mix"), pool=pool)
        overlapping = any(
            e.get("overlapping") for e in sample.log if e["event"] == "placed"
        )
        if _class_mix(sample, library) == (3, 1, 2) and not overlapping:
            found = sample
            break
    assert found is not None, "no seed produced the 3 damage / 1 dirt / 2 clean mix"
    labels = sorted(inst.label for inst in found.instances)
    assert labels == [ClassLabel.DAMAGE, ClassLabel.DAMAGE, ClassLabel.DAMAGE, ClassLabel.DIRT]


def test_labeled_pixels_show_the_owning_exemplar():
    # Solid unique colors: every labeled pixel must carry its class color,
    # which proves the owning paste's alpha covered it and nothing later did.
    pool = solid_pool([(5, 5, 5)], size=(200, 200))
    library = [
        solid_crop((250, 10, 10), ClassLabel.DAMAGE, size=(24, 20), target_box=(4, 4, 12, 9)),
        solid_crop((10, 250, 10), ClassLabel.DIRT, size=(20, 24), target_box=(5, 6, 8, 10)),
        solid_crop((10, 10, 250), None, size=(22, 22), target_box=None),
    ]
    colors = {ClassLabel.DAMAGE: (250, 10, 10), ClassLabel.DIRT: (10, 250, 10)}
    settings = plain_settings(
        canvas=(160, 140), exemplar_count=(3, 7), scale_range=(0.5, 1.5), placement_retries=4
    )
    for seed in range(20):
        sample = generate_sample(library, settings, rng=derive_rng(seed, "sound"), pool=pool)
        for inst in sample.instances:
            pixels = sample.image[inst.mask]
            assert (pixels == np.array(colors[inst.label])).all()


def test_occluded_instance_pixels_are_removed():
    pool = solid_pool([(5, 5, 5)], size=(64, 64))
    damage = solid_crop((250, 10, 10), ClassLabel.DAMAGE, size=(30, 30), target_box=(2, 2, 26, 26))
    clean = solid_crop((10, 10, 250), None, size=(30, 30), target_box=None)
    library = [damage, clean]
    settings = plain_settings(canvas=(48, 48), exemplar_count=(2, 2), placement_retries=0)
    for seed in range(400):
        sample = generate_sample(library, settings, rng=derive_rng(seed, "occ"), pool=pool)
        chosen = [e["value"] for e in sample.log if e["event"] == "exemplar_choice"]
        overlapped = any(e.get("overlapping") for e in sample.log if e["event"] == "placed")
        if chosen == [0, 1] and overlapped and sample.instances:
            inst = sample.instances[0]
            assert (sample.image[inst.mask] == np.array([250, 10, 10])).all()
            assert inst.mask.sum() < damage.target_mask.sum()
            return
    pytest.fail("no seed produced a damage paste occluded by a clean paste")


def test_replay_reproduces_sample_without_rng():
    pool = solid_pool([(77, 66, 55), (20, 120, 220)])
    library = [
        solid_crop((200, 0, 0), ClassLabel.DAMAGE),
        solid_crop((0, 200, 0), ClassLabel.DIRT, target_box=(1, 1, 4, 4)),
    ]
    settings = plain_settings(
        exemplar_count=(2, 6), scale_range=(0.5, 1.6), rotation_range=(-45.0, 45.0)
    )
    original = generate_sample(library, settings, rng=derive_rng(8, "rep"), pool=pool)
    replayed = replay_sample(library, settings, original.log, pool=pool)
    assert np.array_equal(original.image, replayed.image)
    assert len(original.instances) == len(replayed.instances)
    for a, b in zip(original.instances, replayed.instances):
        assert a.label == b.label and np.array_equal(a.mask, b.mask)


def test_generate_samples_identical_across_worker_counts():
    pool = solid_pool([(77, 66, 55), (20, 120, 220)])
    library = [solid_crop((200, 0, 0), ClassLabel.DAMAGE)]
    settings = plain_settings(exemplar_count=(1, 4), seed=33)
    serial = generate_samples(library, settings, 8, pool=pool, workers=1)
    parallel = generate_samples(library, settings, 8, pool=pool, workers=4)
    for a, b in zip(serial, parallel):
        assert np.array_equal(a.image, b.image)
        assert a.log == b.log


# --- exemplar library i/o ---

def test_exemplar_save_load_round_trip(tmp_path):
    crop = solid_crop((120, 35, 210), ClassLabel.DIRT, source_id="tower_3/region_7")
    save_exemplar(tmp_path, "example", crop)
    loaded = load_exemplar(tmp_path / "example.json")
    assert np.array_equal(loaded.patch, crop.patch)
    assert np.array_equal(loaded.target_mask, crop.target_mask)
    assert loaded.label is ClassLabel.DIRT
    assert loaded.source_id == "tower_3/region_7"

    clean = solid_crop((1, 2, 3), None, target_box=None, source_id="ok")
    save_exemplar(tmp_path, "clean", clean)
    library = load_exemplar_library(tmp_path)
    assert len(library) == 2
    assert library[0].label is None  # sorted by name: clean.json first


def test_make_exemplar_cuts_to_structure_bbox():
    image = np.full((20, 30, 3), 90, dtype=np.uint8)
    structure = rect_mask(30, 20, 5, 4, 10, 8)
    target = rect_mask(30, 20, 7, 6, 4, 3)
    crop = make_exemplar(image, structure, ClassLabel.DAMAGE, target, source_id="x")
    assert crop.patch.shape == (8, 10, 4)
    assert (crop.patch[..., 3] == 255).all()
    assert crop.target_mask.sum() == 12


# --- basic augmentations ---

def test_basic_augment_double_flip_is_identity():
    rng = np.random.default_rng(0)
    image = np.arange(40 * 60 * 3, dtype=np.uint8).reshape(40, 60, 3) % 255
    inst = Instance(label=ClassLabel.DAMAGE, mask=rect_mask(60, 40, 10, 10, 8, 6))
    settings = BasicAugmentSettings(short_edge_sizes=[40], hflip_probability=1.0)
    once, [inst_once] = basic_augment(image, [inst], settings, rng)
    twice, [inst_twice] = basic_augment(once, [inst_once], settings, rng)
    assert np.array_equal(twice, image)
    assert np.array_equal(inst_twice.mask, inst.mask)


def test_basic_augment_short_edge_scaling_preserves_aspect():
    rng = np.random.default_rng(1)
    image = np.zeros((2250, 4000, 3), dtype=np.uint8)
    settings = BasicAugmentSettings(short_edge_sizes=[800], hflip_probability=0.0)
    scaled, _ = basic_augment(image, [], settings, rng)
    assert scaled.shape[:2] == (800, 1422)


def test_basic_augment_crop_containing_instance_keeps_area():
    rng = np.random.default_rng(2)
    image = np.zeros((100, 100, 3), dtype=np.uint8)
    inst = Instance(label=ClassLabel.DIRT, mask=rect_mask(100, 100, 45, 45, 10, 10))
    settings = BasicAugmentSettings(
        short_edge_sizes=[100], hflip_probability=0.0, crop_size=(80, 80)
    )
    for _ in range(10):
        _, kept = basic_augment(image, [inst], settings, rng)
        assert len(kept) == 1 and kept[0].area() == 100


def test_basic_augment_drops_instances_cropped_away():
    rng = np.random.default_rng(3)
    image = np.zeros((64, 256, 3), dtype=np.uint8)
    corner = Instance(label=ClassLabel.DAMAGE, mask=rect_mask(256, 64, 250, 0, 4, 4))
    settings = BasicAugmentSettings(
        short_edge_sizes=[64], hflip_probability=0.0, crop_size=(32, 32)
    )
    dropped = False
    for _ in range(20):
        _, kept = basic_augment(image, [corner], settings, rng)
        dropped = dropped or not kept
    assert dropped


def test_basic_augment_requires_sizes():
    with pytest.raises(ConfigurationError):
        BasicAugmentSettings(short_edge_sizes=[])
