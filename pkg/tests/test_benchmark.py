"""Change-pair table, scene generator, and dataset round-trip tests."""

from pathlib import Path

import numpy as np
import pytest

from craftbench import benchmark
from craftbench.benchmark import (
    Dataset,
    GenConfig,
    Sample,
    categories,
    generate_dataset,
    load_change_pairs,
    load_dataset,
    paint_swap,
    sample_seed,
    save_dataset,
    synthesize_scene,
    validate_sample,
)
from craftbench.change_pairs import PAIRS_PER_SUPERCATEGORY, SUPERCATEGORIES
from craftbench.geometry import box_to_tokens
from craftbench.model import ModelConfig, build_model


@pytest.fixture(scope="module")
def model():
    return build_model(ModelConfig(), categories())


def test_pair_table_shape():
    pairs = load_change_pairs()
    assert len(pairs) == 79
    counts = {}
    for p in pairs:
        counts[p.supercategory] = counts.get(p.supercategory, 0) + 1
    assert counts == PAIRS_PER_SUPERCATEGORY
    assert sum(PAIRS_PER_SUPERCATEGORY.values()) == 79
    assert set(counts) == set(SUPERCATEGORIES)
    for p in pairs:
        assert p.source != p.target


def test_pair_table_spot_checks():
    pairs = load_change_pairs()
    assert (pairs[0].source, pairs[0].target) == ("bicycle", "motorcycle")
    assert pairs[0].supercategory == "vehicle"
    assert (pairs[-1].source, pairs[-1].target) == ("toothbrush", "book")
    assert pairs[-1].supercategory == "indoor"
    by_source = {p.source: p for p in pairs}
    assert by_source["pizza"].supercategory == "food"
    assert by_source["laptop"].target == "mouse"
    assert by_source["tv"].target == "laptop"


def test_pair_table_corruption_detected(monkeypatch):
    good = load_change_pairs()
    bad = tuple((p.source, p.target, p.supercategory) for p in good[:-1])
    monkeypatch.setattr(benchmark, "CHANGE_PAIRS", bad)
    with pytest.raises(ValueError):
        load_change_pairs()


def test_pair_table_rejects_self_map():
    with pytest.raises(ValueError):
        load_change_pairs([("cat", "cat", "animal")])
    with pytest.raises(ValueError):
        load_change_pairs([("cat", "dog", "not-a-supercategory")])
    with pytest.raises(ValueError):
        load_change_pairs([("cat", "dog", "animal"), ("cat", "dog", "animal")])


def test_categories_first_appearance_order():
    cats = categories()
    assert len(cats) == 79
    assert [c.id for c in cats] == list(range(1, 80))
    assert (cats[0].id, cats[0].name, cats[0].supercategory) == (1, "bicycle", "vehicle")
    assert (cats[1].name, cats[2].name) == ("motorcycle", "car")
    assert (cats[-1].id, cats[-1].name) == (79, "toothbrush")
    names = [c.name for c in cats]
    assert len(set(names)) == len(names)


def test_sample_seed_pinned():
    assert sample_seed(0, 0, 0) == 3576417000
    assert sample_seed(7, 12, 2) == 3597123265
    assert sample_seed(0, 0, 1) != sample_seed(0, 0, 0)
    assert sample_seed(1, 0, 0) != sample_seed(0, 0, 0)


def test_gen_config_validation():
    with pytest.raises(ValueError):
        GenConfig(n_per_pair=0)
    with pytest.raises(ValueError):
        GenConfig(area_low=0.5, area_high=0.4)
    with pytest.raises(ValueError):
        GenConfig(noise_sigma=-0.1)
    cfg = GenConfig()
    assert GenConfig.from_dict(cfg.to_dict()) == cfg


def test_scene_deterministic(model):
    pair = load_change_pairs()[0]
    gen = GenConfig()
    img1, box1, ids1 = synthesize_scene(model, pair, gen, 123)
    img2, box2, ids2 = synthesize_scene(model, pair, gen, 123)
    assert np.array_equal(img1, img2)
    assert box1 == box2 and ids1 == ids2
    img3, box3, ids3 = synthesize_scene(model, pair, gen, 124)
    assert not np.array_equal(img1, img3)


def test_scene_pinned_example(model):
    pair = load_change_pairs()[0]
    img, box, ids = synthesize_scene(model, pair, GenConfig(), 123)
    assert box.as_tuple() == (64.0, 160.0, 384.0, 320.0)
    assert ids == [1, 37, 60, 67, 70]
    assert box_to_tokens(box, model.geometry).n_cells == 50


def test_scene_invariants_many_seeds(model):
    pairs = load_change_pairs()
    gen = GenConfig()
    g = model.geometry
    rng = np.random.default_rng(0)
    for _ in range(120):
        pair = pairs[int(rng.integers(0, len(pairs)))]
        seed = int(rng.integers(0, 2**32))
        img, box, ids = synthesize_scene(model, pair, gen, seed)
        assert img.shape == (g.model_h, g.model_w, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0
        rect = box_to_tokens(box, g)
        assert 15 <= rect.n_cells <= 72
        frac = box.area / (g.image_w * g.image_h)
        assert 0.10 - 1e-9 <= frac <= 0.50 + 1e-9
        assert ids == sorted(ids) and len(set(ids)) == len(ids)
        assert 1 <= len(ids) <= 1 + gen.max_distractors
        assert model.table.id_of(pair.source) in ids
        assert model.table.id_of(pair.target) not in ids


def test_scene_source_region_reads_source(model):
    """The painted box must actually classify as the source category."""
    pairs = load_change_pairs()
    from craftbench.model import encode_image, region_head

    for pi in (0, 20, 55):
        pair = pairs[pi]
        img, box, _ = synthesize_scene(model, pair, GenConfig(), 42 + pi)
        feats = encode_image(model, img)
        assert region_head(model, feats, box) == model.table.id_of(pair.source)


def test_paint_swap_flips_region(model):
    pair = load_change_pairs()[3]
    img, box, _ = synthesize_scene(model, pair, GenConfig(), 5)
    tid = model.table.id_of(pair.target)
    swapped = paint_swap(model, img, box, tid)
    from craftbench.model import encode_image, region_head

    assert region_head(model, encode_image(model, swapped), box) == tid
    assert not np.array_equal(swapped, img)
    # pixels outside the box untouched
    rect = box_to_tokens(box, model.geometry)
    p = model.geometry.patch
    mask = np.zeros(img.shape[:2], dtype=bool)
    mask[rect.j_min * p : rect.j_max * p, rect.i_min * p : rect.i_max * p] = True
    assert np.array_equal(swapped[~mask], img[~mask])


def test_validate_sample_codes(model):
    pair = load_change_pairs()[0]
    gen = GenConfig()
    img, box, ids = synthesize_scene(model, pair, gen, 9)
    ok = Sample("s", "images/s.cvf", 384, 384, box, pair.source, pair.target, ids, 9)
    assert validate_sample(ok, img, model.table) == []

    from dataclasses import replace
    from craftbench.geometry import BBox

    tiny = replace(ok, bbox=BBox(0.0, 0.0, 10.0, 10.0))
    assert "area-fraction" in validate_sample(tiny, img)
    crowded = replace(ok, caption_categories=[1, 2, 3, 4, 5, 6])
    assert "instance-count" in validate_sample(crowded, img)
    doubled = replace(ok, caption_categories=[1, 1])
    assert "duplicate-category" in validate_sample(doubled, img)
    swapped = paint_swap(model, img, box, model.table.id_of(pair.target))
    assert validate_sample(ok, swapped, model.table) == ["target-present"]
    # without a table the pixel check is skipped
    assert validate_sample(ok, swapped) == []


def test_generate_dataset_shape(model):
    pairs = load_change_pairs()[:5]
    ds, images = generate_dataset(model, GenConfig(n_per_pair=2), 3, pairs=pairs)
    assert len(ds.samples) == 10
    assert len(images) == 10
    assert ds.change_pair_version == "79-pairs-v1"
    assert [s.id for s in ds.samples] == sorted(s.id for s in ds.samples)
    for s in ds.samples:
        assert s.image_path == f"images/{s.id}.cvf"
        assert (s.width, s.height) == (384, 384)
        assert s.seed == sample_seed(3, int(s.id[:3]), int(s.id[4:]))


def test_dataset_json_round_trip(model):
    ds, _ = generate_dataset(
        model, GenConfig(n_per_pair=1), 3, pairs=load_change_pairs()[:3]
    )
    text = ds.to_json()
    ds2 = Dataset.from_json(text)
    assert ds2.to_json() == text
    assert ds2.generator_config == ds.generator_config
    assert ds2.model_config == ds.model_config
    assert ds2.master_seed == 3
    assert [s.to_dict() for s in ds2.samples] == [s.to_dict() for s in ds.samples]


def test_save_load_byte_exact(model, tmp_path):
    pairs = load_change_pairs()[:4]
    ds, images = generate_dataset(model, GenConfig(n_per_pair=2), 11, pairs=pairs)
    a, b = tmp_path / "a", tmp_path / "b"
    save_dataset(ds, images, a)
    ds2, images2 = load_dataset(a)
    for s in ds.samples:
        stored = images[s.id].astype(np.float32).astype(np.float64)
        assert np.array_equal(images2[s.id], stored)
    save_dataset(ds2, images2, b)
    assert (a / "dataset.json").read_bytes() == (b / "dataset.json").read_bytes()
    for s in ds.samples:
        assert (a / s.image_path).read_bytes() == (b / s.image_path).read_bytes()
        ppm = Path(s.image_path).with_suffix(".ppm")
        assert (a / ppm).read_bytes() == (b / ppm).read_bytes()


def test_rebuilt_model_matches(model, tmp_path):
    ds, images = generate_dataset(
        model, GenConfig(n_per_pair=1), 7, pairs=load_change_pairs()[:2]
    )
    save_dataset(ds, images, tmp_path)
    ds2, _ = load_dataset(tmp_path)
    m2 = benchmark.build_dataset_model(ds2)
    assert np.array_equal(m2.weights, model.weights)
    assert np.array_equal(m2.table.embeddings, model.table.embeddings)
