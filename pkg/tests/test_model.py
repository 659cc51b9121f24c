import numpy as np
import pytest

from craftbench.geometry import BBox, GridGeometry
from craftbench.losses import (
    CaptionSwapLoss,
    PooledCosineLoss,
    RegionContrastiveLoss,
)
from craftbench.model import (
    Category,
    ModelConfig,
    ToyModel,
    build_model,
    caption_head,
    detect_head,
    encode_image,
    grad_loss_wrt_image,
    localize_head,
    patchify,
    region_head,
    token_sims,
    unpatchify,
)

CATS = [
    Category(1, "alpha", "greek"),
    Category(2, "beta", "greek"),
    Category(3, "gamma", "greek"),
    Category(4, "delta", "greek"),
]

SMALL_GEOM = GridGeometry(image_w=96, image_h=96, model_w=96, model_h=96, patch=8)


def small_model(**over):
    cfg = ModelConfig(geometry=SMALL_GEOM, **over)
    return build_model(cfg, CATS)


def paint(model, img, category_id, rect):
    tile = model.table.tile(category_id)
    p = model.geometry.patch
    for j in range(rect[2], rect[3]):
        for i in range(rect[0], rect[1]):
            img[j * p : (j + 1) * p, i * p : (i + 1) * p] = tile
    return img


class TestBuild:
    def test_deterministic(self):
        a, b = small_model(), small_model()
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.table.tiles, b.table.tiles)
        assert np.array_equal(a.table.embeddings, b.table.embeddings)

    def test_seed_changes_weights(self):
        assert not np.array_equal(
            small_model().weights, small_model(seed=8).weights
        )

    def test_embeddings_unit_norm(self):
        m = small_model()
        norms = np.linalg.norm(m.table.embeddings, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-12)

    def test_tile_stable_under_category_growth(self):
        cfg = ModelConfig(geometry=SMALL_GEOM)
        a = build_model(cfg, CATS[:2])
        b = build_model(cfg, CATS)
        assert np.array_equal(a.table.tile(2), b.table.tile(2))

    def test_config_json_round_trip(self):
        cfg = ModelConfig(geometry=SMALL_GEOM, d=32, use_tanh=False, seed=11)
        assert ModelConfig.from_json(cfg.to_json()) == cfg

    def test_bad_dim_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(geometry=SMALL_GEOM, d=1)


class TestEncode:
    def test_identity_weights_pass_pixels_through(self):
        cfg = ModelConfig(geometry=SMALL_GEOM, d=8 * 8 * 3, use_tanh=False)
        m = ToyModel(config=cfg, table=None, weights=np.eye(cfg.patch_dim))
        img = np.random.default_rng(0).random((96, 96, 3))
        feats = encode_image(m, img)
        assert np.array_equal(
            feats.reshape(144, -1), patchify(img, SMALL_GEOM)
        )

    def test_matches_plain_matmul(self):
        m = small_model()
        img = np.random.default_rng(1).random((96, 96, 3))
        feats = encode_image(m, img).reshape(144, -1)
        expect = np.tanh(patchify(img, SMALL_GEOM) @ m.weights.T)
        assert np.allclose(feats, expect, atol=1e-12)

    def test_patchify_round_trip(self):
        img = np.random.default_rng(2).random((96, 96, 3))
        rows = patchify(img, SMALL_GEOM)
        assert np.array_equal(unpatchify(rows, SMALL_GEOM, 3), img)

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError):
            encode_image(small_model(), np.zeros((95, 96, 3)))


class TestHeads:
    def test_blank_image_is_empty_scene(self):
        m = small_model()
        feats = encode_image(m, np.zeros((96, 96, 3)))
        ids, text = caption_head(m, feats)
        assert ids == [] and text == "a scene"
        assert detect_head(m, feats) == []
        assert localize_head(m, feats, 1) is None

    def test_region_tie_breaks_to_lowest_id(self):
        m = small_model()
        feats = encode_image(m, np.zeros((96, 96, 3)))
        assert region_head(m, feats, BBox(0, 0, 96, 96)) == 1

    def test_painted_scene_caption_and_detection(self):
        m = small_model()
        img = paint(m, np.zeros((96, 96, 3)), 2, (3, 7, 2, 6))
        feats = encode_image(m, img)
        ids, text = caption_head(m, feats)
        assert ids == [2]
        assert text == "a scene with beta"
        dets = detect_head(m, feats)
        assert len(dets) == 1
        assert dets[0].category_id == 2
        assert dets[0].box.as_tuple() == (24.0, 16.0, 56.0, 48.0)
        assert dets[0].score == pytest.approx(1.0, abs=1e-9)

    def test_caption_orders_by_descending_score(self):
        m = small_model()
        img = np.zeros((96, 96, 3))
        paint(m, img, 3, (0, 2, 0, 2))
        # a blended tile points mostly at category 1 but scores lower
        # than the pure paint of category 3
        blend = 0.5 + 0.75 * (m.table.tile(1) - 0.5) + 0.35 * (m.table.tile(2) - 0.5)
        img[40:48, 40:48] = blend
        feats = encode_image(m, img)
        ids, _ = caption_head(m, feats)
        assert ids[0] == 3 and set(ids) == {1, 3}

    def test_region_head_reads_painted_category(self):
        m = small_model()
        img = paint(m, np.zeros((96, 96, 3)), 4, (5, 9, 5, 9))
        feats = encode_image(m, img)
        assert region_head(m, feats, BBox(40, 40, 72, 72)) == 4

    def test_localize_prefers_better_aligned_component(self):
        m = small_model()
        img = np.zeros((96, 96, 3))
        paint(m, img, 2, (0, 2, 0, 2))
        # second component blended off-axis, so it aligns less well
        blend = 0.5 + 0.75 * (m.table.tile(2) - 0.5) + 0.35 * (m.table.tile(4) - 0.5)
        img[80:96, 80:96] = np.tile(blend, (2, 2, 1))
        feats = encode_image(m, img)
        box = localize_head(m, feats, 2)
        assert box.as_tuple() == (0.0, 0.0, 16.0, 16.0)

    def test_detect_orders_by_category_then_scan(self):
        m = small_model()
        img = np.zeros((96, 96, 3))
        paint(m, img, 3, (0, 2, 0, 2))
        paint(m, img, 3, (8, 10, 8, 10))
        paint(m, img, 1, (5, 7, 0, 2))
        feats = encode_image(m, img)
        dets = detect_head(m, feats)
        assert [d.category_id for d in dets] == [1, 3, 3]
        assert dets[1].box.y1 == 0.0 and dets[2].box.y1 == 64.0


def fd_check(model, img, loss, coords, h=1e-4, tol=1e-4):
    _, grad = grad_loss_wrt_image(model, img, loss)
    worst = 0.0
    for (y, x, c) in coords:
        ip, im = img.copy(), img.copy()
        ip[y, x, c] += h
        im[y, x, c] -= h
        vp, _ = grad_loss_wrt_image(model, ip, loss)
        vm, _ = grad_loss_wrt_image(model, im, loss)
        num = (vp - vm) / (2 * h)
        an = grad[y, x, c]
        scale = max(abs(num), abs(an), 1e-8)
        if abs(num) < 1e-12 and abs(an) < 1e-12:
            continue
        worst = max(worst, abs(num - an) / scale)
    assert worst < tol, worst
    return worst


class TestGradients:
    def make_instance(self, seed, use_tanh):
        rng = np.random.default_rng(seed)
        m = small_model(use_tanh=use_tanh, seed=seed)
        img = rng.uniform(0.05, 0.95, (96, 96, 3))
        return m, img, rng

    def test_fd_contrastive(self):
        m, img, rng = self.make_instance(3, True)
        cells = np.arange(20, 60)
        loss = RegionContrastiveLoss(
            cells, m.table.embedding(2), m.table.embeddings[[0, 2, 3]], 0.9
        )
        coords = [(int(rng.integers(16, 48)), int(rng.integers(0, 96)), int(rng.integers(0, 3))) for _ in range(8)]
        fd_check(m, img, loss, coords)

    def test_fd_pooled_cosine_linear_model(self):
        m, img, rng = self.make_instance(4, False)
        loss = PooledCosineLoss(m.table.embedding(1))
        coords = [tuple(map(int, (rng.integers(0, 96), rng.integers(0, 96), rng.integers(0, 3)))) for _ in range(8)]
        fd_check(m, img, loss, coords)

    def test_fd_caption_swap(self):
        m, img, rng = self.make_instance(5, True)
        loss = CaptionSwapLoss(m.table.embedding(3), m.table.embedding(1))
        coords = [tuple(map(int, (rng.integers(0, 96), rng.integers(0, 96), rng.integers(0, 3)))) for _ in range(8)]
        fd_check(m, img, loss, coords)

    def test_region_loss_gradient_supported_on_region_pixels(self):
        m, img, _ = self.make_instance(6, True)
        cells = np.array([13, 14, 25, 26])  # 2x2 block of tokens
        loss = RegionContrastiveLoss(
            cells, m.table.embedding(1), m.table.embeddings[1:], 0.9
        )
        _, grad = grad_loss_wrt_image(m, img, loss)
        mask = np.zeros((12, 12), dtype=bool)
        for cell in cells:
            mask[cell // 12, cell % 12] = True
        pixel_mask = np.kron(mask, np.ones((8, 8), dtype=bool))
        assert np.all(grad[~pixel_mask] == 0.0)
        assert np.any(grad[pixel_mask] != 0.0)

    def test_non_finite_loss_raises(self):
        class Bad:
            active_cells = None

            def value_and_feat_grad(self, feats):
                return np.inf, np.zeros_like(feats)

        m, img, _ = self.make_instance(7, False)
        with pytest.raises(ArithmeticError):
            grad_loss_wrt_image(m, img, Bad())


class TestSims:
    def test_token_sims_shape_and_range(self):
        m = small_model()
        img = np.random.default_rng(8).random((96, 96, 3))
        sims = token_sims(m, encode_image(m, img))
        assert sims.shape == (144, 4)
        assert np.all(sims <= 1.0 + 1e-12) and np.all(sims >= -1.0 - 1e-12)
