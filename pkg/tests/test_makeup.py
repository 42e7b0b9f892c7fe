import math

import numpy as np
import pytest

from mascara import makeup
from mascara.makeup import DEFAULT_PALETTE, MakeupLayer, Palette, PaletteEntry


def square_masks(size=32):
    """Two disjoint binary masks plus one soft mask, keyed by real region names."""
    lips = np.zeros((size, size))
    lips[20:26, 10:22] = 1.0
    brow = np.zeros((size, size))
    brow[4:8, 6:14] = 1.0
    cheek = np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    cheek = np.clip(1.0 - np.hypot(yy - 14, xx - 24) / 6.0, 0.0, 1.0)
    return {"lips": lips, "left_brow": brow, "left_cheek": cheek}


def flat_image(size=32, value=0.5):
    return np.full((size, size, 3), value)


class TestNaturalness:
    def test_default_palette_is_natural_and_complete(self):
        assert len(DEFAULT_PALETTE) == 12
        roles = set()
        covered = set()
        for entry in DEFAULT_PALETTE:
            assert makeup.is_natural(entry.rgb, entry.role)
            assert entry.regions
            roles.add(entry.role)
            covered |= entry.regions
        assert roles == {"contour", "eyeshadow", "blush", "lipstick", "brow"}
        assert covered == {
            "left_brow", "right_brow", "left_eyelid", "right_eyelid",
            "left_cheek", "right_cheek", "nose_ridge", "nose_sides",
            "lips", "forehead_contour", "jaw_contour",
        }

    @pytest.mark.parametrize("rgb", [(0.2, 0.3, 0.9), (0.15, 0.8, 0.25), (1.0, 1.0, 1.0)])
    def test_blue_green_white_fail_every_role(self, rgb):
        for role in makeup.ROLE_BOUNDS:
            assert not makeup.is_natural(rgb, role)

    def test_unnatural_entry_rejected_at_construction(self):
        with pytest.raises(ValueError, match="naturalness"):
            PaletteEntry("teal", (0.1, 0.6, 0.6), frozenset({"lips"}), "lipstick")

    def test_unknown_role_rejected(self):
        with pytest.raises(ValueError, match="role"):
            makeup.is_natural((0.5, 0.3, 0.2), "glitter")

    def test_duplicate_entry_ids_rejected(self):
        e = PaletteEntry("x", (0.5, 0.35, 0.28), frozenset({"lips"}), "lipstick")
        with pytest.raises(ValueError, match="duplicate"):
            Palette([e, e])


class TestApplyLayer:
    def test_zero_opacity_is_identity(self):
        img = flat_image()
        out = makeup.apply_layer(img, MakeupLayer("lips", "lipstick_brick", 0.0), square_masks())
        assert np.array_equal(out, img)

    def test_full_opacity_interior_equals_color(self):
        img = flat_image()
        masks = square_masks()
        # the default cap allows at most 0.8, so lift it for this exactness check
        layer = MakeupLayer("lips", "lipstick_brick", 1.0)
        out = makeup.apply_layer(img, layer, masks, cap=1.0)
        color = DEFAULT_PALETTE["lipstick_brick"].rgb
        assert np.allclose(out[22, 15], color, atol=1e-12)

    def test_hand_blend_case(self):
        img = np.full((4, 4, 3), 0.2)
        masks = {"lips": np.ones((4, 4))}
        entry = PaletteEntry("probe", (0.6, 0.3, 0.2), frozenset({"lips"}), "lipstick")
        out = makeup.apply_layer(img, MakeupLayer("lips", "probe", 0.5), masks,
                                 palette=Palette([entry]))
        assert np.allclose(out[0, 0], (0.4, 0.25, 0.2), atol=1e-12)

    def test_zero_mask_pixels_bitwise_unchanged(self):
        rng = np.random.default_rng(7)
        img = rng.uniform(0, 1, (32, 32, 3))
        masks = square_masks()
        out = makeup.apply_layer(img, MakeupLayer("lips", "lipstick_brick", 0.7), masks)
        untouched = masks["lips"] == 0.0
        assert np.array_equal(out[untouched], img[untouched])

    def test_output_stays_in_unit_range(self):
        rng = np.random.default_rng(11)
        img = rng.uniform(0, 1, (32, 32, 3))
        out = makeup.apply_layer(img, MakeupLayer("left_cheek", "blush_rose", 0.8),
                                 square_masks())
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_unknown_region_rejected(self):
        with pytest.raises(ValueError):
            makeup.apply_layer(flat_image(), MakeupLayer("chin", "lipstick_brick", 0.5),
                               square_masks())

    def test_region_not_allowed_for_entry_rejected(self):
        with pytest.raises(ValueError, match="not allowed"):
            makeup.apply_layer(flat_image(), MakeupLayer("left_brow", "lipstick_brick", 0.5),
                               square_masks())

    def test_opacity_above_cap_rejected(self):
        with pytest.raises(ValueError, match="cap"):
            makeup.apply_layer(flat_image(), MakeupLayer("lips", "lipstick_brick", 0.9),
                               square_masks())


class TestComposite:
    def test_empty_layer_list_unchanged(self):
        img = flat_image()
        assert np.array_equal(makeup.composite(img, [], square_masks()), img)

    def test_repeated_layer_residual_base_weight(self):
        img = flat_image(value=0.2)
        masks = square_masks()
        layer = MakeupLayer("lips", "lipstick_brick", 0.5)
        out = makeup.composite(img, [layer, layer], masks)
        color = np.array(DEFAULT_PALETTE["lipstick_brick"].rgb)
        want = 0.25 * 0.2 + 0.75 * color  # (1-0.5)^2 residual base weight
        assert np.allclose(out[22, 15], want, atol=1e-12)

    def test_disjoint_layers_commute(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 1, (32, 32, 3))
        masks = square_masks()
        layers = [
            MakeupLayer("lips", "lipstick_rosewood", 0.6),
            MakeupLayer("left_brow", "brow_dark_umber", 0.4),
        ]
        a = makeup.composite(img, layers, masks)
        b = makeup.composite(img, layers[::-1], masks)
        assert np.array_equal(a, b)


class TestColorfulness:
    def test_zero_perturbation(self):
        assert makeup.colorfulness(np.zeros((8, 8, 3))) == 0.0

    def test_uniform_red_shift_fixture(self):
        d = np.zeros((5, 5, 3))
        d[..., 0] = 10.0 / 255.0
        want = 0.3 * math.sqrt(125.0)  # sigma=0; mu_rg=10, mu_yb=5
        assert makeup.colorfulness(d) == pytest.approx(want, abs=1e-9)

    def test_two_pixel_fixture(self):
        d = np.zeros((1, 2, 3))
        d[0, 0, 0] = 10.0 / 255.0
        d[0, 1, 1] = 10.0 / 255.0
        # rg = {10,-10}: sigma 10, mu 0; yb = {5,5}: sigma 0, mu 5
        assert makeup.colorfulness(d) == pytest.approx(11.5, abs=1e-9)

    def test_spatial_permutation_invariance(self):
        rng = np.random.default_rng(5)
        d = rng.normal(0, 0.1, (8, 8, 3))
        flat = d.reshape(-1, 3)
        perm = flat[rng.permutation(len(flat))].reshape(d.shape)
        assert makeup.colorfulness(perm) == pytest.approx(makeup.colorfulness(d), abs=1e-12)

    def test_monotone_in_opacity(self):
        img = np.random.default_rng(9).uniform(0.2, 0.8, (32, 32, 3))
        masks = square_masks()
        scores = []
        for op in np.arange(0.0, 0.81, 0.1):
            out = makeup.apply_layer(img, MakeupLayer("lips", "lipstick_brick", float(op)),
                                     masks)
            scores.append(makeup.intensity(out, img))
        assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="differ"):
            makeup.intensity(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)))

    def test_non_image_perturbation_rejected(self):
        with pytest.raises(ValueError):
            makeup.colorfulness(np.zeros((4, 4)))


class TestRandomMakeup:
    def test_zero_target_accepts_first_draw(self):
        res = makeup.random_makeup(DEFAULT_PALETTE, square_masks(), seed=1,
                                   min_intensity=0.0, base_image=flat_image())
        assert res.met_target
        assert res.layers
        assert all(l.opacity == 0.3 for l in res.layers)

    def test_deterministic_under_seed(self):
        kw = dict(masks=square_masks(), seed=42, min_intensity=2.0, base_image=flat_image())
        a = makeup.random_makeup(DEFAULT_PALETTE, **kw)
        b = makeup.random_makeup(DEFAULT_PALETTE, **kw)
        assert a == b

    def test_layers_respect_palette_constraints(self):
        res = makeup.random_makeup(DEFAULT_PALETTE, square_masks(), seed=3,
                                   min_intensity=1.0, base_image=flat_image())
        for layer in res.layers:
            makeup.validate_layer(layer, DEFAULT_PALETTE)

    def test_achieved_intensity_meets_target(self):
        masks = square_masks()
        base = flat_image()
        res = makeup.random_makeup(DEFAULT_PALETTE, masks, seed=8, min_intensity=3.0,
                                   base_image=base)
        assert res.met_target
        made_up = makeup.composite(base, res.layers, masks)
        assert makeup.intensity(made_up, base) == pytest.approx(res.intensity)
        assert res.intensity >= 3.0

    def test_unreachable_target_reports_achieved_score(self):
        res = makeup.random_makeup(DEFAULT_PALETTE, square_masks(), seed=5,
                                   min_intensity=1e6, base_image=flat_image())
        assert not res.met_target
        assert res.intensity > 0.0
        assert all(l.opacity <= makeup.OPACITY_CAP for l in res.layers)

    def test_no_coverable_region_rejected(self):
        with pytest.raises(ValueError):
            makeup.random_makeup(DEFAULT_PALETTE, {"chin": np.ones((8, 8))}, seed=1,
                                 min_intensity=0.0, base_image=np.zeros((8, 8, 3)))


class TestPlanIO:
    def test_round_trip(self, tmp_path):
        layers = (
            MakeupLayer("lips", "lipstick_brick", 0.3),
            MakeupLayer("left_cheek", "blush_peach", 0.5, feather=2.0),
        )
        path = tmp_path / "plan.json"
        makeup.save_plan(layers, path, extra={"dodged": True})
        assert makeup.load_plan(path) == layers

    def test_unknown_layer_key_rejected(self):
        doc = makeup.plan_to_json([MakeupLayer("lips", "lipstick_brick", 0.3)])
        doc["layers"][0]["glow"] = 1
        with pytest.raises(ValueError, match="glow"):
            makeup.plan_from_json(doc)

    def test_wrong_format_rejected(self):
        with pytest.raises(ValueError, match="format"):
            makeup.plan_from_json({"format": "other", "version": 1, "layers": []})

    def test_palette_json_round_trip(self):
        doc = DEFAULT_PALETTE.to_json()
        back = Palette.from_json(doc)
        assert back.to_json() == doc
