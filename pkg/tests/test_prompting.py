import numpy as np
import pytest

from pseudolab.pixmap import BinaryMask, ProbMap
from pseudolab.prompting import (
    DpcConfig,
    NoForegroundError,
    PromptSet,
    box_prompt,
    extract_components,
    filter_small,
    fuse,
    make_prompts,
    safe_center,
)

from oracles import exact_bbox, flood_components


def mask_from(shape, ones_at) -> BinaryMask:
    values = np.zeros(shape, dtype=np.uint8)
    for x, y in ones_at:
        values[y, x] = 1
    return BinaryMask(values)


def random_blob_mask(rng, size: int = 48, blobs: int = 3) -> BinaryMask:
    ys, xs = np.mgrid[0:size, 0:size]
    values = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, blobs + 1))):
        cx, cy = rng.uniform(6, size - 6, size=2)
        rx, ry = rng.uniform(2, size / 4, size=2)
        values |= ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    return BinaryMask(values)


def annulus_mask(size: int = 32, center: int = 16, inner: float = 7, outer: float = 8) -> BinaryMask:
    ys, xs = np.mgrid[0:size, 0:size]
    dist = np.hypot(xs - center, ys - center)
    return BinaryMask((dist >= inner) & (dist < outer))


def test_single_square_component():
    pixels = [(x, y) for x in range(10, 15) for y in range(10, 15)]
    comps = extract_components(mask_from((32, 32), pixels))
    assert len(comps) == 1
    c = comps[0]
    assert c.area == 25
    assert c.bbox == (10, 10, 14, 14)
    assert c.centroid == (12.0, 12.0)


def test_two_squares_ordered_topmost_leftmost():
    pixels = [(x, y) for x in range(20, 23) for y in range(20, 23)]
    pixels += [(x, y) for x in range(2, 5) for y in range(2, 5)]
    comps = extract_components(mask_from((32, 32), pixels))
    assert len(comps) == 2
    assert comps[0].bbox[:2] == (2, 2)
    assert comps[1].bbox[:2] == (20, 20)
    assert [c.id for c in comps] == [0, 1]


def test_diagonal_chain_connectivity():
    pixels = [(i, i) for i in range(6)]
    mask = mask_from((8, 8), pixels)
    assert len(extract_components(mask, DpcConfig(connectivity=8))) == 1
    assert len(extract_components(mask, DpcConfig(connectivity=4))) == 6


@pytest.mark.parametrize("connectivity", [4, 8])
def test_components_match_flood_fill_oracle(connectivity):
    rng = np.random.default_rng(61)
    cfg = DpcConfig(connectivity=connectivity)
    for _ in range(25):
        values = (rng.uniform(size=(20, 24)) < 0.35).astype(np.uint8)
        if values.sum() == 0:
            continue
        comps = extract_components(BinaryMask(values), cfg)
        oracle = flood_components(values, connectivity)
        assert len(comps) == len(oracle)
        assert {frozenset(c.pixels) for c in comps} == {frozenset(p) for p in oracle}
        for c in comps:
            xs = [p[0] for p in c.pixels]
            ys = [p[1] for p in c.pixels]
            assert c.bbox == (min(xs), min(ys), max(xs), max(ys))
            assert c.centroid == (sum(xs) / len(xs), sum(ys) / len(ys))


def test_filter_small_absolute():
    comps = extract_components(
        mask_from((32, 32), [(x, y) for x in range(5) for y in range(5)] + [(x, y) for x in range(20, 23) for y in range(20, 23)])
    )
    kept = filter_small(comps, 34, DpcConfig(min_area_abs=16, min_area_rel=0.0))
    assert [c.area for c in kept] == [25]


def test_filter_small_relative_threshold():
    big = [(x, y) for x in range(10, 50) for y in range(10, 35)]  # 1000 px
    small = [(x, y) for x in range(55, 59) for y in range(55, 57)]  # 8 px
    comps = extract_components(mask_from((64, 64), big + small))
    kept = filter_small(comps, 1008, DpcConfig(min_area_abs=0, min_area_rel=0.01))
    assert [c.area for c in kept] == [1000]


def test_filter_small_keeps_largest_survivor():
    comps = extract_components(mask_from((16, 16), [(2, 2), (2, 3), (3, 2), (3, 3)]))
    kept = filter_small(comps, 4, DpcConfig(min_area_abs=16))
    assert len(kept) == 1
    assert kept[0].area == 4


def test_box_prompt_single_rect():
    pixels = [(x, y) for x in range(30, 41) for y in range(10, 21)]
    comps = extract_components(mask_from((64, 64), pixels))
    assert box_prompt(comps) == (30, 10, 40, 20)


def test_box_prompt_union():
    pixels = [(x, y) for x in range(0, 5) for y in range(0, 5)]
    pixels += [(x, y) for x in range(20, 25) for y in range(20, 25)]
    comps = extract_components(mask_from((32, 32), pixels))
    assert box_prompt(comps) == (0, 0, 24, 24)


def test_box_prompt_empty_errors():
    with pytest.raises(ValueError, match="no components"):
        box_prompt([])


def test_box_is_minimal_on_random_masks():
    rng = np.random.default_rng(62)
    for _ in range(50):
        mask = random_blob_mask(rng, size=48)
        if mask.foreground == 0:
            continue
        comps = extract_components(mask)
        box = box_prompt(comps)
        assert box == exact_bbox(mask.data)


def test_safe_center_filled_square():
    pixels = [(x, y) for x in range(4, 9) for y in range(4, 9)]
    comps = extract_components(mask_from((16, 16), pixels))
    mask = mask_from((16, 16), pixels)
    assert safe_center(comps[0], mask) == (6, 6)


def test_safe_center_annulus_axial_tiebreak():
    # Centroid sits in the hole; the isotropic ring falls back to the
    # horizontal axis and the positive direction wins, landing at x = 16 + 7.
    mask = annulus_mask()
    comps = extract_components(mask)
    assert len(comps) == 1
    point = safe_center(comps[0], mask)
    assert point == (23, 16)
    assert point in comps[0].pixels


def test_safe_center_c_shape_along_major_axis():
    # C-shape opening rightward: major axis is vertical, first hit going
    # +y from the centroid (brute-force verified).
    ys, xs = np.mgrid[0:32, 0:32]
    dist = np.hypot(xs - 16, ys - 16)
    shape = (dist <= 10) & (dist > 7) & ~((xs - 16 > 3) & (np.abs(ys - 16) < 4))
    mask = BinaryMask(shape)
    comps = extract_components(mask)
    assert len(comps) == 1
    point = safe_center(comps[0], mask)
    assert point == (15, 23)
    assert point in comps[0].pixels


def test_safe_center_always_on_component():
    rng = np.random.default_rng(63)
    for _ in range(40):
        mask = random_blob_mask(rng)
        if mask.foreground == 0:
            continue
        for comp in extract_components(mask):
            assert safe_center(comp, mask) in comp.pixels


def test_make_prompts_two_blobs_hybrid():
    pixels = [(x, y) for x in range(4, 12) for y in range(4, 12)]
    pixels += [(x, y) for x in range(30, 40) for y in range(30, 40)]
    values = np.zeros((48, 48))
    for x, y in pixels:
        values[y, x] = 0.9
    prompts = make_prompts(ProbMap(values))
    assert prompts.mode == "hybrid"
    assert len(prompts.points) == 2
    assert prompts.box == (4, 4, 39, 39)


def test_make_prompts_fragmented_blob():
    # One object split into three pieces by thresholding: three points,
    # one box spanning all pieces.
    values = np.zeros((32, 32))
    for x0 in (2, 12, 22):
        values[10:18, x0 : x0 + 6] = 0.9
    prompts = make_prompts(ProbMap(values))
    assert len(prompts.points) == 3
    assert prompts.box == (2, 10, 27, 17)
    comps = extract_components(BinaryMask(values > 0.5))
    for point, comp in zip(prompts.points, comps):
        assert point in comp.pixels


def test_make_prompts_modes():
    values = np.zeros((16, 16))
    values[4:10, 4:10] = 1.0
    points_only = make_prompts(ProbMap(values), DpcConfig(prompt_mode="points_only"))
    assert points_only.box is None and len(points_only.points) == 1
    box_only = make_prompts(ProbMap(values), DpcConfig(prompt_mode="box_only"))
    assert box_only.points == () and box_only.box == (4, 4, 9, 9)


def test_make_prompts_all_zero_errors():
    with pytest.raises(NoForegroundError):
        make_prompts(ProbMap(np.zeros((8, 8))))


def test_point_count_equals_component_count():
    rng = np.random.default_rng(64)
    cfg = DpcConfig(min_area_abs=0, min_area_rel=0.0)
    for _ in range(25):
        mask = random_blob_mask(rng)
        if mask.foreground == 0:
            continue
        values = mask.data * 0.9
        prompts = make_prompts(ProbMap(values), cfg)
        assert len(prompts.points) == len(extract_components(mask, cfg))


def test_prompt_payload_roundtrip():
    prompts = PromptSet(points=((3, 4), (5, 6)), box=(0, 0, 10, 10), mode="hybrid")
    payload = prompts.to_payload()
    assert payload == {"points": [[3, 4], [5, 6]], "box": [0, 0, 10, 10]}
    assert PromptSet.from_payload(payload) == prompts
    assert PromptSet.from_payload({"points": [[1, 2]]}).mode == "points_only"
    assert PromptSet.from_payload({"box": [0, 0, 3, 3]}).mode == "box_only"
    with pytest.raises(ValueError):
        PromptSet.from_payload({})


def test_fuse_arithmetic():
    a = ProbMap(np.array([[0.8]]))
    b = ProbMap(np.array([[0.4]]))
    assert fuse(a, b, DpcConfig(fusion="ratio")).data[0, 0] == pytest.approx(0.6)
    assert fuse(a, b, DpcConfig(fusion="intersect")).data[0, 0] == pytest.approx(0.4)
    assert fuse(a, b, DpcConfig(fusion="union")).data[0, 0] == pytest.approx(0.8)
    assert fuse(ProbMap(np.array([[0.0]])), ProbMap(np.array([[1.0]]))).data[0, 0] == 0.5


def test_fuse_idempotent_commutative_bounded():
    rng = np.random.default_rng(65)
    for _ in range(100):
        a = ProbMap(rng.uniform(size=(6, 7)))
        b = ProbMap(rng.uniform(size=(6, 7)))
        ratio = fuse(a, b).data
        assert np.array_equal(fuse(a, a).data, a.data)
        assert np.array_equal(ratio, fuse(b, a).data)
        lo = np.minimum(a.data, b.data)
        hi = np.maximum(a.data, b.data)
        assert np.all(ratio >= lo - 1e-15) and np.all(ratio <= hi + 1e-15)
        inter = fuse(a, b, DpcConfig(fusion="intersect")).data
        union = fuse(a, b, DpcConfig(fusion="union")).data
        assert np.all(inter <= ratio + 1e-15) and np.all(ratio <= union + 1e-15)


def test_fuse_optional_binarize():
    a = ProbMap(np.array([[0.8, 0.2]]))
    b = ProbMap(np.array([[0.4, 0.3]]))
    out = fuse(a, b, DpcConfig(fusion="ratio", fusion_binarize=0.5))
    assert np.array_equal(out.data, [[1.0, 0.0]])


def test_fuse_dimension_mismatch():
    with pytest.raises(ValueError):
        fuse(ProbMap(np.zeros((2, 2))), ProbMap(np.zeros((3, 2))))


def test_shrunken_box_loses_foreground():
    rng = np.random.default_rng(66)
    for _ in range(30):
        mask = random_blob_mask(rng, size=40)
        if mask.foreground == 0:
            continue
        x0, y0, x1, y1 = box_prompt(extract_components(mask))
        data = mask.data
        assert data[y0, :].sum() > 0 and data[y1, :].sum() > 0
        assert data[:, x0].sum() > 0 and data[:, x1].sum() > 0
