import numpy as np
import pytest
from PIL import Image

from pseudolab.corpus import corpus_records, generate_corpus
from pseudolab.pixmap import read_mask


def test_generate_corpus_layout(tmp_path):
    records = generate_corpus(tmp_path / "corpus", count=6, size=64, seed=5)
    assert len(records) == 6
    for sample_id, image_path, gt_path in records:
        mask = read_mask(gt_path)
        assert (mask.height, mask.width) == (64, 64)
        assert 0.02 <= mask.data.mean() <= 0.6
        with Image.open(image_path) as img:
            assert img.size == (64, 64)
            assert img.mode == "RGB"
        assert sample_id in image_path and sample_id in gt_path


def test_generate_corpus_deterministic(tmp_path):
    generate_corpus(tmp_path / "a", count=4, size=64, seed=9)
    generate_corpus(tmp_path / "b", count=4, size=64, seed=9)
    for i in range(4):
        a = (tmp_path / "a" / "gt" / f"s{i:03d}.png").read_bytes()
        b = (tmp_path / "b" / "gt" / f"s{i:03d}.png").read_bytes()
        assert a == b


def test_generate_corpus_shape_variety(tmp_path):
    records = generate_corpus(tmp_path / "corpus", count=9, size=96, seed=2)
    # ring samples have a hole: component count of the inverted mask > 1
    from scipy import ndimage

    hole_counts = []
    for _, _, gt_path in records:
        mask = read_mask(gt_path).data
        _, n = ndimage.label(1 - mask)
        hole_counts.append(n)
    assert max(hole_counts) > 1


def test_corpus_records_pairs_by_stem(tmp_path):
    generate_corpus(tmp_path / "corpus", count=3, size=64, seed=1)
    records = corpus_records(tmp_path / "corpus" / "images", tmp_path / "corpus" / "gt")
    assert [r[0] for r in records] == ["s000", "s001", "s002"]


def test_corpus_records_missing_gt(tmp_path):
    generate_corpus(tmp_path / "corpus", count=2, size=64, seed=1)
    (tmp_path / "corpus" / "gt" / "s001.png").unlink()
    with pytest.raises(ValueError, match="no ground truth"):
        corpus_records(tmp_path / "corpus" / "images", tmp_path / "corpus" / "gt")


def test_generate_corpus_rejects_bad_args(tmp_path):
    with pytest.raises(ValueError):
        generate_corpus(tmp_path, count=0)
    with pytest.raises(ValueError):
        generate_corpus(tmp_path, size=8)


def test_masks_are_strictly_binary(tmp_path):
    records = generate_corpus(tmp_path / "corpus", count=3, size=64, seed=3)
    for _, _, gt_path in records:
        with Image.open(gt_path) as img:
            values = np.unique(np.asarray(img))
        assert set(values.tolist()) <= {0, 255}
