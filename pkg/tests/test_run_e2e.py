"""End-to-end runs of the self-training loop against subprocess mocks."""

import json
from pathlib import Path

import pytest

from pseudolab.corpus import generate_corpus
from pseudolab.manifest import Manifest, latest_manifest, manifest_path
from pseudolab.selftrain import SelfTrainConfig, run_self_training


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e-corpus")
    generate_corpus(root, count=16, size=96, seed=6)
    return root


def loop_config(corpus_root, state_dir, **overrides) -> SelfTrainConfig:
    raw = {
        "state_dir": str(state_dir),
        "images_dir": str(corpus_root / "images"),
        "gt_dir": str(corpus_root / "gt"),
        "labeled_fraction": 0.25,
        "seed": 5,
        "in_flight": 4,
        "plain": {
            "transport": "builtin-mock",
            "mode": "oracle_noisy",
            "gt_dir": str(corpus_root / "gt"),
            "seed": 1,
            "flip_rate": 0.05,
            "blur": 2.0,
        },
        "promptable": {
            "transport": "builtin-mock",
            "mode": "oracle_prompt_refine",
            "gt_dir": str(corpus_root / "gt"),
        },
    }
    raw.update(overrides)
    return SelfTrainConfig.from_dict(raw)


def state_fingerprint(state_dir: Path) -> dict:
    out = {}
    for pattern in ("manifest_cycle_*.jsonl", "labels/*.pfm", "reports/*.json"):
        for path in sorted(Path(state_dir).glob(pattern)):
            out[str(path.relative_to(state_dir))] = path.read_bytes()
    return out


def test_loop_terminates_with_doubling(corpus, tmp_path):
    config = loop_config(corpus, tmp_path / "state")
    final = run_self_training(config)
    assert final["terminated"] == "unlabeled_empty"
    assert final["unlabeled"] == 0
    assert final["labeled"] == 16
    # 4 labeled of 16: expansions 4, 8 drain the 12 unlabeled
    assert [c["expanded"] for c in final["cycles"]] == [4, 8]
    for cycle in final["cycles"]:
        assert cycle["mean_iou_corrected"] >= cycle["mean_iou_initial"]


def test_loop_max_cycles_zero_is_noop(corpus, tmp_path):
    config = loop_config(corpus, tmp_path / "state", max_cycles=0)
    final = run_self_training(config)
    assert final["cycles_run"] == 0
    assert final["cycles"] == []
    assert final["unlabeled"] == 12
    manifest = Manifest.load(manifest_path(tmp_path / "state", 0))
    assert len(manifest.labeled) == 4


def test_loop_deterministic_across_runs(corpus, tmp_path):
    final_a = run_self_training(loop_config(corpus, tmp_path / "a"))
    final_b = run_self_training(loop_config(corpus, tmp_path / "b"))
    assert final_a == final_b
    fp_a = state_fingerprint(tmp_path / "a")
    fp_b = state_fingerprint(tmp_path / "b")
    assert fp_a.keys() == fp_b.keys()
    for name in fp_a:
        assert fp_a[name] == fp_b[name], f"{name} differs between identical runs"


def test_loop_resume_matches_uninterrupted(corpus, tmp_path):
    # Stop after the first cycle (simulating a kill between cycles), then
    # resume; the final state must match the uninterrupted run.
    run_self_training(loop_config(corpus, tmp_path / "full"))
    run_self_training(loop_config(corpus, tmp_path / "paused", max_cycles=1))
    assert latest_manifest(tmp_path / "paused").name == "manifest_cycle_0001.jsonl"
    run_self_training(loop_config(corpus, tmp_path / "paused"))
    full = state_fingerprint(tmp_path / "full")
    resumed = state_fingerprint(tmp_path / "paused")
    assert full.keys() == resumed.keys()
    for name in full:
        assert full[name] == resumed[name], f"{name} differs after resume"


def test_loop_resume_after_partial_labels(corpus, tmp_path):
    # A kill mid-cycle leaves label files but no manifest; the redone cycle
    # must overwrite them identically.
    run_self_training(loop_config(corpus, tmp_path / "full"))
    state = tmp_path / "crashy"
    run_self_training(loop_config(corpus, state, max_cycles=1))
    # drop the cycle-1 manifest but keep its label files: mid-cycle crash
    (state / "manifest_cycle_0001.jsonl").unlink()
    for report in (state / "reports").glob("*.json"):
        report.unlink()
    run_self_training(loop_config(corpus, state))
    full = state_fingerprint(tmp_path / "full")
    crashed = state_fingerprint(state)
    assert full.keys() == crashed.keys()
    for name in full:
        assert full[name] == crashed[name], f"{name} differs after mid-cycle crash"


def test_cycle_hook_runs_per_cycle(corpus, tmp_path):
    log = tmp_path / "hook.log"
    hook = [
        "/bin/sh",
        "-c",
        f'echo "$PSEUDOLAB_CYCLE $(basename $PSEUDOLAB_MANIFEST)" >> {log}',
    ]
    final = run_self_training(loop_config(corpus, tmp_path / "state", cycle_hook=hook))
    lines = log.read_text().splitlines()
    assert len(lines) == final["cycles_run"]
    assert lines[0] == "1 manifest_cycle_0001.jsonl"


def test_reports_written_per_cycle(corpus, tmp_path):
    final = run_self_training(loop_config(corpus, tmp_path / "state"))
    reports_dir = tmp_path / "state" / "reports"
    files = sorted(reports_dir.glob("cycle_*.json"))
    assert len(files) == final["cycles_run"]
    report = json.loads(files[0].read_text())
    assert report["cycle"] == 1
    assert {s["id"] for s in report["samples"]} == {
        r.id for r in Manifest.load(manifest_path(tmp_path / "state", 0)).unlabeled
    }
