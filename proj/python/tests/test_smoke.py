import json
import math
import pathlib

import pytest

import knowrl

ROOT = pathlib.Path(__file__).resolve().parents[2]


def test_consensus_from_completions():
    out = knowrl.compute_consensus(["Feasible"] * 6 + ["Infeasible"] * 2, 8)
    assert out["reward"] == 0.75
    assert out["majority"] == "feasible"
    assert not out["tied"]


def test_consensus_tie_and_unparsable():
    tie = knowrl.compute_consensus(["Feasible", "Infeasible"] * 4, 8)
    assert tie["majority"] is None and tie["tied"] and tie["reward"] == 0.5
    noisy = knowrl.compute_consensus(["Feasible"] * 3 + ["Infeasible"] * 2 + ["not sure"] * 3, 8)
    assert noisy["unparsable"] == 3
    assert noisy["reward"] == pytest.approx(3 / 8)


def test_wrong_sample_count_raises():
    with pytest.raises(knowrl.KnowrlError):
        knowrl.compute_consensus(["Feasible"] * 3, 8)


def test_verdict_parser():
    assert knowrl.parse_verdict("Reasoning\nConclusion: Infeasible") == ("infeasible", "last_keyword")
    assert knowrl.parse_verdict("FEASIBLE") == ("feasible", "final_line")
    assert knowrl.parse_verdict("no idea")[0] == "unparsable"


def test_rouge_and_tokenize():
    s = knowrl.rouge_l("a c", "a b c")
    assert s["lcs"] == 2
    assert s["f"] == pytest.approx(0.8)
    assert knowrl.tokenize("The CAT, sat!") == ["the", "cat", "sat"]


def test_filters_and_metrics():
    assert knowrl.keyword_hit("Generate an image of a cat") is not None
    assert knowrl.keyword_hit("Explain imagery in poems") is None
    assert knowrl.perplexity([-math.log(50.0)] * 4) == pytest.approx(50.0)
    assert knowrl.perplexity([]) is None
    p, r, f = knowrl.precision_recall_f1(3, 1, 2, 4)
    assert (p, r) == (0.75, 0.6)
    assert knowrl.format_delta(-0.13) == "0.13 ↓"


def test_config_round_trip():
    text = knowrl.default_config_toml()
    assert knowrl.validate_config_toml(text) == text
    with pytest.raises(knowrl.KnowrlError):
        knowrl.validate_config_toml("k = 1\n")


def test_synthetic_run(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        "total_iterations = 2\neval_every = 1\nrng_seed = 3\nintrinsic_trials_per_class = 10\n"
        f'seed_path = "{ROOT / "data" / "seeds.jsonl"}"\n'
        f'templates_dir = "{ROOT / "templates"}"\n'
        '[backend]\nkind = "synthetic"\n'
    )
    manifest = knowrl.init_run(cfg, tmp_path / "r")
    assert manifest["iterations"] == []
    manifest = knowrl.run(tmp_path / "r")
    assert len(manifest["iterations"]) == 2
    assert [e["iteration"] for e in manifest["evals"]] == [0, 1, 2]
    report = json.loads((tmp_path / "r" / "eval" / "2.json").read_text())
    assert report["iteration"] == 2
