import json
import math
import os

import pytest

import s2d


def make_chain_model(**kwargs):
    """Tiny 2-gram over {a, b}: a -> b and b -> a, near-deterministic."""
    table = {
        "order": 2,
        "alpha": 1e-9,
        "vocab": {"symbols": ["<bos>", "<eos>", "a", "b"], "bos": 0, "eos": 1},
        "counts": [
            [[0], [0.0, 0.0, 100.0, 0.0]],
            [[2], [0.0, 0.0, 0.0, 100.0]],
            [[3], [0.0, 0.0, 100.0, 0.0]],
        ],
    }
    return s2d.ngram_from_json(json.dumps(table), **kwargs)


def test_model_surface():
    model = make_chain_model(n_layers=4, unit_cost=2.0)
    assert model.n_layers == 4
    assert model.unit_cost == 2.0
    assert model.exits() == [4]
    assert model.vocab_symbols() == ["<bos>", "<eos>", "a", "b"]
    assert model.encode("ab") == [2, 3]
    assert model.decode_tokens([2, 3, 2]) == "aba"
    logits = model.evaluate([0, 2], 4)
    probs = [math.exp(x) for x in logits]
    assert abs(sum(probs) - 1.0) < 1e-9
    assert probs.index(max(probs)) == 3


def test_sampling_helpers():
    probs = s2d.apply_temperature([0.0, 0.0, 1.0], 1.0)
    assert abs(sum(probs) - 1.0) < 1e-12
    token, confidence = s2d.sample_token([0.0, 0.0, 1.0], temperature=0.0, seed=0)
    assert (token, confidence) == (2, 1.0)


def test_greedy_losslessness_roundtrip():
    target = make_chain_model()
    ar = json.loads(s2d.autoregressive_decode(target, [0, 2], 8))
    sp = json.loads(
        s2d.speculative_decode(target, target, [0, 2], 8, method="sd", exit=1, k=3)
    )
    assert ar["output"] == sp["output"]
    assert ar["output"][:2] == [3, 2]

    metrics = s2d.trace_metrics(
        json.dumps(sp), target_layers=12, target_unit_cost=1.0,
        draft_layers=1, draft_unit_cost=0.0,
    )
    assert metrics["mat"] == 4.0  # K=3, perfect draft
    assert metrics["acceptance_rate"] == 1.0
    assert metrics["modeled_speedup"] == pytest.approx(4.0)


def test_s2d_and_errors():
    target = make_chain_model(n_layers=3)
    # Ladder thresholds must align with the ladder.
    with pytest.raises(s2d.ConfigError):
        s2d.speculative_decode(
            target, target, [0, 2], 4, method="s2d", ladder=[1, 2], thresholds=[0.5]
        )
    with pytest.raises(s2d.IoError):
        s2d.load_model("/nonexistent/model.ckpt")


def test_bench_from_data_dir(tmp_path):
    data_dir = os.environ.get("S2D_DATA_DIR")
    if not data_dir:
        pytest.skip("S2D_DATA_DIR not set")

    model_path = tmp_path / "chain.json"
    table = {
        "order": 2,
        "alpha": 0.1,
        "vocab": {
            "symbols": ["<bos>", "<eos>"] + sorted(set("the cat sat on mat")),
            "bos": 0,
            "eos": 1,
        },
        "counts": [],  # pure-smoothing table: uniform conditionals
    }
    model_path.write_text(json.dumps(table))

    tasks = tmp_path / "tasks.jsonl"
    tasks.write_text(
        json.dumps({"id": "t1", "category": "qa", "prompt": "the cat", "max_new_tokens": 4})
        + "\n"
    )
    config = {
        "targets": [{"name": "t", "checkpoint": str(model_path), "unit_cost": 1.0}],
        "methods": [{"name": "autoregressive", "kind": "autoregressive"}],
        "tasks": str(tasks),
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))

    report = json.loads(s2d.run_bench(str(config_path)))
    rows = report["rows"]
    assert len(rows) == 1
    assert rows[0]["category"] == "all"
    assert rows[0]["error"] == ""
