import json
import math

import numpy as np
import pytest

import scorelab


def test_config_normalization_is_idempotent():
    text = json.dumps({"task": "regression_tabular", "seed": 4})
    once = scorelab.normalize_config(text)
    twice = scorelab.normalize_config(once)
    assert once == twice
    filled = json.loads(once)
    assert filled["task"] == "regression_tabular"
    assert filled["training"]["epochs"] == 150
    assert filled["depth"]["wiring"] == "score"


def test_bad_configs_raise_config_error():
    with pytest.raises(scorelab.ConfigError):
        scorelab.normalize_config('{"task": "unknown"}')
    with pytest.raises(scorelab.ConfigError):
        scorelab.normalize_config('{"task": "regression_tabular", "bogus": 1}')


def tiny_tabular_config():
    return json.dumps({
        "task": "regression_tabular",
        "seed": 3,
        "model": {"embed_dim": 8},
        "depth": {"wiring": "score", "steps": 2},
        "training": {"epochs": 3, "batch_size": 16, "folds": 2},
        "data": {"synthetic": {"kind": "regression", "n": 50, "d": 4,
                               "seed": 1}},
    })


def test_run_writes_artifacts_and_reruns_identically(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    summary = scorelab.run(tiny_tabular_config(), out_dir=str(out_a))
    assert summary["metric"] == "rmse"
    assert not summary["diverged"]
    assert math.isfinite(summary["mean_best"])
    assert len(summary["fold_best"]) == 2
    assert (out_a / "summary.json").exists()
    assert (out_a / "fold_0.csv").exists()
    assert (out_a / "plot.svg").exists()

    scorelab.run(tiny_tabular_config(), out_dir=str(out_b))
    assert (out_a / "summary.json").read_bytes() == \
        (out_b / "summary.json").read_bytes()


def test_seed_override_changes_the_outcome(tmp_path):
    a = scorelab.run(tiny_tabular_config(), out_dir=str(tmp_path / "s3"))
    b = scorelab.run(tiny_tabular_config(), out_dir=str(tmp_path / "s9"),
                     seed=9)
    assert a["mean_best"] != b["mean_best"]


def test_preprocess_centers_scales_and_zero_fills():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 6))
    x[3, 1] = np.nan
    x[7, 4] = np.inf
    x[11, 2] = -np.inf
    clean = scorelab.preprocess(x)
    assert np.isfinite(clean).all()
    assert clean[3, 1] == 0.0
    assert clean[7, 4] == 0.0
    assert clean[11, 2] == 0.0
    finite = np.isfinite(x)
    for c in range(6):
        col = clean[finite[:, c], c]
        assert abs(col.mean()) < 1e-9
        assert abs(col.std() - 1.0) < 1e-6


def test_param_counts_reflect_weight_tying():
    def cfg(wiring, steps):
        return json.dumps({
            "task": "regression_tabular",
            "model": {"embed_dim": 16},
            "depth": {"wiring": wiring, "steps": steps},
        })

    shared = scorelab.param_counts(cfg("score", 6))
    stacked = scorelab.param_counts(cfg("classic", 6))
    one = scorelab.param_counts(cfg("classic", 1))
    assert shared["block_params"] == one["block_params"]
    assert stacked["block_params"] == 6 * one["block_params"]
    assert shared["total"] < stacked["total"]


def test_param_counts_for_graph_models():
    def cfg(wiring):
        return json.dumps({
            "task": "regression_graph",
            "model": {"embed_dim": 16},
            "depth": {"wiring": wiring, "steps": 3},
        })

    shared = scorelab.param_counts(cfg("score"))
    stacked = scorelab.param_counts(cfg("classic"))
    assert stacked["block_params"] == 3 * shared["block_params"]
    assert shared["total"] < stacked["total"]


def test_time_warp_recovers_a_planted_factor():
    steps = list(range(1, 201))
    ref = [2.0 * math.exp(-e / 40.0) + 0.5 for e in steps]
    half = list(range(1, 101))
    fast = [2.0 * math.exp(-2.0 * e / 40.0) + 0.5 for e in half]
    fit = scorelab.time_warp(steps, ref, half, fast)
    assert abs(fit["factor"] - 2.0) / 2.0 < 0.05


def test_dirichlet_energy_matches_hand_values():
    h = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    assert scorelab.dirichlet_energy(h, [(0, 1)]) == pytest.approx(1.0)
    assert scorelab.dirichlet_energy(h, [(0, 1), (0, 2)]) == pytest.approx(2.5)
    assert scorelab.dirichlet_energy(h, []) is None


def test_format_dt_renders_ceilinged_step_sizes():
    assert scorelab.format_dt(0.5) == "0.5"
    assert scorelab.format_dt(1.0 / 3.0) == "0.334"
    assert scorelab.format_dt(1.0 / 7.0) == "0.143"


def test_language_model_run_and_generation(tmp_path):
    cfg = json.dumps({
        "task": "language_model",
        "seed": 2,
        "model": {"embed_dim": 16, "n_heads": 2, "context": 8},
        "depth": {"wiring": "score", "steps": 2},
        "training": {"iterations": 20, "batch_size": 2, "eval_every": 10,
                     "grad_clip": 1.0},
        "data": {"synthetic": {"kind": "text", "min_bytes": 2000,
                               "seed": 6}},
    })
    out = tmp_path / "lm"
    summary = scorelab.run(cfg, out_dir=str(out))
    assert summary["metric"] == "ce"
    ckpt = out / "checkpoint.json"
    assert ckpt.exists()

    a = scorelab.generate(str(ckpt), "the ", length=16, temperature=0.5,
                          seed=11)
    b = scorelab.generate(str(ckpt), "the ", length=16, temperature=0.5,
                          seed=11)
    assert a == b
    assert a.startswith("the ")
    assert len(a) == 20
    with pytest.raises(scorelab.DataError):
        scorelab.generate(str(ckpt), "\x02", length=4)


def test_wiring_sweep_returns_five_rows(tmp_path):
    cfg = json.dumps({
        "task": "regression_tabular",
        "seed": 1,
        "model": {"embed_dim": 8},
        "depth": {"wiring": "score", "steps": 2},
        "training": {"epochs": 2, "batch_size": 16, "folds": 2},
        "data": {"synthetic": {"kind": "regression", "n": 40, "d": 4,
                               "seed": 1}},
        "sweep": {"axis": "wiring"},
    })
    csv = scorelab.sweep(cfg, out_dir=str(tmp_path / "sw"))
    lines = [l for l in csv.splitlines() if l]
    assert lines[0] == "wiring,mean,std"
    assert len(lines) == 6
    assert (tmp_path / "sw" / "comparison.csv").exists()
