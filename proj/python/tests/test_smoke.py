import numpy as np
import pytest

import cmatch


def test_tensor_round_trip(tmp_path):
    a = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
    cmatch.write_tensor(tmp_path / "a.cmt", a)
    assert np.array_equal(cmatch.read_tensor(tmp_path / "a.cmt"), a)

    m = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    cmatch.write_tensor(tmp_path / "m.cmt", m)
    back = cmatch.read_tensor(tmp_path / "m.cmt")
    assert back.dtype == np.uint8
    assert np.array_equal(back, m)


def test_corrupt_file_raises_with_kind(tmp_path):
    (tmp_path / "bad.cmt").write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(cmatch.CmatchError) as info:
        cmatch.read_tensor(tmp_path / "bad.cmt")
    assert info.value.kind == "FormatError"


def test_cosine_cost_analytic_cases():
    support = np.array([[[1, 0], [0, 1], [-1, 0]]], dtype=np.float32)
    query = np.array([[[1, 0]]], dtype=np.float32)
    c = cmatch.cosine_cost(support, query)
    assert c.shape == (3, 1)
    assert np.allclose(c[:, 0], [0.0, 1.0, 2.0], atol=1e-7)


def test_solve_matches_oracle_on_small_instance():
    rng = np.random.default_rng(0)
    cost = rng.uniform(0, 2, size=(4, 5)).astype(np.float32)
    supply = np.ones(4)
    demand = np.ones(5)
    exact = cmatch.solve(cost, supply, demand, 3, method="oracle")
    approx = cmatch.solve(cost, supply, demand, 3, epsilon_scale=0.01, max_iters=10000)
    assert exact["plan"].shape == (5, 6)
    assert exact["plan"][-1, -1] == 0.0
    assert approx["plan"][-1, -1] == 0.0
    assert abs(approx["real"].sum() - 3) < 1e-9
    assert approx["defect"] < 1e-9
    assert approx["cost"] <= exact["cost"] * 1.05 + 1e-12


def test_infeasible_flow_and_convergence_errors():
    cost = np.zeros((2, 2), dtype=np.float32)
    with pytest.raises(cmatch.CmatchError) as info:
        cmatch.solve(cost, np.ones(2), np.ones(2), 3)
    assert info.value.kind == "InfeasibleFlow"

    rng = np.random.default_rng(1)
    cost = rng.uniform(0, 2, size=(6, 6)).astype(np.float32)
    with pytest.raises(cmatch.ConvergenceError) as info:
        cmatch.solve(cost, np.ones(6), np.ones(6), 2, max_iters=1, tolerance=1e-12)
    assert info.value.iterations >= 1
    assert info.value.defect > 0


def test_exact_transport_balanced():
    cost = np.array([[0, 1], [1, 0]], dtype=np.float32)
    plan, total = cmatch.exact_transport(cost, np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert np.allclose(plan, [[1, 0], [0, 2]])
    assert total == 0.0


def test_zero_mlp_message_flow_is_identity():
    rng = np.random.default_rng(2)
    query = rng.normal(size=(4, 4, 8)).astype(np.float32)
    support = rng.normal(size=(4, 4, 8)).astype(np.float32)
    enc = cmatch.positional_encoding(4, 4, 8)
    q, s = cmatch.message_flow(query, support, mode="stacked", steps=3, zero_mlp=True)
    assert np.array_equal(q, query + enc)
    assert np.array_equal(s, support + enc)


def test_probability_threshold_and_metrics():
    plan = np.array([[1.0, 0.5, 0.0], [0.0, 0.5, 1.0]])
    p = cmatch.probability_map(plan, np.array([[1, 0]], dtype=np.uint8), np.ones(3), 1, 3)
    assert np.allclose(p, [[1.0, 0.5, 0.0]])
    pred = cmatch.threshold(p, 0.5)
    assert pred.tolist() == [[1, 1, 0]]
    assert cmatch.best_match(plan, 1, 3).tolist() == [[0, 0, 1]]

    gt = np.array([[1, 0, 0]], dtype=np.uint8)
    assert cmatch.confusion(pred, gt) == (1, 1, 0, 1)
    assert cmatch.iou(1, 1, 2) == 0.25
    assert cmatch.fb_iou(gt, gt) == 1.0
    assert cmatch.mean_iou([("a", 0.2), ("b", 0.6)]) == pytest.approx(0.4)
    report = cmatch.evaluate(pred, gt, "cat")
    assert report["per_class"]["cat"] == 0.5


def test_prior_mask_range():
    ep = cmatch.synthetic_episode(3)
    prior = cmatch.prior_mask(ep["query"], ep["support"], ep["support_mask"])
    assert prior.shape == (8, 8)
    assert prior.min() == 0.0 and prior.max() == 1.0


def test_synthetic_episode_shapes_and_determinism():
    a = cmatch.synthetic_episode(4)
    b = cmatch.synthetic_episode(4)
    assert a["support"].shape == (8, 8, 8)
    assert int(a["support_mask"].sum()) == 16
    assert np.array_equal(a["query"], b["query"])


def test_run_match_end_to_end(tmp_path):
    cmatch.generate_episode(1, tmp_path / "ep")
    r1 = cmatch.run_match(tmp_path / "ep", tmp_path / "out1", mfm=False, seed=5)
    r2 = cmatch.run_match(tmp_path / "ep", tmp_path / "out2", mfm=False, seed=5)
    assert (tmp_path / "out1" / "pred.cmt").read_bytes() == (tmp_path / "out2" / "pred.cmt").read_bytes()
    assert r1["probability"].shape == (8, 8)
    assert r1["matched_mass"] == 16
    assert r1["metrics"]["fbiou"] > 0.8

    with pytest.raises(cmatch.CmatchError) as info:
        cmatch.run_match(tmp_path / "ep", tmp_path / "out3", tau=1.5)
    assert info.value.kind == "ConfigError"
