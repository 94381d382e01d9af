import json

import numpy as np
import pytest

import attnscope


def layer_norm(x):
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    return (x - mu) / sd


def softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def entropy_rows(s):
    p = s / s.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=1)


def f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@pytest.fixture
def numpy_run(tmp_path):
    """One layer, two heads, written by numpy alone."""
    rng = np.random.default_rng(7)
    n, heads, d_k = 10, 2, 3
    d_model = heads * d_k
    x = rng.normal(size=(n, d_model))
    files = {}

    def save(name, a):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, np.asarray(a, dtype=np.float32))
        return name

    head_entries, ys, maps = [], [], []
    for h in range(heads):
        wq, wk, wv = (rng.normal(size=(d_model, d_k)) for _ in range(3))
        q, k, v = x @ wq, x @ wk, x @ wv
        s = softmax(q @ k.T / np.sqrt(d_k))
        y = s @ v
        d = f"layer0/head{h}/"
        head_entries.append({t: save(d + t + ".npy", a) for t, a in zip("QKVSY", (q, k, v, s, y))})
        ys.append(y)
        maps.append(s)
    ln1 = layer_norm(np.hstack(ys) + x)
    ln2 = layer_norm(np.maximum(ln1, 0) + ln1)
    files["ln1"] = save("layer0/ln1.npy", ln1)
    files["ln2"] = save("layer0/ln2.npy", ln2)
    manifest = {
        "format": "attnscope-run",
        "version": 1,
        "run_id": "numpy",
        "model": {"L": 1, "A": heads, "d_model": d_model, "d_k": d_k, "d_ff": 4, "n": n},
        "placement": "ln",
        "tokens": [f"t{i}" for i in range(n)],
        "input": save("input.npy", x),
        "layers": [{"heads": head_entries, "ln1": files["ln1"], "ln2": files["ln2"], "mlp": None}],
        "weights": None,
    }
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    return tmp_path, [f32(s) for s in maps], f32(ln1), f32(ln2), [f32(y) for y in ys]


def test_numpy_run_metrics_match_oracle(numpy_run):
    run_dir, maps, ln1, ln2, ys = numpy_run
    report = attnscope.metrics(run_dir, "entropy,cone,rank,svd")
    layer = report["layers"][0]

    head_means = [entropy_rows(s).mean() for s in maps]
    assert layer["entropy"] == pytest.approx(np.mean(head_means), rel=1e-12)
    for h, head in enumerate(layer["heads"]):
        assert head["entropy"] == pytest.approx(head_means[h], rel=1e-12)
        np.testing.assert_allclose(head["singular_values"], np.linalg.svd(ys[h], compute_uv=False), rtol=1e-10)
    assert layer["cone_index"] == pytest.approx(np.linalg.norm(ln2.sum(axis=0)), rel=1e-10, abs=1e-9)
    assert layer["rank_ln1"] == np.linalg.matrix_rank(ln1)


def test_numpy_run_verifies(numpy_run):
    run_dir = numpy_run[0]
    result = attnscope.verify(run_dir)
    assert result["ok"], result["failures"]


def test_npy_interchange_with_numpy(tmp_path):
    a = (np.arange(24, dtype=np.float32) * 0.25 - 1).reshape(2, 3, 4)
    np.save(tmp_path / "np.npy", a)
    attnscope.write_npy(a, tmp_path / "ours.npy")
    assert (tmp_path / "np.npy").read_bytes() == (tmp_path / "ours.npy").read_bytes()
    np.testing.assert_array_equal(attnscope.read_npy(tmp_path / "np.npy"), a)


def test_encode_then_load_in_numpy(tmp_path):
    config = {"L": 1, "A": 2, "d_model": 8, "d_k": 4, "d_ff": 16, "n": 6, "seed": 3}
    attnscope.encode(config, tmp_path / "run")
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    s = np.load(tmp_path / "run" / manifest["layers"][0]["heads"][1]["S"])
    assert s.dtype == np.float32 and s.shape == (6, 6)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_patterns_round_trip():
    s = attnscope.generate({"kind": "vertical", "n": 16, "i": 5})
    assert np.allclose(s[:, 5], 1.0)
    report = attnscope.classify(s)
    top = report["detections"][0]["spec"]
    assert top["kind"] == "vertical" and top["i"] == 5

    uniform = attnscope.generate({"kind": "max_entropy", "n": 12})
    assert attnscope.row_entropy(uniform)["mean"] == pytest.approx(np.log(12), abs=1e-12)


def test_numerics_against_numpy():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 7))
    np.testing.assert_allclose(attnscope.softmax_rows(x), softmax(x), rtol=1e-13)
    np.testing.assert_allclose(attnscope.layer_norm_rows(x), layer_norm(x), rtol=1e-10, atol=1e-12)
    assert attnscope.numeric_rank(np.outer(x[0], x[1])) == 1
    assert round(attnscope.lilliefors_critical(768), 3) == 0.032


def test_errors_are_typed(tmp_path):
    with pytest.raises(attnscope.Error):
        attnscope.metrics(tmp_path / "missing")
    with pytest.raises(attnscope.Error):
        attnscope.generate({"kind": "vertical", "n": 4, "i": 9})
