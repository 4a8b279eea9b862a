"""Smoke test for the influence_tomograph extension module.

Build and install first, e.g.:
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/*.whl
"""

import json
import math
import random
import tempfile
from pathlib import Path

import influence_tomograph as it


def check_presets():
    assert set(it.presets()) == {"french-election", "philippine", "russophobia"}
    cfg = it.Config.load(preset="russophobia")
    assert (cfg.window_length_days, cfg.shift_days, cfg.lag_days, cfg.min_correlation) == (20, 2, 5, 0.4)
    try:
        it.Config.load(set=["windows.shift_days=0"])
    except ValueError as e:
        assert "windows.shift_days" in str(e)
    else:
        raise AssertionError("invalid config accepted")


def check_correlation():
    rng = random.Random(3)
    x = [rng.gauss(0, 1) for _ in range(200)]
    y = [2 * v + 1 for v in x]
    assert math.isclose(it.pearson(x, y), 1.0, abs_tol=1e-12)
    assert it.pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) is None

    lag = 3
    lead = [rng.gauss(0, 1) for _ in range(80)]
    lagging = [0.0] * lag + lead[:-lag]
    table = it.lagged_correlation(lead, lagging, 5, 8)
    best = max((c for c in table if c.r is not None), key=lambda c: c.r)
    assert best.lag == lag and best.r > 0.99

    edges = it.discover([("a", lead), ("b", lagging)], 5, min_correlation=0.7)
    assert [(e.source, e.target, e.lag) for e in edges] == [("a", "b", lag)]


def check_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        it.write_synthetic_corpus(tmp, users=60, posts=400, days=12, seed=5)
        (tmp / "pipeline.toml").write_text(
            'store = "store"\n'
            "[input]\nposts = \"posts.jsonl\"\nevents = \"events.csv\"\n"
            "[windows]\nlength_days = 4\nshift_days = 1\nlag_days = 2\n"
            "[embed]\nepochs = 30\n"
            "[discovery]\nmin_overlap = 3\nmin_correlation = 0.5\n"
        )
        cfg = it.Config.load(tmp / "pipeline.toml", seed=9)
        first = it.run_pipeline(cfg)
        assert first.recomputed() == 6, [s.summary for s in first.stages]
        second = it.run_pipeline(cfg)
        assert second.recomputed() == 0
        assert first.checksums == second.checksums

        api = it.Api(cfg.store)
        assert set(api.run_ids()) == {first.run_id, second.run_id}
        status, body = api.get(f"/api/v1/runs/{second.run_id}/influence-graph?min_corr=0.5")
        assert status == 200
        graph = json.loads(body)
        assert all(e["r"] >= 0.5 for e in graph["edges"])
        status, body = api.get(f"/api/v1/runs/{second.run_id}/influence-graph?min_corr=oops")
        assert status == 400 and json.loads(body)["error"]["field"] == "min_corr"
        assert api.get("/api/v1/runs/nope/heatmap")[0] == 404


if __name__ == "__main__":
    check_presets()
    check_correlation()
    check_pipeline()
    print("smoke test passed")
