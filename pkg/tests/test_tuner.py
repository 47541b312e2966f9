import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcapri import noise, nlpca, tuner
from pcapri.tuner import ParamPoint, PsoConfig


@pytest.mark.parametrize(
    "point,ok",
    [
        ((3, 27, 3, 2.46, 2.46), True),
        ((4, 64, 3, 2.46, 2.46), True),
        ((5, 125, 3, 2.0, 2.5), False),
        ((4, 64, 3, 3.0, 2.0), False),
        ((2, 7, 3, 1.0, 1.0), False),
        ((3, 27, 4, 1.0, 1.0), False),
        ((3.5, 27, 3, 1.0, 1.0), False),
    ],
)
def test_feasible(point, ok):
    assert tuner.feasible(point) is ok


def test_repair_examples():
    assert tuner.repair((3.4, 30.2, 2.7, 2.5, 2.4)) == ParamPoint(3, 30, 3, 2.4, 2.4)
    assert tuner.repair((3, 27, 3, 2.46, 2.46)) == (3, 27, 3, 2.46, 2.46)
    assert tuner.repair((3, 5, 3, 1.0, 2.0)).M == 27


bounds = st.floats(-20, 300, allow_nan=False)


@given(st.tuples(st.floats(-5, 10), bounds, st.floats(-5, 10), st.floats(0, 5), st.floats(0, 5)))
def test_repair_always_feasible_and_idempotent(p):
    r = tuner.repair(p)
    assert r.feasible
    assert tuner.repair(r) == r


def test_point_as_params():
    assert ParamPoint(4, 64, 3, 2.0, 2.0).as_params().grouping == "all-in-window"
    assert ParamPoint(3, 50, 3, 2.0, 2.0).as_params().grouping == "similar-to-each"


def test_config_validation():
    with pytest.raises(ValueError):
        PsoConfig((0,), (1,), swarm_size=1)
    with pytest.raises(ValueError):
        PsoConfig((0,), (1,), function_tolerance=0)
    with pytest.raises(ValueError):
        PsoConfig((1,), (0,))


def _sphere(c):
    return lambda x: -float(np.sum((np.asarray(x) - c) ** 2))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pso_sphere(seed):
    c = np.random.default_rng(seed).uniform(-4, 4, size=5)
    res = tuner.pso_optimize(_sphere(c), PsoConfig((-5,) * 5, (5,) * 5, seed=seed))
    assert np.max(np.abs(np.array(res.best_point) - c)) < 1e-2
    assert res.iterations <= 50
    assert len(res.history) <= 50
    assert all(b >= a for a, b in zip(res.history, res.history[1:]))


def test_pso_deterministic():
    cfg = PsoConfig((-5,) * 3, (5,) * 3, swarm_size=10, max_iterations=10, seed=4)
    a = tuner.pso_optimize(_sphere(np.ones(3)), cfg)
    b = tuner.pso_optimize(_sphere(np.ones(3)), cfg)
    assert a.best_point == b.best_point and a.history == b.history
    c = tuner.pso_optimize(_sphere(np.ones(3)), cfg, threads=3)
    assert a.best_point == c.best_point


def test_pso_stall_stop():
    res = tuner.pso_optimize(lambda x: 1.0, PsoConfig((0,), (1,), swarm_size=4, max_iterations=50))
    assert res.iterations == 21


def test_pso_failing_objective_is_minus_inf():
    def obj(x):
        if x[0] < 0:
            raise RuntimeError("boom")
        return -abs(x[0] - 0.5)

    res = tuner.pso_optimize(obj, PsoConfig((-1,), (1,), swarm_size=10, max_iterations=20))
    assert res.best_value > -np.inf and res.best_point[0] >= 0


def test_pso_repair_soundness():
    lo, hi = tuner.default_bounds()
    seen = []

    def obj(p):
        seen.append(p)
        assert tuner.feasible(p)
        return -float(np.sum(np.square(np.asarray(p) - (3, 40, 3, 2, 2.2))))

    res = tuner.pso_optimize(obj, PsoConfig(lo, hi, swarm_size=12, max_iterations=15), repair=tuner.repair)
    assert len(seen) == len(res.evaluated) and all(tuner.feasible(p) for p in res.evaluated)
    assert '"best_psnr"' in res.to_json()


def test_grid_search_ranking_and_ties():
    rows = tuner.grid_search(lambda p: -round(abs(p.tau_beta - 2.0)), [1.0, 2.0, 3.0])
    assert rows[0]["tau_beta"] == 2.0 and rows[0]["rank"] == 1
    assert rows[1]["rank"] == rows[2]["rank"] == 2
    one = tuner.grid_search(lambda p: 5.0, [2.46])
    assert one[0]["rank"] == 1
    full = tuner.grid_search(lambda p: 0.0, [1.0, 2.0, 3.0], [1.5, 2.5])
    assert all(r["tau_beta"] <= r["T"] for r in full) and len(full) == 3
    csv = tuner.grid_to_csv(rows)
    assert csv.splitlines()[0] == "rank,d,M,w,tau_beta,T,value"


def test_objective_rejects_infeasible(ph24):
    obj = tuner.make_nlpca_objective(ph24.data, ph24.data)
    with pytest.raises(ValueError):
        obj((4, 64, 3, 3.0, 2.0))


def test_desk_scale_pso_not_worse_than_defaults(ph32):
    u = noise.simulate_gaussian(ph32.data, 0.01 * ph32.intensity_peak, np.random.SeedSequence([0, 100]))
    obj = tuner.make_nlpca_objective(ph32.data, u)
    at_default = obj(ParamPoint(4, 64, 3, 2.46, 2.46))
    lo, hi = tuner.default_bounds()
    res = tuner.pso_optimize(obj, PsoConfig(lo, hi, swarm_size=8, max_iterations=6), repair=tuner.repair)
    assert tuner.feasible(res.best_point)
    assert res.best_value >= at_default - 0.3
