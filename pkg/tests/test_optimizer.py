import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from shapeattack.errors import ContractViolation, InvalidParameterError
from shapeattack.geometry import (ClampBox, PerturbationSpec, PolygonParams, ShapeKind,
                                  clamp_params, encode)
from shapeattack.optimizer import (PsoHyper, Swarm, decode, default_v_max, init_swarm, step,
                                   update_bests)

BOX = ClampBox(10, 20, 50, 120)
KINDS = (ShapeKind.lines(2), ShapeKind.polygon(3), ShapeKind.polygon(6), ShapeKind.ellipse())


# -- encode / decode ------------------------------------------------------------

def test_encode_flattens_vertices():
    spec = PerturbationSpec(PolygonParams([(1, 2), (3, 4), (5, 6)]))
    assert list(encode(spec)) == [1, 2, 3, 4, 5, 6]


def test_decode_rounds_half_away_from_zero():
    box = ClampBox(0, 0, 100, 100)
    spec = decode([1.4, 2.6, 3.5, 4.5, 5.0, 6.49], ShapeKind.polygon(3), box)
    assert [tuple(p) for p in spec.shape.vertices] == [(1, 3), (4, 5), (5, 6)]


def test_decode_clamps_into_box():
    spec = decode([-40.0, 500.0, 30, 30, 30, 30], ShapeKind.polygon(3), BOX)
    assert tuple(spec.shape.vertices[0]) == (10, 120)


def test_decode_dimension_mismatch():
    with pytest.raises(InvalidParameterError):
        decode([1, 2, 3], ShapeKind.polygon(3), BOX)
    with pytest.raises(InvalidParameterError):
        decode([1, 2, 3, 4, 5], ShapeKind.ellipse(), BOX)


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.label())
def test_decode_encode_round_trip(kind):
    rng = np.random.default_rng(kind.dimension)
    from shapeattack.geometry import param_bounds
    lower, upper = param_bounds(kind, BOX)
    for _ in range(500):
        v = rng.integers(lower, np.asarray(upper) + 1).astype(float)
        assert np.array_equal(encode(decode(v, kind, BOX)), v)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=4, max_size=4))
def test_decode_always_feasible(vec):
    spec = decode(vec, ShapeKind.ellipse(), BOX)
    assert clamp_params(spec, BOX) == spec


# -- init -----------------------------------------------------------------------

def _same(a: Swarm, b: Swarm):
    return (np.array_equal(a.positions, b.positions) and np.array_equal(a.velocities, b.velocities)
            and np.array_equal(a.best_fitness, b.best_fitness) and a.v_max == b.v_max)


def test_init_deterministic():
    for kind in KINDS:
        assert _same(init_swarm(kind, BOX, PsoHyper(), 7), init_swarm(kind, BOX, PsoHyper(), 7))
    assert not _same(init_swarm(KINDS[0], BOX, PsoHyper(), 7), init_swarm(KINDS[0], BOX, PsoHyper(), 8))


def test_init_cardinality_and_feasibility():
    for kind in KINDS:
        sw = init_swarm(kind, BOX, PsoHyper(population=30), 0)
        assert sw.size == 30 and sw.dimension == kind.dimension
        assert len(sw.particles) == 30
        for x in sw.positions:
            spec = decode(x, kind, BOX)
            assert clamp_params(spec, BOX) == spec
            assert np.array_equal(encode(spec), x)
        assert np.all(np.isinf(sw.best_fitness)) and sw.global_best_fitness == float("inf")


def test_init_velocity_bounds():
    sw = init_swarm(ShapeKind.lines(5), BOX, PsoHyper(population=500), 1)
    v = sw.velocities.ravel()
    assert v.size == 10_000
    assert np.all(np.abs(v) <= sw.v_max)
    assert sw.v_max == pytest.approx(default_v_max(BOX))
    # roughly uniform: mean near zero, spread near the full range
    assert abs(v.mean()) < 0.05 * sw.v_max
    assert v.min() < -0.95 * sw.v_max and v.max() > 0.95 * sw.v_max


def test_default_v_max_is_quarter_diagonal():
    assert default_v_max(BOX) == pytest.approx(0.25 * np.hypot(40, 100))
    assert init_swarm(ShapeKind.ellipse(), BOX, PsoHyper(v_max=3.0), 0).v_max == 3.0


def test_hyper_validation():
    for bad in (dict(population=0), dict(iterations=0), dict(c1=-1), dict(r1=1.5),
                dict(r_mode="other"), dict(v_max=0)):
        with pytest.raises(InvalidParameterError):
            PsoHyper(**bad)
    PsoHyper(r1=1.5, r_mode="resampled")  # ignored in resampled mode


# -- update_bests ---------------------------------------------------------------

def _swarm(n=4, dim=4, seed=0):
    return init_swarm(ShapeKind.ellipse(), BOX, PsoHyper(population=n), seed)


def test_update_bests_no_improvement():
    sw = update_bests(_swarm(), [0.5, 0.6, 0.7, 0.8])
    again = update_bests(sw, [0.9, 0.9, 0.9, 0.8])  # the last one ties: keep incumbent
    assert np.array_equal(again.best_fitness, sw.best_fitness)
    assert np.array_equal(again.best_positions, sw.best_positions)
    assert again.global_best_fitness == 0.5


def test_update_bests_single_improvement_propagates():
    sw = update_bests(_swarm(), [0.9, 0.9, 0.9, 0.9])
    moved = sw.copy()
    moved.positions = moved.positions + 1.0
    out = update_bests(moved, [0.9, 0.3, 0.9, 0.9])
    assert out.best_fitness[1] == 0.3 and out.global_best_fitness == 0.3
    assert np.array_equal(out.global_best_position, moved.positions[1])
    assert np.array_equal(out.best_positions[0], sw.best_positions[0])


def test_update_bests_earliest_index_tie():
    out = update_bests(_swarm(), [0.4, 0.2, 0.2, 0.3])
    assert out.global_best_index == 1
    assert np.array_equal(out.global_best_position, out.positions[1])


def test_update_bests_length_mismatch():
    with pytest.raises(InvalidParameterError):
        update_bests(_swarm(), [0.1, 0.2])


def test_update_bests_does_not_mutate_input():
    sw = _swarm()
    update_bests(sw, [0.1] * 4)
    assert np.all(np.isinf(sw.best_fitness))


def test_global_best_is_running_minimum():
    rng = np.random.default_rng(12)
    for _ in range(100):
        n, iters = int(rng.integers(1, 8)), int(rng.integers(1, 10))
        sw = init_swarm(ShapeKind.ellipse(), BOX, PsoHyper(population=n), int(rng.integers(1 << 30)))
        seen = []
        for _ in range(iters):
            # coarse values make ties common
            f = (rng.integers(0, 5, size=n) / 4).tolist()
            seen.extend(f)
            sw = update_bests(sw, f)
            assert sw.global_best_fitness == min(seen)
            sw = step(sw, PsoHyper(population=n))


# -- step -----------------------------------------------------------------------

def test_step_requires_evaluated_bests():
    with pytest.raises(ContractViolation):
        step(_swarm(), PsoHyper())


def test_stationary_fixed_point():
    sw = update_bests(_swarm(n=1), [0.5])
    sw.velocities[:] = 0.0
    out = step(sw, PsoHyper(population=1))
    assert np.array_equal(out.positions, sw.positions)
    assert np.all(out.velocities == 0.0)


def _scalar_swarm(x, v, pbest, gbest, v_max=100.0):
    return Swarm(np.array([[x]], float), np.array([[v]], float), np.array([[pbest]], float),
                 np.array([0.0]), np.array([gbest], float), 0.0, v_max, 0,
                 np.random.default_rng(0))


def test_scalar_update_example():
    out = step(_scalar_swarm(0.0, 1.0, 2.0, 4.0), PsoHyper())
    assert out.velocities[0, 0] == pytest.approx(5.3)
    assert out.positions[0, 0] == pytest.approx(5.3)
    clamped = step(_scalar_swarm(0.0, 1.0, 2.0, 4.0, v_max=2.0), PsoHyper())
    assert clamped.velocities[0, 0] == 2.0 and clamped.positions[0, 0] == 2.0


def _random_evaluated_swarm(rng, n, dim):
    sw = Swarm(rng.normal(0, 20, (n, dim)), rng.normal(0, 5, (n, dim)), rng.normal(0, 20, (n, dim)),
               rng.random(n), rng.normal(0, 20, dim), 0.0, float(rng.uniform(0.5, 10)),
               int(rng.integers(1 << 30)), None)
    sw.rng = np.random.default_rng(sw.rng_seed)
    return sw


@pytest.mark.parametrize("r_mode", ["fixed", "resampled"])
def test_step_matches_scalar_loop(r_mode):
    rng = np.random.default_rng(99)
    for _ in range(50):
        n, dim = int(rng.integers(1, 9)), int(rng.choice([4, 6, 8, 12]))
        hyper = PsoHyper(omega=float(rng.uniform(0, 1.2)), c1=float(rng.uniform(0, 3)),
                         c2=float(rng.uniform(0, 3)), r1=float(rng.random()), r2=float(rng.random()),
                         r_mode=r_mode, population=n)
        sw = _random_evaluated_swarm(rng, n, dim)
        if r_mode == "fixed":
            r1, r2 = [hyper.r1] * n, [hyper.r2] * n
        else:
            draws = copy.deepcopy(sw.rng).random((n, 2))
            r1, r2 = draws[:, 0].tolist(), draws[:, 1].tolist()
        ex, ev = oracles.pso_step_loop(sw.positions.tolist(), sw.velocities.tolist(),
                                       sw.best_positions.tolist(), sw.global_best_position.tolist(),
                                       hyper.omega, hyper.c1, r1, hyper.c2, r2, sw.v_max)
        out = step(sw, hyper)
        np.testing.assert_allclose(out.positions, ex, rtol=0, atol=1e-9)
        np.testing.assert_allclose(out.velocities, ev, rtol=0, atol=1e-9)


def test_resampled_draws_fresh_each_step():
    rng = np.random.default_rng(5)
    sw = _random_evaluated_swarm(rng, 3, 4)
    hyper = PsoHyper(r_mode="resampled", population=3)
    a = step(sw, hyper)
    assert np.array_equal(step(sw, hyper).positions, a.positions)  # input stream untouched
    # rewind the state but keep the advanced stream: different coefficients come out
    rewound = sw.copy()
    rewound.rng = copy.deepcopy(a.rng)
    assert not np.array_equal(step(rewound, hyper).positions, a.positions)


def test_pure_inertia_is_straight_line():
    sw = update_bests(init_swarm(ShapeKind.lines(1), BOX, PsoHyper(population=5), 3), [0.5] * 5)
    hyper = PsoHyper(omega=1.0, c1=0.0, c2=0.0, population=5)
    x0, v0 = sw.positions.copy(), sw.velocities.copy()
    for b in range(1, 8):
        sw = step(sw, hyper)
        np.testing.assert_allclose(sw.positions, x0 + b * v0, rtol=0, atol=1e-9)


def test_step_then_decode_is_feasible():
    hyper = PsoHyper(population=10)
    for kind in KINDS:
        sw = init_swarm(kind, BOX, hyper, 4)
        rng = np.random.default_rng(4)
        for _ in range(20):
            sw = step(update_bests(sw, rng.random(10)), hyper)
            for x in sw.positions:
                spec = decode(x, kind, BOX)
                assert clamp_params(spec, BOX) == spec


def test_trajectory_is_deterministic():
    def run(seed):
        hyper = PsoHyper(population=6, r_mode="resampled")
        sw = init_swarm(ShapeKind.polygon(4), BOX, hyper, seed)
        trace = []
        for it in range(10):
            f = np.sin(sw.positions.sum(axis=1) + it)  # deterministic pseudo-fitness
            sw = update_bests(sw, f)
            trace.append(sw.global_best_fitness)
            sw = step(sw, hyper)
        return trace, sw.positions.tobytes()

    assert run(11) == run(11)
    trace, _ = run(11)
    assert all(b <= a for a, b in zip(trace, trace[1:]))
