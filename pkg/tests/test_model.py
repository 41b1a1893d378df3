import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vipde.basis import build_basis
from vipde.forward import DarcyProblem, LinearProblem, SmoothingProblem, forward_eval
from vipde.basis import BOUNDARY
from vipde.model import (
    RENYI_CAP,
    Dataset,
    hellinger_constant,
    hellinger_sq,
    kl_exact,
    l2_distance_sq,
    loglik,
    renyi2_exact,
    simulate_data,
    sup_norm,
)

from oracles import mc_kl

DARCY = DarcyProblem(build_basis(d=1, J=1, S=4, resolution=256), source=-20.0)
SMOOTH = SmoothingProblem(build_basis(d=1, J=1, S=4, flavor=BOUNDARY, resolution=256), amplitude=3.0)


def test_rejects_empty():
    with pytest.raises(ValueError):
        simulate_data(DARCY, np.zeros(DARCY.size), 0, 1)


def test_determinism_and_streams():
    t = 0.2 * np.ones(DARCY.size)
    a = simulate_data(DARCY, t, 10, 42)
    b = simulate_data(DARCY, t, 10, 42)
    c = simulate_data(DARCY, t, 10, 43)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    assert not np.array_equal(a.X, c.X)
    assert a.N == 10 and a.X.shape == (10, 1) and a.Y.shape == (10, 1)
    assert np.all((a.X >= 0) & (a.X <= 1))


def test_byte_identical_files(tmp_path):
    t = 0.1 * np.ones(SMOOTH.size)
    for name in ("a", "b"):
        simulate_data(SMOOTH, t, 25, 9).save(tmp_path / name / "data.csv")
    for suffix in (".csv", ".json"):
        assert (tmp_path / "a" / ("data" + suffix)).read_bytes() == (tmp_path / "b" / ("data" + suffix)).read_bytes()
    text = (tmp_path / "a" / "data.csv").read_text()
    assert text.splitlines()[0] == "x1,y1,y2"
    assert "\r" not in text


def test_save_load_roundtrip(tmp_path):
    D = simulate_data(SMOOTH, 0.1 * np.ones(SMOOTH.size), 30, 3)
    D.save(tmp_path / "d.csv")
    back = Dataset.load(tmp_path / "d.csv")
    assert np.array_equal(back.X, D.X) and np.array_equal(back.Y, D.Y)
    assert back.seed == 3 and back.problem["kind"] == "synthetic-smoothing"


def test_noise_mean_clt():
    t = 0.1 * np.ones(DARCY.size)
    N = 100_000
    D = simulate_data(DARCY, t, N, 5)
    resid = D.Y - forward_eval(DARCY, t, D.X)
    assert np.all(np.abs(resid.mean(axis=0)) <= 4.0 / math.sqrt(N))
    assert resid.std() == pytest.approx(1.0, abs=0.01)


def test_loglik_examples():
    t = 0.1 * np.ones(DARCY.size)
    X = np.random.default_rng(0).uniform(size=(12, 1))
    D = Dataset(X, forward_eval(DARCY, t, X))
    assert loglik(DARCY, t, D) == pytest.approx(-12 * 0.5 * math.log(2 * math.pi), rel=1e-14)
    p = LinearProblem(np.array([[2.0]]))
    D1 = Dataset(np.array([[0.0]]), np.array([[1.5]]))
    r = 1.5 - 2.0 * 0.4
    assert loglik(p, [0.4], D1) == pytest.approx(-0.5 * math.log(2 * math.pi) - r * r / 2, rel=1e-15)


def test_loglik_second_implementation():
    rng = np.random.default_rng(1)
    t = 0.3 * rng.standard_normal(SMOOTH.size)
    D = simulate_data(SMOOTH, 0.2 * rng.standard_normal(SMOOTH.size), 50, 2)
    # direct formula with pointwise interpolation of each output component
    sol = SMOOTH.solution(t)
    x = np.linspace(0, 1, SMOOTH.resolution + 1)
    G = np.stack([np.interp(D.X[:, 0], x, s) for s in sol], axis=1)
    ref = sum(-math.log(2 * math.pi) - 0.5 * float(np.sum((y - g) ** 2)) for y, g in zip(D.Y, G))
    assert loglik(SMOOTH, t, D) == pytest.approx(ref, rel=1e-12)


def test_distances_vanish_on_diagonal():
    t = 0.3 * np.ones(DARCY.size)
    assert kl_exact(DARCY, t, t) == 0.0
    assert renyi2_exact(DARCY, t, t) == 0.0
    assert hellinger_sq(DARCY, t, t) == 0.0


def test_kl_scaling():
    A = np.random.default_rng(3).standard_normal((8, 3))
    t1, t2 = np.array([1.0, 0.0, -1.0]), np.array([0.5, 0.2, 0.0])
    assert kl_exact(LinearProblem(2 * A), t1, t2) == pytest.approx(4 * kl_exact(LinearProblem(A), t1, t2), rel=1e-14)


def test_kl_against_monte_carlo():
    rng = np.random.default_rng(12)
    t1 = np.zeros(DARCY.size)
    t2 = 0.3 * rng.standard_normal(DARCY.size)
    est, se = mc_kl(DARCY, t1, t2, 200_000, 4)
    assert abs(kl_exact(DARCY, t1, t2) - est) <= 3 * se


def test_hellinger_single_point():
    p = LinearProblem(np.array([[1.0]]))
    delta = 0.7
    assert hellinger_sq(p, [delta], [0.0]) == pytest.approx(1 - math.exp(-delta**2 / 8), rel=1e-14)


pairs = st.integers(0, 2**31 - 1)


@given(pairs)
def test_information_inequalities(seed):
    rng = np.random.default_rng(seed)
    p = SMOOTH
    t1 = 0.3 * rng.standard_normal(p.size)
    t2 = 0.3 * rng.standard_normal(p.size)
    D = kl_exact(p, t1, t2)
    D2 = renyi2_exact(p, t1, t2)
    h2 = hellinger_sq(p, t1, t2)
    sq = l2_distance_sq(p, t1, t2)
    U = max(sup_norm(p, t1), sup_norm(p, t2))
    assert D2 >= D - 1e-15
    assert h2 <= 0.25 * sq + 1e-15
    # the constant is stated for h^2 without the 1/2 factor, i.e. twice this value
    assert hellinger_constant(U) * sq <= 2.0 * h2 + 1e-15
    if D2 > 0:
        assert math.log(D2) <= 4 * U * U + math.log(sq)


def test_hellinger_convention_factor():
    # 1 - E exp(-|d|^2/8) is half of the 2 - 2 * affinity convention
    rng = np.random.default_rng(0)
    t1, t2 = rng.standard_normal((2, SMOOTH.size))
    sq = np.sum((SMOOTH.solution(t1) - SMOOTH.solution(t2)) ** 2, axis=0)
    w = SMOOTH.quadrature_weights()
    full = float(np.sum(w * (2.0 - 2.0 * np.exp(-sq / 8.0))))
    assert full == pytest.approx(2.0 * hellinger_sq(SMOOTH, t1, t2), rel=1e-13)


def test_renyi_cap():
    p = LinearProblem(np.array([[1.0]]))
    with pytest.raises(OverflowError):
        renyi2_exact(p, [math.sqrt(RENYI_CAP) + 1.0], [0.0])
