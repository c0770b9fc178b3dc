import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colnorm import linalg, models
from colnorm.errors import ShapeError
from colnorm.models import QuadraticProblem, make_rng


def identity_quadratic(w):
    m, n = w.shape
    return QuadraticProblem(a=np.eye(m), b=np.eye(n), c=np.zeros((m, n)), w=w)


def small_mlp(seed=13, **kw):
    return models.mlp_problem(seed=seed, d=6, h=8, o=3, batch=16, **kw)


class TestQuadratic:
    def test_identity_instance(self):
        w = make_rng(0).standard_normal((3, 4))
        loss, g = models.quadratic_loss_grad(identity_quadratic(w))
        assert loss == pytest.approx(0.5 * np.sum(w * w), rel=1e-15)
        np.testing.assert_array_equal(g, w)

    def test_optimum(self):
        rng = make_rng(1)
        a, b, w = rng.standard_normal((5, 3)), rng.standard_normal((4, 6)), rng.standard_normal((3, 4))
        prob = QuadraticProblem(a=a, b=b, c=a @ w @ b, w=w)
        loss, g = models.quadratic_loss_grad(prob)
        assert loss == 0.0
        np.testing.assert_array_equal(g, 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            QuadraticProblem(a=np.eye(3), b=np.eye(4), c=np.zeros((3, 4)), w=np.zeros((4, 4)))

    def test_seeded_finite_differences(self):
        prob = models.quadratic_with_condition(10.0, m=6, n=5, p=7, q=4, seed=13, init_scale=1.0)
        assert models.finite_diff_check(prob, 1e-6) <= 1e-5

    def test_identity_finite_differences(self):
        prob = identity_quadratic(make_rng(2).standard_normal((4, 3)))
        assert models.finite_diff_check(prob, 1e-6) <= 1e-7

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32), p=st.integers(1, 5), m=st.integers(1, 5), n=st.integers(1, 5), q=st.integers(1, 5))
    def test_loss_nonnegative(self, seed, p, m, n, q):
        rng = make_rng(seed)
        prob = QuadraticProblem(
            a=rng.standard_normal((p, m)), b=rng.standard_normal((n, q)),
            c=rng.standard_normal((p, q)), w=rng.standard_normal((m, n)),
        )
        assert prob.loss_grad()[0] >= 0.0

    def test_gradient_descent_non_increasing(self):
        prob = models.quadratic_with_condition(50.0, m=10, n=8, p=12, q=9, b_kappa=5.0, seed=3, init_scale=1.0)
        smax = linalg.singular_spectrum(prob.a)[0] * linalg.singular_spectrum(prob.b)[0]
        eta = 0.99 / smax**2
        w = prob.w
        prev, _ = prob.loss_grad()
        for _ in range(100):
            _, g = prob.loss_grad({"W": w})
            w = w - eta * g["W"]
            loss, _ = prob.loss_grad({"W": w})
            assert loss <= prev
            prev = loss

    @pytest.mark.parametrize("kappa", [1.0, 10.0, 1e3, 1e6])
    def test_condition_exact(self, kappa):
        prob = models.quadratic_with_condition(kappa, m=16, n=16, seed=4)
        s = np.linalg.svd(prob.a, compute_uv=False)
        assert abs(s[0] / s[-1] - kappa) <= 1e-6 * kappa

    def test_rectangular_condition(self):
        a = models.matrix_with_condition(make_rng(5), 9, 4, 100.0)
        s = np.linalg.svd(a, compute_uv=False)
        assert s[0] / s[-1] == pytest.approx(100.0, rel=1e-6)

    def test_zero_start_and_optimum(self):
        prob = models.quadratic_with_condition(10.0, m=6, n=6, seed=6)
        np.testing.assert_array_equal(prob.w, 0.0)
        assert prob.loss_grad()[0] > 0

    def test_deterministic(self):
        p1 = models.quadratic_with_condition(1e3, m=8, n=8, seed=7, init_scale=1.0, noise=0.1)
        p2 = models.quadratic_with_condition(1e3, m=8, n=8, seed=7, init_scale=1.0, noise=0.1)
        l1, g1 = p1.loss_grad()
        l2, g2 = p2.loss_grad()
        assert l1 == l2 and g1["W"].tobytes() == g2["W"].tobytes()


class TestMlp:
    def test_dead_network(self):
        prob = small_mlp()
        zero = {k: np.zeros_like(v) for k, v in prob.params.items()}
        loss, _ = prob.loss_grad(zero)
        assert loss == pytest.approx(np.sum(prob.y**2) / prob.x.shape[0], rel=1e-14)

    def test_teacher_interpolates(self):
        prob = models.mlp_problem(seed=2, noise=0.0)
        loss, _ = prob.loss_grad(prob.teacher)
        assert loss <= 1e-20

    def test_finite_differences_default_sizes(self):
        assert models.finite_diff_check(models.mlp_problem(seed=13), 1e-6) <= 1e-5

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**32), scale=st.floats(0.1, 3.0))
    def test_finite_differences_property(self, seed, scale):
        assert models.finite_diff_check(small_mlp(seed=seed, init_scale=scale), 1e-6) <= 1e-5

    def test_step_size_monotonicity(self):
        prob = small_mlp()
        assert models.finite_diff_check(prob, 1e-2) > models.finite_diff_check(prob, 1e-6)

    def test_shapes(self):
        prob = models.mlp_problem(seed=0)
        shapes = {k: v.shape for k, v in prob.params.items()}
        assert shapes == {"W1": (64, 32), "b1": (64,), "W2": (16, 64), "b2": (16,)}
        assert prob.x.shape == (256, 32) and prob.y.shape == (256, 16)

    def test_dataset_immutable(self):
        prob = small_mlp()
        with pytest.raises(ValueError):
            prob.x[0, 0] = 1.0

    def test_deterministic(self):
        l1, g1 = small_mlp(seed=9).loss_grad()
        l2, g2 = small_mlp(seed=9).loss_grad()
        assert l1 == l2
        assert all(g1[k].tobytes() == g2[k].tobytes() for k in g1)

    def test_params_setter(self):
        prob = small_mlp()
        new = {k: v + 1.0 for k, v in prob.params.items()}
        prob.params = new
        assert all(prob.params[k] is new[k] for k in new)


def test_finite_diff_rejects_nonpositive_h():
    with pytest.raises(ValueError):
        models.finite_diff_check(small_mlp(), 0.0)


def test_rng_is_philox():
    rng = make_rng(0)
    assert isinstance(rng.bit_generator, np.random.Philox)
    assert make_rng(0).integers(0, 2**63) == rng.integers(0, 2**63)
