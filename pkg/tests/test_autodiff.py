import numpy as np
import pytest

from ddmot import autodiff as ad
from ddmot.autodiff import Tensor
from ddmot.core import InvalidInputError


def t(x, grad=False, name="t"):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, name=name)


class TestForward:
    def test_matmul_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 5))
        out = ad.matmul(t(np.eye(3)), t(x))
        assert np.array_equal(out.value, x)

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(t([0.0])).value[0] == 0.5

    def test_sigmoid_extreme_inputs_stay_finite(self):
        v = ad.sigmoid(t([-1e4, 1e4])).value
        assert np.all(np.isfinite(v)) and v[0] == pytest.approx(0.0) and v[1] == pytest.approx(1.0)

    def test_softmax_uniform(self):
        assert np.allclose(ad.softmax(t([1.0, 1.0, 1.0])).value, [1 / 3] * 3)

    def test_softmax_simplex_property(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 6, 5)) * 10
        s = ad.softmax(t(x)).value
        assert np.all(s >= 0)
        assert np.abs(s.sum(axis=-1) - 1.0).max() < 1e-12

    def test_forward_is_bit_deterministic(self):
        rng = np.random.default_rng(2)
        x, w = rng.normal(size=(4, 8)), rng.normal(size=(8, 8))

        def run():
            h = ad.matmul(t(x), t(w))
            return ad.mean(ad.mul(ad.sigmoid(h), ad.layer_norm(h))).value.copy()

        assert np.array_equal(run(), run())

    def test_shape_error_names_node(self):
        with pytest.raises(ad.ShapeError, match="matmul"):
            ad.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nonfinite_detected(self):
        x = t([800.0])
        with pytest.raises(ad.NonFiniteError, match="node"):
            for _ in range(9):  # 800**512 overflows float64
                x = ad.mul(x, x)


class TestBackward:
    def test_product_rule(self):
        x, y = t(3.0, grad=True), t(4.0, grad=True)
        gx, gy = ad.backward(ad.mul(x, y), [x, y])
        assert gx == pytest.approx(4.0) and gy == pytest.approx(3.0)

    def test_sigmoid_derivative_at_zero(self):
        x = t(0.0, grad=True)
        (g,) = ad.backward(ad.sigmoid(x), [x])
        assert g == pytest.approx(0.25)

    def test_unused_parameter_gets_zeros(self):
        x = t(2.0, grad=True)
        unused = t(np.ones((2, 2)), grad=True)
        (gx, gu) = ad.backward(ad.mul(x, x), [x, unused])
        assert gx == pytest.approx(4.0)
        assert np.array_equal(gu, np.zeros((2, 2)))

    def test_non_scalar_output_rejected(self):
        x = t(np.ones(3), grad=True)
        with pytest.raises(InvalidInputError):
            ad.backward(ad.mul(x, x), [x])

    def test_mlp_matches_finite_differences(self):
        """Every gradient component of a random 2-layer MLP agrees with
        central differences (the independent oracle)."""
        rng = np.random.default_rng(3)
        params = {
            "w1": ad.parameter(rng.normal(size=(4, 6)) * 0.5, "w1"),
            "b1": ad.parameter(rng.normal(size=6) * 0.1, "b1"),
            "w2": ad.parameter(rng.normal(size=(6, 2)) * 0.5, "w2"),
            "b2": ad.parameter(rng.normal(size=2) * 0.1, "b2"),
        }
        x = rng.normal(size=(5, 4))

        def f():
            h = ad.matmul(Tensor(x), params["w1"]) + params["b1"]
            h = ad.mul(h, ad.sigmoid(h))
            out = ad.matmul(h, params["w2"]) + params["b2"]
            return ad.mean(ad.mul(out, out))

        report = ad.finite_difference_check(f, params, h=1e-5, tolerance=1e-4)
        assert report.ok, report.flagged[:3]
        assert report.max_rel_error < 1e-4


class TestOpGradients:
    """Each op's analytic gradient against the FD oracle on random inputs."""

    @pytest.mark.parametrize(
        "name",
        ["add", "mul", "matmul", "sigmoid", "softmax", "concat", "scale",
         "slice", "mean", "layer_norm", "reshape", "swapaxes", "broadcast", "smooth_l1"],
    )
    def test_gradient(self, name):
        rng = np.random.default_rng(hash(name) % 2**32)
        a = ad.parameter(rng.normal(size=(3, 4)), "a")
        b = ad.parameter(rng.normal(size=(3, 4)), "b")

        def f():
            if name == "add":
                out = a + b
            elif name == "mul":
                out = ad.mul(a, b)
            elif name == "matmul":
                out = ad.matmul(a, ad.swapaxes(b, 0, 1))
            elif name == "sigmoid":
                out = ad.sigmoid(a)
            elif name == "softmax":
                out = ad.mul(ad.softmax(a), b)
            elif name == "concat":
                out = ad.concat([a, b], axis=-1)
            elif name == "scale":
                out = ad.scale(a, -2.5)
            elif name == "slice":
                out = ad.slice_(a, (slice(1, 3), slice(0, 2)))
            elif name == "mean":
                out = ad.mean(a, axis=0)
            elif name == "layer_norm":
                out = ad.mul(ad.layer_norm(a), b)
            elif name == "reshape":
                out = ad.reshape(a, (4, 3))
            elif name == "swapaxes":
                out = ad.mul(ad.swapaxes(a, 0, 1), ad.swapaxes(b, 0, 1))
            elif name == "broadcast":
                out = ad.broadcast_to(ad.reshape(a, (3, 1, 4)), (3, 5, 4))
            else:
                out = ad.smooth_l1(ad.mul(a, b))
            return ad.mean(ad.mul(out, out))

        report = ad.finite_difference_check(f, {"a": a, "b": b}, h=1e-5, tolerance=1e-4)
        assert report.ok, (name, report.flagged[:3])

    def test_broadcast_add_gradient(self):
        rng = np.random.default_rng(9)
        x = ad.parameter(rng.normal(size=(4, 3)), "x")
        bias = ad.parameter(rng.normal(size=(3,)), "bias")

        def f():
            return ad.mean(ad.smooth_l1(x + bias))

        report = ad.finite_difference_check(f, {"x": x, "bias": bias}, h=1e-5, tolerance=1e-4)
        assert report.ok


class TestSmoothL1Values:
    def test_anchors(self):
        v = ad.smooth_l1(t([0.0, 0.5, -0.5, 2.0, -2.0])).value
        assert np.allclose(v, [0.0, 0.125, 0.125, 1.5, 1.5])

    def test_c1_continuity_at_one(self):
        quad = 0.5 * 1.0**2
        lin = abs(1.0) - 0.5
        assert quad == lin == 0.5
        v = ad.smooth_l1(t([1.0 - 1e-9, 1.0, 1.0 + 1e-9])).value
        assert np.abs(v - 0.5).max() < 1e-8


class TestAdam:
    def test_first_step_magnitude(self):
        """At step 1 the bias-corrected update is lr * g / (|g| + eps)."""
        p = {"w": ad.parameter(np.array([1.0]), "w")}
        state = ad.adam_init(p)
        ad.adam_step(p, {"w": np.array([1.0])}, state, 1e-4)
        expected = 1.0 - 1e-4 * 1.0 / (1.0 + 1e-8)
        assert p["w"].value[0] == pytest.approx(expected, rel=1e-12)

    def test_zero_gradient_keeps_params_decays_moments(self):
        p = {"w": ad.parameter(np.array([2.0]), "w")}
        state = ad.adam_init(p)
        ad.adam_step(p, {"w": np.array([5.0])}, state, 1e-3)
        m_before, v_before = state.m["w"].copy(), state.v["w"].copy()
        w_before = p["w"].value.copy()
        ad.adam_step(p, {"w": np.array([0.0])}, state, 1e-3)
        assert not np.array_equal(p["w"].value, w_before)  # momentum still moves it
        assert state.m["w"][0] == pytest.approx(0.9 * m_before[0])
        assert state.v["w"][0] == pytest.approx(0.999 * v_before[0])

    def test_deterministic_repetition(self):
        def run():
            p = {"w": ad.parameter(np.linspace(-1, 1, 8), "w")}
            state = ad.adam_init(p)
            for _ in range(5):
                ad.adam_step(p, {"w": np.sin(p["w"].value)}, state, 1e-2)
            return p["w"].value.copy()

        assert np.array_equal(run(), run())

    def test_shape_mismatch(self):
        p = {"w": ad.parameter(np.zeros(3), "w")}
        state = ad.adam_init(p)
        with pytest.raises(InvalidInputError):
            ad.adam_step(p, {"w": np.zeros(4)}, state, 1e-3)


class TestFiniteDifferenceCheck:
    def test_linear_function_is_exact(self):
        a = ad.parameter(np.array([1.0, -2.0, 0.5]), "a")

        def f():
            return ad.mean(ad.scale(a, 3.0))

        report = ad.finite_difference_check(f, {"a": a}, h=1e-5, tolerance=1e-4)
        assert report.max_rel_error < 1e-9

    def test_quadratic_truncation_error(self):
        a = ad.parameter(np.array([1.0]), "a")

        def f():
            return ad.mean(ad.mul(a, a))

        report = ad.finite_difference_check(f, {"a": a}, h=1e-5, tolerance=1e-4)
        assert report.max_rel_error < 1e-9

    def test_corrupted_gradient_is_flagged(self):
        a = ad.parameter(np.array([1.0, 2.0]), "a")

        def f():
            return ad.mean(ad.mul(a, a))

        bad = {"a": np.array([1.0, 17.0])}  # true gradient is [1, 2]
        report = ad.finite_difference_check(f, {"a": a}, h=1e-5, tolerance=1e-4, analytic=bad)
        assert not report.ok
        assert report.worst[0] == "a"
