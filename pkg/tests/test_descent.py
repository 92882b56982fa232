"""Descent diagnostics: trust bounds, the two-sided inequality, angle identities."""

import numpy as np
import pytest

from madam.descent import (cos_gamma, descent_gap, drt_bound, eta_descent_bound,
                           gaussian_cos_gamma_mc, measure_breakdown,
                           verify_madam_descent)
from madam.nets import (REGRESSION, Dataset, LayerParams, Mlp, backward, batch_loss,
                        random_mlp)


def regression_instance(rng, widths=(4, 6, 3), batch=8):
    net = random_mlp(list(widths), rng, weight_std=0.5, bias_std=0.5)
    ds = Dataset(rng.standard_normal((batch, widths[0])),
                 rng.standard_normal((batch, widths[-1])), REGRESSION)
    return net, ds


class TestDrtBound:
    def test_zero_delta(self):
        rng = np.random.default_rng(0)
        net, _ = regression_instance(rng)
        delta = [np.zeros_like(p) for p in net.param_list()]
        assert drt_bound(net, delta) == 0.0

    def test_uniform_relative_two_groups(self):
        # one layer = two parameter groups; delta = r * W gives (1+r)^2 - 1
        net = Mlp((LayerParams(np.array([[1.0, -2.0]]), np.array([0.5])),))
        delta = [0.01 * p for p in net.param_list()]
        np.testing.assert_allclose(drt_bound(net, delta), 1.01 ** 2 - 1, rtol=1e-12)
        np.testing.assert_allclose(drt_bound(net, delta), 0.0201, rtol=1e-10)

    def test_single_group_half(self):
        net = Mlp((LayerParams(np.array([[2.0]]), np.array([1.0])),))
        w, b = net.param_list()
        delta = [0.5 * w, np.zeros_like(b)]
        np.testing.assert_allclose(drt_bound(net, delta), 0.5, rtol=1e-12)

    def test_log_domain_cross_check(self):
        rng = np.random.default_rng(1)
        net, _ = regression_instance(rng)
        delta = [0.1 * rng.standard_normal(p.shape) for p in net.param_list()]
        ratios = [np.linalg.norm(d) / np.linalg.norm(p)
                  for d, p in zip(delta, net.param_list())]
        alt = np.expm1(np.sum(np.log1p(ratios)))
        np.testing.assert_allclose(drt_bound(net, delta), alt, rtol=1e-12)

    def test_zero_norm_group_rejected(self):
        net = Mlp((LayerParams(np.array([[1.0]]), np.array([0.0])),))
        delta = [np.ones((1, 1)), np.ones(1)]
        with pytest.raises(ValueError):
            drt_bound(net, delta)


class TestMeasureBreakdown:
    def test_zero_delta_zero_breakdown(self):
        rng = np.random.default_rng(2)
        net, ds = regression_instance(rng)
        delta = [np.zeros_like(p) for p in net.param_list()]
        np.testing.assert_array_equal(measure_breakdown(net, delta, ds), 0.0)

    def test_linear_net_max_at_endpoint(self):
        # quadratic loss: the gradient moves linearly in t, so the true max
        # sits at t=1, which the grid contains
        rng = np.random.default_rng(3)
        net = random_mlp([3, 2], rng)
        ds = Dataset(rng.standard_normal((6, 3)), rng.standard_normal((6, 2)),
                     REGRESSION)
        delta = [0.2 * rng.standard_normal(p.shape) for p in net.param_list()]
        got = measure_breakdown(net, delta, ds, t_samples=17)
        base = backward(net, ds).flat()
        from madam.nets import gradient_at_perturbed
        end = gradient_at_perturbed(net, delta, 1.0, ds).flat()
        expect = np.array([np.linalg.norm(e - b) / np.linalg.norm(b)
                           for e, b in zip(end, base)])
        np.testing.assert_allclose(got, expect, atol=1e-10)

    def test_zero_gradient_rejected(self):
        net = Mlp((LayerParams(np.array([[2.0]]), np.array([0.5])),))
        x = np.array([[1.0], [2.0]])
        ds = Dataset(x, x * 2.0 + 0.5, REGRESSION)
        delta = [np.ones_like(p) for p in net.param_list()]
        with pytest.raises(ValueError):
            measure_breakdown(net, delta, ds)

    def test_t_samples_validated(self):
        rng = np.random.default_rng(4)
        net, ds = regression_instance(rng)
        with pytest.raises(ValueError):
            measure_breakdown(net, [np.zeros_like(p) for p in net.param_list()],
                              ds, t_samples=1)


class TestDescentGap:
    def test_zero_delta_both_sides_zero(self):
        rng = np.random.default_rng(5)
        net, ds = regression_instance(rng)
        rep = descent_gap(net, [np.zeros_like(p) for p in net.param_list()], ds)
        assert rep.loss_change == 0.0
        assert rep.bound_rhs == 0.0
        assert rep.slack == 0.0

    def test_small_gradient_step_first_order(self):
        # delta = -eps * g: loss change ~ -eps ||g||^2 and cos(theta) = 1
        rng = np.random.default_rng(6)
        net, ds = regression_instance(rng)
        grads = backward(net, ds).flat()
        eps = 1e-6
        delta = [-eps * g for g in grads]
        rep = descent_gap(net, delta, ds)
        gsq = sum(float(np.sum(g * g)) for g in grads)
        np.testing.assert_allclose(rep.loss_change, -eps * gsq, rtol=1e-3)
        for group in rep.groups:
            np.testing.assert_allclose(group.cos_theta, 1.0, atol=1e-9)

    def test_slack_nonnegative_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            net, ds = regression_instance(rng, widths=(3, 5, 2), batch=6)
            grads = backward(net, ds).flat()
            eta = float(rng.uniform(0.005, 0.05))
            delta = [-eta * np.abs(p) * np.sign(g)
                     for p, g in zip(net.param_list(), grads)]
            rep = descent_gap(net, delta, ds, t_samples=64)
            assert rep.slack >= -1e-9

    def test_report_serializes(self):
        rng = np.random.default_rng(8)
        net, ds = regression_instance(rng)
        delta = [0.01 * rng.standard_normal(p.shape) for p in net.param_list()]
        d = descent_gap(net, delta, ds).to_dict()
        assert set(d) >= {"groups", "drt_bound", "loss_before", "loss_after",
                          "bound_rhs", "loss_change", "slack"}


class TestEtaBound:
    def test_depth_one_extremes(self):
        assert eta_descent_bound(1, 1.0) == 1.0
        assert eta_descent_bound(1, 0.0) == 0.0

    def test_forty_layer_value(self):
        got = eta_descent_bound(40, 0.64)
        assert 0.0124 <= got <= 0.0125
        np.testing.assert_allclose(got, 0.01244, atol=5e-6)

    def test_monotone_in_cos_and_depth(self):
        cosines = np.linspace(0.0, 1.0, 11)
        bounds = [eta_descent_bound(5, c) for c in cosines]
        assert all(b2 > b1 for b1, b2 in zip(bounds, bounds[1:]))
        depths = [1, 2, 4, 8, 16, 32]
        bounds = [eta_descent_bound(d, 0.64) for d in depths]
        assert all(b2 < b1 for b1, b2 in zip(bounds, bounds[1:]))

    def test_range_validation(self):
        with pytest.raises(ValueError):
            eta_descent_bound(0, 0.5)
        with pytest.raises(ValueError):
            eta_descent_bound(3, 1.5)


class TestCosGamma:
    def test_proportional_gives_one(self):
        net = Mlp((LayerParams(np.array([[1.0, -2.0]]), np.array([0.5])),))
        grads = [3.0 * net.layers[0].weight, 2.0 * net.layers[0].bias]
        np.testing.assert_allclose(cos_gamma(net, grads), [1.0, 1.0], atol=1e-12)

    def test_disjoint_support_gives_zero(self):
        net = Mlp((LayerParams(np.array([[1.0, 0.0]]), np.array([0.5])),))
        grads = [np.array([[0.0, 1.0]]), np.array([1.0])]
        out = cos_gamma(net, grads)
        assert out[0] == 0.0

    def test_always_in_unit_interval(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            net, ds = regression_instance(rng)
            out = cos_gamma(net, backward(net, ds).flat())
            assert np.all(out >= 0.0) and np.all(out <= 1.0)

    def test_high_dim_gaussian_near_two_over_pi(self):
        rng = np.random.default_rng(10)
        net = Mlp((LayerParams(rng.standard_normal((1000, 1000)),
                               rng.standard_normal(1000)),))
        grads = [rng.standard_normal((1000, 1000)), rng.standard_normal(1000)]
        out = cos_gamma(net, grads)
        assert abs(out[0] - 2 / np.pi) < 0.01


class TestGaussianMc:
    def test_dim_one_is_exactly_one(self):
        mean, stderr = gaussian_cos_gamma_mc(1, trials=20, seed=0)
        assert mean == 1.0

    def test_seed_reproducibility(self):
        a = gaussian_cos_gamma_mc(1000, trials=5, seed=123)
        b = gaussian_cos_gamma_mc(1000, trials=5, seed=123)
        assert a == b

    def test_large_dim_near_two_over_pi(self):
        mean, stderr = gaussian_cos_gamma_mc(100_000, trials=5, seed=1)
        assert abs(mean - 2 / np.pi) < 0.01
        assert stderr < 0.01


class TestVerifyMadamDescent:
    def test_angle_identity_and_step_size(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            net, ds = regression_instance(rng)
            rep = verify_madam_descent(net, ds, eta=0.01)
            assert rep.max_angle_identity_error < 1e-9
            assert rep.max_relative_step_error < 1e-12

    def test_conservative_eta_descends(self):
        rng = np.random.default_rng(12)
        wins = 0
        trials = 50
        for _ in range(trials):
            net, ds = regression_instance(rng, widths=(8, 16, 16, 4))
            grads = backward(net, ds).flat()
            gammas = cos_gamma(net, grads)
            depth = len(net.param_list())
            eta = 0.5 * eta_descent_bound(depth, float(np.min(gammas)))
            rep = verify_madam_descent(net, ds, eta)
            wins += int(rep.descended)
        assert wins >= 0.9 * trials

    def test_loss_values_consistent(self):
        rng = np.random.default_rng(13)
        net, ds = regression_instance(rng)
        rep = verify_madam_descent(net, ds, eta=0.01)
        np.testing.assert_allclose(rep.loss_before, batch_loss(net, ds), rtol=1e-15)
