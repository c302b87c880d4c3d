import math

import numpy as np
import pytest

from oracles import fitted_slope
from unipc import (
    InsufficientHistoryError,
    ModelEvaluator,
    NumericError,
    SolverConfig,
    SyntheticModel,
    Thresholding,
    ValidationError,
    convert_parameterization,
    correct,
    ddim_step,
    exact_solution_xfree,
    make_time_grid,
    predict,
    sample,
    solve_weights,
    unified_update,
)
from unipc.coeffs import bh_value, varphi
from unipc.solver import BufferEntry, SolverState


def zero_model(dim=4):
    return ModelEvaluator(lambda x, t: np.zeros(dim), "noise", dim)


def const_model(value, dim=4):
    return ModelEvaluator(lambda x, t: np.full(dim, value), "noise", dim)


def fresh_state(sched, model, x, t0):
    state = SolverState(x=np.asarray(x, float), capacity=4)
    state.push(BufferEntry(t0, sched.lam(t0), model(x, t0)))
    return state


class TestDDIMReduction:
    def manual_ddim(self, sched, model, grid, x0):
        x = np.asarray(x0, float)
        traj = [x.copy()]
        for i in range(1, len(grid.times)):
            eps = model(x, float(grid.times[i - 1]))
            x = ddim_step(sched, x, eps, float(grid.times[i - 1]), float(grid.times[i]))
            traj.append(x.copy())
        return traj

    def test_unip1_is_ddim_bitwise(self, vp_linear, poly_model, rng):
        grid = make_time_grid(vp_linear, 8)
        x0 = rng.standard_normal(4)
        res = sample(
            poly_model.evaluator(vp_linear), vp_linear, grid,
            SolverConfig(order=1, corrector="off"), x0,
        )
        manual = self.manual_ddim(vp_linear, poly_model.evaluator(vp_linear), grid, x0)
        for a, b in zip(res.trajectory, manual):
            assert np.array_equal(a, b)

    def test_varying_p1_is_ddim_bitwise(self, vp_linear, poly_model, rng):
        grid = make_time_grid(vp_linear, 8)
        x0 = rng.standard_normal(4)
        res = sample(
            poly_model.evaluator(vp_linear), vp_linear, grid,
            SolverConfig(order=1, corrector="off", varying_coefficients=True), x0,
        )
        manual = self.manual_ddim(vp_linear, poly_model.evaluator(vp_linear), grid, x0)
        for a, b in zip(res.trajectory, manual):
            assert np.array_equal(a, b)


class TestUpdateFormulas:
    def test_homogeneous_model(self, vp_linear, rng):
        x0 = rng.standard_normal(4)
        grid = make_time_grid(vp_linear, 6)
        ratio = vp_linear.alpha(vp_linear.t_end) / vp_linear.alpha(vp_linear.t_start)
        for order in (1, 2, 3):
            for corrector in ("off", "standard"):
                res = sample(
                    zero_model(), vp_linear, grid,
                    SolverConfig(order=order, corrector=corrector), x0,
                )
                assert np.allclose(res.final, ratio * x0, rtol=1e-13)

    def test_single_step_grid_is_one_ddim_step(self, vp_linear, poly_model, rng):
        # warm-up forces order 1 on the only step, and no corrector runs after it
        grid = make_time_grid(vp_linear, 1)
        x0 = rng.standard_normal(4)
        model = poly_model.evaluator(vp_linear)
        res = sample(model, vp_linear, grid,
                     SolverConfig(order=3, corrector="standard"), x0)
        check = poly_model.evaluator(vp_linear)
        eps0 = check(x0, float(grid.times[0]))
        expected = ddim_step(vp_linear, x0, eps0, float(grid.times[0]), float(grid.times[1]))
        assert np.array_equal(res.final, expected)
        assert res.nfe == 1
        assert [rec.order for rec in res.trace] == [1]

    def test_homogeneous_model_varying_coefficients(self, vp_linear, rng):
        x0 = rng.standard_normal(4)
        grid = make_time_grid(vp_linear, 6)
        ratio = vp_linear.alpha(vp_linear.t_end) / vp_linear.alpha(vp_linear.t_start)
        res = sample(zero_model(), vp_linear, grid,
                     SolverConfig(order=3, corrector="standard", varying_coefficients=True), x0)
        assert np.allclose(res.final, ratio * x0, rtol=1e-13)

    def test_constant_model_collapses_to_first_order(self, vp_linear, rng):
        x0 = rng.standard_normal(4)
        grid = make_time_grid(vp_linear, 6)
        runs = [
            sample(const_model(0.7), vp_linear, grid,
                   SolverConfig(order=order, corrector="standard"), x0)
            for order in (1, 2, 3)
        ]
        for res in runs[1:]:
            for a, b in zip(res.trajectory, runs[0].trajectory):
                assert np.allclose(a, b, rtol=1e-14, atol=1e-15)

    def test_unic1_uses_half_weight_and_current_difference(self, vp_linear, poly_model, rng):
        # One corrected step, reproduced by hand from the update formula.
        grid = make_time_grid(vp_linear, 2)
        x0 = rng.standard_normal(4)
        model = poly_model.evaluator(vp_linear)
        res = sample(model, vp_linear, grid, SolverConfig(order=1, corrector="standard"), x0)

        check = poly_model.evaluator(vp_linear)
        t0, t1 = float(grid.times[0]), float(grid.times[1])
        h = vp_linear.lam(t1) - vp_linear.lam(t0)
        eps0 = check(x0, t0)
        x_pred = ddim_step(vp_linear, x0, eps0, t0, t1)
        d1 = check(x_pred, t1) - eps0
        expected = x_pred - vp_linear.sigma(t1) * bh_value("b2", h) * 0.5 * d1
        assert np.allclose(res.trajectory[1], expected, rtol=1e-14)

    def test_varying_p1_matches_solved_b1_weights(self, vp_linear):
        t_prev, t_next = 0.5, 0.4
        x = np.array([1.0, -2.0])
        f_prev = np.array([0.3, 0.3])
        D1 = np.array([0.05, -0.02])
        via_varying = unified_update(
            vp_linear, x, t_prev, t_next, f_prev, [1.0], [D1], varying=True
        )
        via_solved = unified_update(
            vp_linear, x, t_prev, t_next, f_prev, [1.0], [D1], bh="b1", half_a1=False
        )
        scale = np.max(np.abs(via_solved))
        assert np.max(np.abs(via_varying - via_solved)) < 1e-9 * scale


class TestLocalOrders:
    def _matched_state(self, sched, model, lam_base, h, x_base):
        evaluator = model.evaluator(sched)
        t_a = sched.t_of_lambda(lam_base - h)
        t_b = sched.t_of_lambda(lam_base)
        state = SolverState(x=x_base, capacity=4)
        state.push(BufferEntry(t_a, lam_base - h, evaluator(x_base, t_a)))
        state.push(BufferEntry(t_b, lam_base, evaluator(x_base, t_b)))
        return state, t_b

    def test_unip2_local_error_order(self, vp_linear, poly_model):
        lam_base = vp_linear.lam(0.35)
        x_base = np.array([1.0, -1.0, 0.5, 2.0])
        hs = [0.4 * 2.0**-k for k in range(6)]
        errs = []
        for h in hs:
            state, t_b = self._matched_state(vp_linear, poly_model, lam_base, h, x_base)
            t_next = vp_linear.t_of_lambda(lam_base + h)
            pred = predict(vp_linear, state, t_next, 2)
            exact = exact_solution_xfree(poly_model, vp_linear, x_base, t_b, t_next)
            errs.append(np.max(np.abs(pred.x_pred - exact)))
        assert fitted_slope(hs, errs) >= 2.6

    def test_unic2_local_error_order(self, vp_linear):
        model = SyntheticModel.x_free_poly([0.3, -1.2, 0.5, 0.4], 4)
        evaluator = model.evaluator(vp_linear)
        lam_base = vp_linear.lam(0.35)
        x_base = np.array([1.0, -1.0, 0.5, 2.0])
        hs = [2.0**-k for k in range(2, 8)]
        errs = []
        for h in hs:
            state, t_b = self._matched_state(vp_linear, model, lam_base, h, x_base)
            t_next = vp_linear.t_of_lambda(lam_base + h)
            pred = predict(vp_linear, state, t_next, 2)
            res = correct(vp_linear, state, t_next, pred.x_pred, 2, evaluator,
                          rs=pred.rs, Ds=pred.Ds)
            exact = exact_solution_xfree(model, vp_linear, x_base, t_b, t_next)
            errs.append(np.max(np.abs(res.corrected - exact)))
        assert fitted_slope(hs, errs) >= 3.6

    def test_insufficient_history(self, vp_linear, poly_model):
        evaluator = poly_model.evaluator(vp_linear)
        state = fresh_state(vp_linear, evaluator, np.ones(4), 0.9)
        with pytest.raises(InsufficientHistoryError):
            predict(vp_linear, state, 0.5, 2)


class TestDataPrediction:
    def test_order1_matches_noise_path(self, vp_linear, rng):
        noise = SyntheticModel.linear_in_x(0.3, 2).evaluator(vp_linear)
        data = convert_parameterization(SyntheticModel.linear_in_x(0.3, 2).evaluator(vp_linear), vp_linear)
        grid = make_time_grid(vp_linear, 6)
        x0 = rng.standard_normal(2)
        res_n = sample(noise, vp_linear, grid, SolverConfig(order=1, corrector="off"), x0)
        res_d = sample(data, vp_linear, grid,
                       SolverConfig(order=1, corrector="off", prediction="data"), x0)
        worst = max(
            np.max(np.abs(a - b)) for a, b in zip(res_n.trajectory, res_d.trajectory)
        )
        assert worst < 1e-12

    def test_order2_paths_differ(self, vp_linear, rng):
        noise = SyntheticModel.linear_in_x(0.3, 2).evaluator(vp_linear)
        data = convert_parameterization(SyntheticModel.linear_in_x(0.3, 2).evaluator(vp_linear), vp_linear)
        grid = make_time_grid(vp_linear, 6)
        x0 = rng.standard_normal(2)
        res_n = sample(noise, vp_linear, grid, SolverConfig(order=2, corrector="off"), x0)
        res_d = sample(data, vp_linear, grid,
                       SolverConfig(order=2, corrector="off", prediction="data"), x0)
        assert np.max(np.abs(res_n.final - res_d.final)) > 1e-6

    def test_zero_data_model_scales_by_sigma(self, vp_linear, rng):
        zero = ModelEvaluator(lambda x, t: np.zeros(3), "data", 3)
        grid = make_time_grid(vp_linear, 5)
        x0 = rng.standard_normal(3)
        res = sample(zero, vp_linear, grid,
                     SolverConfig(order=2, corrector="standard", prediction="data"), x0)
        ratio = vp_linear.sigma(vp_linear.t_end) / vp_linear.sigma(vp_linear.t_start)
        assert np.allclose(res.final, ratio * x0, rtol=1e-12)

    def test_prediction_mismatch_rejected(self, vp_linear, rng):
        noise = SyntheticModel.linear_in_x(0.3, 2).evaluator(vp_linear)
        grid = make_time_grid(vp_linear, 5)
        with pytest.raises(ValidationError):
            sample(noise, vp_linear, grid,
                   SolverConfig(order=2, prediction="data"), rng.standard_normal(2))


class TestNFEAccounting:
    @pytest.mark.parametrize("M", [5, 10])
    @pytest.mark.parametrize(
        "corrector,expected",
        [("off", lambda M: M), ("standard", lambda M: M), ("oracle", lambda M: 2 * M - 1)],
    )
    def test_multistep_nfe(self, vp_linear, poly_model, rng, M, corrector, expected):
        evaluator = poly_model.evaluator(vp_linear)
        grid = make_time_grid(vp_linear, M)
        res = sample(evaluator, vp_linear, grid,
                     SolverConfig(order=3, corrector=corrector), rng.standard_normal(4))
        assert res.nfe == expected(M)
        assert evaluator.eval_count == res.nfe

    def test_singlestep_nfe(self, vp_linear, poly_model, rng):
        M = 5
        evaluator = poly_model.evaluator(vp_linear)
        grid = make_time_grid(vp_linear, M)
        config = SolverConfig(order=3, corrector="standard", variant="singlestep")
        res = sample(evaluator, vp_linear, grid, config, rng.standard_normal(4))
        orders = config.resolved_orders(M)
        expected = 1 + sum(p - 1 for p in orders) + (M - 1)
        assert res.nfe == expected
        assert evaluator.eval_count == res.nfe


class TestBufferDiscipline:
    def test_used_timesteps_per_step(self, vp_linear, poly_model, rng):
        M = 8
        grid = make_time_grid(vp_linear, M)
        res = sample(poly_model.evaluator(vp_linear), vp_linear, grid,
                     SolverConfig(order=3, corrector="standard"), rng.standard_normal(4))
        for rec in res.trace:
            i, p = rec.index, rec.order
            expected = {float(grid.times[i - m]) for m in range(1, p + 1)}
            if i < M:
                expected.add(float(grid.times[i]))
                assert rec.corrected
            else:
                assert not rec.corrected
            assert set(rec.used_ts) == expected

    def test_warmup_orders(self, vp_linear, poly_model, rng):
        grid = make_time_grid(vp_linear, 9)
        res = sample(poly_model.evaluator(vp_linear), vp_linear, grid,
                     SolverConfig(order=4, corrector="standard"), rng.standard_normal(4))
        assert [rec.order for rec in res.trace] == [1, 2, 3, 4, 4, 4, 4, 4, 4]

    def test_eval_call_pattern(self, vp_linear, poly_model, rng):
        M = 6
        grid = make_time_grid(vp_linear, M)
        calls = []
        inner = poly_model.evaluator(vp_linear)

        def recording(x, t):
            calls.append(round(float(t), 12))
            return inner._fn(x, t)

        instrumented = ModelEvaluator(recording, "noise", 4)
        sample(instrumented, vp_linear, grid,
               SolverConfig(order=3, corrector="standard"), rng.standard_normal(4))
        expected = [round(float(t), 12) for t in grid.times[:-1]]
        assert calls == expected

    def test_oracle_mode_reevaluates(self, vp_linear, rng):
        # On an x-dependent model the oracle push differs from the standard one.
        M = 6
        grid = make_time_grid(vp_linear, M)
        x0 = rng.standard_normal(2)

        def run(corrector):
            evaluator = SyntheticModel.linear_in_x(0.4, 2).evaluator(vp_linear)
            return sample(evaluator, vp_linear, grid,
                          SolverConfig(order=2, corrector=corrector), x0)

        res_std, res_oracle = run("standard"), run("oracle")
        assert res_oracle.nfe == 2 * M - 1
        assert np.max(np.abs(res_std.final - res_oracle.final)) > 0


class TestOrderSchedules:
    @pytest.mark.parametrize("schedule,M", [("123321", 6), ("123456", 6), ("1223334", 7)])
    def test_valid_schedules_run(self, vp_linear, poly_model, rng, schedule, M):
        grid = make_time_grid(vp_linear, M)
        config = SolverConfig(order=max(int(d) for d in schedule),
                              corrector="standard", order_schedule=schedule)
        res = sample(poly_model.evaluator(vp_linear), vp_linear, grid,
                     config, rng.standard_normal(4))
        assert [rec.order for rec in res.trace] == [int(d) for d in schedule]
        assert res.nfe == M

    def test_entry_exceeding_history_rejected(self):
        config = SolverConfig(order=3, order_schedule="231")
        with pytest.raises(ValidationError, match="exceeds available history"):
            config.resolved_orders(3)

    def test_length_mismatch_rejected(self):
        config = SolverConfig(order=3, order_schedule="123")
        with pytest.raises(ValidationError, match="does not match"):
            config.resolved_orders(5)

    def test_bad_digits_rejected(self):
        with pytest.raises(ValidationError):
            SolverConfig(order=3, order_schedule="12a")
        with pytest.raises(ValidationError):
            SolverConfig(order=3, order_schedule="102")


class TestSinglestep:
    def test_converges_on_xfree(self, vp_linear, small_poly_model, rng):
        x0 = rng.standard_normal(4)
        exact = exact_solution_xfree(
            small_poly_model, vp_linear, x0, vp_linear.t_start, vp_linear.t_end
        )
        Ms = [10, 20, 40, 80]
        errs = []
        for M in Ms:
            grid = make_time_grid(vp_linear, M)
            res = sample(small_poly_model.evaluator(vp_linear), vp_linear, grid,
                         SolverConfig(order=2, corrector="standard", variant="singlestep"), x0)
            errs.append(np.max(np.abs(res.final - exact)))
        assert fitted_slope([1.0 / m for m in Ms], errs) >= 1.7

    @pytest.mark.parametrize("prediction", ["noise", "data"])
    @pytest.mark.parametrize("varying", [False, True])
    def test_variant_combinations_smoke(self, vp_linear, rng, prediction, varying):
        model = SyntheticModel.linear_in_x(0.3, 2).evaluator(vp_linear)
        if prediction == "data":
            model = convert_parameterization(model, vp_linear)
        grid = make_time_grid(vp_linear, 8)
        config = SolverConfig(order=3, corrector="standard", variant="singlestep",
                              prediction=prediction, varying_coefficients=varying)
        res = sample(model, vp_linear, grid, config, rng.standard_normal(2))
        assert np.all(np.isfinite(res.final))
        assert res.nfe == model.eval_count

    def test_interior_nodes_between_grid_points(self, vp_linear, poly_model, rng):
        M = 4
        grid = make_time_grid(vp_linear, M)
        calls = []
        inner = poly_model.evaluator(vp_linear)

        def recording(x, t):
            calls.append(float(t))
            return inner._fn(x, t)

        instrumented = ModelEvaluator(recording, "noise", 4)
        sample(instrumented, vp_linear, grid,
               SolverConfig(order=2, corrector="off", variant="singlestep"),
               rng.standard_normal(4))
        grid_ts = {round(float(t), 12) for t in grid.times}
        interior = [t for t in calls if round(t, 12) not in grid_ts]
        # one midpoint evaluation per full-order step
        assert len(interior) == M - 1
        for t in interior:
            assert grid.times[-1] < t < grid.times[0]


class TestGuards:
    def test_nonfinite_model_output_aborts_with_step(self, vp_linear, rng):
        count = {"n": 0}

        def flaky(x, t):
            count["n"] += 1
            if count["n"] > 3:
                return np.full(2, np.nan)
            return 0.1 * x

        grid = make_time_grid(vp_linear, 6)
        with pytest.raises(NumericError) as excinfo:
            sample(ModelEvaluator(flaky, "noise", 2), vp_linear, grid,
                   SolverConfig(order=2, corrector="standard"), rng.standard_normal(2))
        assert excinfo.value.step == 3

    def test_grid_schedule_mismatch(self, vp_linear, poly_model, rng):
        other = type(vp_linear)(beta_min=0.2, beta_max=15.0)
        grid = make_time_grid(other, 5)
        with pytest.raises(ValidationError, match="does not belong"):
            sample(poly_model.evaluator(vp_linear), vp_linear, grid,
                   SolverConfig(order=2), rng.standard_normal(4))

    def test_warm_start_too_long(self, vp_linear, poly_model, rng):
        grid = make_time_grid(vp_linear, 3)
        with pytest.raises(ValidationError, match="warm_start"):
            sample(poly_model.evaluator(vp_linear), vp_linear, grid,
                   SolverConfig(order=2), rng.standard_normal(4),
                   warm_start=[rng.standard_normal(4)] * 3)


class TestThresholding:
    def test_binds_on_large_data_predictions(self, vp_linear):
        model = SyntheticModel.linear_in_x(0.3, 3)
        x0 = np.array([4.0, -5.0, 3.0])
        grid = make_time_grid(vp_linear, 8)

        def run(th):
            evaluator = convert_parameterization(model.evaluator(vp_linear), vp_linear)
            config = SolverConfig(order=2, corrector="standard", prediction="data",
                                  thresholding=th)
            return sample(evaluator, vp_linear, grid, config, x0)

        plain = run(None)
        clipped = run(Thresholding(ratio=0.995, floor=1.0))
        assert np.all(np.isfinite(clipped.final))
        assert np.max(np.abs(plain.final - clipped.final)) > 1e-8

    def test_thresholding_requires_data(self):
        with pytest.raises(ValidationError):
            SolverConfig(order=2, prediction="noise", thresholding=Thresholding())


class TestPlugAndPlayCorrector:
    def test_unic_on_manual_ddim_equals_driver(self, vp_linear, poly_model, rng):
        M = 7
        grid = make_time_grid(vp_linear, M)
        x0 = rng.standard_normal(4)
        driver = sample(poly_model.evaluator(vp_linear), vp_linear, grid,
                        SolverConfig(order=1, corrector="standard"), x0)

        evaluator = poly_model.evaluator(vp_linear)
        state = SolverState(x=x0.copy(), capacity=1)
        state.push(BufferEntry(float(grid.times[0]), float(grid.lambdas[0]),
                               evaluator(x0, float(grid.times[0]))))
        traj = [x0.copy()]
        for i in range(1, M + 1):
            t_prev, t_next = float(grid.times[i - 1]), float(grid.times[i])
            x_pred = ddim_step(vp_linear, state.x, state.buffer[-1].output, t_prev, t_next)
            if i < M:
                res = correct(vp_linear, state, t_next, x_pred, 1, evaluator)
                state.push(BufferEntry(t_next, float(grid.lambdas[i]), res.push_output))
                state.x = res.corrected
            else:
                state.x = x_pred
            traj.append(state.x.copy())
        for a, b in zip(driver.trajectory, traj):
            assert np.array_equal(a, b)


class TestConfigJSON:
    def test_round_trip(self):
        config = SolverConfig(order=4, variant="singlestep", bh="b1", prediction="data",
                              corrector="oracle", order_schedule=None,
                              thresholding=Thresholding(0.99, 1.5), half_a1=False)
        assert SolverConfig.from_json(config.to_json()) == config

    def test_lowercase_enums(self):
        doc = SolverConfig(order=2).to_json()
        assert doc["variant"] == "multistep" and doc["bh"] == "b2" and doc["corrector"] == "standard"

    def test_unknown_fields_rejected(self):
        with pytest.raises(ValidationError):
            SolverConfig.from_json({"order": 2, "step_mode": "fancy"})

    def test_varying_order_cap(self):
        with pytest.raises(ValidationError):
            SolverConfig(order=6, varying_coefficients=True)
        SolverConfig(order=5, varying_coefficients=True)

    def test_name(self):
        assert SolverConfig(order=3, corrector="off").name() == "unip-3"
        assert SolverConfig(order=2).name() == "unipc-2"
        assert SolverConfig(order=2, varying_coefficients=True).name() == "unipc_v-2"
