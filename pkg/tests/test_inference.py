import time

import numpy as np
import pytest

from conftest import make_dictionary, random_params

from hieract.energy import Labeling, ModelDims, ModelParams, energy_total
from hieract.inference import (FrameConstraints, InfeasibleError, LossSpec,
                               brute_force, complete_latent, dp_region, infer,
                               loss_augmented_infer, loss_value)


def _random_instance(rng, max_T=5, max_K=3, max_A=3, max_Y=3):
    T = int(rng.integers(1, max_T + 1))
    dims = ModelDims(R=int(rng.integers(1, 3)),
                     K=int(rng.integers(1, max_K + 1)), D=3,
                     A=int(rng.integers(1, max_A + 1)),
                     S=int(rng.integers(1, 3)),
                     Y=int(rng.integers(1, max_Y + 1)))
    if dims.A < dims.S:
        dims = ModelDims(R=dims.R, K=dims.K, D=3, A=dims.S, S=dims.S,
                         Y=dims.Y)
    params = random_params(dims, rng)
    x = rng.normal(size=(T, dims.R, dims.D))
    return x, params


def _same_result(a, b):
    return (a.y == b.y
            and np.array_equal(a.labeling.z, b.labeling.z)
            and np.array_equal(a.labeling.v, b.labeling.v)
            and abs(a.score - b.score) < 1e-9)


class TestDpRegion:
    def test_zero_params_lexicographic_min(self):
        dims = ModelDims(R=1, K=2, D=3, A=2, S=2, Y=2)
        params = ModelParams.zeros(dims, dictionary=make_dictionary(2, 2, 2))
        x = np.zeros((4, 1, 3))
        z, v, score = dp_region(x, 0, params, 0)
        assert score == 0.0
        assert not z.any() and not v.any()

    def test_full_beam_equals_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            x, params = _random_instance(rng)
            n_states = params.num_poselet_states * params.dims.A
            exact = infer(x, params)
            beamed = infer(x, params, beam=n_states)
            assert _same_result(exact, beamed)

    def test_narrow_beam_never_beats_exact(self):
        rng = np.random.default_rng(1)
        worst_gap = 0.0
        for _ in range(25):
            x, params = _random_instance(rng)
            exact = infer(x, params)
            beamed = infer(x, params, beam=1)
            assert beamed.score <= exact.score + 1e-9
            worst_gap = max(worst_gap, exact.score - beamed.score)
        print(f"largest beam-1 score gap over 25 instances: {worst_gap:.4f}")

    def test_beam_must_be_positive(self):
        rng = np.random.default_rng(2)
        x, params = _random_instance(rng)
        with pytest.raises(ValueError):
            dp_region(x, 0, params, 0, beam=0)


class TestOracleEquivalence:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(60):
            x, params = _random_instance(rng)
            assert _same_result(infer(x, params), brute_force(x, params))

    def test_single_frame_maximizes_unary(self):
        rng = np.random.default_rng(4)
        x, params = _random_instance(rng, max_T=1)
        x = x[:1]
        res = brute_force(x, params)
        assert res.labeling.num_frames == 1
        assert res.score == pytest.approx(res.energy, abs=1e-9)

    def test_constant_alpha_shift(self):
        rng = np.random.default_rng(5)
        x, params = _random_instance(rng)
        T = x.shape[0]
        base = brute_force(x, params)
        shifted_params = params.with_flat(params.flatten())
        for r in range(params.dims.R):
            shifted_params.alpha[r] += 1.0
        shifted = brute_force(x, shifted_params)
        assert shifted.y == base.y
        np.testing.assert_array_equal(shifted.labeling.v, base.labeling.v)
        assert shifted.score == pytest.approx(
            base.score + T * params.dims.R, rel=1e-9)

    def test_guard_rejects_large_instances(self):
        dims = ModelDims(R=1, K=4, D=2, A=4, S=2, Y=3)
        params = ModelParams.zeros(dims, dictionary=make_dictionary(4, 2, 4))
        x = np.zeros((8, 1, 2))
        with pytest.raises(ValueError, match="too large"):
            brute_force(x, params)


class TestInfer:
    def test_single_class_reduces_to_dp(self):
        rng = np.random.default_rng(6)
        dims = ModelDims(R=2, K=2, D=3, A=2, S=2, Y=1)
        params = random_params(dims, rng)
        x = rng.normal(size=(4, 2, 3))
        res = infer(x, params)
        total = 0.0
        for r in range(2):
            _, _, score = dp_region(x, 0, params, r)
            total += score
        assert res.y == 0
        assert res.score == pytest.approx(total, rel=1e-12)

    def test_energy_matches_score_without_loss(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            x, params = _random_instance(rng)
            res = infer(x, params)
            assert res.score == pytest.approx(res.energy, abs=1e-9)
            assert res.energy == pytest.approx(
                energy_total(x, res.labeling, params), abs=1e-9)

    def test_margins_shape_and_sign(self):
        rng = np.random.default_rng(8)
        x, params = _random_instance(rng)
        res = infer(x, params)
        assert res.margins.shape == (x.shape[0], params.dims.R)
        assert np.all(res.margins >= 0)


class TestLossAugmented:
    def test_zero_loss_equals_infer(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            x, params = _random_instance(rng)
            spec = LossSpec(y=0, allowed_v=np.ones(
                (x.shape[0], params.dims.A), dtype=bool))
            plain = infer(x, params)
            aug = loss_augmented_infer(x, params, spec, 0.0, 0.0)
            assert _same_result(plain, aug)

    def test_zero_params_attains_full_loss(self):
        dims = ModelDims(R=2, K=2, D=3, A=2, S=2, Y=3)
        params = ModelParams.zeros(dims, dictionary=make_dictionary(2, 2, 2))
        T = 5
        x = np.zeros((T, 2, 3))
        allowed = np.zeros((T, 2), dtype=bool)
        allowed[:, 0] = True          # actionlet 1 always violates
        spec = LossSpec(y=1, allowed_v=allowed, region=0)
        res = loss_augmented_infer(x, params, spec, lambda_y=100.0,
                                   lambda_v=25.0)
        assert res.y != 1
        assert res.score == pytest.approx(125.0)
        assert res.energy == 0.0

    def test_score_is_energy_plus_loss(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            x, params = _random_instance(rng)
            T = x.shape[0]
            spec = LossSpec(y=int(rng.integers(params.dims.Y)),
                            allowed_v=rng.random((T, params.dims.A)) > 0.4,
                            region=0)
            res = loss_augmented_infer(x, params, spec, 100.0, 25.0)
            delta = loss_value(res.labeling, spec, 100.0, 25.0)
            assert res.score == pytest.approx(res.energy + delta, abs=1e-9)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            x, params = _random_instance(rng)
            T = x.shape[0]
            spec = LossSpec(y=int(rng.integers(params.dims.Y)),
                            allowed_v=rng.random((T, params.dims.A)) > 0.3,
                            region=0)
            aug = loss_augmented_infer(x, params, spec, 10.0, 5.0)
            oracle = brute_force(x, params, loss_spec=spec, lambda_y=10.0,
                                 lambda_v=5.0)
            assert _same_result(aug, oracle)

    def test_margin_semantics_with_label_loss_only(self):
        # With lambda_v = 0, the violator's y must differ from the truth
        # whenever some wrong y scores within lambda_y of the truth energy.
        rng = np.random.default_rng(17)
        checked = 0
        for _ in range(60):
            x, params = _random_instance(rng)
            if params.dims.Y < 2:
                continue
            checked += 1
            best = np.zeros(params.dims.Y)
            for y in range(params.dims.Y):
                best[y] = sum(dp_region(x, y, params, r)[2]
                              for r in range(params.dims.R))
            lambda_y = 1.0
            y_true = int(rng.integers(params.dims.Y))
            aug = loss_augmented_infer(x, params, LossSpec(y=y_true),
                                       lambda_y, 0.0)
            oracle = brute_force(x, params, loss_spec=LossSpec(y=y_true),
                                 lambda_y=lambda_y, lambda_v=0.0)
            assert _same_result(aug, oracle)
            wrong = [y for y in range(params.dims.Y) if y != y_true]
            if max(best[y] for y in wrong) > best[y_true] - lambda_y:
                assert aug.y != y_true
        assert checked >= 25


class TestCompleteLatent:
    def test_fixed_v_only_optimizes_z(self):
        rng = np.random.default_rng(12)
        x, params = _random_instance(rng)
        T = x.shape[0]
        v_fixed = rng.integers(0, params.dims.A, size=(T, params.dims.R))
        constraints = FrameConstraints.fixed_v(v_fixed, params.dims.A)
        labeling = complete_latent(x, params, 0, constraints)
        np.testing.assert_array_equal(labeling.v, v_fixed)

    def test_singleton_sets_force_v(self):
        rng = np.random.default_rng(13)
        dims = ModelDims(R=2, K=2, D=3, A=3, S=3, Y=1)
        params = random_params(dims, rng)
        T = 4
        x = rng.normal(size=(T, 2, 3))
        per_frame = [np.array([2])] * T
        constraints = FrameConstraints.from_actionlet_sets(per_frame, 2, 3)
        labeling = complete_latent(x, params, 0, constraints)
        assert (labeling.v == 2).all()

    def test_matches_constrained_brute_force(self):
        rng = np.random.default_rng(14)
        for _ in range(25):
            x, params = _random_instance(rng, max_Y=1)  # fixed y by design
            T = x.shape[0]
            allowed = rng.random((T, params.dims.R, params.dims.A)) > 0.3
            allowed[:, :, 0] = True   # keep feasible
            constraints = FrameConstraints(allowed_v=allowed)
            labeling = complete_latent(x, params, 0, constraints)
            oracle = brute_force(x, params, constraints=constraints)
            np.testing.assert_array_equal(labeling.z, oracle.labeling.z)
            np.testing.assert_array_equal(labeling.v, oracle.labeling.v)
            assert np.all(allowed[np.arange(T)[:, None],
                                  np.arange(params.dims.R)[None, :],
                                  labeling.v])

    def test_infeasible_constraints_raise(self):
        rng = np.random.default_rng(15)
        x, params = _random_instance(rng)
        T = x.shape[0]
        allowed = np.zeros((T, params.dims.R, params.dims.A), dtype=bool)
        with pytest.raises(InfeasibleError):
            complete_latent(x, params, 0, FrameConstraints(allowed_v=allowed))


class TestRuntimeScaling:
    def test_roughly_linear_in_frames(self):
        rng = np.random.default_rng(16)
        dims = ModelDims(R=1, K=3, D=4, A=3, S=3, Y=1)
        params = random_params(dims, rng)

        def best_time(T):
            x = rng.normal(size=(T, 1, 4))
            times = []
            for _ in range(5):
                t0 = time.perf_counter()
                infer(x, params, want_margins=False)
                times.append(time.perf_counter() - t0)
            return min(times)

        base = best_time(2000)
        doubled = best_time(4000)
        assert doubled <= 2.5 * base
