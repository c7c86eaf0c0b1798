import math

import numpy as np
import pytest

from codedhash.hashing import (
    Encoders,
    Mlp,
    dll_loss,
    gradients,
    load_encoders,
    match_probability,
    objective,
    objective_grads,
    save_encoders,
    sign_hash,
    squared_distance,
)


def objective_oracle(p, q, s, margin, theta, lam):
    """Scalar-loop reference for the training objective."""
    n_p, c = p.shape
    n_q = q.shape[0]
    total = 0.0
    for i in range(n_p):
        for j in range(n_q):
            d = sum((p[i, b] - q[j, b]) ** 2 for b in range(c))
            r = (1 + math.exp(-margin)) / (1 + math.exp(d - margin))
            r = min(max(r, 1e-12), 1 - 1e-12)
            if s[i, j]:
                total += -math.log(r)
            else:
                total += -math.log(1 - r)
    norms = sum(v * v for v in p.ravel()) + sum(v * v for v in q.ravel())
    total -= theta / c * norms
    for b in range(c):
        total += lam * (p[:, b].sum() ** 2 + q[:, b].sum() ** 2)
    return total


def finite_difference(fun, arr, h=1e-6):
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    g = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = fun()
        flat[i] = keep - h
        lo = fun()
        flat[i] = keep
        g[i] = (hi - lo) / (2 * h)
    return grad


def relative_error(a, b):
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return np.abs(a - b).max(initial=0.0) / scale


class TestSignHash:
    def test_zero_maps_to_plus_one(self):
        assert sign_hash(np.zeros(4)).tolist() == [1, 1, 1, 1]

    def test_signs_and_dtype(self):
        out = sign_hash(np.array([-0.3, 0.2, -7.0, 0.0]))
        assert out.dtype == np.int8
        assert out.tolist() == [-1, 1, -1, 1]


class TestMatchProbability:
    def test_zero_distance_is_exactly_one(self):
        assert match_probability(0.0, 6.0) == 1.0
        assert match_probability(np.zeros(3), 2.5).tolist() == [1.0, 1.0, 1.0]

    def test_value_at_margin(self):
        assert match_probability(6.0, 6.0) == pytest.approx(
            0.5012393760883331, abs=1e-15)

    def test_frozen_values(self):
        assert match_probability(12.0, 6.0) == pytest.approx(
            0.002478752176666358, abs=1e-15)
        assert match_probability(3.0, 6.0) == pytest.approx(
            0.9549353220127303, abs=1e-15)
        assert match_probability(2.0, 2.0) == pytest.approx(
            0.5676676416183064, abs=1e-15)

    def test_strictly_decreasing_grid(self):
        d = np.linspace(0.0, 24.0, 100)
        r = match_probability(d, 6.0)
        assert (np.diff(r) < 0).all()
        assert (r > 0).all() and (r <= 1).all()

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            match_probability(1.0, 0.0)
        with pytest.raises(ValueError):
            match_probability(-0.5, 2.0)


class TestDllLoss:
    def test_perfect_match(self):
        assert dll_loss(1.0, 1) == pytest.approx(0.0, abs=1e-11)
        assert dll_loss(0.0, 0) == pytest.approx(0.0, abs=1e-11)

    def test_extremes_are_finite(self):
        vals = dll_loss(np.array([0.0, 1.0]), np.array([1, 0]))
        assert np.isfinite(vals).all()
        assert (vals > 20).all()

    def test_matches_log_forms(self):
        r = np.array([0.3, 0.8])
        assert dll_loss(r, np.ones(2)) == pytest.approx(-np.log(r))
        assert dll_loss(r, np.zeros(2)) == pytest.approx(-np.log(1 - r))


class TestSquaredDistance:
    def test_matches_norm(self):
        rng = np.random.default_rng(3)
        p = rng.normal(size=(5, 7))
        q = rng.normal(size=(5, 7))
        expected = np.linalg.norm(p - q, axis=1) ** 2
        assert np.allclose(squared_distance(p, q), expected)


class TestObjective:
    def test_zero_activations_matched(self):
        p = np.zeros((1, 8))
        j, (dll, quant, balance) = objective(p, p, np.ones((1, 1)), 6.0, 1.0, 1.0)
        assert j == pytest.approx(0.0, abs=1e-11)
        assert dll == pytest.approx(0.0, abs=1e-11)
        assert quant == 0.0
        assert balance == 0.0

    def test_all_ones_parts(self):
        n, c = 3, 8
        p = np.ones((n, c))
        theta, lam = 0.7, 0.2
        j, (dll, quant, balance) = objective(p, p, np.ones((n, n)), 6.0,
                                             theta, lam)
        assert quant == pytest.approx(-2 * n * theta)
        assert balance == pytest.approx(lam * 2 * c * n * n)
        assert dll == pytest.approx(0.0, abs=1e-10)
        assert j == pytest.approx(quant + balance, abs=1e-10)

    def test_matches_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            p = rng.normal(size=(4, 6))
            q = rng.normal(size=(3, 6))
            s = rng.integers(0, 2, size=(4, 3))
            j, parts = objective(p, q, s, 4.0, 0.7, 0.3)
            assert j == pytest.approx(objective_oracle(p, q, s, 4.0, 0.7, 0.3),
                                      rel=1e-12)
            assert j == pytest.approx(sum(parts), rel=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(12)
        p = rng.normal(size=(5, 4))
        q = rng.normal(size=(5, 4))
        s = rng.integers(0, 2, size=(5, 5))
        perm = rng.permutation(5)
        j, _ = objective(p, q, s, 4.0, 0.5, 0.5)
        j_perm, _ = objective(p[perm], q[perm], s[np.ix_(perm, perm)],
                              4.0, 0.5, 0.5)
        assert j_perm == pytest.approx(j, rel=1e-12)

    def test_balanced_columns_zero_balance(self):
        p = np.array([[1.0, -2.0], [-1.0, 2.0]])
        _, (_, _, balance) = objective(p, p, np.ones((2, 2)), 4.0, 1.0, 3.0)
        assert balance == 0.0

    def test_rejects_bad_similarity(self):
        p = np.zeros((2, 3))
        with pytest.raises(ValueError):
            objective(p, p, np.zeros((3, 2)), 4.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            objective(p, p, np.full((2, 2), 0.5), 4.0, 1.0, 1.0)


class TestObjectiveGrads:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        p = rng.normal(size=(3, 5))
        q = rng.normal(size=(4, 5))
        s = rng.integers(0, 2, size=(3, 4))
        args = (4.0, 0.7, 0.3)
        dp, dq, j, _ = objective_grads(p, q, s, *args)
        assert j == pytest.approx(objective(p, q, s, *args)[0])
        fd_p = finite_difference(lambda: objective(p, q, s, *args)[0], p)
        fd_q = finite_difference(lambda: objective(p, q, s, *args)[0], q)
        assert relative_error(dp, fd_p) < 1e-7
        assert relative_error(dq, fd_q) < 1e-7

    def test_clamped_pairs_contribute_nothing(self):
        # distance so large the probability hits its floor: only the
        # norm and balance terms should remain in the gradient
        p = np.full((1, 4), 50.0)
        q = np.full((1, 4), -50.0)
        s = np.ones((1, 1))
        theta, lam = 0.4, 0.6
        dp, dq, _, _ = objective_grads(p, q, s, 6.0, theta, lam)
        expected_p = -(theta / 4) * 2 * p + lam * 2 * p.sum(axis=0)
        expected_q = -(theta / 4) * 2 * q + lam * 2 * q.sum(axis=0)
        assert np.allclose(dp, expected_p)
        assert np.allclose(dq, expected_q)

    def test_identical_points_zero_distance_gradient(self):
        # both clamps (distance floor at 0, probability ceiling) active
        p = np.ones((1, 3)) * 0.5
        dp, dq, _, _ = objective_grads(p, p.copy(), np.ones((1, 1)),
                                       4.0, 0.0, 0.0)
        assert np.allclose(dp, 0.0)
        assert np.allclose(dq, 0.0)


class TestFullChainGradients:
    def _setup(self, seed=5):
        rng = np.random.default_rng(seed)
        enc = Encoders.build(d_img=5, d_attr=4, code_length=8, hidden=(6,),
                             init_std=0.5, seed=rng)
        x = rng.normal(size=(4, 5))
        y = rng.normal(size=(3, 4))
        s = rng.integers(0, 2, size=(4, 3))
        return enc, x, y, s

    def test_every_parameter_matches_finite_differences(self):
        enc, x, y, s = self._setup()
        args = (4.0, 0.7, 0.3)
        img_grads, attr_grads, _, _ = gradients(enc, x, y, s, *args)

        def value():
            p = enc.encode_images(x)
            q = enc.encode_attributes(y)
            return objective(p, q, s, *args)[0]

        for analytic, param in zip(
                img_grads + attr_grads,
                enc.image.parameters() + enc.attribute.parameters()):
            fd = finite_difference(value, param)
            assert relative_error(analytic, fd) < 1e-5

    def test_gradient_step_decreases_objective(self):
        enc, x, y, s = self._setup(seed=9)
        args = (4.0, 0.7, 0.3)
        img_grads, attr_grads, j0, _ = gradients(enc, x, y, s, *args)
        params = enc.image.parameters() + enc.attribute.parameters()
        grads = img_grads + attr_grads
        step = 0.1
        for _ in range(20):
            for p, g in zip(params, grads):
                p -= step * g
            j1, _ = objective(enc.encode_images(x), enc.encode_attributes(y),
                              s, *args)
            if j1 < j0:
                break
            for p, g in zip(params, grads):
                p += step * g
            step /= 2
        assert j1 < j0


class TestEncoders:
    def test_build_shapes_and_init(self):
        enc = Encoders.build(d_img=20, d_attr=12, code_length=16,
                             hidden=(64, 64), seed=7)
        assert [w.shape for w in enc.image.weights] == [
            (20, 64), (64, 64), (64, 16)]
        assert [w.shape for w in enc.attribute.weights] == [
            (12, 64), (64, 64), (64, 16)]
        assert all((b == 0).all() for b in enc.image.biases)
        assert all((b == 0).all() for b in enc.attribute.biases)
        big = np.concatenate([w.ravel() for w in enc.image.weights])
        assert abs(big.std() - 0.01) < 0.002
        assert abs(big.mean()) < 0.002

    def test_same_seed_same_weights(self):
        a = Encoders.build(6, 5, 8, hidden=(10,), seed=3)
        b = Encoders.build(6, 5, 8, hidden=(10,), seed=3)
        for wa, wb in zip(a.image.parameters(), b.image.parameters()):
            assert np.array_equal(wa, wb)

    def test_single_and_batch_forward_agree(self):
        enc = Encoders.build(6, 5, 8, hidden=(10,), init_std=0.3, seed=4)
        x = np.random.default_rng(0).normal(size=(3, 6))
        batch = enc.encode_images(x)
        assert batch.shape == (3, 8)
        single = enc.encode_images(x[1])
        assert single.shape == (8,)
        assert np.allclose(single, batch[1], rtol=1e-12, atol=1e-15)
        assert (np.abs(batch) < 1).all()

    def test_output_width_mismatch_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            Encoders(Mlp((4, 6), rng), Mlp((4, 7), rng))

    def test_input_width_checked(self):
        enc = Encoders.build(6, 5, 8, seed=0)
        with pytest.raises(ValueError):
            enc.encode_images(np.zeros((2, 7)))


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        enc = Encoders.build(d_img=9, d_attr=6, code_length=8,
                             hidden=(11, 7), init_std=0.2, seed=13)
        path = tmp_path / "enc.bin"
        save_encoders(enc, path)
        back = load_encoders(path)
        assert back.code_length == 8
        assert back.image.layer_sizes == (9, 11, 7, 8)
        assert back.attribute.layer_sizes == (6, 11, 7, 8)
        for a, b in zip(
                enc.image.parameters() + enc.attribute.parameters(),
                back.image.parameters() + back.attribute.parameters()):
            assert np.array_equal(a, b)

    def test_no_hidden_layers_round_trip(self, tmp_path):
        enc = Encoders.build(5, 4, 6, hidden=(), init_std=0.3, seed=2)
        path = tmp_path / "flat.bin"
        save_encoders(enc, path)
        back = load_encoders(path)
        x = np.random.default_rng(1).normal(size=(2, 5))
        assert np.array_equal(enc.encode_images(x), back.encode_images(x))

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not an encoder file at all")
        with pytest.raises(ValueError):
            load_encoders(path)
