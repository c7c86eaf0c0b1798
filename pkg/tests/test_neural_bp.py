"""Unrolled weighted decoder: structure, equivalence to plain sum-product
decoding at unit weights, exact gradients, training behavior, and the
weight-file round trip."""

import numpy as np
import pytest

from codedhash import channel, gf2
from codedhash.bp import TannerGraph, bp_decode_batch
from codedhash.neural_bp import (DecoderTrainConfig, NeuralBpDecoder,
                                 evaluate_error_rates, load_decoder,
                                 save_decoder, train_decoder)

H_APPENDIX = np.array(
    [
        [0, 1, 0, 1, 1, 0, 0, 1],
        [1, 1, 1, 0, 0, 1, 0, 0],
        [0, 0, 1, 0, 0, 1, 1, 1],
        [1, 0, 0, 1, 1, 0, 1, 0],
    ],
    dtype=np.uint8,
)


def appendix_net(iterations=2):
    return NeuralBpDecoder(TannerGraph(H_APPENDIX), iterations)


class TestStructure:
    def test_hidden_width_is_edge_count(self):
        net = appendix_net()
        assert net.num_edges == 16

    def test_weight_count_for_one_iteration(self):
        # per layer: one channel weight per edge plus deg(v)-1 sibling
        # weights; every variable here has degree 2, so 16 + 16 = 32.
        # output layer: 8 channel weights + 16 edge weights.
        net = appendix_net(iterations=1)
        assert net.num_weights == 32 + 24
        assert net.weight_vector().shape == (56,)
        assert (net.weight_vector() == 1.0).all()

    def test_weight_vector_round_trip(self):
        net = appendix_net()
        rng = np.random.default_rng(0)
        vec = rng.normal(1.0, 0.1, size=net.num_weights)
        net.set_weight_vector(vec)
        np.testing.assert_array_equal(net.weight_vector(), vec)

    def test_bad_iterations_rejected(self):
        with pytest.raises(ValueError):
            NeuralBpDecoder(TannerGraph(H_APPENDIX), 0)


class TestUnitWeightEquivalence:
    def test_hard_decisions_match_bp_exactly(self):
        code = gf2.build_bch(4, 2)
        graph = TannerGraph(code.parity_check)
        net = NeuralBpDecoder(graph, iterations=5)
        rng = np.random.default_rng(10)
        llrs = rng.normal(0.0, 2.0, size=(1000, 15))
        outputs, hard = net.forward(llrs)
        bp_hard, bp_soft, _ = bp_decode_batch(
            llrs, graph, iterations=5, early_stop=False, clamp=net.atanh_clamp)
        np.testing.assert_array_equal(hard, bp_hard)
        # soft outputs are the sigmoid of the negated posterior
        expected = 1.0 / (1.0 + np.exp(np.clip(bp_soft, -36.0, 36.0)))
        np.testing.assert_allclose(outputs, expected, atol=1e-12)

    def test_zero_llr_gives_exactly_half(self):
        net = appendix_net()
        outputs, hard = net.forward(np.zeros(8))
        np.testing.assert_array_equal(outputs, 0.5)
        np.testing.assert_array_equal(hard, 0)  # ties resolve to bit 0

    def test_strong_codeword_recovered(self):
        code = gf2.build_bch(4, 2)
        net = NeuralBpDecoder(TannerGraph(code.parity_check), iterations=5)
        rng = np.random.default_rng(11)
        for _ in range(5):
            cw = gf2.encode(rng.integers(0, 2, size=code.k), code)
            _, hard = net.forward(6.0 * channel.bpsk_modulate(cw))
            np.testing.assert_array_equal(hard, cw)

    def test_outputs_strictly_inside_unit_interval(self):
        net = appendix_net(iterations=3)
        rng = np.random.default_rng(12)
        llrs = rng.normal(0.0, 40.0, size=(64, 8))
        outputs, _ = net.forward(llrs)
        assert (outputs > 0.0).all() and (outputs < 1.0).all()


class TestGradients:
    def finite_difference(self, net, llrs, targets, param_idx, flat_idx,
                          h=1e-6):
        p = net.parameters()[param_idx]
        orig = p.flat[flat_idx]
        p.flat[flat_idx] = orig + h
        hi, _ = net.loss_and_grads(llrs, targets)
        p.flat[flat_idx] = orig - h
        lo, _ = net.loss_and_grads(llrs, targets)
        p.flat[flat_idx] = orig
        return (hi - lo) / (2.0 * h)

    def test_gradients_match_finite_differences(self):
        net = appendix_net(iterations=2)
        rng = np.random.default_rng(20)
        net.set_weight_vector(rng.normal(1.0, 0.1, size=net.num_weights))
        llrs = rng.normal(0.0, 2.0, size=(8, 8))
        targets = rng.integers(0, 2, size=(8, 8))
        _, grads = net.loss_and_grads(llrs, targets)
        for param_idx, p in enumerate(net.parameters()):
            for flat_idx in rng.choice(p.size, size=min(6, p.size), replace=False):
                want = self.finite_difference(net, llrs, targets,
                                              param_idx, int(flat_idx))
                got = grads[param_idx].flat[flat_idx]
                err = abs(got - want) / max(abs(got), abs(want), 1e-8)
                assert err < 1e-5, (param_idx, flat_idx, got, want)

    def test_zero_target_loss_decreases_along_gradient(self):
        net = appendix_net(iterations=2)
        rng = np.random.default_rng(21)
        llrs = 1.0 + rng.normal(0.0, 1.0, size=(32, 8))
        targets = np.zeros((32, 8))
        loss0, grads = net.loss_and_grads(llrs, targets)
        for p, g in zip(net.parameters(), grads):
            p -= 0.05 * g
        loss1, _ = net.loss_and_grads(llrs, targets)
        assert loss1 < loss0


class TestTraining:
    def test_zero_epochs_leaves_unit_weights(self):
        code = gf2.build_bch(3, 1)
        net = NeuralBpDecoder(TannerGraph(code.parity_check), iterations=3)
        train_decoder(net, code, DecoderTrainConfig(epochs=0, seed=1))
        assert (net.weight_vector() == 1.0).all()

    def test_training_reduces_validation_loss(self):
        code = gf2.build_bch(3, 1)
        graph = TannerGraph(code.parity_check)
        rng = np.random.default_rng(30)
        sigma = channel.noise_sigma(3.0, code.rate)
        val = 1.0 + sigma * rng.standard_normal((512, code.n))
        val_llrs = 2.0 * val / sigma ** 2
        val_targets = np.zeros_like(val_llrs)

        net = NeuralBpDecoder(graph, iterations=3)
        before, _ = net.loss_and_grads(val_llrs, val_targets)
        train_decoder(net, code, DecoderTrainConfig(
            snr_db_list=(1.0, 2.0, 3.0, 4.0), frames_per_epoch=128,
            epochs=60, seed=31))
        after, _ = net.loss_and_grads(val_llrs, val_targets)
        assert after < before

    def test_training_is_deterministic(self):
        code = gf2.build_bch(3, 1)
        cfg = DecoderTrainConfig(epochs=15, frames_per_epoch=64, seed=7)
        a = train_decoder(
            NeuralBpDecoder(TannerGraph(code.parity_check), 2), code, cfg)
        b = train_decoder(
            NeuralBpDecoder(TannerGraph(code.parity_check), 2), code, cfg)
        np.testing.assert_array_equal(a.weight_vector(), b.weight_vector())

    def test_mismatched_code_rejected(self):
        code = gf2.build_bch(3, 1)
        net = appendix_net()
        with pytest.raises(ValueError):
            train_decoder(net, code, DecoderTrainConfig(epochs=1))


class TestErrorRates:
    def test_high_snr_is_error_free(self):
        code = gf2.build_bch(4, 2)
        net = NeuralBpDecoder(TannerGraph(code.parity_check), 5)
        ber, fer = evaluate_error_rates(net, code, snr_db=12.0, frames=500,
                                        seed=40)
        assert ber == 0.0 and fer == 0.0

    def test_deterministic_for_fixed_seed(self):
        code = gf2.build_bch(4, 2)
        net = NeuralBpDecoder(TannerGraph(code.parity_check), 5)
        a = evaluate_error_rates(net, code, 2.0, frames=2000, seed=41)
        b = evaluate_error_rates(net, code, 2.0, frames=2000, seed=41)
        assert a == b
        assert 0.0 < a[0] < 0.5

    def test_ber_bounded_by_fer(self):
        code = gf2.build_bch(4, 2)
        net = NeuralBpDecoder(TannerGraph(code.parity_check), 5)
        ber, fer = evaluate_error_rates(net, code, 2.0, frames=2000, seed=42)
        assert ber <= fer <= 1.0


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path):
        code = gf2.build_bch(4, 2)
        net = NeuralBpDecoder(TannerGraph(code.parity_check), 5)
        rng = np.random.default_rng(50)
        net.set_weight_vector(rng.normal(1.0, 0.2, size=net.num_weights))
        path = tmp_path / "decoder.bin"
        save_decoder(net, code, path)
        loaded = load_decoder(path, code)
        assert loaded.iterations == net.iterations
        np.testing.assert_array_equal(loaded.weight_vector(), net.weight_vector())
        save_decoder(loaded, code, tmp_path / "again.bin")
        assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()

    def test_wrong_code_rejected(self, tmp_path):
        code = gf2.build_bch(4, 2)
        net = NeuralBpDecoder(TannerGraph(code.parity_check), 5)
        path = tmp_path / "decoder.bin"
        save_decoder(net, code, path)
        with pytest.raises(ValueError):
            load_decoder(path, gf2.build_bch(3, 1))

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a decoder")
        with pytest.raises(ValueError):
            load_decoder(path, gf2.build_bch(3, 1))
