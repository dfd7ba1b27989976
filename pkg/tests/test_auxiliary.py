import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tribrain import auxiliary as aux
from tribrain.numerics import ShapeError, Tensor


def mods(D, dfreq=0.0, dphase=0.0, damp=0.0):
    full = lambda v: Tensor(np.broadcast_to(np.asarray(v, dtype=np.float64), (D,)).copy())  # noqa: E731
    return aux.ModulationSignals(full(dfreq), full(dphase), full(damp))


class TestBands:
    def test_eight_neurons_two_per_band(self):
        _, band = aux.assign_bands(8, seed=0)
        np.testing.assert_array_equal(np.bincount(band), [2, 2, 2, 2])

    @pytest.mark.parametrize("D", [5, 6, 7, 13])
    def test_uneven_populations_differ_by_one(self, D):
        counts = np.bincount(aux.assign_bands(D, 1)[1], minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_frequencies_inside_band(self):
        freq, band = aux.assign_bands(400, seed=3)
        ranges = [(0.40, 1.00), (0.13, 0.30), (0.08, 0.12), (0.04, 0.07)]
        for b, (lo, hi) in enumerate(ranges):
            f = freq[band == b]
            assert f.min() >= lo - 1e-12 and f.max() <= hi + 1e-12

    def test_gamma_in_hertz(self):
        freq, band = aux.assign_bands(64, seed=4)
        hz = freq[band == 0] / 0.01
        assert np.all((hz >= 40) & (hz <= 100))

    def test_same_seed_same_bank(self):
        a, b = aux.assign_bands(32, 9), aux.assign_bands(32, 9)
        np.testing.assert_array_equal(a[0], b[0])

    def test_too_few_neurons(self):
        with pytest.raises(ValueError):
            aux.assign_bands(3, 0)

    def test_offsets_start_at_zero(self):
        osc = aux.Oscillators(12, 0)
        np.testing.assert_array_equal(osc.freq_offset.data, 0.0)
        bank = osc.initial_bank(batch_size=3)
        assert bank.phase.shape == (3, 12)


class TestAdvance:
    def test_zero_frequency_keeps_phase(self):
        bank = aux.bank_from_arrays(np.zeros(4), np.array([0.1, 1.0, 2.0, 6.0]), np.ones(4))
        out = aux.advance(bank, mods(4), (0.1, 0.1, 0.1))
        np.testing.assert_allclose(out.phase.data, bank.phase.data, atol=1e-15)

    def test_one_cycle_per_tick_wraps_to_same_phase(self):
        phase = np.array([0.3, 2.0, 4.0])
        bank = aux.bank_from_arrays(np.ones(3), phase, np.ones(3))
        np.testing.assert_allclose(aux.advance(bank, mods(3)).phase.data, phase, atol=1e-12)

    def test_modulated_frequency(self):
        bank = aux.bank_from_arrays(np.array([0.25]), np.zeros(1), np.ones(1))
        out = aux.advance(bank, mods(1, dfreq=1.0), (0.1, 0.0, 0.0))
        assert out.phase.data[0] == pytest.approx(2 * math.pi * 0.275, abs=1e-12)

    def test_phase_kick_and_amplitude_scaling(self):
        bank = aux.bank_from_arrays(np.zeros(2), np.zeros(2), np.array([2.0, 1.0]))
        out = aux.advance(bank, mods(2, dphase=0.5, damp=-0.5), (0.1, 0.2, 0.4))
        np.testing.assert_allclose(out.phase.data, 0.1, atol=1e-15)
        np.testing.assert_allclose(out.amplitude.data, [1.6, 0.8], atol=1e-15)

    def test_phase_wrapped(self):
        bank = aux.bank_from_arrays(np.array([0.9, 0.7]), np.array([6.0, 0.1]), np.ones(2))
        for _ in range(7):
            bank = aux.advance(bank, None)
            assert np.all((bank.phase.data >= 0) & (bank.phase.data < 2 * math.pi))

    def test_size_mismatch(self):
        bank = aux.bank_from_arrays(np.zeros(4), np.zeros(4), np.ones(4))
        with pytest.raises(ShapeError):
            aux.advance(bank, mods(3))

    def test_non_finite_modulation(self):
        bank = aux.bank_from_arrays(np.zeros(2), np.zeros(2), np.ones(2))
        with pytest.raises(ValueError):
            aux.advance(bank, mods(2, dfreq=np.array([0.0, np.nan])))

    def test_closed_form_without_modulation_gain(self):
        D = 16
        osc = aux.Oscillators(D, seed=5, init_phase_spread=1.0)
        osc.freq_offset.data = np.random.default_rng(0).normal(0, 0.01, D)
        bank = osc.initial_bank()
        rng = np.random.default_rng(1)
        phi0 = osc.init_phase.data
        omega = osc.base_freq + osc.freq_offset.data
        for t in range(1, 101):
            m = aux.ModulationSignals(*(Tensor(rng.uniform(-1, 1, D)) for _ in range(3)))
            bank = aux.advance(bank, m, (0.0, 0.0, 0.0))
            expect = np.mod(phi0 + 2 * math.pi * omega * t, 2 * math.pi)
            diff = np.angle(np.exp(1j * (bank.phase.data - expect)))
            assert np.max(np.abs(diff)) < 1e-9
        np.testing.assert_array_equal(bank.amplitude.data, osc.init_amplitude.data)

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, (20, 6), elements=st.floats(-1, 1)))
    def test_amplitude_never_negative(self, damps):
        bank = aux.bank_from_arrays(np.full(6, 0.1), np.zeros(6), np.ones(6))
        for row in damps:
            bank = aux.advance(bank, mods(6, damp=row), (0.1, 0.1, 5.0))
            assert np.all(bank.amplitude.data >= 0)


class TestOscillatoryState:
    @pytest.mark.parametrize("A,phi,expect", [(1.0, math.pi / 2, 1.0), (0.0, 1.3, 0.0), (2.0, math.pi / 6, 1.0)])
    def test_values(self, A, phi, expect):
        bank = aux.bank_from_arrays(np.zeros(1), np.array([phi]), np.array([A]))
        assert aux.oscillatory_state(bank).data[0] == pytest.approx(expect, abs=1e-15)

    def test_combine(self):
        z = Tensor(np.ones((2, 3)))
        osc = Tensor(np.full(3, 0.5))
        np.testing.assert_allclose(aux.combine_state(z, osc, 0.1).data, 1.05, atol=1e-15)
        np.testing.assert_array_equal(aux.combine_state(z, osc, 0.0).data, z.data)
        np.testing.assert_array_equal(aux.combine_state(Tensor(np.zeros((2, 3))), osc, 1.0).data, [[0.5] * 3] * 2)


class TestModulation:
    def test_zero_final_layer_gives_zero_signals(self):
        net = aux.ModulationNet(8, 5, np.random.default_rng(0), zero_final=True)
        sig = aux.generate_modulation(Tensor(np.random.default_rng(1).normal(size=(4, 8))), net)
        for s in (sig.dfreq, sig.dphase, sig.damp):
            np.testing.assert_array_equal(s.data, 0.0)
            assert s.shape == (5,)

    def test_bounded(self):
        net = aux.ModulationNet(8, 5, np.random.default_rng(2))
        for p in net.parameters():
            p.data = p.data * 50
        raw = net(Tensor(np.random.default_rng(3).normal(size=(16, 8)) * 10))
        assert np.max(np.abs(raw.data)) <= 1.0

    def test_identical_rows_batch_mean(self):
        net = aux.ModulationNet(8, 5, np.random.default_rng(4))
        row = np.random.default_rng(5).normal(size=(1, 8))
        batched = aux.generate_modulation(Tensor(np.repeat(row, 3, axis=0)), net)
        single = aux.generate_modulation(Tensor(row), net, batch_mean=False)
        np.testing.assert_allclose(batched.dfreq.data, single.dfreq.data[0], atol=1e-15)

    def test_non_finite_attention_output(self):
        net = aux.ModulationNet(2, 4, np.random.default_rng(6))
        with pytest.raises(ValueError):
            aux.generate_modulation(Tensor(np.array([[np.inf, 0.0]])), net)

    def test_film_gain_starts_at_identity(self):
        film = aux.FilmGain(12, 7, np.random.default_rng(7))
        np.testing.assert_array_equal(film(Tensor(np.ones((2, 12)))).data, 1.0)

    def test_temperature(self):
        np.testing.assert_allclose(aux.attention_temperature(Tensor(np.array([0.2, -0.4, 0.5]))).data, [1.1 / 1.0], atol=1e-15)


class TestCertainty:
    def test_coherence_examples(self):
        assert aux.phase_coherence(np.full(5, 1.234)) == pytest.approx(1.0, abs=1e-15)
        assert aux.phase_coherence(np.array([0.0, math.pi])) == pytest.approx(0.0, abs=1e-15)
        assert aux.phase_coherence(np.array([0.0, math.pi / 2])) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)

    def test_entropy_certainty_examples(self):
        assert aux.entropy_certainty(np.full(10, 0.1)) == pytest.approx(0.0, abs=1e-12)
        assert aux.entropy_certainty(np.eye(4)[2]) == 1.0
        assert aux.entropy_certainty(np.array([0.9, 0.1])) == pytest.approx(0.5310, abs=5e-5)

    def test_entropy_examples(self):
        assert aux.entropy(np.eye(3)[0]) == 0.0
        assert aux.entropy(np.full(7, 1 / 7)) == pytest.approx(math.log(7), abs=1e-12)
        assert aux.entropy(np.array([0.9, 0.1])) == pytest.approx(0.3251, abs=5e-5)

    @pytest.mark.parametrize("bad", [np.array([0.5, 0.6]), np.array([1.2, -0.2]), np.array([np.nan, 1.0])])
    def test_invalid_distribution(self, bad):
        with pytest.raises(ValueError):
            aux.entropy_certainty(bad)

    def test_total_examples(self):
        assert aux.total_certainty(0.3, 0.8, 1.0) == 0.3
        assert aux.total_certainty(0.3, 0.8, 0.0) == 0.8
        assert aux.total_certainty(0.5310, 0.70711, 0.5) == pytest.approx(0.61906, abs=1e-5)
        with pytest.raises(ValueError):
            aux.total_certainty(0.3, 0.8, 1.5)

    def test_record_is_exact_blend(self):
        rec = aux.certainty(np.array([[0.7, 0.2, 0.1]]), np.array([0.0, 0.3, 2.0]), 0.3)
        assert rec.total[0] == 0.3 * rec.entropy_certainty[0] + 0.7 * rec.phase_certainty[0]

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, st.integers(1, 40), elements=st.floats(-100, 100)))
    def test_coherence_in_unit_interval(self, phases):
        c = aux.phase_coherence(phases)
        assert -1e-12 <= c <= 1 + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 2 * math.pi), st.integers(2, 20), st.integers(0, 10**6))
    def test_coherence_one_iff_phases_coincide(self, base, D, seed):
        same = np.full(D, base) + 2 * math.pi * np.random.default_rng(seed).integers(-3, 4, D)
        assert aux.phase_coherence(same) == pytest.approx(1.0, abs=1e-12)
        spread = same.copy()
        spread[0] += 0.5
        assert aux.phase_coherence(spread) < 1.0 - 1e-6

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_total_monotone(self, ce, cp, beta, bump):
        base = aux.total_certainty(ce, cp, beta)
        assert aux.total_certainty(min(1.0, ce + bump), cp, beta) >= base - 1e-15
        assert aux.total_certainty(ce, min(1.0, cp + bump), beta) >= base - 1e-15
