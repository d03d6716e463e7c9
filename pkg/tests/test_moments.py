import numpy as np
import pytest

from mtd.model import MomentLayout, NoiseModel, Params, model_moments, signal_autocorrelations
from mtd.moments import (
    CovarianceAccumulator,
    empirical_moments,
    estimate_covariance,
    read_matrix_file,
    weight_matrix,
    window_mean,
    window_moment_vector,
    write_matrix_file,
)
from mtd.simulate import MeasurementSpec, spec_for_density, synthesize
from oracles import covariance_oracle, moment_vector_oracle, window_vector_oracle


class TestEmpiricalMoments:
    def test_zero_measurement(self):
        emp = empirical_moments(np.zeros(50), 4)
        assert np.all(emp.vector.values == 0)
        assert emp.N == 50

    def test_delta_spike(self):
        N, L, h, pos = 60, 4, 2.5, 30
        y = np.zeros(N)
        y[pos] = h
        emp = empirical_moments(y, L)
        assert emp.vector.first == pytest.approx(h / N)
        assert emp.vector.second == pytest.approx([h**2 / N, 0, 0, 0])
        layout = emp.vector.layout
        third = np.zeros(L * (L + 1) // 2)
        third[layout.pair_index(0, 0) - 1 - L] = h**3 / N
        np.testing.assert_allclose(emp.vector.third, third)

    def test_noiseless_interior_copies_match_model_exactly(self):
        # well-separated copies never cross-correlate at shifts below L,
        # so every moment order equals its population value exactly
        rng = np.random.default_rng(10)
        L, N, p = 4, 200, 3
        x = rng.random(L)
        meas = synthesize(x, MeasurementSpec(N=N, L=L, p=p, sigma2=0.0, seed=6))
        emp = empirical_moments(meas.y, L)
        gamma = p * L / N
        a1, a2, a3 = signal_autocorrelations(x)
        assert emp.vector.first == pytest.approx(gamma * a1, rel=1e-13)
        np.testing.assert_allclose(emp.vector.second, gamma * a2, rtol=1e-13)
        layout = emp.vector.layout
        np.testing.assert_allclose(
            emp.vector.third, gamma * a3[layout.pair_l1, layout.pair_l2], rtol=1e-13, atol=1e-16
        )

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            L = int(rng.integers(1, 7))
            N = int(rng.integers(2 * L, 200))
            y = rng.standard_normal(N)
            emp = empirical_moments(y, L)
            ref = moment_vector_oracle(y, L, norm=N)
            assert np.max(np.abs(emp.vector.values - ref)) <= 1e-10

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            empirical_moments(np.zeros(7), 4)


class TestWindowMomentVector:
    def test_zero_window(self):
        v = window_moment_vector(np.zeros(30), 3, 4)
        assert np.all(v.values == 0)

    def test_matches_naive_oracle_both_conventions(self):
        rng = np.random.default_rng(12)
        y = rng.standard_normal(80)
        for L in (1, 3, 5):
            for i in (0, 7, 80 - (2 * L - 1)):
                for extended in (True, False):
                    got = window_moment_vector(y, i, L, extended=extended).values
                    ref = window_vector_oracle(y, i, L, extended=extended)
                    assert np.max(np.abs(got - ref)) <= 1e-12

    def test_constant_measurement_pins_convention(self):
        c, L = 1.5, 5
        y = np.full(40, c)
        ext = window_moment_vector(y, 10, L, extended=True)
        np.testing.assert_allclose(ext.second, c**2)
        trunc = window_moment_vector(y, 10, L, extended=False)
        np.testing.assert_allclose(trunc.second, c**2 * (L - np.arange(L)) / L)

    def test_anchor_range_enforced(self):
        y = np.zeros(20)
        window_moment_vector(y, 20 - 9, 5)
        with pytest.raises(ValueError):
            window_moment_vector(y, 20 - 8, 5)
        with pytest.raises(ValueError):
            window_moment_vector(y, -1, 5)

    def test_anchor_average_approximates_empirical_moments(self):
        rng = np.random.default_rng(13)
        N, L = 1000, 5
        y = rng.standard_normal(N)
        mean = window_mean(y, L).values
        emp = empirical_moments(y, L).vector.values
        bound = 2 * L * np.max(np.abs(y)) ** 3 * (2 * L / N)
        assert np.max(np.abs(mean - emp)) <= bound

    def test_anchor_mean_converges_to_model(self):
        # ~N^{-1/2} shrinkage of the gap to the population moments
        rng = np.random.default_rng(14)
        L, gamma, snr = 5, 0.2, 2.0
        x = rng.random(L)
        x /= np.linalg.norm(x)
        sigma2 = float(x @ x) / (L * snr)
        gaps = []
        for N in (10_000, 100_000, 1_000_000):
            spec = spec_for_density(N, L, gamma, sigma2, seed=N)
            meas = synthesize(x, spec)
            m0 = model_moments(Params(x, spec.gamma), NoiseModel(sigma2)).values
            mean = window_mean(meas.y, L).values
            gaps.append(np.max(np.abs(mean - m0)))
        assert gaps[0] > gaps[1] > gaps[2]
        assert 3 <= gaps[0] / gaps[2] <= 35  # ~sqrt(100) with sampling slack


class TestEstimateCovariance:
    def test_constant_measurement_gives_zero(self):
        S = estimate_covariance(np.full(60, 2.0), 3).S
        assert np.max(np.abs(S)) <= 1e-12

    def test_matches_two_pass_oracle_pure_noise(self):
        y = np.random.default_rng(15).standard_normal(400)
        est = estimate_covariance(y, 2, stride=1)
        ref, rows = covariance_oracle(y, 2, stride=1)
        assert est.window_count == rows.shape[0]
        assert np.max(np.abs(est.S - ref)) <= 1e-10

    def test_matches_oracle_with_stride_and_signal(self):
        rng = np.random.default_rng(16)
        x = rng.random(3)
        meas = synthesize(x, MeasurementSpec(N=300, L=3, p=8, sigma2=0.2, seed=2))
        est = estimate_covariance(meas.y, 3, stride=4)
        ref, _ = covariance_oracle(meas.y, 3, stride=4)
        assert np.max(np.abs(est.S - ref)) <= 1e-10

    def test_sequential_matches_block_path(self):
        y = np.random.default_rng(17).standard_normal(3000)
        a = estimate_covariance(y, 4, stride=3, sequential=True)
        b = estimate_covariance(y, 4, stride=3)
        assert a.window_count == b.window_count
        scale = np.max(np.abs(b.S))
        assert np.max(np.abs(a.S - b.S)) <= 1e-9 * scale

    def test_split_merge_equals_single_pass(self):
        rng = np.random.default_rng(18)
        rows = rng.standard_normal((501, 6))
        whole = CovarianceAccumulator(6)
        whole.update_batch(rows)
        left, right = CovarianceAccumulator(6), CovarianceAccumulator(6)
        left.update_batch(rows[:200])
        right.update_batch(rows[200:])
        left.merge(right)
        assert np.max(np.abs(left.covariance() - whole.covariance())) <= 1e-10
        np.testing.assert_allclose(left.mean, whole.mean, atol=1e-12)

    def test_sequential_updates_match_batch(self):
        rng = np.random.default_rng(19)
        rows = rng.standard_normal((100, 4))
        one = CovarianceAccumulator(4)
        for r in rows:
            one.update(r)
        ref = np.cov(rows, rowvar=False, ddof=1)
        assert np.max(np.abs(one.covariance() - ref)) <= 1e-12

    def test_psd_up_to_roundoff(self):
        y = np.random.default_rng(20).standard_normal(2000)
        S = estimate_covariance(y, 3, stride=2).S
        lam = np.linalg.eigvalsh(S)
        assert lam.min() >= -1e-10 * lam.max()
        assert np.array_equal(S, S.T)

    def test_too_few_windows_rejected(self):
        with pytest.raises(ValueError):
            estimate_covariance(np.zeros(40), 4, stride=10)


class TestWeightMatrix:
    def test_identity(self):
        wm = weight_matrix(np.eye(5))
        np.testing.assert_allclose(wm.W, np.eye(5), rtol=1e-9)
        assert wm.source == "inverse-covariance"

    def test_diagonal(self):
        # the eigenvalue floor lambda_max * 1e-10 perturbs 1/v by at most
        # cond(S) * 1e-10 relative, so keep the spread modest here
        v = np.array([0.5, 2.0, 4.0, 1.0])
        wm = weight_matrix(np.diag(v))
        np.testing.assert_allclose(np.diag(wm.W), 1 / v, rtol=1e-9)

    def test_positive_definite_on_noisy_measurement(self):
        rng = np.random.default_rng(21)
        x = rng.random(6)
        x /= np.linalg.norm(x)
        meas = synthesize(x, spec_for_density(50_000, 6, 0.2, 0.05, seed=4))
        est = estimate_covariance(meas.y, 6, stride=2)
        wm = weight_matrix(est)
        lam = np.linalg.eigvalsh(wm.W)
        assert lam.min() > 0
        assert np.allclose(wm.W, wm.W.T)

    def test_semidefinite_input_regularized(self):
        # rank-1 covariance still inverts through the eigenvalue floor
        u = np.arange(1.0, 5.0)
        S = np.outer(u, u)
        wm = weight_matrix(S)
        assert np.all(np.isfinite(wm.W))
        assert np.linalg.eigvalsh(wm.W).min() > 0
        assert wm.regularization > 0

    def test_rejects_non_finite(self):
        S = np.eye(3)
        S[1, 1] = np.nan
        with pytest.raises(ValueError):
            weight_matrix(S)


class TestMatrixFile:
    def test_roundtrip(self, tmp_path):
        M = np.random.default_rng(22).standard_normal((7, 7))
        path = tmp_path / "S.mat"
        write_matrix_file(path, M, L=3, stride=2)
        back, L, stride = read_matrix_file(path)
        assert (L, stride) == (3, 2)
        assert back.tobytes() == M.tobytes()

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "x.mat"
        path.write_bytes(b"????" + b"\x00" * 64)
        with pytest.raises(ValueError):
            read_matrix_file(path)
