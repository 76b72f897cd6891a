import numpy as np
import pytest

from agal.errors import (
    ConvergenceError,
    DegenerateResidualError,
    DegenerateScalingError,
    InputError,
)
from agal.spectrum import SpectralCovariance
from agal.targets import (
    TargetSpec,
    continuum_target,
    erc_weights,
    mode_risk_decomposition,
    named_target,
    residual_projection,
    sparse_aap_target,
    target_from_json,
    target_to_json,
)


def cov_of(matrix):
    return SpectralCovariance.from_matrix(np.asarray(matrix, dtype=float))


def two_asset(rho):
    return cov_of([[1.0, rho], [rho, 1.0]])


class TestContinuumSpecialCases:
    def test_equal_weight(self, spd_factory):
        cov = SpectralCovariance.from_matrix(spd_factory(7))
        t = continuum_target(cov, 0.0, 0.0, 0.0)
        assert t.weights == pytest.approx(np.full(7, 1 / 7), abs=1e-12)

    def test_equal_vol(self):
        cov = cov_of(np.diag([1.0, 4.0]))
        t = continuum_target(cov, 0.0, -1.0, 0.0, sigma=np.array([1.0, 2.0]))
        assert t.weights == pytest.approx([2 / 3, 1 / 3], abs=1e-12)

    def test_mvp_exchange_symmetry(self):
        for rho in (-0.5, 0.0, 0.7):
            t = continuum_target(two_asset(rho), 1.0)
            assert t.weights == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_market_cap(self):
        cov = cov_of(np.eye(3))
        caps = np.array([1.0, 2.0, 3.0])
        t = continuum_target(cov, 0.0, 0.0, 1.0, caps=caps)
        assert t.weights == pytest.approx(caps / caps.sum(), abs=1e-12)

    def test_scale_invariance(self, spd_factory):
        mat = spd_factory(6)
        caps = np.abs(np.random.default_rng(0).normal(2.0, 0.5, 6))
        for a, b, c in [(0.5, 0.0, 0.0), (1.0, 1.0, 0.0), (0.3, -1.0, 1.0)]:
            w1 = continuum_target(cov_of(mat), a, b, c, caps=caps).weights
            w2 = continuum_target(cov_of(17.3 * mat), a, b, c, caps=caps).weights
            assert np.abs(w1 - w2).max() < 1e-10

    def test_degenerate_scaling(self):
        cov = cov_of(np.eye(2))
        with pytest.raises(DegenerateScalingError):
            continuum_target(cov, 0.0, predictor=np.array([1.0, -1.0]))


class TestNamedTargets:
    def test_mvp_diag(self):
        t = named_target(TargetSpec("mvp"), cov_of(np.diag([1.0, 4.0])))
        assert t.weights == pytest.approx([4 / 5, 1 / 5], abs=1e-12)

    def test_mdp_diag(self):
        t = named_target(TargetSpec("mdp"), cov_of(np.diag([1.0, 4.0])))
        assert t.weights == pytest.approx([2 / 3, 1 / 3], abs=1e-12)

    def test_aap_identity(self):
        t = named_target(TargetSpec("aap"), cov_of(np.eye(4)))
        assert t.weights == pytest.approx([0.25] * 4, abs=1e-12)

    def test_named_matches_continuum_bitwise(self, spd_factory):
        cov = SpectralCovariance.from_matrix(spd_factory(5))
        caps = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        pairs = {
            "market_cap": (0.0, 0.0, 1.0),
            "equal_weight": (0.0, 0.0, 0.0),
            "equal_vol": (0.0, -1.0, 0.0),
            "mvp": (1.0, 0.0, 0.0),
            "mdp": (1.0, 1.0, 0.0),
            "aap": (0.5, 0.0, 0.0),
        }
        for kind, (a, b, c) in pairs.items():
            named = named_target(TargetSpec(kind), cov, caps=caps)
            cont = continuum_target(cov, a, b, c, caps=caps)
            assert np.array_equal(named.weights, cont.weights)

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            TargetSpec("magic")

    def test_json_round_trip(self, tmp_path, spd_factory):
        cov = SpectralCovariance.from_matrix(spd_factory(4))
        t = named_target(TargetSpec("aap"), cov)
        path = tmp_path / "t.json"
        target_to_json(path, t)
        back = target_from_json(path)
        assert np.allclose(back.weights, t.weights, atol=1e-15)
        assert back.spec.kind == "aap"


class TestErc:
    def test_identity(self):
        w = erc_weights(cov_of(np.eye(3)))
        assert w == pytest.approx([1 / 3] * 3, abs=1e-10)

    def test_diagonal_inverse_vol(self):
        w = erc_weights(cov_of(np.diag([1.0, 4.0])))
        assert w == pytest.approx([2 / 3, 1 / 3], abs=1e-10)

    def test_equal_contributions_random(self, spd_factory):
        cov = SpectralCovariance.from_matrix(spd_factory(4))
        w = erc_weights(cov)
        contrib = w * (cov.matrix @ w)
        assert np.abs(contrib - contrib.mean()).max() <= 1e-8 * contrib.mean()
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert (w > 0).all()

    def test_rejects_singular(self):
        with pytest.raises(InputError):
            erc_weights(cov_of(np.diag([1.0, 0.0])))

    def test_convergence_error_reports_residual(self, spd_factory):
        cov = SpectralCovariance.from_matrix(spd_factory(5))
        with pytest.raises(ConvergenceError) as err:
            erc_weights(cov, tol=1e-30, max_sweeps=2)
        assert err.value.residual is not None


class TestModeRiskDecomposition:
    def test_sums_to_total_variance(self, spd_factory):
        cov = SpectralCovariance.from_matrix(spd_factory(6))
        t = named_target(TargetSpec("aap"), cov)
        total = t.weights @ cov.matrix @ t.weights
        assert t.risk_contributions.sum() == pytest.approx(total, rel=1e-8)

    def test_aap_shares_follow_projections(self, spd_factory):
        cov = SpectralCovariance.from_matrix(spd_factory(5))
        t = named_target(TargetSpec("aap"), cov)
        proj = (cov.eigenvectors.T @ np.ones(5)) ** 2
        shares = t.risk_contributions / t.risk_contributions.sum()
        assert shares == pytest.approx(proj / proj.sum(), rel=1e-8)

    @staticmethod
    def spread_share(weights, rho):
        """Risk share carried by the spread direction (1,-1)/sqrt(2)."""
        spread_var = (1.0 - rho) * ((weights[0] - weights[1]) / np.sqrt(2.0)) ** 2
        cov = np.array([[1.0, rho], [rho, 1.0]])
        return spread_var / (weights @ cov @ weights)

    @pytest.mark.parametrize("rho", [-0.5, 0.0, 0.3, 0.9])
    def test_two_asset_markowitz_spread_share(self, rho):
        t = continuum_target(two_asset(rho), 1.0, predictor=np.array([1.0, 0.0]))
        assert self.spread_share(t.weights, rho) == pytest.approx((1.0 + rho) / 2.0, abs=1e-10)

    @pytest.mark.parametrize("rho", [-0.5, 0.0, 0.3, 0.9])
    def test_two_asset_agnostic_spread_share(self, rho):
        t = continuum_target(two_asset(rho), 0.5, predictor=np.array([1.0, 0.0]))
        assert self.spread_share(t.weights, rho) == pytest.approx(0.5, abs=1e-10)

    def test_equal_projection_predictor_spreads_evenly(self, spd_factory):
        cov = SpectralCovariance.from_matrix(spd_factory(5))
        predictor = cov.eigenvectors @ np.ones(5)      # equal overlap on each mode
        t = continuum_target(cov, 0.5, predictor=predictor)
        shares = t.risk_contributions / t.risk_contributions.sum()
        assert shares == pytest.approx([0.2] * 5, abs=1e-10)

    def test_degenerate_block_rotation_invariant(self):
        # exactly tied eigenvalues: the formula depends only on the projector
        cov = cov_of(np.diag([2.0, 1.0, 1.0]))
        t = named_target(TargetSpec("aap"), cov)
        expected = np.array([1.0 / np.sqrt(2.0), 1.0, 1.0])
        assert t.weights == pytest.approx(expected / expected.sum(), abs=1e-12)


class TestResidualProjection:
    def test_degenerate_when_ones_is_top_mode(self):
        n = 4
        ones = np.ones((n, n)) / n
        cov = cov_of(2.0 * ones + 0.5 * (np.eye(n) - ones))
        with pytest.raises(DegenerateResidualError):
            residual_projection(cov)

    def test_normalization(self, spd_factory):
        cov = SpectralCovariance.from_matrix(spd_factory(8))
        p = residual_projection(cov)
        assert p[0] == 0.0
        assert p[1:].sum() == pytest.approx(1.0, abs=1e-10)

    def test_random_rotation_statistics(self):
        rng = np.random.default_rng(17)
        n, trials = 200, 60
        samples = []
        for _ in range(trials):
            q, _ = np.linalg.qr(rng.normal(size=(n, n)))
            cov = SpectralCovariance.from_matrix((q * np.geomspace(10, 1, n)) @ q.T)
            samples.append(residual_projection(cov)[1:])
        flat = np.concatenate(samples)
        assert flat.mean() == pytest.approx(1.0 / n, rel=0.05)
        # one-sigma upper band of the squared overlaps
        band = (1.0 + np.sqrt(2.0)) / n
        assert flat.mean() + flat.std() == pytest.approx(band, rel=0.1)


class TestSparseAap:
    def test_full_fraction_equals_aap(self, spd_factory):
        for _ in range(3):
            cov = SpectralCovariance.from_matrix(spd_factory(9))
            sparse = sparse_aap_target(cov, 1.0)
            aap = named_target(TargetSpec("aap"), cov)
            assert np.abs(sparse.weights - aap.weights).max() < 1e-10

    def test_single_mode_diagonal(self):
        cov = cov_of(np.diag([4.0, 2.0, 1.0]))
        t = sparse_aap_target(cov, 1e-9)       # ceil -> 1 mode
        assert np.flatnonzero(np.abs(t.weights) > 1e-12).tolist() == [0]

    def test_k_star_count_five_percent(self):
        n = 500
        cov = cov_of(np.diag(np.linspace(2.0, 1.0, n)))
        t = sparse_aap_target(cov, 0.05)
        assert int((np.abs(t.weights) > 1e-15).sum()) == 25

    def test_requires_positive_spectrum(self):
        cov = cov_of(np.diag([1.0, 0.0]))
        with pytest.raises(InputError):
            sparse_aap_target(cov, 1.0)
