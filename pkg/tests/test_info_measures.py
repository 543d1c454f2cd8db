"""
Tests for the information measures.
"""

import pytest
import numpy as np

from src import info_measures
from src.errors import (
    DomainMismatch, SingularCovariance, SupportMismatch, UnknownAxis, ZeroMutualInformation
)
from src.models import DiscreteDist, GaussianChannel, GaussianDist, InfoKind, JointDist


def joint_xy(table, x=(0, 1), y=(0, 1)):
    return JointDist([("x", x), ("y", y)], np.asarray(table, dtype=float))


class TestDivergences:
    """Tests for kl and skl on finite distributions."""

    def test_kl_bernoulli(self):
        """Test D(Bern(1/2) || Bern(1/4)) against its closed form."""
        value = info_measures.kl(DiscreteDist.bernoulli(0.5), DiscreteDist.bernoulli(0.25))
        assert value == pytest.approx(0.5 * np.log(4.0 / 3.0), abs=1e-15)

    def test_kl_of_identical_is_zero(self):
        """Test D(p || p) = 0."""
        p = DiscreteDist.from_probs([0.1, 0.2, 0.7])
        assert info_measures.kl(p, p) == 0.0

    def test_kl_support_mismatch(self):
        """Test that absolute-continuity failures raise instead of returning inf."""
        with pytest.raises(SupportMismatch):
            info_measures.kl(DiscreteDist.bernoulli(0.5), DiscreteDist.bernoulli(0.0))

    def test_kl_zero_mass_is_ignored(self):
        """Test the 0 log 0 = 0 convention."""
        value = info_measures.kl(DiscreteDist.bernoulli(0.0), DiscreteDist.bernoulli(0.5))
        assert value == pytest.approx(np.log(2.0))

    def test_domain_mismatch(self):
        """Test that different outcome spaces are rejected."""
        p = DiscreteDist.from_probs([0.5, 0.5], outcomes=("a", "b"))
        with pytest.raises(DomainMismatch):
            info_measures.kl(p, DiscreteDist.bernoulli(0.5))

    def test_skl_is_symmetric(self):
        """Test symmetry of the Jeffreys divergence."""
        p, q = DiscreteDist.from_probs([0.1, 0.9]), DiscreteDist.from_probs([0.6, 0.4])
        assert info_measures.skl(p, q) == pytest.approx(info_measures.skl(q, p))

    def test_skl_bernoulli_value(self):
        """Test the Jeffreys divergence of Bern(1/2) and Bern(1/4)."""
        value = info_measures.skl(DiscreteDist.bernoulli(0.5), DiscreteDist.bernoulli(0.25))
        assert value == pytest.approx(0.274653, abs=1e-6)
        assert value == pytest.approx(0.5 * np.log(4.0 / 3.0) + 0.25 * np.log(0.5) + 0.75 * np.log(1.5), abs=1e-15)


class TestFiniteInformation:
    """Tests for mutual, lautum and symmetrized KL information."""

    def test_independent_joint_has_zero_information(self):
        """Test I = L = 0 for a product law."""
        joint = joint_xy(np.outer([0.3, 0.7], [0.6, 0.4]))
        terms = info_measures.info_terms(joint, "x", "y")
        assert terms.mutual == pytest.approx(0.0, abs=1e-15)
        assert terms.lautum == pytest.approx(0.0, abs=1e-15)

    def test_copy_channel(self):
        """Test I(X;X) = ln 2 for a fair bit, and that the lautum information is undefined."""
        joint = joint_xy([[0.5, 0.0], [0.0, 0.5]])
        assert info_measures.mutual_info(joint, "x", "y") == pytest.approx(np.log(2.0))
        with pytest.raises(SupportMismatch):
            info_measures.lautum_info(joint, "x", "y")

    def test_additivity_on_random_joints(self):
        """Test ISKL = I + L against a direct computation."""
        rng = np.random.default_rng(11)
        for _ in range(50):
            table = rng.dirichlet(np.ones(12)).reshape(3, 4)
            joint = joint_xy(table, x=(0, 1, 2), y=(0, 1, 2, 3))
            px, py = table.sum(axis=1), table.sum(axis=0)
            product = np.outer(px, py)
            direct = float(np.sum((table - product) * np.log(table / product)))
            terms = info_measures.info_terms(joint, "x", "y")
            assert terms.skl == pytest.approx(terms.mutual + terms.lautum, abs=1e-12)
            assert info_measures.skl_info(joint, "x", "y") == pytest.approx(direct, abs=1e-12)

    def test_conditional_information(self):
        """Test I(X;Y|Z) as the P_Z-average of per-slice informations."""
        rng = np.random.default_rng(3)
        table = rng.dirichlet(np.ones(8)).reshape(2, 2, 2)
        joint = JointDist([("x", (0, 1)), ("y", (0, 1)), ("z", (0, 1))], table)
        expected = 0.0
        for k in range(2):
            pz = table[:, :, k].sum()
            expected += pz * info_measures.mutual_info(joint_xy(table[:, :, k] / pz), "x", "y")
        value = info_measures.cond_info(joint, "x", "y", "z", InfoKind.MUTUAL)
        assert value == pytest.approx(expected, abs=1e-14)

    def test_grouped_axes(self):
        """Test that an axis group acts as one compound variable."""
        rng = np.random.default_rng(5)
        table = rng.dirichlet(np.ones(12)).reshape(2, 3, 2)
        joint = JointDist([("a", (0, 1)), ("b", (0, 1, 2)), ("c", (0, 1))], table)
        merged = JointDist([("ab", tuple(range(6))), ("c", (0, 1))], table.reshape(6, 2))
        assert info_measures.skl_info(joint, ("a", "b"), "c") == pytest.approx(
            info_measures.skl_info(merged, "ab", "c"), abs=1e-14
        )

    def test_unknown_axis(self):
        """Test rejection of unknown axis names."""
        joint = joint_xy(np.full((2, 2), 0.25))
        with pytest.raises(UnknownAxis):
            info_measures.mutual_info(joint, "x", "q")

    def test_information_ratio(self):
        """Test L/I on a dependent joint and its zero-information edge case."""
        joint = joint_xy([[0.4, 0.1], [0.1, 0.4]])
        terms = info_measures.info_terms(joint, "x", "y")
        assert info_measures.information_ratio(joint, "x", "y") == pytest.approx(terms.lautum / terms.mutual)
        with pytest.raises(ZeroMutualInformation):
            info_measures.information_ratio(joint_xy(np.full((2, 2), 0.25)), "x", "y")

    def test_nonnegativity_on_random_laws(self):
        """Test that every divergence and information measure is nonnegative on random full-support laws."""
        rng = np.random.default_rng(99)
        for _ in range(1000):
            n_x, n_y, n_z = (int(k) for k in rng.integers(2, 5, size=3))
            p = DiscreteDist.from_probs(rng.dirichlet(np.ones(n_x)))
            q = DiscreteDist.from_probs(rng.dirichlet(np.ones(n_x)))
            assert info_measures.kl(p, q) >= -1e-12
            assert info_measures.skl(p, q) >= -1e-12
            table = rng.dirichlet(np.ones(n_x * n_y * n_z)).reshape(n_x, n_y, n_z)
            joint = JointDist(
                [("x", tuple(range(n_x))), ("y", tuple(range(n_y))), ("z", tuple(range(n_z)))], table
            )
            for terms in (info_measures.info_terms(joint, "x", "y"), info_measures.info_terms(joint, "x", "y", "z")):
                assert min(terms.mutual, terms.lautum, terms.skl) >= -1e-12

    def test_constant_condition(self):
        """Test that conditioning on a one-point variable changes nothing."""
        rng = np.random.default_rng(12)
        table = rng.dirichlet(np.ones(9)).reshape(3, 3)
        joint = JointDist([("x", (0, 1, 2)), ("y", (0, 1, 2)), ("z", ("only",))], table[:, :, None])
        flat = joint_xy(table, x=(0, 1, 2), y=(0, 1, 2))
        for kind, unconditional in [
            (InfoKind.MUTUAL, info_measures.mutual_info),
            (InfoKind.LAUTUM, info_measures.lautum_info),
            (InfoKind.SKL, info_measures.skl_info),
        ]:
            assert info_measures.cond_info(joint, "x", "y", "z", kind) == pytest.approx(
                unconditional(flat, "x", "y"), abs=1e-14
            )

    def test_conditionally_independent(self):
        """Test zero conditional information for X and Y independent given Z, though dependent marginally."""
        given = np.array([[0.9, 0.1], [0.1, 0.9]])  # given[z] is the law of X (and of Y) given z
        table = 0.5 * np.einsum("zx,zy->xyz", given, given)
        joint = JointDist([("x", (0, 1)), ("y", (0, 1)), ("z", (0, 1))], table)
        for kind in InfoKind:
            assert info_measures.cond_info(joint, "x", "y", "z", kind) == pytest.approx(0.0, abs=1e-14)
        assert info_measures.mutual_info(joint, "x", "y") > 0.1


class TestConcavityGap:
    """Tests for the mixture behaviour of ISKL in the input marginal."""

    def test_binary_inputs_are_concave(self):
        """Test that mixing two input laws of a binary-input channel never lowers ISKL."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n_y = int(rng.integers(2, 5))
            channel = rng.dirichlet(np.ones(n_y), size=2)
            p0, p1 = rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(2))
            lam = float(rng.uniform())
            assert info_measures.skl_info_concavity_gap(channel, p0, p1, lam) >= -1e-10

    def test_two_input_directions_are_concave(self):
        """Test marginals that differ on two inputs of a larger channel."""
        rng = np.random.default_rng(7)
        for _ in range(200):
            channel = rng.dirichlet(np.ones(3), size=4)
            base = rng.dirichlet(np.ones(4))
            shift = min(base[0], base[1]) * rng.uniform()
            p0 = base.copy()
            p0[0] -= shift
            p0[1] += shift
            p1 = base.copy()
            p1[0] += shift
            p1[1] -= shift
            p0, p1 = p0 / p0.sum(), p1 / p1.sum()
            assert info_measures.skl_info_concavity_gap(channel, p0, p1, 0.5) >= -1e-10

    def test_three_input_mixture_can_lower_iskl(self):
        """Test a three-input channel where mixing lowers ISKL below the average."""
        w = np.array([0.5, 0.6, 0.99])
        channel = np.stack([w, 1.0 - w], axis=1)
        direction = np.array([-1.0, 1.2, -0.2])
        p0 = np.full(3, 1.0 / 3.0) + 0.25 * direction
        p1 = np.full(3, 1.0 / 3.0) - 0.25 * direction
        gap = info_measures.skl_info_concavity_gap(channel, p0, p1, 0.5)
        assert gap < -1e-4


class TestGaussianMeasures:
    """Tests for Gaussian KL and the Gaussian channel."""

    def test_gaussian_kl_scalar(self):
        """Test D(N(1, 2) || N(0, 1)) against its closed form."""
        value = info_measures.gaussian_kl(GaussianDist(1.0, 2.0), GaussianDist(0.0, 1.0))
        assert value == pytest.approx(0.5 * (2.0 + 1.0 - 1.0 - np.log(2.0)), abs=1e-14)

    def test_gaussian_kl_singular(self):
        """Test that a singular covariance is reported."""
        singular = GaussianDist(np.zeros(2), np.ones((2, 2)))
        with pytest.raises(SingularCovariance):
            info_measures.gaussian_kl(GaussianDist(np.zeros(2), np.eye(2)), singular)

    def test_scalar_channel(self):
        """Test ISKL = s_x/s_n and I = 0.5 ln(1 + s_x/s_n) for a scalar channel."""
        sx, sn = 2.0, 0.5
        info = info_measures.gaussian_channel_info(GaussianChannel(A=[[1.0]], input_cov=[[sx]], noise_cov=[[sn]]))
        assert info.iskl == pytest.approx(sx / sn, abs=1e-10)
        assert info.mutual == pytest.approx(0.5 * np.log(1.0 + sx / sn), abs=1e-10)
        assert info.mutual + info.lautum == pytest.approx(info.iskl, abs=1e-10)

    def test_non_gaussian_input(self):
        """Test that only the ISKL is reported for a non-Gaussian input."""
        channel = GaussianChannel(A=np.eye(2), input_cov=np.eye(2), noise_cov=2.0 * np.eye(2), input_gaussian=False)
        info = info_measures.gaussian_channel_info(channel)
        assert info.mutual is None and info.lautum is None
        assert info.iskl == pytest.approx(1.0)

    def test_gaussian_kl_worked_values(self):
        """Test a variance ratio of 2 and a unit mean shift."""
        wide = info_measures.gaussian_kl(GaussianDist(0.0, 2.0), GaussianDist(0.0, 1.0))
        assert wide == pytest.approx(0.5 * (2.0 - 1.0 - np.log(2.0)), abs=1e-15)
        shifted = info_measures.gaussian_kl(GaussianDist(1.0, 1.0), GaussianDist(0.0, 1.0))
        assert shifted == pytest.approx(0.5, abs=1e-15)

    def test_zero_channel(self):
        """Test that a channel with A = 0 carries no information."""
        info = info_measures.gaussian_channel_info(
            GaussianChannel(A=np.zeros((2, 3)), input_cov=np.eye(3), noise_cov=np.eye(2))
        )
        assert info.iskl == pytest.approx(0.0, abs=1e-15)
        assert info.mutual == pytest.approx(0.0, abs=1e-15)
        assert info.lautum == pytest.approx(0.0, abs=1e-15)

    def test_diagonal_channel(self):
        """Test per-coordinate signal-to-noise ratios 2 and 4 adding up."""
        channel = GaussianChannel(A=np.diag([1.0, 2.0]), input_cov=np.eye(2), noise_cov=np.diag([0.5, 1.0]))
        info = info_measures.gaussian_channel_info(channel)
        assert info.iskl == pytest.approx(6.0, abs=1e-12)
        assert info.mutual == pytest.approx(0.5 * (np.log(3.0) + np.log(5.0)), abs=1e-12)
        assert info.lautum == pytest.approx(6.0 - 0.5 * (np.log(3.0) + np.log(5.0)), abs=1e-12)
