"""
Tests for the super-task Gibbs algorithm.
"""

import itertools
import math

import pytest
import numpy as np

from src import super_task
from src.gibbs_core import gibbs_posterior
from src.errors import LossRangeViolation, ShapeMismatch, StateSpaceTooLarge, ZeroGamma
from src.models import DiscreteDist, EnergySpec, Masks, SuperInstance, SuperSample


TOL = 1e-9


def with_loss(inst, loss, gamma=None):
    return SuperInstance(
        sample_space=inst.sample_space,
        tasks=inst.tasks,
        task_prior=inst.task_prior,
        u_space=inst.u_space,
        w_space=inst.w_space,
        loss=loss,
        gamma=inst.gamma if gamma is None else gamma,
        prior_u=inst.prior_u,
        prior_w=inst.prior_w,
        m=inst.m,
        n=inst.n,
    )


def make_super_instance(seed, m, n, gamma=1.0):
    rng = np.random.default_rng(seed)

    def simplex(size):
        p = rng.dirichlet(np.ones(size)) + 1e-2
        return p / p.sum()

    return SuperInstance(
        sample_space=(0, 1),
        tasks=[DiscreteDist((0, 1), simplex(2)) for _ in range(2)],
        task_prior=DiscreteDist.from_probs(simplex(2)),
        u_space=(0, 1),
        w_space=(0, 1),
        loss=rng.uniform(0.0, 1.0, size=(2, 2, 2)),
        gamma=gamma,
        prior_u=simplex(2),
        prior_w=simplex(2),
        m=m,
        n=n,
    )


def unrolled_losses(inst):
    """The six expected losses by a plain sum over every (z, s, s_hat, u, w) cell."""
    m, n, g = inst.m, inst.n, inst.gamma
    tasks = [task.probs for task in inst.tasks]
    tau = inst.task_prior.probs
    n_u, n_w = len(inst.u_space), len(inst.w_space)
    ws_all = list(itertools.product(range(n_w), repeat=m))

    def risk(u, w, z, cols):
        return sum(inst.loss[u, w, z[j][cols[j]]] for j in range(n)) / n

    totals = dict.fromkeys(["hat", "bar", "tilde", "pop", "cross_train", "cross_test"], 0.0)
    n_masks = 2 ** (2 * m * n) * 2 ** m
    for flat in itertools.product(range(2), repeat=n * 4 * m):
        z = [flat[j * 4 * m:(j + 1) * 4 * m] for j in range(n)]
        p_z = 1.0
        for grp in range(2 * m):
            p_z *= sum(
                tau[t] * math.prod(tasks[t][z[j][2 * grp + c]] for j in range(n) for c in range(2))
                for t in range(len(tasks))
            )
        for s_flat in itertools.product(range(2), repeat=n * 2 * m):
            s = [s_flat[j * 2 * m:(j + 1) * 2 * m] for j in range(n)]
            for s_hat in itertools.product(range(2), repeat=m):
                cols = {}
                for i in range(m):
                    tr, te = 2 * i + s_hat[i], 2 * i + 1 - s_hat[i]
                    cols[("train_s", i)] = [2 * tr + s[j][tr] for j in range(n)]
                    cols[("train_not_s", i)] = [2 * tr + 1 - s[j][tr] for j in range(n)]
                    cols[("test_s", i)] = [2 * te + s[j][te] for j in range(n)]
                    cols[("test_not_s", i)] = [2 * te + 1 - s[j][te] for j in range(n)]

                def joint(u, ws, part):
                    return sum(risk(u, ws[i], z, cols[(part, i)]) for i in range(m)) / m

                train = {
                    (u, ws): inst.prior_u[u] * math.prod(inst.prior_w[w] for w in ws)
                    * math.exp(-g * joint(u, ws, "train_s"))
                    for u in range(n_u) for ws in ws_all
                }
                norm = sum(train.values())
                weight = p_z / n_masks
                for (u, ws), value in train.items():
                    p = weight * value / norm
                    totals["hat"] += p * joint(u, ws, "train_s")
                    totals["bar"] += p * joint(u, ws, "train_not_s")
                    totals["cross_train"] += p * joint(u, ws, "test_s")
                    totals["cross_test"] += p * joint(u, ws, "test_not_s")
                for u in range(n_u):
                    p_u = weight * sum(train[(u, ws)] for ws in ws_all) / norm
                    per_task = []
                    for i in range(m):
                        cond = [
                            inst.prior_w[w] * math.exp(-(g / m) * risk(u, w, z, cols[("test_s", i)]))
                            for w in range(n_w)
                        ]
                        per_task.append([c / sum(cond) for c in cond])
                    for ws in ws_all:
                        q = p_u * math.prod(per_task[i][ws[i]] for i in range(m))
                        totals["tilde"] += q * joint(u, ws, "test_s")
                        totals["pop"] += q * joint(u, ws, "test_not_s")
    return totals


class TestSelections:
    """Tests for mask-driven selection of the super-sample."""

    def test_hand_example(self):
        """Test the four selections of a labelled 1 x 4 super-sample."""
        z = np.array([[0, 1, 2, 3]])
        sel = super_task.select_training(z, Masks(s_hat=[0], s=[[1, 0]]))
        assert sel.train_s.tolist() == [[1]]
        assert sel.train_not_s.tolist() == [[0]]
        assert sel.test_s.tolist() == [[2]]
        assert sel.test_not_s.tolist() == [[3]]

    def test_accepts_super_sample(self):
        """Test that a SuperSample and a raw array select the same cells."""
        z = np.arange(16).reshape(2, 8)
        masks = Masks(s_hat=[1, 0], s=[[0, 1, 1, 0], [1, 1, 0, 0]])
        raw = super_task.select_training(z, masks)
        wrapped = super_task.select_training(SuperSample(z, m=2, n=2), masks)
        for a, b in zip(raw, wrapped):
            np.testing.assert_array_equal(a, b)

    def test_selections_partition_the_sample(self):
        """Test that the four selections cover every cell exactly once."""
        z = np.arange(24).reshape(2, 12)
        masks = Masks(s_hat=[1, 0, 1], s=[[0, 1, 1, 0, 1, 1], [1, 0, 0, 1, 0, 1]])
        sel = super_task.select_training(z, masks)
        cells = np.concatenate([part.reshape(-1) for part in sel])
        assert sorted(cells.tolist()) == list(range(24))

    def test_mirror_preserves_selections(self):
        """Test that mirroring the sample and flipping both masks selects the same values."""
        rng = np.random.default_rng(8)
        for _ in range(20):
            m, n = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            z = rng.integers(0, 100, size=(n, 4 * m))
            masks = Masks(s_hat=rng.integers(0, 2, size=m), s=rng.integers(0, 2, size=(n, 2 * m)))
            z_mirror, masks_mirror = super_task.mirror(z, masks)
            for a, b in zip(super_task.select_training(z, masks), super_task.select_training(z_mirror, masks_mirror)):
                np.testing.assert_array_equal(a, b)
            z_back, masks_back = super_task.mirror(z_mirror, masks_mirror)
            np.testing.assert_array_equal(z_back, z)
            np.testing.assert_array_equal(masks_back.s, masks.s)
            np.testing.assert_array_equal(masks_back.s_hat, masks.s_hat)

    def test_shape_mismatch(self):
        """Test rejection of masks that do not fit the super-sample."""
        with pytest.raises(ShapeMismatch):
            super_task.select_training(np.zeros((1, 4), dtype=int), Masks(s_hat=[0, 1], s=[[0, 1]]))
        with pytest.raises(ShapeMismatch):
            super_task.select_training(np.zeros((1, 5), dtype=int), Masks(s_hat=[0], s=[[0, 1]]))


class TestPosteriors:
    """Tests for the training and held-out posteriors."""

    def test_train_posterior(self, tiny_super_instance):
        """Test that the training posterior is a distribution over (u, w)."""
        post = super_task.train_posterior(tiny_super_instance, np.array([[0, 1, 1, 0]]), Masks([0], [[1, 0]]))
        assert post.outcomes == ((0, 0), (0, 1), (1, 0), (1, 1))
        assert post.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_held_out_posterior(self, tiny_super_instance):
        """Test the base-learner posterior of the held-out tasks for each u."""
        for u in tiny_super_instance.u_space:
            post = super_task.test_posterior(tiny_super_instance, np.array([[0, 1, 1, 0]]), Masks([0], [[1, 0]]), u)
            assert isinstance(post, DiscreteDist)
            assert post.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_super_sample_law(self, random_super_instance):
        """Test that the super-sample law is normalized."""
        inst = random_super_instance(3, n=2)
        configs, probs = super_task.super_sample_law(inst)
        assert configs.shape == (2 ** 8, 2, 4)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


class TestTheoremTwo:
    """Tests for the conditional ISKL identities."""

    def test_tiny_instance(self, tiny_super_instance):
        """Test all four exact identities on the tiny instance."""
        terms = super_task.theorem2_terms(tiny_super_instance)
        for residual in terms["residuals"].values():
            assert abs(residual) <= TOL

    def test_random_instances(self, random_super_instance):
        """Test the identities, orderings and the generalization expression on random instances."""
        for seed in range(20):
            inst = random_super_instance(seed)
            tables = super_task.enumerate_super_task(inst)
            terms = super_task.theorem2_terms(inst, tables=tables)
            lo = tables.losses
            for residual in terms["residuals"].values():
                assert abs(residual) <= TOL
            assert lo.bar - lo.hat >= -TOL
            assert lo.cross_train - lo.hat >= -TOL
            assert lo.pop - lo.tilde >= -TOL
            assert terms["gen_difference"] == pytest.approx(lo.cross_train - lo.tilde, abs=TOL)

    def test_printed_forms_for_w_free_loss(self, tiny_super_instance):
        """Test that tilde and pop stand in for the cross losses when the loss ignores w."""
        base = np.random.default_rng(2).uniform(size=(2, 1, 2))
        inst = with_loss(tiny_super_instance, np.repeat(base, 2, axis=1))
        terms = super_task.theorem2_terms(inst)
        assert terms["printed_forms_hold"]
        assert terms["gen_difference"] == pytest.approx(0.0, abs=TOL)

    def test_constant_loss(self, tiny_super_instance):
        """Test that a constant loss carries no information."""
        inst = with_loss(tiny_super_instance, np.full((2, 2, 2), 0.5))
        terms = super_task.theorem2_terms(inst)
        for value in terms["iskl_terms"].values():
            assert value == pytest.approx(0.0, abs=1e-12)
        assert len(set(round(v, 12) for v in terms["losses"].values())) == 1

    def test_zero_gamma(self, tiny_super_instance):
        """Test that the loss identities refuse gamma = 0."""
        with pytest.raises(ZeroGamma):
            super_task.theorem2_terms(with_loss(tiny_super_instance, tiny_super_instance.loss, gamma=0.0))

    def test_cap(self, tiny_super_instance):
        """Test the state cap on the super-task joint."""
        with pytest.raises(StateSpaceTooLarge):
            super_task.enumerate_super_task(tiny_super_instance, cap=10)


class TestIntermediateBounds:
    """Tests for the task-level and sample-level bounds."""

    def test_slacks_nonnegative(self, tiny_super_instance, random_super_instance):
        """Test both slacks on the tiny and random instances."""
        for inst in [tiny_super_instance] + [random_super_instance(50 + seed) for seed in range(10)]:
            slacks = super_task.hellstrom_intermediate_bounds(inst)
            assert slacks["task_slack"] >= -TOL
            assert slacks["sample_slack"] >= -TOL

    def test_constant_loss(self, tiny_super_instance):
        """Test that slacks equal the bounds when nothing is learned."""
        slacks = super_task.hellstrom_intermediate_bounds(with_loss(tiny_super_instance, np.full((2, 2, 2), 0.3)))
        assert slacks["task_slack"] == pytest.approx(slacks["task_bound"], abs=1e-12)
        assert slacks["sample_slack"] == pytest.approx(slacks["sample_bound"], abs=1e-12)

    def test_loss_range(self, tiny_super_instance):
        """Test rejection of losses outside [0, 1]."""
        with pytest.raises(LossRangeViolation):
            super_task.hellstrom_intermediate_bounds(with_loss(tiny_super_instance, 2.0 * tiny_super_instance.loss))


class TestUnrolledOracle:
    """Tests of the vectorized enumeration against an unrolled sum."""

    @pytest.mark.parametrize("m, n, seed", [(1, 1, 0), (1, 2, 1), (2, 1, 2)])
    def test_four_losses(self, m, n, seed):
        """Test all six expected losses, including the two-task layout."""
        inst = make_super_instance(seed, m, n, gamma=1.5)
        expected = unrolled_losses(inst)
        for name, value in super_task.four_losses(inst).as_dict().items():
            assert value == pytest.approx(expected[name], abs=1e-12), name

    def test_two_task_identities(self):
        """Test the conditional ISKL identities with m = 2."""
        terms = super_task.theorem2_terms(make_super_instance(4, 2, 1, gamma=2.0))
        for residual in terms["residuals"].values():
            assert abs(residual) <= TOL

    def test_zero_gamma_learns_nothing(self):
        """Test that the prior posterior scores training and held-out columns alike."""
        for m, n in [(1, 1), (1, 2), (2, 1)]:
            lo = super_task.four_losses(make_super_instance(10 + m + n, m, n, gamma=0.0))
            assert lo.hat == pytest.approx(lo.bar, abs=1e-12)
            assert lo.tilde == pytest.approx(lo.pop, abs=1e-12)

    def test_train_posterior_is_gibbs(self):
        """Test the training posterior against the generic Gibbs posterior of the joint risk."""
        inst = make_super_instance(6, 2, 1, gamma=1.3)
        z = np.array([[0, 1, 1, 0, 1, 1, 0, 0]])
        masks = Masks(s_hat=[1, 0], s=[[0, 1, 1, 0]])
        sel = super_task.select_training(z, masks)
        labels, energy, prior = [], [], []
        for u in inst.u_space:
            for ws in itertools.product(inst.w_space, repeat=inst.m):
                labels.append((u,) + ws)
                energy.append(np.mean([inst.loss[u, w, sel.train_s[i]].mean() for i, w in enumerate(ws)]))
                prior.append(inst.prior_u[u] * np.prod([inst.prior_w[w] for w in ws]))
        expected = gibbs_posterior(EnergySpec(labels, np.array(energy)), DiscreteDist(labels, prior), inst.gamma, 0)
        post = super_task.train_posterior(inst, z, masks)
        assert post.outcomes == expected.outcomes
        np.testing.assert_allclose(post.probs, expected.probs, atol=1e-12)
