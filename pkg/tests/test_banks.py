import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atdoc.autonet import Layer, NetParams, NetSpec
from atdoc.banks import (
    CentroidBank,
    InstanceBank,
    bank_balanced_read,
    bank_init,
    bank_write,
    centroid_update,
    snapshot_json,
)


def linear_probe_net(head_w, head_b):
    # G is the identity on nonnegative 2-D inputs; F is given
    spec = NetSpec(2, 2, 2, 2)
    return NetParams(
        spec,
        [
            Layer(np.eye(2), np.zeros(2)),
            Layer(np.eye(2), np.zeros(2)),
            Layer(np.asarray(head_w, float), np.asarray(head_b, float)),
        ],
    )


class TestCentroidUpdate:
    def test_single_blend(self):
        bank = CentroidBank(np.array([[1.0, 0.0], [5.0, 5.0]]), gamma=0.1)
        centroid_update(bank, np.array([[0.0, 1.0]]), [0])
        np.testing.assert_allclose(bank.centroids[0], [0.9, 0.1], atol=1e-15)

    def test_absent_class_untouched(self):
        bank = CentroidBank(np.array([[1.0, 0.0], [5.0, 5.0]]), gamma=0.1)
        before = bank.centroids[1].copy()
        centroid_update(bank, np.array([[0.0, 1.0], [2.0, 2.0]]), [0, 0])
        assert bank.centroids[1].tobytes() == before.tobytes()

    def test_batch_mean_is_used(self):
        bank = CentroidBank(np.zeros((2, 2)), gamma=0.5)
        centroid_update(bank, np.array([[2.0, 0.0], [0.0, 2.0], [9.0, 9.0]]), [0, 0, 1])
        np.testing.assert_allclose(bank.centroids, [[0.5, 0.5], [4.5, 4.5]])

    def test_geometric_decay(self):
        rng = np.random.default_rng(0)
        c0 = rng.standard_normal(4)
        v = rng.standard_normal(4)
        for gamma in (0.1, 0.3, 1.0):
            bank = CentroidBank(np.vstack([c0, np.zeros(4)]), gamma=gamma)
            for n in range(1, 11):
                centroid_update(bank, v[None, :], [0])
                expected = (1 - gamma) ** n * np.linalg.norm(c0 - v)
                assert abs(np.linalg.norm(bank.centroids[0] - v) - expected) < 1e-10

    def test_uninitialized_adopts_first_mean(self):
        bank = CentroidBank(np.ones((2, 2)), gamma=0.1, initialized=[True, False])
        centroid_update(bank, np.array([[3.0, -1.0]]), [1])
        np.testing.assert_array_equal(bank.centroids[1], [3.0, -1.0])
        assert bank.initialized[1]
        centroid_update(bank, np.array([[0.0, 0.0]]), [1])
        np.testing.assert_allclose(bank.centroids[1], [2.7, -0.9])

    def test_dim_mismatch(self):
        bank = CentroidBank(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            centroid_update(bank, np.zeros((1, 2)), [0])

    def test_label_out_of_range(self):
        bank = CentroidBank(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            centroid_update(bank, np.zeros((1, 3)), [2])

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-100, 100), min_size=3, max_size=3),
        st.lists(st.lists(st.floats(-100, 100), min_size=3, max_size=3), min_size=1, max_size=6),
        st.floats(0.01, 1.0),
    )
    def test_convex_combination_bound(self, old, batch, gamma):
        bank = CentroidBank(np.array([old]), gamma=gamma)
        batch = np.array(batch)
        centroid_update(bank, batch, [0] * len(batch))
        bound = max(np.linalg.norm(old), np.linalg.norm(batch.mean(axis=0)))
        assert np.linalg.norm(bank.centroids[0]) <= bound * (1 + 1e-12) + 1e-12


class TestBankInit:
    def test_confident_two_class(self):
        net = linear_probe_net(10 * np.eye(2), [0, 0])
        x = np.array([[1.0, 0.0], [0.0, 2.0]])
        cbank, ibank = bank_init(x, net)
        np.testing.assert_array_equal(cbank.centroids, x)
        assert cbank.initialized.all()
        assert len(ibank) == 2

    def test_empty_class_gets_global_mean(self):
        net = linear_probe_net(np.zeros((2, 2)), [10, 0])
        x = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 1.0]])
        cbank, ibank = bank_init(x, net)
        np.testing.assert_allclose(cbank.centroids[0], x.mean(axis=0))
        np.testing.assert_allclose(cbank.centroids[1], x.mean(axis=0))
        assert cbank.initialized.tolist() == [True, False]
        assert len(ibank) == 3

    def test_sharpened_values_stored(self):
        net = linear_probe_net(np.eye(2), [0, 0])
        x = np.array([[1.0, 0.0], [0.5, 0.5]])
        _, ibank = bank_init(x, net, temperature=0.5)
        e = np.exp(1.0)
        np.testing.assert_allclose(ibank.raw_sharp[0], [(e / (e + 1)) ** 2, (1 / (e + 1)) ** 2])
        np.testing.assert_allclose(ibank.raw_sharp[1], [0.25, 0.25])

    def test_source_rows_appended(self):
        net = linear_probe_net(np.eye(2), [0, 0])
        cbank, ibank = bank_init(
            np.ones((3, 2)), net, extra_x=np.ones((2, 2)), extra_ids=[10, 11]
        )
        assert len(ibank) == 5
        assert ibank.index[10] == 3 and ibank.index[11] == 4


class TestInstanceBank:
    def make(self, n=3, k=2, T=0.5):
        return InstanceBank.empty(range(n), 2, k, T)

    def test_write_then_read(self):
        bank = self.make(T=1.0)
        f = np.array([[0.25, -3.0]])
        p = np.array([[0.3, 0.7]])
        bank_write(bank, [1], f, p)
        assert bank.features[1].tobytes() == f[0].tobytes()
        assert bank.raw_sharp[1].tobytes() == p[0].tobytes()

    def test_squaring(self):
        bank = self.make(T=0.5)
        bank_write(bank, [0], [[0.0, 1.0]], [[0.8, 0.2]])
        np.testing.assert_allclose(bank.raw_sharp[0], [0.64, 0.04], atol=1e-15)

    def test_identity_temperature(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(4), size=5)
        bank = InstanceBank.empty(range(5), 3, 4, 1.0)
        bank_write(bank, range(5), rng.standard_normal((5, 3)), p)
        assert np.array_equal(bank.raw_sharp, p)

    def test_unknown_id(self):
        with pytest.raises(KeyError, match="unknown sample id"):
            bank_write(self.make(), [7], [[1.0, 1.0]], [[0.5, 0.5]])

    def test_no_moving_average(self):
        bank = self.make(T=1.0)
        bank_write(bank, [0], [[1.0, 1.0]], [[0.9, 0.1]])
        bank_write(bank, [0], [[2.0, 2.0]], [[0.2, 0.8]])
        np.testing.assert_array_equal(bank.raw_sharp[0], [0.2, 0.8])
        np.testing.assert_array_equal(bank.features[0], [2.0, 2.0])


class TestBalancedRead:
    def test_single_sample(self):
        bank = InstanceBank.empty([0], 2, 3, 0.5)
        bank_write(bank, [0], [[1.0, 0.0]], [[0.2, 0.5, 0.3]])
        np.testing.assert_array_equal(bank_balanced_read(bank), [[1.0, 1.0, 1.0]])

    def test_two_samples(self):
        bank = InstanceBank.empty([0, 1], 2, 2, 0.5)
        bank_write(bank, [0, 1], np.eye(2), [[0.8, 0.2], [0.2, 0.8]])
        out = bank_balanced_read(bank)
        np.testing.assert_allclose(out, [[0.64 / 0.68, 0.04 / 0.68], [0.04 / 0.68, 0.64 / 0.68]])
        np.testing.assert_allclose(out[0], [0.9412, 0.0588], atol=1e-4)

    def test_uniform(self):
        n, k = 7, 3
        bank = InstanceBank.empty(range(n), 2, k, 0.5)
        bank_write(bank, range(n), np.ones((n, 2)), np.full((n, k), 1 / k))
        np.testing.assert_allclose(bank_balanced_read(bank), 1 / n, atol=1e-15)

    def test_zero_column(self):
        bank = InstanceBank.empty([0], 2, 2, 0.5)
        bank_write(bank, [0], [[1.0, 0.0]], [[1.0, 0.0]])
        with pytest.raises(ValueError, match="class has zero total mass"):
            bank_balanced_read(bank)

    def test_random_column_sums(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 501))
            k = int(rng.integers(2, 11))
            T = float(rng.choice([0.5, 1.0, 0.25]))
            bank = InstanceBank.empty(range(n), 4, k, T)
            bank_write(bank, range(n), rng.standard_normal((n, 4)), rng.dirichlet(np.ones(k), n))
            sums = bank_balanced_read(bank).sum(axis=0)
            assert np.all(np.abs(sums - 1.0) < 1e-10)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        bank = InstanceBank.empty(range(10), 3, 3, 0.5)
        f = rng.standard_normal((10, 3))
        p = rng.dirichlet(np.ones(3), 10)
        bank_write(bank, range(10), f, p)
        first = bank_balanced_read(bank)
        bank_write(bank, range(10), f, p)
        assert np.array_equal(first, bank_balanced_read(bank))


def test_snapshot_is_json():
    cbank = CentroidBank(np.eye(2))
    ibank = InstanceBank.empty([4, 9], 2, 2)
    doc = json.loads(snapshot_json(cbank, ibank))
    assert doc["centroid_bank"]["centroids"] == [[1.0, 0.0], [0.0, 1.0]]
    assert doc["instance_bank"]["ids"] == [4, 9]
