from collections import Counter

import numpy as np
import pytest

from ladderembed.dataio import SyntheticSpec, generate_synthetic
from ladderembed.errors import EmptyCombination
from ladderembed.losses import LossComponent, builtin_config, similarity_level
from ladderembed.mining import BatchSpec, enumerate_component_triplets, sample_batch
from ladderembed.rng import RngState

L, R = 0, 1


@pytest.fixture(scope="module")
def ds():
    return generate_synthetic(SyntheticSpec(2, 2, 5, 2, time_steps=4, channels=2))


class TestSampleBatch:
    def test_balanced(self, ds):
        batch, _ = sample_batch(ds, BatchSpec(8), RngState.from_seed(0))
        counts = Counter(map(tuple, batch.labels.tolist()))
        assert counts == {(0, 0): 2, (0, 1): 2, (1, 0): 2, (1, 1): 2}
        assert np.all(ds.is_train[batch.indices])

    def test_no_duplicates_when_pool_suffices(self, ds):
        batch, _ = sample_batch(ds, BatchSpec(20), RngState.from_seed(3))
        assert len(set(batch.indices.tolist())) == 20

    def test_with_replacement_when_pool_small(self, ds):
        batch, _ = sample_batch(ds, BatchSpec(40), RngState.from_seed(3))
        assert len(batch) == 40 and len(set(batch.indices.tolist())) <= 20

    def test_absent_combination(self, ds):
        with pytest.raises(EmptyCombination):
            sample_batch(ds, BatchSpec(2, ((0, 0), (5, 1))), RngState.from_seed(0))

    def test_restricted_combinations(self, ds):
        batch, _ = sample_batch(ds, BatchSpec(4, ((1, 0), (1, 1))), RngState.from_seed(0))
        assert set(map(tuple, batch.labels.tolist())) == {(1, 0), (1, 1)}

    def test_indivisible(self):
        with pytest.raises(ValueError):
            BatchSpec(5, ((0, 0), (0, 1)))

    def test_deterministic_and_advancing(self, ds):
        s = RngState.from_seed(9)
        a, s1 = sample_batch(ds, BatchSpec(8), s)
        b, _ = sample_batch(ds, BatchSpec(8), s)
        c, _ = sample_batch(ds, BatchSpec(8), s1)
        assert np.array_equal(a.indices, b.indices)
        assert not np.array_equal(a.indices, c.indices)

    def test_uniform_within_combination(self, ds):
        state = RngState.from_seed(1)
        hits = Counter()
        for _ in range(2000):
            batch, state = sample_batch(ds, BatchSpec(4), state)
            hits.update(batch.indices.tolist())
        pool = np.flatnonzero(ds.is_train & (ds.subjects == 0) & (ds.classes == 0))
        freq = np.array([hits[i] for i in pool]) / 2000
        assert np.allclose(freq, 1 / len(pool), atol=0.04)


class TestEnumerate:
    def test_example(self):
        T = enumerate_component_triplets([(1, L), (1, L), (1, R)], LossComponent(0.2, 1, "11", "10"))
        assert T.tolist() == [[0, 1, 2], [1, 0, 2]]

    def test_no_positive(self):
        T = enumerate_component_triplets([(1, L), (2, R), (3, L)], LossComponent(0.2, 1, "11", "00"))
        assert T.shape == (0, 3)

    def test_counts_and_levels(self, rs):
        labels = np.stack([rs.integers(0, 3, 14), rs.integers(0, 3, 14)], axis=1)
        for comp in builtin_config("d").components + builtin_config("a").components:
            T = enumerate_component_triplets(labels, comp)
            expect = 0
            for a in range(14):
                pos = sum(1 for j in range(14) if j != a and _match(labels[a], labels[j], comp.pos_level))
                neg = sum(1 for j in range(14) if j != a and _match(labels[a], labels[j], comp.neg_level))
                expect += pos * neg
            assert len(T) == expect
            assert T.tolist() == sorted(T.tolist())
            for a, p, n in T:
                assert len({a, p, n}) == 3
                assert _match(labels[a], labels[p], comp.pos_level)
                assert _match(labels[a], labels[n], comp.neg_level)

    def test_permutation_consistency(self, rs):
        labels = np.stack([rs.integers(0, 2, 9), rs.integers(0, 2, 9)], axis=1)
        perm = rs.permutation(9)
        comp = builtin_config("b").components[1]
        orig = {tuple(t) for t in enumerate_component_triplets(labels, comp).tolist()}
        permuted = enumerate_component_triplets(labels[perm], comp)
        assert {tuple(perm[t]) for t in permuted.tolist()} == orig


def _match(la, lb, pattern):
    level = similarity_level(la, lb)
    return all(p in ("*", s) for p, s in zip(pattern, level))
