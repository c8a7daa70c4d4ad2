import time

import numpy as np
import pytest

from dimaug.data.loader import Prefetcher, batch_indices, spawn_streams


class TestBatchIndices:
    def test_batches_cover_a_permutation(self, rng):
        batches = batch_indices(10, 4, rng)
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches)) == list(range(10))

    def test_short_tail_is_dropped(self, rng):
        batches = batch_indices(9, 4, rng)
        assert [len(b) for b in batches] == [4, 4]

    def test_min_batch_of_one_keeps_everything(self, rng):
        assert sum(len(b) for b in batch_indices(9, 4, rng, min_batch=1)) == 9


class TestPrefetcher:
    @pytest.mark.parametrize('depth', [0, 1, 3])
    def test_preserves_order(self, depth):
        def slow_square(x):
            time.sleep(0.001 * (5 - x))
            return x * x

        assert list(Prefetcher(range(5), slow_square, depth)) == [0, 1, 4, 9, 16]

    @pytest.mark.parametrize('depth', [0, 2])
    def test_producer_errors_reach_the_consumer(self, depth):
        def producer(x):
            if x == 2:
                raise RuntimeError('bad batch')
            return x

        seen = []
        with pytest.raises(RuntimeError, match='bad batch'):
            for value in Prefetcher(range(5), producer, depth):
                seen.append(value)
        assert seen == [0, 1]

    def test_early_exit_stops_the_producer(self):
        produced = []

        def producer(x):
            produced.append(x)
            return x

        for value in Prefetcher(range(1000), producer, depth=2):
            if value == 3:
                break
        assert len(produced) < 1000


class TestStreams:
    def test_streams_are_reproducible_and_distinct(self):
        a = [np.random.default_rng(s).random() for s in spawn_streams(5, 3)]
        b = [np.random.default_rng(s).random() for s in spawn_streams(5, 3)]
        assert a == b
        assert len(set(a)) == 3

    def test_accepts_seed_sequences(self):
        parent = np.random.SeedSequence(9)
        assert len(spawn_streams(parent, 2)) == 2
