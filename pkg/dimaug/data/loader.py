"""Batch ordering and a bounded prefetch queue.

A single producer thread prepares batches ahead of the training loop; the queue preserves
production order, so results do not depend on thread timing.
"""

import queue
import threading
from typing import Callable, Iterable, Iterator, List, TypeVar, Union

import numpy as np
from loguru import logger


T = TypeVar('T')
_DONE = object()


def batch_indices(n: int, batch_size: int, rng: np.random.Generator, min_batch: int = 2) -> List[np.ndarray]:
    """Shuffle ``range(n)`` and cut it into batches; a trailing batch below ``min_batch`` is dropped."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in batches if len(b) >= min_batch]


class Prefetcher(Iterable[T]):
    """Iterate ``producer(item)`` for each work item with up to ``depth`` results buffered.

    ``depth`` 0 runs the producer inline.
    """

    def __init__(self, items: Iterable, producer: Callable[..., T], depth: int = 2):
        """Store the work items and the function that turns each into a batch."""
        self.items = items
        self.producer = producer
        self.depth = depth

    def __iter__(self) -> Iterator[T]:
        if self.depth <= 0:
            for item in self.items:
                yield self.producer(item)
            return
        buffer: queue.Queue = queue.Queue(maxsize=self.depth)
        stop = threading.Event()

        def run() -> None:
            try:
                for item in self.items:
                    if stop.is_set():
                        return
                    buffer.put(self.producer(item))
                buffer.put(_DONE)
            except BaseException as e:  # surfaced on the consumer side
                logger.exception(f'Error producing batch: {str(e)}')
                buffer.put(e)

        worker = threading.Thread(target=run, name='dimaug-prefetch', daemon=True)
        worker.start()
        try:
            while True:
                result = buffer.get()
                if result is _DONE:
                    break
                if isinstance(result, BaseException):
                    raise result
                yield result
        finally:
            stop.set()
            while worker.is_alive():
                try:
                    buffer.get_nowait()
                except queue.Empty:
                    worker.join(timeout=0.05)


def spawn_streams(seed: Union[int, np.random.SeedSequence, None], n: int) -> List[np.random.SeedSequence]:
    """Split one seed into ``n`` independent child sequences."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return root.spawn(n)
