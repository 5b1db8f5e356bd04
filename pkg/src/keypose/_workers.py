import logging
from threading import Thread

logger = logging.getLogger(__name__)


def run_chunked(task: callable, n_items: int, workers: int = 1, chunk_size: int = 4096) -> list:
    """Run ``task(start, stop)`` over consecutive index ranges on worker threads.

    Each worker owns the chunks ``k, k + workers, k + 2*workers, ...`` and writes its results into a
    preallocated slot per chunk, so the returned list is ordered by chunk and independent of
    the worker count.

    Args:
        task (callable): Called with ``(start, stop)``; its return value fills the chunk's slot.
        n_items (int): Total number of items.
        workers (int): Number of threads. 1 runs inline on the calling thread.
        chunk_size (int): Items per chunk.
    Returns:
        list: One result per chunk, in index order.
    Raises:
        Exception: The first exception raised by any chunk, in chunk order, after all workers joined.
    """
    bounds = [(start, min(start + chunk_size, n_items)) for start in range(0, n_items, chunk_size)]
    slots = [None] * len(bounds)
    errors = [None] * len(bounds)

    def _worker(offset):
        for k in range(offset, len(bounds), workers):
            try:
                slots[k] = task(*bounds[k])
            except Exception as e:
                errors[k] = e
                return

    workers = max(1, min(workers, len(bounds)))
    if workers == 1:
        _worker(0)
    else:
        threads = [Thread(target=_worker, args=(k,), daemon=True) for k in range(workers)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        logger.debug("Joined %d workers over %d chunks", workers, len(bounds))

    for error in errors:
        if error is not None:
            raise error
    return slots
