import asyncio
import os
from concurrent.futures import ProcessPoolExecutor


def _worker_init():
    import torch

    torch.set_num_threads(1)


class RolloutPool:
    """Runs picklable jobs in worker processes, at most `workers` at a time.

    Each job resolves to ``{"ok": True, "data": ...}`` or
    ``{"ok": False, "error": ...}``; results keep the submission order.
    """

    def __init__(self, workers: int | None = None):
        if workers is None:
            workers = int(os.getenv("FARM_MAX_WORKERS", 1))
        self.workers = max(1, int(workers))
        self._semaphore = asyncio.Semaphore(self.workers)

    async def _run_one(self, executor, fn, job) -> dict:
        async with self._semaphore:
            try:
                if executor is None:
                    data = await asyncio.to_thread(fn, job)
                else:
                    loop = asyncio.get_running_loop()
                    data = await loop.run_in_executor(executor, fn, job)
                return {"ok": True, "data": data}
            except Exception as e:
                return {"ok": False, "error": f"{type(e).__name__}: {e}"}

    async def run(self, fn, jobs: list) -> list[dict]:
        if self.workers == 1:
            return [await self._run_one(None, fn, job) for job in jobs]
        with ProcessPoolExecutor(max_workers=self.workers, initializer=_worker_init) as executor:
            return await asyncio.gather(*(self._run_one(executor, fn, job) for job in jobs))


def run_jobs(fn, jobs: list, workers: int | None = None) -> list[dict]:
    async def _main():
        return await RolloutPool(workers).run(fn, jobs)

    return asyncio.run(_main())
