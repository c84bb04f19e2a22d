import asyncio
import functools
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Optional

from src.lib.errors import ConfigError, OperationCancelled
from src.lib.logger import setup_logger

logger = setup_logger("sage_opt.runner")

THREADS_ENV = "SAGE_OPT_THREADS"


def threads_from_env(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {value}")
    return value


class ExperimentRunner:
    """
    ThreadPoolExecutor wrapper for CPU-bound experiment work (Monte Carlo chunks,
    trajectory ensembles). Results are always collected in submission order.
    """

    def __init__(
        self,
        max_workers: Optional[int] = None,
        shutdown_timeout: Optional[float] = None,
    ):
        self.max_workers = max_workers or threads_from_env()
        self.executor: Optional[ThreadPoolExecutor] = None
        self.shutdown_timeout = shutdown_timeout
        self.cancel_event = threading.Event()

    def __enter__(self):
        self.executor = ThreadPoolExecutor(max_workers=self.max_workers)
        logger.debug("ThreadPoolExecutor started (max_workers=%s)", self.max_workers)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.executor:
            if exc_type is not None:
                self.cancel_event.set()
            if self.shutdown_timeout is None:
                self.executor.shutdown(wait=True)
            else:
                t = threading.Thread(target=self.executor.shutdown, args=(True,))
                t.start()
                t.join(self.shutdown_timeout)
                if t.is_alive():
                    self.executor.shutdown(wait=False, cancel_futures=True)
        return False

    async def __aenter__(self):
        return self.__enter__()

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        if self.executor:
            if exc_type is not None:
                # 진행 중인 작업이 다음 확인 지점에서 멈추도록 신호
                self.cancel_event.set()
            if self.shutdown_timeout is None:
                await asyncio.to_thread(self.executor.shutdown, True)
            else:
                try:
                    await asyncio.wait_for(
                        asyncio.to_thread(self.executor.shutdown, True),
                        timeout=self.shutdown_timeout,
                    )
                except asyncio.TimeoutError:
                    self.executor.shutdown(wait=False, cancel_futures=True)
        return False

    def cancel(self) -> None:
        self.cancel_event.set()

    def check_cancelled(self) -> None:
        if self.cancel_event.is_set():
            raise OperationCancelled("experiment cancelled")

    async def run(self, fn: Callable[..., Any], *args, **kwargs) -> Any:
        """Run one CPU-bound call on the pool."""

        if self.executor is None:
            raise RuntimeError("ExperimentRunner must be entered before use")
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(
            self.executor, functools.partial(fn, *args, **kwargs)
        )

    async def map(self, fn: Callable[[Any], Any], items, on_done=None) -> list:
        """Run fn over items on the pool; results are returned in item order.

        `on_done` is called once per finished item (progress bars).
        """

        async def _one(item):
            self.check_cancelled()
            result = await self.run(fn, item)
            if on_done is not None:
                on_done()
            return result

        tasks = [asyncio.create_task(_one(item)) for item in items]
        try:
            return await asyncio.gather(*tasks)
        except BaseException:
            self.cancel_event.set()
            for t in tasks:
                t.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
            raise
