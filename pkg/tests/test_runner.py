import threading
import time

import pytest

from src.core.experiments.runner import ExperimentRunner, threads_from_env
from src.lib.errors import ConfigError, OperationCancelled


def test_threads_from_env(monkeypatch):
    monkeypatch.delenv("SAGE_OPT_THREADS", raising=False)
    assert threads_from_env() == 1
    monkeypatch.setenv("SAGE_OPT_THREADS", "4")
    assert threads_from_env() == 4
    assert ExperimentRunner().max_workers == 4


@pytest.mark.parametrize("raw", ["zero", "0", "-2"])
def test_threads_from_env_rejects_bad_values(monkeypatch, raw):
    monkeypatch.setenv("SAGE_OPT_THREADS", raw)
    with pytest.raises(ConfigError):
        threads_from_env()


@pytest.mark.asyncio
async def test_map_keeps_item_order():
    """늦게 끝나는 작업이 있어도 결과는 입력 순서"""
    done = []

    def slow_square(x):
        time.sleep(0.01 * (5 - x))
        return x * x

    async with ExperimentRunner(max_workers=4) as runner:
        result = await runner.map(slow_square, range(5), on_done=lambda: done.append(1))
    assert result == [0, 1, 4, 9, 16]
    assert len(done) == 5


@pytest.mark.asyncio
async def test_run_passes_arguments():
    async with ExperimentRunner(max_workers=1) as runner:
        assert await runner.run(divmod, 17, 5) == (3, 2)


@pytest.mark.asyncio
async def test_failure_sets_cancel_event():
    def boom(x):
        if x == 2:
            raise RuntimeError("bad item")
        return x

    runner = ExperimentRunner(max_workers=2)
    with pytest.raises(RuntimeError):
        async with runner:
            await runner.map(boom, range(4))
    assert runner.cancel_event.is_set()
    with pytest.raises(OperationCancelled):
        runner.check_cancelled()


@pytest.mark.asyncio
async def test_run_requires_entered_runner():
    with pytest.raises(RuntimeError):
        await ExperimentRunner(max_workers=1).run(abs, -1)


@pytest.mark.asyncio
async def test_cancel_stops_pending_items():
    started = threading.Event()

    def wait(x):
        started.set()
        time.sleep(0.05)
        return x

    async with ExperimentRunner(max_workers=1) as runner:
        runner.cancel()
        with pytest.raises(OperationCancelled):
            await runner.map(wait, range(3))
    assert not started.is_set()


def test_sync_context_manager_shuts_down():
    with ExperimentRunner(max_workers=2) as runner:
        assert runner.executor.submit(sum, [1, 2, 3]).result() == 6
    with pytest.raises(RuntimeError):
        runner.executor.submit(sum, [1])


@pytest.mark.asyncio
async def test_shutdown_timeout_does_not_hang():
    async with ExperimentRunner(max_workers=1, shutdown_timeout=0.5) as runner:
        assert await runner.run(time.sleep, 0.01) is None
