"""An asyncio event loop driven by a virtual clock.

Sleeping never blocks: when nothing is ready the loop jumps straight to the
next scheduled callback. Callback order is the same FIFO/heap order asyncio
always uses, so a run that touches no real file descriptors is fully
deterministic.
"""
from __future__ import annotations

import asyncio
import selectors


class SimulationStalled(RuntimeError):
    """Nothing is ready and nothing is scheduled: the loop would sleep forever."""


class _VirtualSelector(selectors.BaseSelector):
    def __init__(self, loop: "VirtualClockLoop", real: selectors.BaseSelector):
        self._loop = loop
        self._real = real

    def register(self, fileobj, events, data=None):
        return self._real.register(fileobj, events, data)

    def unregister(self, fileobj):
        return self._real.unregister(fileobj)

    def modify(self, fileobj, events, data=None):
        return self._real.modify(fileobj, events, data)

    def get_map(self):
        return self._real.get_map()

    def close(self):
        self._real.close()

    def select(self, timeout=None):
        ready = self._real.select(0)
        if ready:
            return ready
        if timeout is None:
            raise SimulationStalled("no ready callbacks and no timers left")
        if timeout > 0:
            self._loop.advance(timeout)
        return []


class VirtualClockLoop(asyncio.SelectorEventLoop):
    def __init__(self, start: float = 0.0):
        super().__init__()
        self._virtual_now = start
        self._selector = _VirtualSelector(self, self._selector)
        # The timer heap is popped for handles with when < time() + resolution.
        self._clock_resolution = 1e-9

    def time(self) -> float:
        return self._virtual_now

    def advance(self, dt: float) -> None:
        self._virtual_now += dt


def run_virtual(coro, start: float = 0.0):
    """Run ``coro`` to completion on a fresh :class:`VirtualClockLoop`."""
    loop = VirtualClockLoop(start)
    try:
        asyncio.set_event_loop(loop)
        return loop.run_until_complete(coro)
    finally:
        try:
            _cancel_all(loop)
            loop.run_until_complete(loop.shutdown_asyncgens())
        finally:
            asyncio.set_event_loop(None)
            loop.close()


def _cancel_all(loop: asyncio.AbstractEventLoop) -> None:
    tasks = [t for t in asyncio.all_tasks(loop) if not t.done()]
    if not tasks:
        return
    for task in tasks:
        task.cancel()
    loop.run_until_complete(asyncio.gather(*tasks, return_exceptions=True))
