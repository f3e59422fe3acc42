import threading

import pytest

from arctopk.collective import TcpCommunicator, make_listener


def run_tcp(world_size, fn, timeout=20.0):
    """Run ``fn(comm)`` on ``world_size`` TCP ranks hosted by threads."""
    listener = make_listener("127.0.0.1", 0)
    address = f"127.0.0.1:{listener.getsockname()[1]}"
    results = [None] * world_size
    errors = [None] * world_size

    def target(rank):
        try:
            comm = TcpCommunicator.connect(rank, world_size, address,
                                           listener=listener if rank == 0 else None,
                                           timeout=timeout)
            with comm:
                results[rank] = fn(comm)
        except BaseException as exc:  # noqa: BLE001 - inspected by the test
            errors[rank] = exc

    threads = [threading.Thread(target=target, args=(r,), daemon=True) for r in range(world_size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout * 3)
    return results, errors


@pytest.fixture
def tcp():
    return run_tcp
