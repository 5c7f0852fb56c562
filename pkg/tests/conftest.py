import contextlib
import time

import pytest


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's outcome for the end-of-run summary."""
    log = request.config.stash.setdefault(_KEY, {})

    @contextlib.contextmanager
    def record(number, title):
        start = time.perf_counter()
        notes = []
        ok = False
        try:
            yield notes
            ok = True
        except BaseException as exc:
            notes.append(f"{type(exc).__name__}: {exc}".splitlines()[0])
            raise
        finally:
            # parametrized criteria accumulate into one line
            prev_ok, _, prev_t, prev_notes = log.get(number, (True, title, 0.0, []))
            log[number] = (prev_ok and ok, title, prev_t + time.perf_counter() - start, prev_notes + notes)

    return record


_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_KEY, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        ok, title, seconds, notes = log[number]
        detail = "; ".join(str(n) for n in notes)
        line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title} ({seconds:.2f} s)"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
