import os

ENV_THREADS = "NPPRIOR_THREADS"


def thread_count() -> int:
    """Worker cap from ``NPPRIOR_THREADS``; 0 or unset means one per CPU."""
    raw = os.environ.get(ENV_THREADS, "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value <= 0:
        return os.cpu_count() or 1
    return value
