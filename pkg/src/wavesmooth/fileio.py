"""Atomic text-file writing shared by all writers.

Files are first written next to the target with an ``.incomplete`` suffix
and moved into place only when fully written, so an interrupted run never
leaves a partial file under the final name.
"""

import os


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` atomically (temp file + rename)."""
    tmp = f"{path}.incomplete"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
