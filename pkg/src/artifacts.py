import json
import logging
import os
import tempfile
from pathlib import Path

from filelock import FileLock

logger = logging.getLogger(__name__)


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    """Writes to a temporary file next to path, then renames it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return path


class ArtifactWriter:
    """
    Collects the output files of one command and writes them together under a
    lock on the output directory. Nothing is written until commit().
    """
    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self._staged: dict[str, bytes] = {}

    def stage_bytes(self, name: str, data: bytes):
        self._staged[name] = data

    def stage_text(self, name: str, text: str):
        self.stage_bytes(name, text.encode("utf-8"))

    def stage_json(self, name: str, obj):
        self.stage_text(name, json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")

    @property
    def staged(self) -> list[str]:
        return sorted(self._staged)

    def commit(self) -> list[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        with FileLock(str(self.out_dir / ".lock")):
            for name, data in self._staged.items():
                written.append(atomic_write_bytes(self.out_dir / name, data))
        logger.info(f"Wrote {len(written)} artifacts to '{self.out_dir}'")
        self._staged.clear()
        return written
