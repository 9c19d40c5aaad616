"""
Output File Handling
Stages a run's output files in a scratch directory next to the target and
moves them into place only when the run completes, so a failed run leaves
the output directory untouched.
"""

import hashlib
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

logger = logging.getLogger(__name__)


class OutputWriter:
    """Collects output files for one run and publishes them atomically per file"""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.staging_dir: Optional[Path] = None
        self.published: List[Path] = []

    def __enter__(self) -> "OutputWriter":
        parent = self.out_dir.resolve().parent
        parent.mkdir(parents=True, exist_ok=True)
        self.staging_dir = Path(tempfile.mkdtemp(prefix=f".{self.out_dir.name}-staging-", dir=parent))
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        try:
            if exc_type is None:
                self.publish()
            else:
                logger.debug(f"Discarding staged outputs after {exc_type.__name__}")
        finally:
            self.cleanup()
        return False

    def path(self, filename: str) -> Path:
        """Where to write a file during the run"""
        if self.staging_dir is None:
            raise RuntimeError("OutputWriter used outside its context")
        if Path(filename).name != filename:
            raise ValueError(f"output filename must not contain directories: {filename}")
        return self.staging_dir / filename

    def publish(self) -> List[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for staged in sorted(self.staging_dir.iterdir()):
            target = self.out_dir / staged.name
            os.replace(staged, target)
            self.published.append(target)
        logger.info(f"💾 Wrote {len(self.published)} files to {self.out_dir}")
        return self.published

    def cleanup(self):
        if self.staging_dir is not None and self.staging_dir.exists():
            shutil.rmtree(self.staging_dir, ignore_errors=True)
        self.staging_dir = None


def get_file_info(file_path: Union[str, Path]) -> Dict[str, Any]:
    """Size and content hash of an input file, recorded in the run metrics"""
    path = Path(file_path)
    if not path.exists():
        return {"filename": path.name, "exists": False}
    return {
        "filename": path.name,
        "size": path.stat().st_size,
        "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        "exists": True,
    }
