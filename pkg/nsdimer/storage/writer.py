import hashlib
import json
import logging
import shutil
import struct
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
import pyarrow as pa
import pyarrow.csv as pacsv
from pydantic import BaseModel

from nsdimer import __version__
from nsdimer.errors import DimensionMismatchError, OutputIntegrityError, UsageError
from nsdimer.storage.models import OutputEntry, OutputKind, RunConfig, RunManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MATRIX_MAGIC = b"NSDMRHO1"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord):
        self.messages.append(record.getMessage())


def read_matrix(path: Path) -> np.ndarray:
    """Load a matrix written by ``OutputWriter.write_matrix``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MATRIX_MAGIC:
        raise UsageError(f"{path} is not a density-matrix dump")
    (dim,) = struct.unpack("<Q", raw[8:16])
    data = np.frombuffer(raw, dtype="<c16", offset=16)
    if data.size != dim * dim:
        raise DimensionMismatchError(f"{path}: header says {dim}x{dim}, payload holds {data.size} entries")
    return data.reshape(dim, dim).astype(np.complex128)


class OutputWriter:
    """Owns one run directory and the manifest describing it."""

    def __init__(self, base_dir: Path, config: RunConfig):
        self.config = config
        self.config_hash = config.config_hash()
        self.run_dir = Path(base_dir) / f"{config.command}-{self.config_hash[:12]}"
        self._entries: Dict[str, OutputEntry] = {}
        self._warnings = _WarningCollector()
        logging.getLogger("nsdimer").addHandler(self._warnings)
        self._metadata: Dict[str, Any] = {}
        self._started = datetime.now(timezone.utc)
        self._clock = time.perf_counter()
        self._finalized = False
        self._prepare()

    def _prepare(self):
        # a rerun of the same config replaces everything under its directory,
        # including files left by an interrupted run that never wrote a manifest
        if self.run_dir.exists():
            shutil.rmtree(self.run_dir)
            logger.info("Replacing previous run in %s", self.run_dir)
        self.run_dir.mkdir(parents=True)

    def _register(self, path: Path, kind: OutputKind) -> Path:
        rel = path.relative_to(self.run_dir).as_posix()
        self._entries[rel] = OutputEntry(
            path=rel, kind=kind, sha256=_sha256(path), bytes=path.stat().st_size
        )
        logger.debug("Wrote %s", path)
        return path

    def _target(self, name: str) -> Path:
        if self._finalized:
            raise OutputIntegrityError("run already finalized")
        path = self.run_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    # --- writers ---

    def write_csv(self, name: str, columns: Mapping[str, Sequence]) -> Path:
        path = self._target(name)
        table = pa.table({k: pa.array(v) for k, v in columns.items()})
        pacsv.write_csv(table, path)
        return self._register(path, OutputKind.csv)

    def write_json(self, name: str, payload: Any) -> Path:
        path = self._target(name)
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))
        return self._register(path, OutputKind.json)

    def write_matrix(self, name: str, matrix: np.ndarray) -> Path:
        matrix = np.asarray(getattr(matrix, "data", matrix))
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatchError(f"expected a square matrix, got {matrix.shape}")
        path = self._target(name)
        payload = np.ascontiguousarray(matrix, dtype="<c16").tobytes()
        path.write_bytes(MATRIX_MAGIC + struct.pack("<Q", matrix.shape[0]) + payload)
        return self._register(path, OutputKind.matrix)

    # --- bookkeeping ---

    def warn(self, message: str):
        # picked up by the collector
        logger.warning(message)

    def add_metadata(self, **fields: Any):
        self._metadata.update(fields)

    def close(self):
        logging.getLogger("nsdimer").removeHandler(self._warnings)

    def __enter__(self) -> "OutputWriter":
        return self

    def __exit__(self, *exc_info):
        self.close()

    @property
    def outputs(self) -> List[str]:
        return list(self._entries)

    def finalize(self) -> RunManifest:
        if self._finalized:
            raise OutputIntegrityError("manifest already written for this run")
        orphans = sorted(
            p.relative_to(self.run_dir).as_posix()
            for p in self.run_dir.rglob("*")
            if p.is_file() and p.name != MANIFEST_NAME
            and p.relative_to(self.run_dir).as_posix() not in self._entries
        )
        if orphans:
            raise OutputIntegrityError(f"files without manifest entries in {self.run_dir}: {orphans}")

        finished = datetime.now(timezone.utc)
        manifest = RunManifest(
            config_hash=self.config_hash,
            code_version=__version__,
            command=self.config.command,
            config=self.config.model_dump(mode="json"),
            started_at=self._started.isoformat(),
            finished_at=finished.isoformat(),
            wall_clock_seconds=time.perf_counter() - self._clock,
            outputs=list(self._entries.values()),
            warnings=list(self._warnings.messages),
            metadata=self._metadata,
        )
        (self.run_dir / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2))
        self._finalized = True
        self.close()
        logger.info("Run complete: %d outputs in %s", len(self._entries), self.run_dir)
        return manifest
