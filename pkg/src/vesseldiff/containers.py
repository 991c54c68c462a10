"""Deterministic on-disk container for named arrays plus a JSON metadata block.

Plain zip archive with fixed entry timestamps and no compression, so that
identical content always produces identical bytes (round-trip and golden-file
tests rely on this).
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

META_ENTRY = "container.json"
_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


class ContainerError(ValueError):
    """Malformed or mismatching container file."""


def save_container(path: str | Path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    header = {
        "format": kind,
        "version": 1,
        "arrays": sorted(arrays),
        "meta": meta,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo(META_ENTRY, date_time=_FIXED_DATE), payload)
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arrays[name]))
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_FIXED_DATE), buf.getvalue())


def load_container(path: str | Path, kind: str) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with zipfile.ZipFile(path) as zf:
            try:
                header = json.loads(zf.read(META_ENTRY))
            except KeyError:
                raise ContainerError(f"{path}: missing {META_ENTRY} entry") from None
            if header.get("format") != kind:
                raise ContainerError(
                    f"{path}: expected container format '{kind}', found '{header.get('format')}'"
                )
            arrays = {}
            for name in header["arrays"]:
                arrays[name] = np.load(io.BytesIO(zf.read(f"{name}.npy")))
    except zipfile.BadZipFile as exc:
        raise ContainerError(f"{path}: not a container file ({exc})") from None
    return arrays, header["meta"]
