"""On-disk container for finest-level tables.

A saved table is a directory holding two files:

``metadata.json``
    format tag, schema version, hierarchy (names, ranks, unit sets), keys
    (names, ordered category sets, key_thr, excluded keys), K, seed, row
    count and the SHA-256 of ``rows.csv``.
``rows.csv``
    comma-separated rows in canonical order with a header of every
    hierarchy level, every key, ``N`` and ``N_masked``.

Saving the same table twice produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .errors import IntegrityError, MalformedTableError, SchemaVersionError, StorageError
from .tables import FinestTable, HierarchySpec, KeySpec, _encode

FORMAT_TAG = "freqmask/finest-table"
SCHEMA_VERSION = 1
METADATA_FILE = "metadata.json"
ROWS_FILE = "rows.csv"


def _rows_bytes(table: FinestTable) -> bytes:
    frame = pd.DataFrame({n: table.labels(n) for n in table.columns})
    frame["N"] = table.true_count
    frame["N_masked"] = table.masked_count
    buf = io.StringIO()
    frame.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue().encode("utf-8")


def _metadata(table: FinestTable, rows: bytes) -> dict:
    return {
        "format": FORMAT_TAG,
        "schema_version": SCHEMA_VERSION,
        "k": table.k,
        "seed": table.seed,
        "hierarchy": [
            {"name": name, "rank": rank, "categories": list(table.hier_categories[name])}
            for rank, name in enumerate(table.hierarchy.names, start=1)
        ],
        "keys": [
            {"name": name, "categories": list(table.keys.categories[name])}
            for name in table.keys.names
        ],
        "key_thr": table.keys.key_thr,
        "excluded_keys": list(table.excluded_keys),
        "row_count": len(table),
        "rows_sha256": hashlib.sha256(rows).hexdigest(),
    }


def atomic_write_dir(path: Union[str, Path], files: dict[str, bytes]) -> None:
    """Write ``files`` into a sibling temp directory, then swap it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        for name, data in files.items():
            (tmp / name).write_bytes(data)
        if path.exists():
            if not path.is_dir():
                raise StorageError(f"{path} exists and is not a table directory")
            old = Path(tempfile.mkdtemp(prefix=f".{path.name}.old.", dir=path.parent))
            os.rmdir(old)
            os.replace(path, old)
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def atomic_write_file(path: Union[str, Path], data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def save_finest_table(table: FinestTable, path: Union[str, Path]) -> Path:
    rows = _rows_bytes(table)
    meta = json.dumps(_metadata(table, rows), indent=2, ensure_ascii=False) + "\n"
    atomic_write_dir(path, {METADATA_FILE: meta.encode("utf-8"), ROWS_FILE: rows})
    return Path(path)


def _require(meta: dict, field: str, kind):
    if field not in meta or not isinstance(meta[field], kind):
        raise MalformedTableError(f"metadata field {field!r} missing or not {kind}")
    return meta[field]


def load_finest_table(path: Union[str, Path]) -> FinestTable:
    path = Path(path)
    try:
        meta_text = (path / METADATA_FILE).read_text(encoding="utf-8")
        rows = (path / ROWS_FILE).read_bytes()
    except FileNotFoundError as exc:
        raise MalformedTableError(f"{path} is not a finest-table container: {exc}") from exc
    try:
        meta = json.loads(meta_text)
    except json.JSONDecodeError as exc:
        raise MalformedTableError(f"{path / METADATA_FILE}: invalid JSON ({exc})") from exc
    if not isinstance(meta, dict) or meta.get("format") != FORMAT_TAG:
        raise MalformedTableError(f"{path}: not a {FORMAT_TAG} container")
    version = meta.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema version {version!r} is not supported (expected {SCHEMA_VERSION})"
        )
    if hashlib.sha256(rows).hexdigest() != meta.get("rows_sha256"):
        raise IntegrityError(f"{path / ROWS_FILE}: checksum does not match metadata")

    hier = _require(meta, "hierarchy", list)
    keys = _require(meta, "keys", list)
    try:
        hier = sorted(hier, key=lambda h: h["rank"])
        hierarchy = HierarchySpec(tuple(h["name"] for h in hier))
        hier_categories = {h["name"]: tuple(h["categories"]) for h in hier}
        key_names = tuple(kk["name"] for kk in keys)
        key_categories = {kk["name"]: tuple(kk["categories"]) for kk in keys}
        key_spec = KeySpec(key_names, key_categories, int(_require(meta, "key_thr", int)))
    except (KeyError, TypeError) as exc:
        raise MalformedTableError(f"{path}: malformed variable metadata ({exc})") from exc
    k = _require(meta, "k", int)
    seed = meta.get("seed")

    names = (*hierarchy.names, *key_names)
    try:
        frame = pd.read_csv(
            io.BytesIO(rows),
            dtype={**{n: str for n in names}, "N": np.int64, "N_masked": np.int64},
            keep_default_na=False,
        )
    except (ValueError, pd.errors.ParserError) as exc:
        raise MalformedTableError(f"{path / ROWS_FILE}: {exc}") from exc
    if tuple(frame.columns) != (*names, "N", "N_masked"):
        raise MalformedTableError(f"{path / ROWS_FILE}: unexpected header {list(frame.columns)}")
    if len(frame) != meta.get("row_count"):
        raise IntegrityError(f"{path}: row count {len(frame)} != metadata {meta.get('row_count')}")

    cats = {**hier_categories, **key_categories}
    try:
        codes = (
            np.column_stack([_encode(frame[n], cats[n]) for n in names])
            if len(frame)
            else np.empty((0, len(names)), np.int32)
        )
    except ValueError as exc:
        raise IntegrityError(f"{path}: {exc}") from exc
    table = FinestTable(
        hierarchy=hierarchy,
        keys=key_spec,
        hier_categories=hier_categories,
        k=k,
        seed=seed,
        codes=np.ascontiguousarray(codes),
        true_count=frame["N"].to_numpy(np.int64),
        masked_count=frame["N_masked"].to_numpy(np.int64),
        excluded_keys=tuple(meta.get("excluded_keys", ())),
    )
    table.validate()
    return table
