"""Self-describing model bundles.

A model artifact is a single zip file holding one meta.json plus one .npy
entry per parameter tensor and per quantile table. The bytes are
deterministic: fixed entry order, stored (uncompressed) payloads, constant
timestamps, and sorted JSON keys, so saving the same model twice gives
identical files and a load/save cycle round-trips bitwise.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile

import numpy as np

from .codecs.primitives import QuantileTable
from .data import Transform
from .schema import compile_schema, parse_schema, serialize_schema

FORMAT = "nestgen-model"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class ArtifactError(ValueError):
    pass


def _npy_bytes(arr) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), version=(1, 0))
    return buf.getvalue()


def _read_npy(data: bytes) -> np.ndarray:
    return np.lib.format.read_array(io.BytesIO(data))


def save_model(path, store, transform: Transform, config: dict,
               manifest: dict | None = None) -> None:
    """Write the bundle: schema, vocabularies, quantile tables, parameters,
    compile config, and the optional run manifest."""
    params = {p: f"params/{i}.npy" for i, p in enumerate(sorted(store.paths()))}
    tables = {p: {"file": f"tables/{i}.npy", "integer": t.integer}
              for i, (p, t) in enumerate(sorted(transform.tables.items()))}
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "schema": serialize_schema(transform.schema, as_text=False),
        "vocabs": transform.vocabs,
        "tables": tables,
        "params": params,
        "config": config,
        "manifest": manifest or {},
    }
    entries = [("meta.json", json.dumps(meta, sort_keys=True,
                                        ensure_ascii=False).encode("utf-8"))]
    for p in sorted(params):
        entries.append((params[p], _npy_bytes(store[p].data)))
    for p in sorted(tables):
        entries.append((tables[p]["file"],
                        _npy_bytes(transform.tables[p].q)))
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, payload in entries:
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, payload)


def load_model(path):
    """Read a bundle back. Returns (codec, store, transform, config,
    manifest); the codec is recompiled from the stored schema and config,
    then the stored parameters replace the fresh initialisation."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as e:
        raise ArtifactError(f"{path}: not a readable model bundle ({e})") from None
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise ArtifactError(f"{path}: missing meta.json") from None
        if meta.get("format") != FORMAT:
            raise ArtifactError(f"{path}: not a {FORMAT} bundle")
        if meta.get("version") != VERSION:
            raise ArtifactError(f"{path}: unsupported bundle version "
                                f"{meta.get('version')!r}")
        schema = parse_schema(meta["schema"])
        tables = {p: QuantileTable(_read_npy(zf.read(spec["file"])),
                                   integer=spec["integer"])
                  for p, spec in meta["tables"].items()}
        config = meta["config"]
        codec, store = compile_schema(
            schema,
            width=config["width"], blocks=config["blocks"],
            heads=config["heads"], full_block=config.get("full_block", False),
            seed=config.get("seed", 0), tables=tables,
            trainable_c0=config.get("trainable_c0", False),
            positional_lists=config.get("positional_lists", False))
        state = {p: _read_npy(zf.read(f)) for p, f in meta["params"].items()}
        store.load_state(state)
        transform = Transform(schema, meta["vocabs"], tables)
        return codec, store, transform, config, meta["manifest"]


def content_hash(*paths) -> str:
    """sha256 over the concatenated bytes of the given files."""
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()
