"""Catalog bootstrap file: ``logical_name,size,crc_hex,tier,parent_names``.

Parent names are ``;``-separated and must appear on earlier lines, which keeps
provenance acyclic.
"""

import csv
import io
from pathlib import Path

from catalog.file_catalog import FileCatalog
from errors import UnknownParent
from fabric.integrity import crc32_hex, parse_crc_hex

HEADER = ["logical_name", "size", "crc_hex", "tier", "parent_names"]


def load_catalog_csv(catalog: FileCatalog, source: Path | str, declared_at: float = 0.0) -> list[str]:
    """Declare every row of a bootstrap file; returns the new file ids in order.

    ``source`` is a path, or the CSV text itself when it contains a newline.
    A header row matching HEADER is skipped; blank lines and ``#`` comments
    are ignored.
    """
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    declared: list[str] = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if [c.strip() for c in row] == HEADER:
            continue
        if len(row) != 5:
            raise ValueError(f"line {lineno}: expected 5 fields, got {len(row)}")
        name, size, crc_hex, tier, parent_field = (c.strip() for c in row)
        parent_ids = []
        for parent in filter(None, (p.strip() for p in parent_field.split(";"))):
            if not catalog.has_name(parent):
                raise UnknownParent(f"line {lineno}: parent {parent!r} not declared above")
            parent_ids.append(catalog.file_id_for(parent))
        declared.append(
            catalog.declare_file(
                name,
                int(size),
                parse_crc_hex(crc_hex),
                tier,
                parents=frozenset(parent_ids),
                declared_at=declared_at,
            )
        )
    return declared


def dump_catalog_csv(catalog: FileCatalog) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HEADER)
    for record in catalog.files():
        parents = sorted(catalog.get(p).logical_name for p in record.parents)
        writer.writerow(
            [record.logical_name, record.size, crc32_hex(record.crc), record.tier.value, ";".join(parents)]
        )
    return out.getvalue()
