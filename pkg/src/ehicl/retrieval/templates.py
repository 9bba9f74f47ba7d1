"""Template database: records, class buckets, directory persistence.

On disk a database is a directory with ``manifest.json`` plus one parameter
blob per record under ``blobs/``. Text embeddings are recomputed from the
stored description on load (the embedding is deterministic).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..hand.params import HandParams
from ..serial import read_blob, write_blob
from .embed import embed_text
from .involvement import InvolvementClass

__all__ = ["TemplateRecord", "TemplateDb", "save_db", "load_db", "TEMPLATE_MAGIC"]

TEMPLATE_MAGIC = "EHTPL1"


@dataclass
class TemplateRecord:
    """One database entry; image_ref doubles as the mock-VLM lookup handle."""

    record_id: str
    involvement: InvolvementClass
    description: str
    coarse: dict[str, HandParams]
    gt: dict[str, HandParams]
    image_features: np.ndarray
    validated: bool = False
    text_embedding: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.involvement = InvolvementClass(self.involvement)
        if self.text_embedding is None:
            self.text_embedding = embed_text(self.description)

    @property
    def image_ref(self) -> str:
        return self.record_id


class TemplateDb:
    """Immutable-after-validation record collection with class buckets."""

    def __init__(self, records: list[TemplateRecord]):
        self.records = list(records)
        self.by_id = {r.record_id: r for r in self.records}
        if len(self.by_id) != len(self.records):
            raise ValueError("duplicate template record ids")

    def __len__(self) -> int:
        return len(self.records)

    def validated_records(self) -> list[TemplateRecord]:
        return [r for r in self.records if r.validated]

    def class_bucket(self, involvement, validated_only: bool = True) -> list[TemplateRecord]:
        cls = InvolvementClass(involvement)
        pool = self.validated_records() if validated_only else self.records
        return [r for r in pool if r.involvement == cls]

    def metadata_for_mock(self, extra: dict | None = None) -> dict:
        """image_ref -> involvement/verb/noun map consumed by MockVlmClient."""
        meta = dict(extra or {})
        for r in self.records:
            verb, noun = _verb_noun_from_description(r.description)
            meta[r.image_ref] = {
                "involvement": int(r.involvement),
                "verb": verb,
                "noun": noun,
            }
        return meta


def _verb_noun_from_description(description: str) -> tuple[str, str]:
    # sentences follow "<Subject> <verb> a <noun>." from descriptions.py
    words = description.rstrip(".").split()
    if "a" in words:
        idx = words.index("a")
        verb = " ".join(words[words.index("hand") + 1 if "hand" in words else 2 : idx])
        noun = " ".join(words[idx + 1 :])
        if verb and noun:
            return verb, noun
    return "holding", "object"


def save_db(db: TemplateDb, dirpath) -> None:
    root = Path(dirpath)
    (root / "blobs").mkdir(parents=True, exist_ok=True)
    entries = []
    for r in db.records:
        blob_name = f"blobs/{r.record_id}.bin"
        arrays = {"image_features": r.image_features}
        for side, params in r.coarse.items():
            arrays[f"coarse_{side}"] = params.to_vector()
        for side, params in r.gt.items():
            arrays[f"gt_{side}"] = params.to_vector()
        write_blob(root / blob_name, TEMPLATE_MAGIC, {"id": r.record_id}, arrays)
        entries.append(
            {
                "id": r.record_id,
                "involvement": int(r.involvement),
                "description": r.description,
                "validated": bool(r.validated),
                "blob": blob_name,
                "sides": sorted(r.gt.keys()),
            }
        )
    manifest = {"version": 1, "records": entries}
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_db(dirpath) -> TemplateDb:
    root = Path(dirpath)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    records = []
    for entry in manifest["records"]:
        _, arrays = read_blob(root / entry["blob"], TEMPLATE_MAGIC)
        coarse = {}
        gt = {}
        for side in entry["sides"]:
            coarse[side] = HandParams.from_vector(arrays[f"coarse_{side}"], side)
            gt[side] = HandParams.from_vector(arrays[f"gt_{side}"], side)
        records.append(
            TemplateRecord(
                record_id=entry["id"],
                involvement=InvolvementClass(entry["involvement"]),
                description=entry["description"],
                coarse=coarse,
                gt=gt,
                image_features=arrays["image_features"],
                validated=bool(entry["validated"]),
            )
        )
    return TemplateDb(records)
