"""Dataset manifest: one CSV row per emitted image plus header metadata."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

MANIFEST_NAME = "manifest.csv"
METADATA_NAME = "config.json"


@dataclass(frozen=True)
class ManifestRow:
    relative_path: str
    class_id: int
    image_index: int
    split: str
    episode_id: int
    frame_step: int
    mirror: bool
    rotation_deg: float
    spacing_used: int
    threshold_used: int
    reuse_round: int = 0
    active_pixels: int = 0  # identity-crop count at selection time


COLUMNS = tuple(f.name for f in fields(ManifestRow))


@dataclass
class DatasetManifest:
    rows: list[ManifestRow]
    metadata: dict

    def by_class(self) -> dict[int, list[ManifestRow]]:
        out: dict[int, list[ManifestRow]] = {}
        for row in self.rows:
            out.setdefault(row.class_id, []).append(row)
        return out


def image_path(split: str, class_id: int, image_index: int) -> str:
    return f"{split}/class_{class_id:05d}/img_{image_index:06d}.png"


def paramfile_path(class_id: int) -> str:
    return f"params/class_{class_id:05d}.txt"


def build_manifest(rows, metadata: dict) -> DatasetManifest:
    rows = sorted(rows, key=lambda r: (r.class_id, r.image_index))
    seen = set()
    for r in rows:
        if r.relative_path in seen:
            raise RuntimeError(f"duplicate manifest path {r.relative_path}")
        seen.add(r.relative_path)
    return DatasetManifest(rows, dict(metadata))


def _cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def manifest_csv(manifest: DatasetManifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in manifest.rows:
        w.writerow([_cell(v) for v in asdict(row).values()])
    return buf.getvalue()


def write_manifest(out_dir, manifest: DatasetManifest) -> None:
    out = Path(out_dir)
    (out / MANIFEST_NAME).write_text(manifest_csv(manifest), encoding="utf-8", newline="\n")


_INT_COLS = {
    "class_id",
    "image_index",
    "episode_id",
    "frame_step",
    "spacing_used",
    "threshold_used",
    "reuse_round",
    "active_pixels",
}


def parse_manifest_csv(text: str) -> list[ManifestRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != COLUMNS:
        raise ValueError(f"manifest columns {reader.fieldnames} != {list(COLUMNS)}")
    rows = []
    for line_no, rec in enumerate(reader, start=2):
        try:
            kw = {}
            for k, v in rec.items():
                if k in _INT_COLS:
                    kw[k] = int(v)
                elif k == "mirror":
                    if v not in ("0", "1"):
                        raise ValueError(f"mirror must be 0 or 1, got {v!r}")
                    kw[k] = v == "1"
                elif k == "rotation_deg":
                    kw[k] = float(v)
                else:
                    kw[k] = v
            rows.append(ManifestRow(**kw))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"manifest line {line_no}: {exc}") from None
    return rows


def read_manifest(dataset_dir) -> DatasetManifest:
    d = Path(dataset_dir)
    rows = parse_manifest_csv((d / MANIFEST_NAME).read_text(encoding="utf-8"))
    meta_path = d / METADATA_NAME
    metadata = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return DatasetManifest(rows, metadata)
