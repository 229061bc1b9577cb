"""End-to-end dataset generation, episode dumps, verification and statistics."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, GeneratorConfig, from_dict
from .datasetgen import (
    SPLITS,
    ClassSpec,
    GenerationContext,
    class_seed,
    class_split_labels,
    enumerate_classes,
    episode_seed,
    generate_class,
    paramfile_text,
    parse_paramfile,
    reproject_steps,
    split_sizes,
    write_class_paramfile,
)
from .imageio import PngDecodeError, decode, encode_binary, encode_raw
from .manifest import (
    MANIFEST_NAME,
    METADATA_NAME,
    ManifestRow,
    build_manifest,
    image_path,
    paramfile_path,
    read_manifest,
    write_manifest,
)
from .projection import active_pixel_count, project_raw, raw_cell_map, render_binary

log = logging.getLogger(__name__)


class OutputDirError(ValueError):
    pass


def dataset_metadata(cfg: GeneratorConfig) -> dict:
    grid = cfg.parameter_grid()
    return {
        "tool_version": __version__,
        "master_seed": cfg.master_seed,
        "image_side": cfg.image_side,
        "retina_radius": cfg.retina_radius,
        "n_classes": grid.n_classes,
        "images_per_class": cfg.images_per_class,
        "grid": grid.describe(),
        "config": cfg.echo(),
    }


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- worker side --------------------------------------------------------------

_CTX: GenerationContext | None = None
_CFG: GeneratorConfig | None = None


def _init_worker(cfg: GeneratorConfig) -> None:
    global _CTX, _CFG
    _CFG = cfg
    _CTX = GenerationContext(cfg.retina_radius, cfg.image_side, cfg.dynamics)


def _run_class(spec: ClassSpec):
    cfg, ctx = _CFG, _CTX
    result = generate_class(spec, cfg.images_per_class, cfg.selection, ctx)
    labels = class_split_labels(spec.class_id, cfg.images_per_class, cfg.master_seed, cfg.split_ratios)
    files, rows = [], []
    for img in result.images:
        rel = image_path(labels[img.image_index], spec.class_id, img.image_index)
        files.append((rel, encode_binary(img.image)))
        rows.append(
            ManifestRow(
                relative_path=rel,
                class_id=spec.class_id,
                image_index=img.image_index,
                split=labels[img.image_index],
                episode_id=img.episode_id,
                frame_step=img.frame_step,
                mirror=img.aug.mirror,
                rotation_deg=img.aug.rotation,
                spacing_used=result.spacing_used,
                threshold_used=result.threshold_used,
                reuse_round=img.reuse_round,
                active_pixels=img.active_pixels,
            )
        )
    return spec.class_id, files, rows, result.ladder


# -- generate -----------------------------------------------------------------


def _prepare_out_dir(out: Path) -> None:
    if out.exists():
        if not out.is_dir():
            raise OutputDirError(f"output path {out} exists and is not a directory")
        if any(out.iterdir()):
            raise OutputDirError(f"output directory {out} is not empty")
    out.mkdir(parents=True, exist_ok=True)


def generate_dataset(cfg: GeneratorConfig, out_dir, workers: int | None = None) -> dict:
    """Write a complete dataset; returns a small summary dict.

    Output bytes depend only on the configuration, never on ``workers``.
    """
    cfg.validate()
    out = Path(out_dir)
    workers = workers or cfg.workers
    _prepare_out_dir(out)
    specs = enumerate_classes(cfg.parameter_grid(), cfg.master_seed)

    (out / METADATA_NAME).write_text(_json_text(dataset_metadata(cfg)), encoding="utf-8")
    (out / "params").mkdir()
    for spec in specs:
        write_class_paramfile(spec, out / paramfile_path(spec.class_id))

    all_rows = []
    ladders = {}

    def consume(results):
        made_dirs = set()
        for cid, files, rows, ladder in results:
            for rel, data in files:
                path = out / rel
                if path.parent not in made_dirs:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    made_dirs.add(path.parent)
                path.write_bytes(data)
            all_rows.extend(rows)
            ladders[cid] = ladder
            log.info("class %d done (%d images)", cid, len(rows))

    if workers <= 1:
        _init_worker(cfg)
        consume(map(_run_class, specs))
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            consume(pool.map(_run_class, specs, chunksize=1))

    manifest = build_manifest(all_rows, dataset_metadata(cfg))
    write_manifest(out, manifest)
    return {
        "classes": len(specs),
        "images": len(manifest.rows),
        "adjusted_classes": sorted(c for c, lad in ladders.items() if lad),
    }


# -- simulate -----------------------------------------------------------------


def simulate_to_dir(
    cfg: GeneratorConfig,
    out_dir,
    *,
    class_id: int | None = None,
    episode: int = 0,
    fmt: str = "raw",
) -> list[Path]:
    """Dump every frame of one episode, unaugmented.

    With ``class_id`` the parameters and episode seed are those the
    generator would use for that class. Otherwise the grid's base
    parameters run with the master seed as the episode seed.
    """
    if fmt not in ("raw", "cropped"):
        raise ValueError(f"unknown format {fmt!r}")
    if class_id is not None:
        specs = enumerate_classes(cfg.parameter_grid(), cfg.master_seed)
        if not 0 <= class_id < len(specs):
            raise ConfigError(f"class id {class_id} out of range (0..{len(specs) - 1})")
        params = specs[class_id].params
        ep_seed = episode_seed(class_seed(cfg.master_seed, class_id), episode)
    else:
        params = cfg.base_params()
        ep_seed = cfg.master_seed
    out = Path(out_dir)
    _prepare_out_dir(out)

    ctx = GenerationContext(cfg.retina_radius, cfg.image_side, cfg.dynamics)
    rmap = raw_cell_map(ctx.lattice) if fmt == "raw" else None
    written = []
    for frame in ctx.episode(params, ep_seed):
        if fmt == "raw":
            data = encode_raw(project_raw(frame, ctx.lattice, rmap))
        else:
            data = encode_binary(render_binary(frame.active, ctx.identity_map))
        path = out / f"ep{episode:04d}_t{frame.step:05d}.png"
        path.write_bytes(data)
        written.append(path)
    return written


# -- verify -------------------------------------------------------------------


@dataclass
class Violation:
    check: str
    path: str
    detail: str

    def __str__(self):
        return f"[{self.check}] {self.path}: {self.detail}"


def verify_dataset(dataset_dir, deep: bool = False) -> list[Violation]:
    """Check a generated dataset against its manifest and invariants.

    Raises ``FileNotFoundError`` when the manifest or metadata is missing.
    ``deep`` also re-simulates every frame to confirm its threshold.
    """
    root = Path(dataset_dir)
    if not (root / MANIFEST_NAME).exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {root}")
    if not (root / METADATA_NAME).exists():
        raise FileNotFoundError(f"no {METADATA_NAME} in {root}")
    out: list[Violation] = []
    try:
        manifest = read_manifest(root)
    except ValueError as exc:
        return [Violation("manifest", MANIFEST_NAME, str(exc))]
    try:
        cfg = from_dict(manifest.metadata["config"])
    except (KeyError, ConfigError) as exc:
        return [Violation("metadata", METADATA_NAME, f"unusable config echo: {exc}")]
    quota = cfg.images_per_class
    specs = enumerate_classes(cfg.parameter_grid(), cfg.master_seed)

    # manifest <-> filesystem
    listed = {r.relative_path for r in manifest.rows}
    if len(listed) != len(manifest.rows):
        out.append(Violation("manifest", MANIFEST_NAME, "duplicate relative paths"))
    on_disk = set()
    for split in SPLITS:
        if (root / split).is_dir():
            on_disk |= {p.relative_to(root).as_posix() for p in (root / split).rglob("*") if p.is_file()}
    for rel in sorted(listed - on_disk):
        out.append(Violation("missing-file", rel, "listed in manifest but not on disk"))
    for rel in sorted(on_disk - listed):
        out.append(Violation("unlisted-file", rel, "on disk but not in manifest"))

    for r in manifest.rows:
        if r.split not in SPLITS:
            out.append(Violation("split", r.relative_path, f"unknown split {r.split!r}"))
        expect = image_path(r.split, r.class_id, r.image_index)
        if r.relative_path != expect:
            out.append(Violation("layout", r.relative_path, f"expected path {expect}"))
        if r.spacing_used < 1 or r.frame_step % r.spacing_used:
            out.append(
                Violation("spacing", r.relative_path, f"step {r.frame_step} not a multiple of {r.spacing_used}")
            )
        if r.active_pixels < r.threshold_used:
            out.append(
                Violation("threshold", r.relative_path, f"{r.active_pixels} < threshold {r.threshold_used}")
            )

    # binary value invariant
    for rel in sorted(listed & on_disk):
        try:
            img = decode((root / rel).read_bytes())
        except PngDecodeError as exc:
            out.append(Violation("decode", rel, str(exc)))
            continue
        if img.pixels.ndim != 2:
            out.append(Violation("format", rel, "not a grayscale image"))
            continue
        if img.pixels.shape != (cfg.image_side, cfg.image_side):
            out.append(Violation("format", rel, f"shape {img.pixels.shape} != side {cfg.image_side}"))
        bad = img.invalid_values()
        if bad:
            out.append(Violation("binary-value", rel, f"pixel values outside {{0,255}}: {sorted(bad)}"))

    # quota and split balance
    per_class = manifest.by_class()
    ids = sorted(per_class)
    if ids != list(range(len(specs))):
        out.append(Violation("classes", MANIFEST_NAME, f"found {len(ids)} classes, expected {len(specs)}"))
    want = dict(zip(SPLITS, split_sizes(quota, cfg.split_ratios)))
    for cid, rows in per_class.items():
        where = f"class {cid}"
        if sorted(r.image_index for r in rows) != list(range(quota)):
            out.append(Violation("quota", where, f"{len(rows)} images, expected indices 0..{quota - 1}"))
        counts = {s: sum(r.split == s for r in rows) for s in SPLITS}
        if counts != want:
            out.append(Violation("split-balance", where, f"split counts {counts} != {want}"))
        policies = {(r.spacing_used, r.threshold_used) for r in rows}
        if len(policies) != 1:
            out.append(Violation("policy", where, f"mixed selection policies {sorted(policies)}"))

    # parameter files
    for spec in specs:
        rel = paramfile_path(spec.class_id)
        path = root / rel
        if not path.exists():
            out.append(Violation("paramfile", rel, "missing"))
            continue
        text = path.read_text(encoding="utf-8")
        try:
            parsed = parse_paramfile(text)
        except ValueError as exc:
            out.append(Violation("paramfile", rel, str(exc)))
            continue
        if paramfile_text(parsed) != text:
            out.append(Violation("paramfile", rel, "does not round-trip"))
        if parsed != spec:
            out.append(Violation("paramfile", rel, "does not match the configured grid"))
    extra = {p.name for p in (root / "params").glob("*")} - {
        Path(paramfile_path(s.class_id)).name for s in specs
    }
    for name in sorted(extra):
        out.append(Violation("paramfile", f"params/{name}", "unexpected file"))

    if deep:
        ctx = GenerationContext(cfg.retina_radius, cfg.image_side, cfg.dynamics)
        groups: dict[tuple[int, int], list[ManifestRow]] = {}
        for r in manifest.rows:
            if 0 <= r.class_id < len(specs):
                groups.setdefault((r.class_id, r.episode_id), []).append(r)
        for (cid, ep), rows in sorted(groups.items()):
            try:
                counts = reproject_steps(specs[cid], ep, [r.frame_step for r in rows], ctx)
            except ValueError as exc:
                out.extend(Violation("reprojection", r.relative_path, str(exc)) for r in rows)
                continue
            for r in rows:
                got = counts[r.frame_step]
                if got >= r.threshold_used and got == r.active_pixels:
                    continue
                out.append(
                    Violation(
                        "reprojection",
                        r.relative_path,
                        f"re-simulated count {got} (recorded {r.active_pixels}, threshold {r.threshold_used})",
                    )
                )
    return out


# -- stats --------------------------------------------------------------------


def dataset_stats(dataset_dir, decode_images: bool = False) -> dict:
    root = Path(dataset_dir)
    if not (root / MANIFEST_NAME).exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {root}")
    manifest = read_manifest(root)
    sel = manifest.metadata.get("config", {}).get("selection", {})
    spacing0, threshold0 = sel.get("spacing"), sel.get("threshold")

    def summary(values):
        if not len(values):
            return {"mean": None, "min": None, "max": None}
        a = np.asarray(values)
        return {"mean": float(a.mean()), "min": int(a.min()), "max": int(a.max())}

    classes = {}
    ladder_totals = {"spacing": 0, "threshold": 0, "reuse": 0}
    image_counts = []
    for cid, rows in sorted(manifest.by_class().items()):
        spacing, threshold = rows[0].spacing_used, rows[0].threshold_used
        ladder = {
            "spacing": spacing0 is not None and spacing < spacing0,
            "threshold": threshold0 is not None and threshold < threshold0,
            "reuse": any(r.reuse_round > 0 for r in rows),
        }
        for k, v in ladder.items():
            ladder_totals[k] += int(v)
        entry = {
            "images": len(rows),
            "splits": {s: sum(r.split == s for r in rows) for s in SPLITS},
            "identity_pixels": summary([r.active_pixels for r in rows]),
            "spacing_used": spacing,
            "threshold_used": threshold,
            "ladder": [k for k, v in ladder.items() if v],
        }
        if decode_images:
            counts = [active_pixel_count(decode((root / r.relative_path).read_bytes())) for r in rows]
            entry["image_pixels"] = summary(counts)
            image_counts += counts
        classes[cid] = entry
    rows = manifest.rows
    total = {
        "classes": len(classes),
        "images": len(rows),
        "splits": {s: sum(r.split == s for r in rows) for s in SPLITS},
        "identity_pixels": summary([r.active_pixels for r in rows]),
        "min_threshold_used": min((r.threshold_used for r in rows), default=None),
        "ladder_classes": ladder_totals,
    }
    if decode_images:
        total["image_pixels"] = summary(image_counts)
    return {"total": total, "classes": classes}


def format_stats(stats: dict) -> str:
    lines = []
    head = f"{'class':>6} {'images':>6} {'train':>6} {'val':>5} {'test':>5} {'px_mean':>8} {'px_min':>6} {'px_max':>6} {'spc':>4} {'thr':>4}  ladder"
    lines.append(head)
    for cid, e in stats["classes"].items():
        px = e["identity_pixels"]
        sp = e["splits"]
        lines.append(
            f"{cid:>6} {e['images']:>6} {sp['train']:>6} {sp['val']:>5} {sp['test']:>5} "
            f"{px['mean']:>8.1f} {px['min']:>6} {px['max']:>6} {e['spacing_used']:>4} "
            f"{e['threshold_used']:>4}  {','.join(e['ladder']) or '-'}"
        )
    t = stats["total"]
    px = t["identity_pixels"]
    sp = t["splits"]
    lines.append("")
    lines.append(
        f"total: {t['classes']} classes, {t['images']} images "
        f"(train {sp['train']}, val {sp['val']}, test {sp['test']})"
    )
    if px["mean"] is not None:
        lines.append(f"identity-crop active pixels: mean {px['mean']:.1f}, min {px['min']}, max {px['max']}")
    if "image_pixels" in t and t["image_pixels"]["mean"] is not None:
        ip = t["image_pixels"]
        lines.append(f"stored-image active pixels: mean {ip['mean']:.1f}, min {ip['min']}, max {ip['max']}")
    lad = t["ladder_classes"]
    lines.append(
        f"ladder usage (classes): spacing {lad['spacing']}, threshold {lad['threshold']}, reuse {lad['reuse']}"
    )
    return "\n".join(lines)
