"""Procedural synthetic scenes with exact ground-truth masks.

Two layers: `synth_scene` renders a fixed-view canvas of textured rectangular
regions (base-palette classes) with optional moving objects, one frame per
time step; `render_descent` turns a static region layout into a vertical
descent sequence by viewing the canvas through the altitude-ratio crop, with
optional intruding objects stamped in view coordinates from the frame they
enter. Masks are exact by construction. Everything is a pure function of
(spec, seed).

Scene specs and descent manifests are YAML; see the README for the schemas.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .data import Palette, load_palette, save_image_png, save_mask_png
from .geometry import DescentProfile, altitude_at, backproject_crop
from .pipeline import FrameRecord


# ---------------------------------------------------------------------------
# scene specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionSpec:
    rect: tuple[int, int, int, int]      # x, y, w, h in canvas pixels
    class_name: str
    noise: float = 0.05                  # texture noise amplitude


@dataclass(frozen=True)
class ObjectSpec:
    rect: tuple[int, int, int, int]      # x, y, w, h at start_frame
    class_name: str
    velocity: tuple[float, float] = (0.0, 0.0)   # px/frame
    start_frame: int = 0
    end_frame: int | None = None         # exclusive; None = until the last frame


@dataclass(frozen=True)
class SceneSpec:
    size: tuple[int, int]                # width, height
    regions: tuple[RegionSpec, ...]
    objects: tuple[ObjectSpec, ...] = ()


def parse_scene_spec(doc: dict) -> SceneSpec:
    regions = tuple(RegionSpec(rect=tuple(r["rect"]), class_name=r["class"],
                               noise=float(r.get("noise", 0.05)))
                    for r in doc.get("regions", []))
    objects = tuple(ObjectSpec(rect=tuple(o["rect"]), class_name=o["class"],
                               velocity=tuple(o.get("velocity", (0.0, 0.0))),
                               start_frame=int(o.get("start_frame", 0)),
                               end_frame=o.get("end_frame"))
                    for o in doc.get("moving_objects", []))
    return SceneSpec(size=tuple(doc["size"]), regions=regions, objects=objects)


def load_scene_spec(path: str | Path) -> SceneSpec:
    return parse_scene_spec(yaml.safe_load(Path(path).read_text()))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _object_rect_at(obj: ObjectSpec, frame: int) -> tuple[int, int, int, int]:
    dt = frame - obj.start_frame
    x = round(obj.rect[0] + obj.velocity[0] * dt)
    y = round(obj.rect[1] + obj.velocity[1] * dt)
    return x, y, obj.rect[2], obj.rect[3]


def _texture(rng: np.random.Generator, color: np.ndarray, h: int, w: int,
             noise: float) -> np.ndarray:
    base = (color.astype(np.float64) / 255.0)[:, None, None]
    tex = base + rng.normal(0.0, noise, size=(3, h, w))
    return np.clip(tex, 0.0, 1.0)


def render_base(spec: SceneSpec, seed: int,
                palette: Palette | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Render the static region layout once: (image (3,H,W) float32,
    mask (H,W) int32 of base-class IDs). Rejects layouts that leave canvas
    pixels uncovered."""
    palette = palette or load_palette()
    w, h = spec.size
    rng = np.random.default_rng(seed)
    image = np.zeros((3, h, w), dtype=np.float64)
    mask = np.full((h, w), -1, dtype=np.int32)
    covered = np.zeros((h, w), dtype=bool)
    for region in spec.regions:
        x, y, rw, rh = region.rect
        if x < 0 or y < 0 or x + rw > w or y + rh > h:
            raise ValueError(f"region {region.rect} exceeds the {w}x{h} canvas")
        cid = palette.class_id(region.class_name)
        image[:, y:y + rh, x:x + rw] = _texture(rng, palette.colors[cid],
                                                rh, rw, region.noise)
        mask[y:y + rh, x:x + rw] = cid
        covered[y:y + rh, x:x + rw] = True
    if not covered.all():
        yy, xx = np.argwhere(~covered)[0]
        raise ValueError(
            f"regions leave {int((~covered).sum())} canvas pixels uncovered, "
            f"first at ({yy},{xx})")
    return image.astype(np.float32), mask


def synth_scene(spec: SceneSpec, seed: int, num_frames: int = 1,
                palette: Palette | None = None
                ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fixed-view frame sequence: static textured regions plus objects that
    translate by their velocity each frame, overwriting image and mask.
    Objects must stay inside the canvas while active."""
    palette = palette or load_palette()
    base_img, base_mask = render_base(spec, seed, palette)
    w, h = spec.size
    rng = np.random.default_rng(seed + 1)
    obj_textures = []
    for obj in spec.objects:
        cid = palette.class_id(obj.class_name)
        obj_textures.append(
            (cid, _texture(rng, palette.colors[cid],
                           obj.rect[3], obj.rect[2], 0.05).astype(np.float32)))
        for frame in range(obj.start_frame,
                           num_frames if obj.end_frame is None
                           else min(obj.end_frame, num_frames)):
            x, y, ow, oh = _object_rect_at(obj, frame)
            if x < 0 or y < 0 or x + ow > w or y + oh > h:
                raise ValueError(
                    f"object {obj.rect} leaves the canvas at frame {frame}")
    frames = []
    for frame in range(num_frames):
        img = base_img.copy()
        mask = base_mask.copy()
        for obj, (cid, tex) in zip(spec.objects, obj_textures):
            end = num_frames if obj.end_frame is None else obj.end_frame
            if not obj.start_frame <= frame < end:
                continue
            x, y, ow, oh = _object_rect_at(obj, frame)
            img[:, y:y + oh, x:x + ow] = tex
            mask[y:y + oh, x:x + ow] = cid
        frames.append((img, mask))
    return frames


# ---------------------------------------------------------------------------
# descent rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntrusionSpec:
    """A moving object that enters the view mid-descent. The rectangle is in
    view pixels at enter_frame; its apparent size then grows with 1/altitude
    as the camera closes in. Velocity is view px/frame."""
    enter_frame: int
    rect: tuple[int, int, int, int]
    class_name: str
    velocity: tuple[float, float] = (0.0, 0.0)


def render_descent(spec: SceneSpec, profile: DescentProfile, num_frames: int,
                   seed: int, intrusions: tuple[IntrusionSpec, ...] = (),
                   palette: Palette | None = None) -> list[FrameRecord]:
    """Vertical-descent frame sequence over a static scene: frame i is the
    central altitude-ratio crop of the frame-0 view, resampled back to the
    canvas resolution, with intruding objects stamped in view coordinates
    (clipped at the frame edges). Ground truth masks are exact."""
    if num_frames < 1:
        raise ValueError("descent needs at least one frame")
    if num_frames - 1 > profile.landing_frame:
        raise ValueError("descent extends past the landing frame")
    palette = palette or load_palette()
    base_img, base_mask = render_base(spec, seed, palette)
    w, h = spec.size
    rng = np.random.default_rng(seed + 2)
    textures = {}
    for k, intr in enumerate(intrusions):
        cid = palette.class_id(intr.class_name)
        textures[k] = (cid, rng.uniform(0.0, 1.0, size=3))
    h0 = altitude_at(profile, 0)
    records = []
    for i in range(num_frames):
        alt = altitude_at(profile, i)
        if alt == h0:
            img, mask = base_img.copy(), base_mask.copy()
        else:
            img = backproject_crop(base_img, h0, alt, kind="image")
            mask = backproject_crop(base_mask, h0, alt, kind="mask")
        for k, intr in enumerate(intrusions):
            if i < intr.enter_frame:
                continue
            cid, color = textures[k]
            alt_enter = altitude_at(profile, intr.enter_frame)
            scale = alt_enter / alt if alt > 0 else 1.0
            x, y, ow, oh = _object_rect_at(
                ObjectSpec(intr.rect, intr.class_name, intr.velocity,
                           intr.enter_frame), i)
            ow = max(1, round(ow * scale))
            oh = max(1, round(oh * scale))
            x0, y0 = max(0, x), max(0, y)
            x1, y1 = min(w, x + ow), min(h, y + oh)
            if x1 <= x0 or y1 <= y0:
                continue
            img[:, y0:y1, x0:x1] = color[:, None, None]
            mask[y0:y1, x0:x1] = cid
        records.append(FrameRecord(frame_index=i, altitude_m=alt,
                                   image=img.astype(np.float32),
                                   truth_mask=mask))
    return records


# ---------------------------------------------------------------------------
# demo scenes
# ---------------------------------------------------------------------------

def demo_scene_spec(size: int = 256) -> SceneSpec:
    """Structured 256x256 layout covering grass, paved area, water, roof and
    two other-class surfaces, with region edges off the 64px tile grid so
    tiles cut from it contain class boundaries."""
    if size != 256:
        raise ValueError("the demo layout is designed for a 256px canvas")
    rows = (
        (0, 48, (("grass", 96), ("paved area", 80), ("water", 80))),
        (48, 80, (("roof", 64), ("grass", 80), ("tree", 112))),
        (128, 64, (("paved area", 112), ("dirt", 80), ("grass", 64))),
        (192, 64, (("water", 80), ("roof", 80), ("paved area", 96))),
    )
    regions = []
    for y, height, cells in rows:
        x = 0
        for name, width in cells:
            regions.append(RegionSpec(rect=(x, y, width, height),
                                      class_name=name))
            x += width
    return SceneSpec(size=(size, size), regions=tuple(regions))


def grass_field_spec(size: int = 256) -> SceneSpec:
    """Homogeneous all-grass canvas; the background for intrusion descents."""
    return SceneSpec(size=(size, size),
                     regions=(RegionSpec(rect=(0, 0, size, size),
                                         class_name="grass"),))


# ---------------------------------------------------------------------------
# descent manifests (frame lists on disk)
# ---------------------------------------------------------------------------

def write_descent_run(records: list[FrameRecord], out_dir: str | Path,
                      environment: str = "default") -> Path:
    """Write frames (and ground truth when present) as PNGs plus a YAML
    manifest listing frame paths, indices and altitudes. Returns the manifest
    path."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    entries = []
    have_masks = any(r.truth_mask is not None for r in records)
    if have_masks:
        (out / "masks").mkdir(exist_ok=True)
    for r in records:
        img_rel = f"frames/f{r.frame_index:04d}.png"
        save_image_png(out / img_rel, r.load_image())
        entry = {"index": r.frame_index, "altitude_m": float(r.altitude_m),
                 "image": img_rel}
        if r.truth_mask is not None:
            mask_rel = f"masks/f{r.frame_index:04d}.png"
            save_mask_png(out / mask_rel, r.truth_mask)
            entry["mask"] = mask_rel
        entries.append(entry)
    manifest = {"environment": environment, "frames": entries}
    path = out / "manifest.yaml"
    path.write_text(yaml.safe_dump(manifest, sort_keys=False))
    return path


def load_descent_manifest(path: str | Path) -> tuple[str, list[FrameRecord]]:
    """Read a manifest into lazy FrameRecords (PNGs load on demand)."""
    path = Path(path)
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict) or "frames" not in doc:
        raise ValueError(f"{path}: not a descent manifest (no frames list)")
    env = doc.get("environment", "default")
    records = []
    for entry in doc["frames"]:
        img = entry.get("image")
        mask = entry.get("mask")
        records.append(FrameRecord(
            frame_index=int(entry["index"]),
            altitude_m=float(entry["altitude_m"]),
            image_path=str(path.parent / img) if img else None,
            truth_mask_path=str(path.parent / mask) if mask else None,
        ))
    records.sort(key=lambda r: r.frame_index)
    return env, records
