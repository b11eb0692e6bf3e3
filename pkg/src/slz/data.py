"""Dataset preparation: palette decoding, class schemes, tiling, remapping
and augmentation.

Images travel through the pipeline as float32 arrays of shape (3,H,W) scaled
to [0,1]; class masks are int32 arrays of shape (H,W). PNG round-trips happen
only at the IO boundary. The base palette and the three built-in class-merge
schemes live in editable YAML files under ``slz/schemes/``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .imageops import center_crop, center_pad_edge, resize_bilinear, resize_nearest

SCHEME_NAMES = ("model1", "model2", "model3")


# ---------------------------------------------------------------------------
# palette
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Palette:
    names: tuple[str, ...]
    colors: np.ndarray           # (N,3) uint8

    def __post_init__(self):
        if self.colors.shape != (len(self.names), 3):
            raise ValueError("palette colors must be one RGB triple per class")
        packed = self._pack(self.colors)
        if len(set(packed.tolist())) != len(self.names):
            raise ValueError("palette colors must be distinct")

    @staticmethod
    def _pack(rgb: np.ndarray) -> np.ndarray:
        rgb = rgb.astype(np.uint32)
        return (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]

    def class_id(self, name: str) -> int:
        return self.names.index(name)


def _scheme_file(name: str):
    return resources.files("slz.schemes").joinpath(f"{name}.yaml")


def load_palette(path: str | Path | None = None) -> Palette:
    """Load the base palette; defaults to the bundled 20-class file."""
    if path is None:
        text = _scheme_file("palette").read_text()
    else:
        text = Path(path).read_text()
    doc = yaml.safe_load(text)
    entries = doc["classes"]
    names = tuple(e["name"] for e in entries)
    colors = np.array([e["color"] for e in entries], dtype=np.uint8)
    return Palette(names, colors)


def decode_palette_mask(color_image: np.ndarray, palette: Palette) -> np.ndarray:
    """Exact color -> base-class-ID decoding; any unknown color is an error
    naming the color and the first offending pixel."""
    if color_image.ndim != 3 or color_image.shape[2] != 3:
        raise ValueError(f"color mask must be (H,W,3), got {color_image.shape}")
    packed = Palette._pack(color_image)
    table = {int(p): i for i, p in enumerate(Palette._pack(palette.colors))}
    uniq, inverse = np.unique(packed, return_inverse=True)
    lut = np.empty(len(uniq), dtype=np.int32)
    for i, p in enumerate(uniq.tolist()):
        if p not in table:
            y, x = np.argwhere(packed == p)[0]
            rgb = tuple(int(v) for v in color_image[y, x])
            raise ValueError(f"unknown mask color {rgb} at pixel ({y},{x})")
        lut[i] = table[p]
    return lut[inverse].reshape(color_image.shape[:2])


def encode_palette_mask(mask: np.ndarray, palette: Palette) -> np.ndarray:
    """Base-class-ID mask -> RGB color mask."""
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() >= len(palette.names)):
        raise ValueError(f"mask holds IDs outside [0,{len(palette.names)})")
    return palette.colors[mask]


# ---------------------------------------------------------------------------
# class schemes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassScheme:
    """A reduction of the base palette to a model's output classes plus the
    subset considered safe to land on."""
    name: str
    base_classes: tuple[str, ...]
    merge_map: dict[str, str]            # base class name -> output class name
    output_classes: tuple[str, ...]
    safe_classes: frozenset[str]

    def __post_init__(self):
        missing = [b for b in self.base_classes if b not in self.merge_map]
        if missing:
            raise ValueError(f"merge map misses base classes: {missing}")
        bad = [o for o in self.merge_map.values() if o not in self.output_classes]
        if bad:
            raise ValueError(f"merge map targets unknown output classes: {sorted(set(bad))}")
        unsafe = self.safe_classes - set(self.output_classes)
        if unsafe:
            raise ValueError(f"safe classes not in output set: {sorted(unsafe)}")

    @property
    def num_classes(self) -> int:
        return len(self.output_classes)

    @property
    def safe_ids(self) -> tuple[int, ...]:
        return tuple(i for i, n in enumerate(self.output_classes)
                     if n in self.safe_classes)

    def output_id(self, name: str) -> int:
        return self.output_classes.index(name)

    def base_to_output(self) -> np.ndarray:
        """Lookup array mapping base class IDs to output class IDs."""
        return np.array([self.output_classes.index(self.merge_map[b])
                         for b in self.base_classes], dtype=np.int32)


def load_scheme(name_or_path: str | Path,
                palette: Palette | None = None) -> ClassScheme:
    """Load a scheme by built-in name (model1/model2/model3) or YAML path."""
    palette = palette or load_palette()
    if isinstance(name_or_path, str) and name_or_path in SCHEME_NAMES:
        text = _scheme_file(name_or_path).read_text()
    else:
        text = Path(name_or_path).read_text()
    doc = yaml.safe_load(text)
    return ClassScheme(
        name=doc["name"],
        base_classes=palette.names,
        merge_map=dict(doc["merge"]),
        output_classes=tuple(doc["output_classes"]),
        safe_classes=frozenset(doc["safe_classes"]),
    )


def remap(mask: np.ndarray, scheme: ClassScheme) -> np.ndarray:
    """Apply the scheme's merge map to a base-class mask."""
    mask = np.asarray(mask)
    n_base = len(scheme.base_classes)
    if mask.size and (mask.min() < 0 or mask.max() >= n_base):
        raise ValueError(f"mask holds base IDs outside [0,{n_base})")
    return scheme.base_to_output()[mask]


# ---------------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledTile:
    image: np.ndarray            # (3,t,t) float32 in [0,1]
    mask: np.ndarray             # (t,t) int32
    source: str = ""
    row: int = 0
    col: int = 0


def _grid_anchors(extent: int, tile: int) -> list[int]:
    # non-overlapping grid from 0; the final tile is anchored flush to the
    # edge so no pixels are discarded
    anchors = list(range(0, extent - tile + 1, tile))
    if anchors[-1] != extent - tile:
        anchors.append(extent - tile)
    return anchors


def tile(image: np.ndarray, mask: np.ndarray, tile_size: int = 256,
         scale: float = 1.0, source: str = "") -> list[LabeledTile]:
    """Cut an aligned image/mask pair into tile_size squares on a grid
    anchored at (0,0), with edge tiles anchored flush to the far border.
    `scale` != 1 resizes the source first (bilinear image, nearest mask)."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must be (3,H,W), got {image.shape}")
    if mask.shape != image.shape[1:]:
        raise ValueError(
            f"mask shape {mask.shape} does not match image {image.shape[1:]}")
    if scale != 1.0:
        h = max(1, round(image.shape[1] * scale))
        w = max(1, round(image.shape[2] * scale))
        image = resize_bilinear(image, h, w)
        mask = resize_nearest(mask, h, w)
    h, w = mask.shape
    if h < tile_size or w < tile_size:
        raise ValueError(
            f"source {h}x{w} is smaller than the tile size {tile_size}")
    tiles = []
    for r, y in enumerate(_grid_anchors(h, tile_size)):
        for c, x in enumerate(_grid_anchors(w, tile_size)):
            tiles.append(LabeledTile(
                image=np.ascontiguousarray(image[:, y:y + tile_size, x:x + tile_size]),
                mask=np.ascontiguousarray(mask[y:y + tile_size, x:x + tile_size]),
                source=source, row=r, col=c))
    return tiles


def tile_count(h: int, w: int, tile_size: int) -> int:
    return math.ceil(h / tile_size) * math.ceil(w / tile_size)


def reassemble(tiles: list[LabeledTile], h: int, w: int,
               tile_size: int) -> np.ndarray:
    """Rebuild a mask from grid tiles, last writer wins on edge overlaps."""
    out = np.zeros((h, w), dtype=np.int32)
    ys = _grid_anchors(h, tile_size)
    xs = _grid_anchors(w, tile_size)
    for t in tiles:
        y, x = ys[t.row], xs[t.col]
        out[y:y + tile_size, x:x + tile_size] = t.mask
    return out


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

AUGMENT_OPS = ("horizontal_flip", "rotate90", "brightness_jitter", "rescale")


def augment(tile_in: LabeledTile, ops: list[str], seed: int) -> LabeledTile:
    """Apply the listed ops in order. Geometric ops transform image and mask
    identically; brightness only touches the image. Jitter and rescale draw
    their factors from the seed, so the result is a pure function of
    (tile, ops, seed)."""
    rng = np.random.default_rng(seed)
    img = tile_in.image
    mask = tile_in.mask
    for op in ops:
        if op == "horizontal_flip":
            img = img[:, :, ::-1]
            mask = mask[:, ::-1]
        elif op == "rotate90":
            img = np.rot90(img, k=1, axes=(1, 2))
            mask = np.rot90(mask, k=1)
        elif op == "brightness_jitter":
            factor = rng.uniform(0.8, 1.2)
            img = np.clip(img * factor, 0.0, 1.0)
        elif op == "rescale":
            factor = rng.uniform(0.8, 1.25)
            h, w = mask.shape
            nh = max(1, round(h * factor))
            nw = max(1, round(w * factor))
            img = resize_bilinear(img, nh, nw)
            mask = resize_nearest(mask, nh, nw)
            if factor >= 1.0:
                img = center_crop(img, h, w)
                mask = center_crop(mask, h, w)
            else:
                img = center_pad_edge(img, h, w)
                mask = center_pad_edge(mask, h, w)
        else:
            raise ValueError(f"unsupported augmentation op {op!r}; "
                             f"known ops: {AUGMENT_OPS}")
    return replace(tile_in,
                   image=np.ascontiguousarray(img, dtype=np.float32),
                   mask=np.ascontiguousarray(mask, dtype=np.int32))


# ---------------------------------------------------------------------------
# PNG IO
# ---------------------------------------------------------------------------

def load_image_png(path: str | Path) -> np.ndarray:
    """8-bit RGB PNG -> (3,H,W) float32 in [0,1]."""
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    return np.ascontiguousarray(rgb.transpose(2, 0, 1)) / 255.0


def save_image_png(path: str | Path, image: np.ndarray) -> None:
    """(3,H,W) float in [0,1] -> 8-bit RGB PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    rgb = (arr.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


def load_mask_png(path: str | Path) -> np.ndarray:
    """Single-channel 8-bit PNG of class IDs -> (H,W) int32."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.int32)
    return arr


def save_mask_png(path: str | Path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() > 255):
        raise ValueError("class-ID masks must fit in 8 bits")
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def load_color_mask_png(path: str | Path) -> np.ndarray:
    """8-bit RGB PNG -> (H,W,3) uint8 color mask (not yet decoded)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# tile corpus IO
# ---------------------------------------------------------------------------

def save_tile_corpus(tiles: list[LabeledTile], out_dir: str | Path,
                     scheme_name: str, tile_size: int) -> Path:
    """Write tiles as image/mask PNG pairs plus a YAML manifest; masks hold
    scheme class IDs. Returns the manifest path."""
    out = Path(out_dir)
    (out / "tiles").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, t in enumerate(tiles):
        stem = f"{t.source or 'tile'}_r{t.row:03d}_c{t.col:03d}"
        img_rel = f"tiles/{stem}_img.png"
        mask_rel = f"tiles/{stem}_mask.png"
        save_image_png(out / img_rel, t.image)
        save_mask_png(out / mask_rel, t.mask)
        entries.append({"image": img_rel, "mask": mask_rel,
                        "source": t.source, "row": t.row, "col": t.col})
    manifest = {"scheme": scheme_name, "tile_size": tile_size, "tiles": entries}
    path = out / "tiles_manifest.yaml"
    path.write_text(yaml.safe_dump(manifest, sort_keys=False))
    return path


def load_tile_corpus(manifest_path: str | Path
                     ) -> tuple[str, int, list[LabeledTile]]:
    path = Path(manifest_path)
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict) or "tiles" not in doc:
        raise ValueError(f"{path}: not a tile manifest (no tiles list)")
    tiles = []
    for e in doc["tiles"]:
        tiles.append(LabeledTile(
            image=load_image_png(path.parent / e["image"]),
            mask=load_mask_png(path.parent / e["mask"]),
            source=e.get("source", ""), row=int(e.get("row", 0)),
            col=int(e.get("col", 0))))
    return doc.get("scheme", ""), int(doc.get("tile_size", 0)), tiles
