"""On-disk dataset format and loader.

A dataset directory holds:
  manifest.json   version, layout tag, count, panel_px, seed, filters,
                  declared split ratios, and optional fixed section sizes
                  (used when train/valid and test carry different filters)
  problems.ndjson one JSON object per problem, symbolic content only
  images.bin      raw uint8 panels, 16 * px * px bytes per problem in
                  problem order (8 context then 8 candidates, row-major)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .render import render_problem
from .types import Layout, ProblemSpec

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Malformed manifest, problem file, or image file."""


@dataclass
class Dataset:
    root: Path
    manifest: dict
    problems: list[ProblemSpec]
    images: np.ndarray  # [N, 16, px, px] uint8 memmap

    def __len__(self) -> int:
        return len(self.problems)

    @property
    def panel_px(self) -> int:
        return int(self.manifest["panel_px"])

    @property
    def sections(self) -> Optional[list[int]]:
        return self.manifest.get("sections")

    def answers(self) -> np.ndarray:
        return np.asarray([p.answer_index for p in self.problems], dtype=np.int64)

    def batch_images(self, indices: Sequence[int],
                     mask_context: bool = False) -> np.ndarray:
        """float32 panels in [0,1], [B,16,px,px]; optionally zero the context."""
        batch = self.images[np.asarray(indices)].astype(np.float32) / 255.0
        if mask_context:
            batch[:, :8] = 0.0
        return batch


def write_dataset(out_dir: Union[str, Path], problems: Sequence[ProblemSpec],
                  panel_px: int, seed: int, layout_tag: str,
                  filters: Optional[dict] = None,
                  sections: Optional[Sequence[int]] = None,
                  split: Sequence[float] = (0.6, 0.2, 0.2)) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": FORMAT_VERSION,
        "layout": layout_tag,
        "count": len(problems),
        "panel_px": panel_px,
        "seed": seed,
        "split": list(split),
        "filters": filters or {},
        "sections": list(sections) if sections is not None else None,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "problems.ndjson", "w") as fh:
        for spec in problems:
            fh.write(json.dumps(spec.to_json_obj(), sort_keys=True,
                                separators=(",", ":")))
            fh.write("\n")
    with open(out / "images.bin", "wb") as fh:
        for spec in problems:
            fh.write(render_problem(spec.panels, spec.candidates, spec.layout,
                                    panel_px).tobytes())
    return out


def read_dataset(root: Union[str, Path]) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetFormatError(f"{root}: no manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{manifest_path}: {exc}") from exc
    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{root}: unsupported version {version!r}")
    count = int(manifest["count"])
    px = int(manifest["panel_px"])

    problems = []
    with open(root / "problems.ndjson") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                problems.append(ProblemSpec.from_json_obj(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise DatasetFormatError(
                    f"{root}/problems.ndjson line {lineno}: {exc}") from exc
    if len(problems) != count:
        raise DatasetFormatError(f"{root}: manifest count {count} != "
                                 f"{len(problems)} problems")

    image_path = root / "images.bin"
    expected = count * 16 * px * px
    actual = image_path.stat().st_size if image_path.exists() else -1
    if actual != expected:
        raise DatasetFormatError(f"{image_path}: expected {expected} bytes, "
                                 f"found {actual} (truncated at offset {max(actual, 0)})")
    images = np.memmap(image_path, dtype=np.uint8, mode="r",
                       shape=(count, 16, px, px))

    sections = manifest.get("sections")
    if sections is not None and sum(sections) != count:
        raise DatasetFormatError(f"{root}: section sizes {sections} do not sum "
                                 f"to count {count}")
    return Dataset(root=root, manifest=manifest, problems=problems, images=images)
