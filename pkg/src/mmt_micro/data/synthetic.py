"""Synthetic grounded-translation task.

Each example pairs a sentence with a feature grid. The source names a grid
region and an ambiguous "painted" referent; the target translates the
sentence word for word except that the referent becomes the color word of
the cell(s) sitting in the named region. The color is drawn independently
of the text, so text alone is chance-level on it, while the feature map
plus the region word determine it exactly.

Feature grids are ReLU-like (nonnegative). The first four channels encode
each cell's quadrant (coarse positional information, standing in for the
location cues real convolutional maps carry); the remaining channels hold
a per-color prototype pattern at referent and distractor cells. Distractor
cells live outside the named region and carry random other colors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..tensor import Rng
from .batching import ParallelCorpus
from .features import FeatureStore

REGION_WORDS_SRC = ("northwest", "northeast", "southwest", "southeast")
REGION_WORDS_TGT = ("nordwesten", "nordosten", "suedwesten", "suedosten")
NOUNS_SRC = ("thing", "shape", "object", "item", "figure", "mark")
NOUNS_TGT = ("ding", "form", "objekt", "stueck", "figur", "zeichen")
OPENERS_SRC = ("", "now", "look", "well", "see")
OPENERS_TGT = ("", "jetzt", "schau", "nun", "sieh")
BASE_COLORS = ("rot", "blau", "gruen", "gelb", "schwarz", "weiss", "lila", "orange")

N_REGIONS = 4
REGION_GAIN = 1.0


@dataclass
class SynthSpec:
    """Task shape: grid, channel budget, colors, distractors, noise,
    split sizes, and the generation seed."""

    width: int = 4
    channels: int = 16
    referent_cells: int = 1
    colors: int = 5
    distractors: int = 4
    noise: float = 0.05
    train_size: int = 3000
    dev_size: int = 200
    test_size: int = 200
    feature_scale: float = 1.0
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.width < 2:
            raise ConfigError(f"grid width must be at least 2, got {self.width}")
        if self.colors < 2:
            raise ConfigError(f"need at least 2 colors, got {self.colors}")
        if self.channels < N_REGIONS + self.colors:
            raise ConfigError(
                f"channels must cover the region bank plus one channel per color "
                f"(at least {N_REGIONS + self.colors}), got {self.channels}"
            )
        cells = self.width**2
        if not 0 <= self.distractors < cells:
            raise ConfigError(f"distractors must lie in [0, {cells}), got {self.distractors}")
        smallest_region = min(len(v) for v in _region_cells(self.width).values())
        if not 1 <= self.referent_cells <= smallest_region:
            raise ConfigError(
                f"referent_cells must lie in [1, {smallest_region}] for width {self.width}, "
                f"got {self.referent_cells}"
            )
        outside = cells - max(len(v) for v in _region_cells(self.width).values())
        if self.distractors > outside:
            raise ConfigError(
                f"at most {outside} distractor cells fit outside a region, got {self.distractors}"
            )
        if self.noise < 0 or self.feature_scale <= 0:
            raise ConfigError("noise must be >= 0 and feature_scale > 0")
        for name in ("train_size", "dev_size", "test_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        return self


@dataclass
class SynthDataset:
    spec: SynthSpec
    corpora: dict[str, ParallelCorpus]
    features: dict[str, FeatureStore]
    color_words: list[str]


def write_dataset(dataset: SynthDataset, out_dir) -> None:
    """Materialize a generated task: per-split text and feature files, the
    color-word list, and a spec snapshot."""
    from pathlib import Path

    from .features import save_features
    from .text import write_lines

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, corpus in dataset.corpora.items():
        write_lines(out / f"{split}.src", (" ".join(s) for s in corpus.src))
        write_lines(out / f"{split}.tgt", (" ".join(t) for t in corpus.tgt))
        save_features(dataset.features[split], out / f"features.{split}.mmf")
    write_lines(out / "colors.txt", dataset.color_words)
    spec = dataset.spec
    write_lines(
        out / "task.cfg",
        (f"{name} = {getattr(spec, name)}" for name in (
            "width", "channels", "referent_cells", "colors", "distractors",
            "noise", "train_size", "dev_size", "test_size", "feature_scale", "seed",
        )),
    )


def color_words(k: int) -> list[str]:
    words = list(BASE_COLORS[:k])
    words += [f"farbe{i}" for i in range(len(words), k)]
    return words


def color_prototypes(spec: SynthSpec) -> np.ndarray:
    """Unit-norm nonnegative prototype per color over the color bank.

    Color k owns the channels congruent to k modulo the color count, so the
    prototypes are near-orthogonal for every seed (random all-positive
    vectors crowd together, which makes the colors much harder to tell
    apart); a seeded jitter adds texture. Derived from a dedicated rng
    stream so tests and oracles can recompute them without replaying
    example generation.
    """
    rng = Rng(spec.seed, stream=1)
    dim = spec.channels - N_REGIONS
    protos = np.zeros((spec.colors, dim))
    channels = np.arange(dim)
    for k in range(spec.colors):
        protos[k, channels % spec.colors == k] = 1.0
    protos += 0.15 * rng.uniform((spec.colors, dim))
    protos /= np.sqrt((protos**2).sum(axis=1, keepdims=True))
    return protos.astype(np.float32)


def _region_cells(width: int) -> dict[int, list[tuple[int, int]]]:
    """Quadrant partition of the grid; region ids index REGION_WORDS_*."""
    split = (width + 1) // 2
    regions: dict[int, list[tuple[int, int]]] = {0: [], 1: [], 2: [], 3: []}
    for r in range(width):
        for c in range(width):
            region = (0 if r < split else 2) + (0 if c < split else 1)
            regions[region].append((r, c))
    return regions


def region_of_cell(width: int, row: int, col: int) -> int:
    split = (width + 1) // 2
    return (0 if row < split else 2) + (0 if col < split else 1)


def generate_synthetic(spec: SynthSpec) -> SynthDataset:
    """Build the train/dev/test corpora and aligned feature stores.

    Deterministic for a fixed spec (including seed); the same spec always
    reproduces identical sentences and maps.
    """
    spec.validate()
    rng = Rng(spec.seed, stream=0)
    protos = color_prototypes(spec)
    words = color_words(spec.colors)
    regions = _region_cells(spec.width)

    corpora: dict[str, ParallelCorpus] = {}
    features: dict[str, FeatureStore] = {}
    for split, size in (("train", spec.train_size), ("dev", spec.dev_size), ("test", spec.test_size)):
        src_sents, tgt_sents, maps = [], [], []
        for _ in range(size):
            src, tgt, fmap = _generate_example(spec, rng, protos, words, regions)
            src_sents.append(src)
            tgt_sents.append(tgt)
            maps.append(fmap)
        corpora[split] = ParallelCorpus(src=src_sents, tgt=tgt_sents, split=split)
        features[split] = FeatureStore(maps=np.stack(maps))
    return SynthDataset(spec=spec, corpora=corpora, features=features, color_words=words)


def _generate_example(spec, rng, protos, words, regions):
    width, channels = spec.width, spec.channels
    opener = int(rng.integers(0, len(OPENERS_SRC)))
    noun = int(rng.integers(0, len(NOUNS_SRC)))
    region = int(rng.integers(0, N_REGIONS))
    color = int(rng.integers(0, spec.colors))

    src = []
    tgt = []
    if OPENERS_SRC[opener]:
        src.append(OPENERS_SRC[opener])
        tgt.append(OPENERS_TGT[opener])
    src += ["the", NOUNS_SRC[noun], "in", "the", REGION_WORDS_SRC[region], "is", "painted"]
    tgt += ["das", NOUNS_TGT[noun], "im", REGION_WORDS_TGT[region], "ist", words[color]]

    fmap = np.zeros((channels, width, width), dtype=np.float64)
    for r in range(width):
        for c in range(width):
            fmap[region_of_cell(width, r, c), r, c] = REGION_GAIN

    cells = regions[region]
    picks = rng.choice(len(cells), size=spec.referent_cells, replace=False)
    for i in np.atleast_1d(picks):
        r, c = cells[int(i)]
        fmap[N_REGIONS:, r, c] += protos[color]

    outside = [cell for reg, cell_list in regions.items() if reg != region for cell in cell_list]
    if spec.distractors:
        picks = rng.choice(len(outside), size=spec.distractors, replace=False)
        for i in np.atleast_1d(picks):
            r, c = outside[int(i)]
            fmap[N_REGIONS:, r, c] += protos[int(rng.integers(0, spec.colors))]

    if spec.noise > 0:
        fmap += spec.noise * rng.normal((channels, width, width))
        np.maximum(fmap, 0.0, out=fmap)
    fmap *= spec.feature_scale
    return src, tgt, fmap.astype(np.float32)
