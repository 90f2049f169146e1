"""Training and testing corpora: synthetic power-law textures, directory
ingestion, (object, intensity) pair generation, splitting and persistence."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingArtifactError, ShapeMismatchError
from .fieldcore import center_crop, dft2, idft2, minmax_rescale, radial_frequency
from .imageio import read_image, read_pfm, write_pfm
from .optics import ForwardModel, preprocess
from .spectral import SpectralFilter, flattening_filter, premodulate as _premodulate

log = logging.getLogger(__name__)

ROLES = ("train", "test", "calibration", "all")


@dataclass
class Corpus:
    images: np.ndarray  # (K, N, N) in [0, 1]
    provenance: dict = field(default_factory=dict)
    role: str = "all"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        if self.images.ndim != 3:
            raise ShapeMismatchError("corpus images must stack to (K, N, N)")
        if self.role not in ROLES:
            raise ValueError(f"unknown corpus role {self.role!r}")

    def __len__(self):
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    @property
    def shape(self):
        return self.images.shape[1:]


@dataclass
class PairSet:
    objects: np.ndarray
    intensities: np.ndarray
    background: np.ndarray
    premodulated: bool
    optics: str
    role: str = "train"

    def __len__(self):
        return len(self.objects)


def texture_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def synthesize_texture(n: int, exponent: float, seed, index: int = 0) -> np.ndarray:
    """White Gaussian noise shaped to a ``r**exponent`` power spectrum, rescaled to [0, 1]."""
    if n < 8:
        raise ValueError("texture size must be >= 8")
    if exponent > 0:
        raise ValueError("texture exponent must be <= 0")
    rng = texture_seed(seed, index)
    noise = rng.standard_normal((n, n))
    r = radial_frequency((n, n))
    r[0, 0] = 1.0
    gain = r ** (exponent / 2)
    gain[0, 0] = 0.0
    shaped = idft2(dft2(noise) * gain).real
    return minmax_rescale(shaped)


def synthesize_corpus(count: int, n: int, exponent: float, seed: int, role="all") -> Corpus:
    images = np.stack([synthesize_texture(n, exponent, seed, i) for i in range(count)])
    return Corpus(images, {"kind": "synthetic", "exponent": exponent, "seed": seed}, role)


def _area_weights(src: int, dst: int) -> np.ndarray:
    """Row-stochastic (dst, src) matrix averaging source cells by overlap length."""
    edges_src = np.arange(src + 1) / src
    edges_dst = np.arange(dst + 1) / dst
    lo = np.maximum(edges_dst[:-1, None], edges_src[None, :-1])
    hi = np.minimum(edges_dst[1:, None], edges_src[None, 1:])
    w = np.clip(hi - lo, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def resample_area(image: np.ndarray, n: int) -> np.ndarray:
    h, w = image.shape
    return _area_weights(h, n) @ image @ _area_weights(w, n).T


def ingest_directory(path, n: int) -> Corpus:
    """Load every PGM/PFM under ``path`` (lexicographic order) as an n-by-n corpus."""
    if not os.path.isdir(path):
        raise MissingArtifactError(f"ingest directory {path!r} does not exist")
    names = sorted(f for f in os.listdir(path) if f.lower().endswith((".pgm", ".pfm")))
    images, used, skipped = [], [], []
    for name in names:
        full = os.path.join(path, name)
        try:
            img = read_image(full)
        except Exception as exc:  # any unreadable file is skipped, not fatal
            log.warning("skipping %s: %s", full, exc)
            skipped.append(name)
            continue
        side = min(img.shape)
        img = center_crop(img, (side, side))
        images.append(minmax_rescale(resample_area(img, n)))
        used.append(name)
    if not images:
        raise ValueError(f"no readable PGM/PFM images under {path!r}")
    return Corpus(
        np.stack(images),
        {"kind": "ingested", "path": str(path), "files": used, "skipped": len(skipped),
         "rules": "center-crop square; area-average resample; min-max rescale"},
    )


def build_pairs(corpus: Corpus, model: ForwardModel, premodulate: bool = False,
                filt: SpectralFilter | None = None) -> PairSet:
    """Simulate preprocessed diffraction intensities for every corpus image.

    With ``premodulate`` the object itself is replaced by its spectrally
    filtered version before simulation, so both the label and the input
    reflect the modulated object.
    """
    if corpus.shape != model.shape:
        raise ShapeMismatchError(f"corpus grid {corpus.shape} != model grid {model.shape}")
    if premodulate and corpus.role in ("test", "calibration"):
        raise ValueError(f"{corpus.role} corpora are never premodulated")
    objects = corpus.images
    if premodulate:
        filt = filt or flattening_filter(corpus.shape)
        objects = np.stack([_premodulate(im, filt) for im in objects])
    background = model.background()
    intensities = np.stack([preprocess(model.simulate(o), background) for o in objects])
    return PairSet(
        objects=objects,
        intensities=intensities,
        background=background,
        premodulated=bool(premodulate),
        optics=model.config.fingerprint(),
        role="train" if corpus.role == "all" else corpus.role,
    )


def split_sizes(total: int, fractions) -> list:
    fractions = tuple(float(f) for f in fractions)
    if any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise ValueError("split fractions must be positive and sum to at most 1")
    sizes = [int(np.floor(f * total + 1e-9)) for f in fractions]
    if any(s == 0 for s in sizes):
        raise ValueError(f"corpus of {total} is too small for fractions {fractions}")
    return sizes


def split(corpus: Corpus, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded disjoint partition into (train, test, calibration) corpora."""
    sizes = split_sizes(len(corpus), fractions)
    order = np.random.default_rng(seed).permutation(len(corpus))
    parts, start = [], 0
    for size, role in zip(sizes, ("train", "test", "calibration")):
        idx = np.sort(order[start : start + size])
        start += size
        prov = dict(corpus.provenance, indices=idx.tolist())
        parts.append(Corpus(corpus.images[idx], prov, role))
    return tuple(parts)


# ---------------------------------------------------------------- manifest I/O

def write_manifest(path, records, header: dict) -> None:
    """``records`` are ``(role, index, object_path, intensity_path_or_None)``.

    Paths are stored relative to the manifest's directory.
    """
    with open(path, "w") as fh:
        for key in sorted(header):
            fh.write(f"#{key}={header[key]}\n")
        for role, index, obj, inten in records:
            fh.write(f"{role},{index},{obj},{inten or '-'}\n")


def read_manifest(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"manifest {path!r} not found")
    header, records = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                header[key] = value
                continue
            role, index, obj, inten = line.split(",")
            records.append((role, int(index), obj, None if inten == "-" else inten))
    return header, records


def save_corpora(out_dir, corpora, header: dict, name="corpus.manifest"):
    """Persist one PFM per image and a manifest indexing them."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    records = []
    for corpus in corpora:
        for i, im in enumerate(corpus.images):
            rel = os.path.join("images", f"{corpus.role}_{i:05d}.pfm")
            write_pfm(im, os.path.join(out_dir, rel))
            records.append((corpus.role, i, rel, None))
    path = os.path.join(out_dir, name)
    write_manifest(path, records, header)
    return path


def load_corpora(manifest_path) -> tuple[dict, dict]:
    """Return ``(header, {role: Corpus})`` from a corpus manifest."""
    header, records = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    grouped = {}
    for role, index, obj, _ in records:
        full = os.path.join(base, obj)
        if not os.path.exists(full):
            raise MissingArtifactError(f"image {full!r} listed in manifest is missing")
        grouped.setdefault(role, []).append((index, read_pfm(full)))
    corpora = {}
    for role, items in grouped.items():
        items.sort(key=lambda t: t[0])
        corpora[role] = Corpus(np.stack([im for _, im in items]), dict(header), role)
    return header, corpora


def save_pairs(out_dir, pairs: PairSet, header: dict, name="pairs.manifest"):
    pair_dir = os.path.join(out_dir, "pairs")
    os.makedirs(pair_dir, exist_ok=True)
    records = []
    for i, (obj, inten) in enumerate(zip(pairs.objects, pairs.intensities)):
        o_rel = os.path.join("pairs", f"{pairs.role}_obj_{i:05d}.pfm")
        g_rel = os.path.join("pairs", f"{pairs.role}_int_{i:05d}.pfm")
        write_pfm(obj, os.path.join(out_dir, o_rel))
        write_pfm(inten, os.path.join(out_dir, g_rel))
        records.append((pairs.role, i, o_rel, g_rel))
    bg_rel = os.path.join("pairs", "background.pfm")
    write_pfm(pairs.background, os.path.join(out_dir, bg_rel))
    full_header = dict(header, premodulated=int(pairs.premodulated), optics=pairs.optics,
                       background=bg_rel)
    path = os.path.join(out_dir, name)
    write_manifest(path, records, full_header)
    return path


def load_pairs(manifest_path) -> PairSet:
    header, records = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))

    def _load(rel):
        full = os.path.join(base, rel)
        if not os.path.exists(full):
            raise MissingArtifactError(f"file {full!r} listed in manifest is missing")
        return read_pfm(full)

    records.sort(key=lambda r: r[1])
    objects = np.stack([_load(r[2]) for r in records])
    intensities = np.stack([_load(r[3]) for r in records])
    return PairSet(
        objects=objects,
        intensities=intensities,
        background=_load(header["background"]),
        premodulated=bool(int(header.get("premodulated", "0"))),
        optics=header.get("optics", ""),
        role=records[0][0] if records else "train",
    )
