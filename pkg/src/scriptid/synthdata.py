"""Deterministic synthetic multi-script line-image corpus.

Each script is a set of procedurally drawn glyph bitmaps. Three scripts
additionally share a pool of bit-identical glyphs (mirroring writing
systems that overlap heavily), and every script can mix in ignorable
distractor glyphs: a space and ten digit-like shapes. Lines are rendered
onto height-40 grayscale strips with random gaps, baseline jitter,
contrast scaling, box blur and Gaussian noise; vertical lines are built
top-to-bottom and rotated 90 degrees counterclockwise so everything the
models see is visually horizontal.

Pixel convention: ink is bright (1.0) on a zero background, so padding a
line image with background equals zero padding.

The corpus is a pure function of its configuration, including the seed;
regeneration is byte-identical. Rendered widths are always even, which
keeps strided convolutions aligned when the harness pads batches.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import CodeSpec, ScriptCodeAlphabet

LINE_HEIGHT = 40
SPACE_GLYPH = "sp"
DIGIT_GLYPHS = tuple(f"dg{i}" for i in range(10))
SPACE_CODE = "SPACE"
DIGIT_CODE = "DIGIT"
SHARED_CODE = "SHARED"


@dataclass(frozen=True)
class Glyph:
    glyph_id: str
    bitmap: np.ndarray  # bool, height <= 32, width 8..24

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]


@dataclass
class SyntheticScript:
    script_id: str
    private: dict
    shared: dict

    @property
    def glyph_ids(self) -> tuple[str, ...]:
        return tuple(self.private) + tuple(self.shared)


@dataclass
class ScriptSet:
    scripts: list
    ignorable: dict
    shared_members: tuple[str, ...]

    @property
    def script_ids(self) -> tuple[str, ...]:
        return tuple(s.script_id for s in self.scripts)

    def script(self, script_id: str) -> SyntheticScript:
        for s in self.scripts:
            if s.script_id == script_id:
                return s
        raise KeyError(f"unknown script {script_id!r}")

    def glyph(self, glyph_id: str):
        if glyph_id in self.ignorable:
            return self.ignorable[glyph_id]
        for s in self.scripts:
            if glyph_id in s.private:
                return s.private[glyph_id]
            if glyph_id in s.shared:
                return s.shared[glyph_id]
        raise KeyError(f"unknown glyph {glyph_id!r}")

    def code_for_glyph(self, glyph_id: str) -> str:
        if glyph_id == SPACE_GLYPH:
            return SPACE_CODE
        if glyph_id in DIGIT_GLYPHS:
            return DIGIT_CODE
        if glyph_id.startswith("sh:"):
            return SHARED_CODE
        return glyph_id.split(":", 1)[0]

    def code_alphabet(self) -> ScriptCodeAlphabet:
        codes = [CodeSpec(sid, "SCRIPT", (sid,)) for sid in self.script_ids]
        codes.append(CodeSpec(SPACE_CODE, "IGNORE", ()))
        codes.append(CodeSpec(DIGIT_CODE, "IGNORE", ()))
        if self.shared_members:
            codes.append(CodeSpec(SHARED_CODE, "SHARED", self.shared_members))
        return ScriptCodeAlphabet(scripts=self.script_ids, codes=tuple(codes))

    def ocr_glyph_ids(self, script_id: str) -> tuple[str, ...]:
        """Everything a per-script recognizer can emit, deterministic order."""
        s = self.script(script_id)
        return tuple(s.private) + tuple(s.shared) + (SPACE_GLYPH,) + DIGIT_GLYPHS


@dataclass(frozen=True)
class NoiseParams:
    sigma: float = 0.06
    blur_radius: int = 1
    baseline_jitter: int = 2
    contrast_min: float = 0.65
    contrast_max: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.sigma <= 0.5):
            raise ValueError("sigma must lie in [0, 0.5]")
        if self.blur_radius < 0 or self.baseline_jitter < 0:
            raise ValueError("blur radius and jitter must be non-negative")
        if not (0.0 < self.contrast_min <= self.contrast_max <= 1.0):
            raise ValueError("need 0 < contrast_min <= contrast_max <= 1")


@dataclass(frozen=True)
class CorpusConfig:
    scripts: int = 4
    private_glyphs: int = 24
    shared_glyphs: int = 6
    train_lines: int = 2000
    eval_lines: int = 400
    heavy_eval_lines: int = 0
    min_len: int = 4
    max_len: int = 9
    distractor_fraction: float = 0.30
    shared_fraction: float = 0.10
    eval_distractor_fraction: float = 0.0
    heavy_distractor_fraction: float = 0.50
    vertical_fraction: float = 0.25
    noise: NoiseParams = field(default_factory=NoiseParams)
    seed: int = 0

    def __post_init__(self):
        if self.scripts < 2:
            raise ValueError("need at least two scripts")
        if self.private_glyphs < 20:
            raise ValueError("each script needs at least 20 private glyphs")
        if not (1 <= self.min_len <= self.max_len):
            raise ValueError("bad line length range")
        for f in (self.distractor_fraction, self.shared_fraction,
                  self.eval_distractor_fraction, self.heavy_distractor_fraction,
                  self.vertical_fraction):
            if not (0.0 <= f <= 1.0):
                raise ValueError("fractions must lie in [0, 1]")


@dataclass
class LineSample:
    image: np.ndarray  # (40, w, 1) float32 in [0, 1]
    script_id: str
    transcript: tuple[str, ...]
    codes: tuple[str, ...]
    orientation: str  # "h" | "v"
    glyph_spans: tuple  # ((glyph_id, x0, x1), ...) in final image columns

    @property
    def width(self) -> int:
        return self.image.shape[1]


# ---------------------------------------------------------------------------
# glyph drawing
# ---------------------------------------------------------------------------


def _draw_stroke(grid: np.ndarray, rng: np.random.Generator) -> None:
    h, w = grid.shape
    kind = int(rng.integers(0, 4))
    thick = int(rng.integers(1, 3))
    if kind == 0:  # horizontal bar
        r = int(rng.integers(0, h))
        c0, c1 = sorted(int(v) for v in rng.integers(0, w, 2))
        grid[r:r + thick, c0:c1 + 1] = True
    elif kind == 1:  # vertical bar
        c = int(rng.integers(0, w))
        r0, r1 = sorted(int(v) for v in rng.integers(0, h, 2))
        grid[r0:r1 + 1, c:c + thick] = True
    elif kind == 2:  # diagonal
        r0, c0 = int(rng.integers(0, h)), int(rng.integers(0, w))
        r1, c1 = int(rng.integers(0, h)), int(rng.integers(0, w))
        steps = max(abs(r1 - r0), abs(c1 - c0)) + 1
        rows = np.round(np.linspace(r0, r1, steps)).astype(int)
        cols = np.round(np.linspace(c0, c1, steps)).astype(int)
        for rr, cc in zip(rows, cols):
            grid[rr:rr + thick, cc:cc + thick] = True
    else:  # small block
        r = int(rng.integers(0, h))
        c = int(rng.integers(0, w))
        bh, bw = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        grid[r:r + bh, c:c + bw] = True


def _draw_glyph(rng: np.random.Generator) -> np.ndarray:
    # Roughly square so vertical stacks match horizontal runs in extent.
    w = int(rng.integers(8, 25))
    h = int(np.clip(w + rng.integers(-3, 4), 8, 32))
    grid = np.zeros((h, w), dtype=bool)
    for _ in range(int(rng.integers(3, 8))):
        _draw_stroke(grid, rng)
    while grid.mean() < 0.12:
        _draw_stroke(grid, rng)
    return grid


def make_script_set(config: CorpusConfig) -> ScriptSet:
    """Build all glyph inventories; deterministic in the seed alone."""
    rng = np.random.default_rng([config.seed, 1])
    seen: set = set()

    def fresh_glyph(glyph_id: str) -> Glyph:
        for _ in range(1000):
            bitmap = _draw_glyph(rng)
            key = (bitmap.shape, bitmap.tobytes())
            if key not in seen:
                seen.add(key)
                return Glyph(glyph_id, bitmap)
        raise RuntimeError("glyph space exhausted")

    shared_members = tuple(f"sc{i}" for i in range(min(3, config.scripts))) if config.scripts >= 3 else ()
    shared = {}
    if shared_members:
        for j in range(config.shared_glyphs):
            gid = f"sh:g{j:02d}"
            shared[gid] = fresh_glyph(gid)

    scripts = []
    for i in range(config.scripts):
        sid = f"sc{i}"
        private = {}
        for j in range(config.private_glyphs):
            gid = f"{sid}:g{j:02d}"
            private[gid] = fresh_glyph(gid)
        member = sid in shared_members
        scripts.append(SyntheticScript(script_id=sid, private=private, shared=dict(shared) if member else {}))

    ignorable = {SPACE_GLYPH: Glyph(SPACE_GLYPH, np.zeros((20, 12), dtype=bool))}
    for gid in DIGIT_GLYPHS:
        ignorable[gid] = fresh_glyph(gid)
    return ScriptSet(scripts=scripts, ignorable=ignorable, shared_members=shared_members)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    """Separable box filter; windows past the edge average in zeros."""
    if radius < 1:
        return img
    k = 2 * radius + 1
    out = img.astype(np.float64)
    for axis in (0, 1):
        n = out.shape[axis]
        pad = [(radius, radius) if a == axis else (0, 0) for a in range(2)]
        padded = np.pad(out, pad)
        csum = np.cumsum(padded, axis=axis)
        zero = [slice(None)] * 2
        zero[axis] = slice(0, 1)
        csum = np.concatenate([np.zeros_like(csum[tuple(zero)]), csum], axis=axis)
        hi = [slice(None)] * 2
        lo = [slice(None)] * 2
        hi[axis] = slice(k, k + n)
        lo[axis] = slice(0, n)
        out = (csum[tuple(hi)] - csum[tuple(lo)]) / k
    return out.astype(np.float32)


def _layout(sizes, rng: np.random.Generator) -> tuple[list[int], int]:
    """Start offsets and total extent: 1..4 px margins and gaps, forced even."""
    starts = []
    pos = int(rng.integers(1, 5))
    for i, size in enumerate(sizes):
        if i > 0:
            pos += int(rng.integers(1, 5))
        starts.append(pos)
        pos += size
    pos += int(rng.integers(1, 5))
    if pos % 2:
        pos += 1
    return starts, pos


def render_line(glyphs, orientation: str, noise: NoiseParams, rng: np.random.Generator):
    """Composite glyphs into a (40, w, 1) strip; returns (image, spans).

    Spans give each glyph's column interval in the finished image, which
    vertical rendering preserves through the rotation.
    """
    glyphs = list(glyphs)
    if not glyphs:
        raise ValueError("cannot render an empty line")
    if orientation not in ("h", "v"):
        raise ValueError(f"orientation must be 'h' or 'v', got {orientation!r}")
    jit = noise.baseline_jitter

    if orientation == "h":
        starts, total = _layout([g.width for g in glyphs], rng)
        canvas = np.zeros((LINE_HEIGHT, total), dtype=np.float32)
        spans = []
        for g, x0 in zip(glyphs, starts):
            y0 = (LINE_HEIGHT - g.height) // 2
            if jit:
                y0 = int(np.clip(y0 + rng.integers(-jit, jit + 1), 0, LINE_HEIGHT - g.height))
            canvas[y0:y0 + g.height, x0:x0 + g.width] = np.maximum(
                canvas[y0:y0 + g.height, x0:x0 + g.width], g.bitmap
            )
            spans.append((g.glyph_id, x0, x0 + g.width))
    else:
        # Top-to-bottom stack in a 40-wide column, then rotate to horizontal.
        starts, total = _layout([g.height for g in glyphs], rng)
        column = np.zeros((total, LINE_HEIGHT), dtype=np.float32)
        spans = []
        for g, y0 in zip(glyphs, starts):
            x0 = (LINE_HEIGHT - g.width) // 2
            if jit:
                x0 = int(np.clip(x0 + rng.integers(-jit, jit + 1), 0, LINE_HEIGHT - g.width))
            column[y0:y0 + g.height, x0:x0 + g.width] = np.maximum(
                column[y0:y0 + g.height, x0:x0 + g.width], g.bitmap
            )
            spans.append((g.glyph_id, y0, y0 + g.height))
        canvas = np.rot90(column, 1)  # counterclockwise; top glyph lands leftmost

    contrast = rng.uniform(noise.contrast_min, noise.contrast_max)
    canvas = canvas * np.float32(contrast)
    canvas = _box_blur(canvas, noise.blur_radius)
    if noise.sigma > 0:
        canvas = canvas + rng.normal(0.0, noise.sigma, size=canvas.shape)
    canvas = np.clip(canvas, 0.0, 1.0).astype(np.float32)
    return canvas[:, :, None], tuple(spans)


def sample_line(
    script_set: ScriptSet,
    script_id: str,
    rng: np.random.Generator,
    config: CorpusConfig,
    distractor_fraction: float,
) -> LineSample:
    """Draw glyph slots, enforce a private majority, render."""
    script = script_set.script(script_id)
    length = int(rng.integers(config.min_len, config.max_len + 1))
    is_member = bool(script.shared) and config.shared_fraction > 0

    kinds = []
    for _ in range(length):
        u = rng.random()
        if u < distractor_fraction:
            kinds.append("distractor")
        elif is_member and u < distractor_fraction + (1 - distractor_fraction) * config.shared_fraction:
            kinds.append("shared")
        else:
            kinds.append("private")
    need = -(-length // 2)  # at least half the slots stay script-private
    non_private = [i for i, k in enumerate(kinds) if k != "private"]
    while length - len(non_private) < need:
        pick = int(rng.integers(0, len(non_private)))
        kinds[non_private.pop(pick)] = "private"

    private_ids = tuple(script.private)
    shared_ids = tuple(script.shared)
    ignorable_ids = tuple(script_set.ignorable)
    transcript = []
    for kind in kinds:
        if kind == "distractor":
            pool = ignorable_ids
        elif kind == "shared":
            pool = shared_ids
        else:
            pool = private_ids
        transcript.append(pool[int(rng.integers(0, len(pool)))])

    orientation = "v" if rng.random() < config.vertical_fraction else "h"
    image, spans = render_line([script_set.glyph(g) for g in transcript], orientation, config.noise, rng)
    codes = tuple(script_set.code_for_glyph(g) for g in transcript)
    return LineSample(
        image=image,
        script_id=script_id,
        transcript=tuple(transcript),
        codes=codes,
        orientation=orientation,
        glyph_spans=spans,
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM, maxval 255. Accepts (h, w) or (h, w, 1) floats in [0, 1]."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[:, :, 0]
    data = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = data.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w)


@dataclass(frozen=True)
class ManifestRow:
    path: str  # image path relative to the dataset root
    script_id: str
    orientation: str
    transcript: tuple[str, ...]
    codes: tuple[str, ...]


def write_manifest(path, rows) -> None:
    lines = []
    for r in rows:
        lines.append("\t".join([r.path, r.script_id, r.orientation, " ".join(r.transcript), " ".join(r.codes)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ValueError(f"{path}: expected 5 tab-separated fields, got {len(fields)}: {line!r}")
        rows.append(ManifestRow(
            path=fields[0],
            script_id=fields[1],
            orientation=fields[2],
            transcript=tuple(fields[3].split(" ")),
            codes=tuple(fields[4].split(" ")),
        ))
    return rows


def write_catalog(path, alphabet: ScriptCodeAlphabet) -> None:
    lines = ["SCAT1"]
    for spec in alphabet.codes:
        lines.append("\t".join([spec.code, spec.kind, ",".join(spec.members)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_catalog(path) -> ScriptCodeAlphabet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "SCAT1":
        raise ValueError(f"{path}: missing SCAT1 header")
    codes = []
    for line in lines[1:]:
        if not line:
            continue
        code, kind, members = line.split("\t")
        codes.append(CodeSpec(code, kind, tuple(m for m in members.split(",") if m)))
    scripts = tuple(c.code for c in codes if c.kind == "SCRIPT")
    return ScriptCodeAlphabet(scripts=scripts, codes=tuple(codes))


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


def _splits(config: CorpusConfig):
    splits = [("train", config.train_lines, config.distractor_fraction),
              ("eval", config.eval_lines, config.eval_distractor_fraction)]
    if config.heavy_eval_lines > 0:
        splits.append(("eval-heavy", config.heavy_eval_lines, config.heavy_distractor_fraction))
    return splits


def generate_dataset(config: CorpusConfig, out_dir) -> dict:
    """Write images, one manifest per split, and the script catalog.

    Returns per-split manifest paths. No transcript string is shared
    across splits; within-split repeats are allowed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    script_set = make_script_set(config)
    write_catalog(out / "catalog.txt", script_set.code_alphabet())

    claimed: dict[str, str] = {}
    manifests = {}
    for split_idx, (split, per_script, fraction) in enumerate(_splits(config)):
        rows = []
        for script_idx, script_id in enumerate(script_set.script_ids):
            for i in range(per_script):
                rng = np.random.default_rng([config.seed, 7, split_idx, script_idx, i])
                for _ in range(200):
                    sample = sample_line(script_set, script_id, rng, config, fraction)
                    key = " ".join(sample.transcript)
                    owner = claimed.get(key)
                    if owner is None or owner == split:
                        claimed[key] = split
                        break
                else:
                    raise RuntimeError("could not draw a transcript unique to this split")
                rel = f"images/{split}/{script_id}_{i:05d}.pgm"
                write_pgm(out / rel, sample.image)
                rows.append(ManifestRow(
                    path=rel,
                    script_id=script_id,
                    orientation=sample.orientation,
                    transcript=sample.transcript,
                    codes=sample.codes,
                ))
        manifest_path = out / f"{split}.tsv"
        write_manifest(manifest_path, rows)
        manifests[split] = manifest_path
    return manifests
