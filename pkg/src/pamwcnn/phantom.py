"""Synthetic paired datasets standing in for low/high-fluence phantom scans.

Clean scenes are strokes (random anti-aliased polylines), glyph masks, or
point targets at fixed depths. Low-fluence counterparts scale the clean scene
and add i.i.d. Gaussian noise; depth scenes additionally lose signal
exponentially with depth.
"""
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import Image
from .metrics import Roi, psnr, rois_from_physical


@dataclass(frozen=True)
class DegradationPreset:
    label: str
    fluence: float
    unit: str
    signal_scale: float
    noise_sigma: float

    def __post_init__(self):
        if not 0 < self.signal_scale <= 1:
            raise ValueError(f"signal_scale must be in (0, 1], got {self.signal_scale}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def fluence_mj(self):
        return self.fluence * (1e-3 if self.unit == "uJ" else 1.0)


def _preset(fluence, unit, alpha, sigma):
    label = f"{fluence:g}{unit}"
    return DegradationPreset(label, fluence, unit, alpha, sigma)


# Pulse energies of the two source families; (alpha, sigma) are chosen so the
# baseline PSNR steps down the ladder. The top rung of each ladder is the
# ground-truth acquisition.
LASER_LADDER = (
    _preset(17, "mJ", 1.0, 0.0),
    _preset(0.95, "mJ", 0.7, 0.12),
    _preset(0.25, "mJ", 0.5, 0.2),
    _preset(0.065, "mJ", 0.35, 0.28),
    _preset(0.016, "mJ", 0.25, 0.35),
)
LED_LADDER = (
    _preset(160, "uJ", 1.0, 0.0),
    _preset(80, "uJ", 0.6, 0.15),
    _preset(40, "uJ", 0.4, 0.25),
)
PRESETS = {p.label: p for p in LASER_LADDER + LED_LADDER}


def get_preset(label):
    try:
        return PRESETS[label]
    except KeyError:
        raise KeyError(f"unknown degradation preset {label!r}; known: {sorted(PRESETS)}") from None


# 5x7 bitmap glyphs, '#' = ink
_GLYPHS = {
    "U": ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "C": [".####", "#....", "#....", "#....", "#....", "#....", ".####"],
    "S": [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
    "D": ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
    "A": [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "I": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"],
    "O": [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "P": ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
    "T": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
}
GLYPHS = {k: np.array([[ch == "#" for ch in row] for row in v], dtype=float) for k, v in _GLYPHS.items()}

DEFAULT_DEPTHS_MM = (2.5, 7.5, 12.5, 17.5, 22.5)
SCENES = ("strokes", "letters", "depth_targets")


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 64
    width: int = 64
    pixel_spacing_mm: float = 0.1
    scene: str = "strokes"
    seed: int = 0
    frames: int = 1
    blur_sigma_px: float = 0.7
    # strokes
    stroke_count: int = 3
    stroke_width_px: float = 2.0
    intensity: float = 1.0
    # letters
    text: str = "PACT"
    # depth targets
    depths_mm: tuple = DEFAULT_DEPTHS_MM
    target_diameter_mm: float = 0.5
    targets_per_depth: int = 1
    attenuation_per_mm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "depths_mm", tuple(float(d) for d in self.depths_mm))
        if self.scene not in SCENES:
            raise ValueError(f"unknown scene {self.scene!r}; expected one of {SCENES}")
        if self.height < 2 or self.width < 2:
            raise ValueError(f"degenerate image dims {self.height}x{self.width}")
        if not self.pixel_spacing_mm > 0:
            raise ValueError("pixel_spacing_mm must be > 0")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")


def _segment_distance(rr, cc, p0, p1):
    d = p1 - p0
    denom = float(d @ d)
    t = np.zeros_like(rr) if denom == 0 else ((rr - p0[0]) * d[0] + (cc - p0[1]) * d[1]) / denom
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(rr - (p0[0] + t * d[0]), cc - (p0[1] + t * d[1]))


def _render_strokes(spec, rng):
    h, w = spec.height, spec.width
    rr, cc = np.mgrid[0:h, 0:w].astype(float)
    img = np.zeros((h, w))
    margin = 0.1 * min(h, w)
    half = spec.stroke_width_px / 2.0
    for _ in range(spec.stroke_count):
        n_vertices = int(rng.integers(3, 6))
        pts = np.column_stack(
            [rng.uniform(margin, h - 1 - margin, n_vertices), rng.uniform(margin, w - 1 - margin, n_vertices)]
        )
        level = spec.intensity * rng.uniform(0.6, 1.0)
        dist = np.full((h, w), np.inf)
        for p0, p1 in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(rr, cc, p0, p1))
        # coverage ramps over one pixel at the stroke edge
        img = np.maximum(img, level * np.clip(half + 0.5 - dist, 0.0, 1.0))
    return img


def _letter_layout(spec):
    text = spec.text.upper()
    for ch in text:
        if ch not in GLYPHS:
            raise ValueError(f"no glyph for {ch!r}; available: {''.join(sorted(GLYPHS))}")
    n = len(text)
    scale = int(min(0.6 * spec.height / 7, 0.9 * spec.width / (6 * n - 1)))
    if scale < 1:
        raise ValueError(f"{spec.height}x{spec.width} is too small to render {text!r}")
    total_w = (6 * n - 1) * scale
    top = (spec.height - 7 * scale) // 2
    left = (spec.width - total_w) // 2
    return [(ch, top, left + 6 * i * scale, scale) for i, ch in enumerate(text)]


def _render_letters(spec):
    img = np.zeros((spec.height, spec.width))
    for ch, top, left, scale in _letter_layout(spec):
        mask = np.kron(GLYPHS[ch], np.ones((scale, scale)))
        img[top : top + mask.shape[0], left : left + mask.shape[1]] = spec.intensity * mask
    return img


def letter_regions(spec, margin_px=2):
    """(letter, Roi) bounding boxes of each glyph, padded by ``margin_px``."""
    out = []
    for ch, top, left, scale in _letter_layout(spec):
        r0, c0 = max(0, top - margin_px), max(0, left - margin_px)
        r1 = min(spec.height, top + 7 * scale + margin_px)
        c1 = min(spec.width, left + 5 * scale + margin_px)
        out.append((ch, Roi(r0, c0, r1 - r0, c1 - c0, "object")))
    return out


def target_positions(spec):
    """Pixel (row, col) of every depth target."""
    rows = [int(round(d / spec.pixel_spacing_mm)) for d in spec.depths_mm]
    k = spec.targets_per_depth
    cols = [int(round((i + 1) * spec.width / (k + 1))) for i in range(k)]
    radius = spec.target_diameter_mm / spec.pixel_spacing_mm / 2
    for r in rows:
        if r - radius < 0 or r + radius > spec.height - 1:
            raise ValueError(
                f"target at row {r} does not fit a {spec.height}-row image "
                f"at {spec.pixel_spacing_mm} mm/px"
            )
    return [(r, c) for r in rows for c in cols]


def _render_targets(spec):
    h, w = spec.height, spec.width
    rr, cc = np.mgrid[0:h, 0:w].astype(float)
    radius = spec.target_diameter_mm / spec.pixel_spacing_mm / 2
    img = np.zeros((h, w))
    for r, c in target_positions(spec):
        dist = np.hypot(rr - r, cc - c)
        img = np.maximum(img, spec.intensity * np.clip(radius + 0.5 - dist, 0.0, 1.0))
    return img


def generate_clean(spec):
    """Render ``spec.frames`` clean frames, deterministic in ``spec.seed``."""
    frames = []
    for i in range(spec.frames):
        rng = np.random.default_rng([spec.seed, i])
        if spec.scene == "strokes":
            img = _render_strokes(spec, rng)
        elif spec.scene == "letters":
            img = _render_letters(spec)
        else:
            img = _render_targets(spec)
        if spec.blur_sigma_px > 0:
            img = gaussian_filter(img, spec.blur_sigma_px, mode="constant")
        frames.append(Image(img.astype(np.float32), spec.pixel_spacing_mm))
    return frames


def degrade(clean, preset, seed, attenuation_per_mm=0.0):
    """Low-fluence counterpart: ``alpha * exp(-mu * depth) * clean + N(0, sigma^2)``."""
    pix = np.asarray(clean.data, dtype=np.float64)
    scale = np.full(pix.shape[0], preset.signal_scale)
    if attenuation_per_mm:
        depth_mm = np.arange(pix.shape[0]) * clean.pixel_spacing_mm
        scale = scale * np.exp(-attenuation_per_mm * depth_mm)
    noisy = scale[:, None] * pix
    if preset.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noisy = noisy + rng.normal(0.0, preset.noise_sigma, pix.shape)
    return Image(noisy.astype(np.float32), clean.pixel_spacing_mm)


@dataclass
class Pair:
    noisy: Image
    clean: Image
    label: str


@dataclass
class PairedDataset:
    pairs: list = field(default_factory=list)

    def __post_init__(self):
        for i, p in enumerate(self.pairs):
            if p.noisy.shape != p.clean.shape:
                raise ValueError(f"pair {i}: noisy {p.noisy.shape} vs clean {p.clean.shape}")
            if not (np.isfinite(p.noisy.data).all() and np.isfinite(p.clean.data).all()):
                raise ValueError(f"pair {i} contains non-finite pixels")

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def subset(self, indices):
        return PairedDataset([self.pairs[i] for i in indices])


@dataclass(frozen=True)
class ManifestEntry:
    spec: PhantomSpec
    preset: str
    noise_seed: int
    noisy_path: str = ""
    clean_path: str = ""


def make_manifest(specs, presets, seed=0):
    """Cartesian product of scenes and presets with derived noise seeds."""
    if not specs or not presets:
        raise ValueError("need at least one scene spec and one preset")
    entries = []
    for i, spec in enumerate(specs):
        for j, label in enumerate(presets):
            get_preset(label)
            entries.append(ManifestEntry(spec, label, seed * 1_000_003 + i * len(presets) + j))
    return entries


def dataset_from_manifest(entries):
    pairs = []
    for e in entries:
        preset = get_preset(e.preset)
        atten = e.spec.attenuation_per_mm if e.spec.scene == "depth_targets" else 0.0
        for k, clean in enumerate(generate_clean(e.spec)):
            noisy = degrade(clean, preset, [e.noise_seed, k], atten)
            pairs.append(Pair(noisy, clean, preset.label))
    return PairedDataset(pairs)


def build_dataset(specs, presets, seed=0):
    return dataset_from_manifest(make_manifest(specs, presets, seed))


def stroke_specs(count, seed=0, **overrides):
    """``count`` stroke scenes with consecutive seeds starting at ``seed``."""
    return [PhantomSpec(scene="strokes", seed=seed + i, **overrides) for i in range(count)]


def depth_cnr_rois(spec, n_background=5, object_mm=1.0, background_mm=3.0):
    """Per-depth ROI sets for the multi-area CNR protocol.

    Returns ``[(depth_mm, object_rois, background_rois)]``. Object ROIs sit on
    every target at that depth; ``n_background`` background ROIs share the
    target's depth and are spread laterally away from the targets.
    """
    sp = spec.pixel_spacing_mm
    width_mm = spec.width * sp
    target_cols_mm = [c * sp for _, c in target_positions(spec)[: spec.targets_per_depth]]
    clearance = background_mm / 2 + object_mm / 2 + spec.target_diameter_mm
    pitch = background_mm + 0.2
    candidates = np.arange(background_mm / 2 + 0.1, width_mm - background_mm / 2, pitch)
    candidates = [c for c in candidates if min(abs(c - t) for t in target_cols_mm) >= clearance]
    if len(candidates) < n_background:
        raise ValueError(
            f"only {len(candidates)} background positions fit beside the targets; need {n_background}"
        )
    # nearest to the targets first, ties broken left to right
    candidates.sort(key=lambda c: (round(min(abs(c - t) for t in target_cols_mm), 6), c))
    bg_cols = sorted(candidates[:n_background])
    img = Image(np.zeros((spec.height, spec.width), np.float32), sp)
    out = []
    for d in spec.depths_mm:
        obj = rois_from_physical(img, [(d, c) for c in target_cols_mm], (object_mm, object_mm), "object")
        bg = rois_from_physical(img, [(d, c) for c in bg_cols], (background_mm, background_mm), "background")
        out.append((d, obj, bg))
    return out


# -------------------------------------------------------------- manifest I/O

_SPEC_FIELDS = {f.name: f for f in fields(PhantomSpec)}


def _encode_value(v):
    if isinstance(v, tuple):
        return ",".join(f"{x:g}" for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _decode_spec(kv):
    args = {}
    for name, raw in kv.items():
        if name not in _SPEC_FIELDS:
            raise ValueError(f"unknown scene field {name!r}")
        default = _SPEC_FIELDS[name].default
        if isinstance(default, tuple):
            args[name] = tuple(float(x) for x in raw.split(",") if x)
        elif isinstance(default, bool):
            args[name] = raw.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            args[name] = int(raw)
        elif isinstance(default, float):
            args[name] = float(raw)
        else:
            args[name] = raw
    return PhantomSpec(**args)


def format_manifest(entries):
    lines = ["# pamwcnn dataset manifest: one pair per line, key=value tokens"]
    for e in entries:
        toks = [f"{k}={_encode_value(v)}" for k, v in asdict(e.spec).items()]
        toks += [f"preset={e.preset}", f"noise_seed={e.noise_seed}"]
        if e.noisy_path:
            toks += [f"noisy={e.noisy_path}", f"clean={e.clean_path}"]
        lines.append(" ".join(toks))
    return "\n".join(lines) + "\n"


def parse_manifest(text):
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        kv = {}
        for tok in line.split():
            if "=" not in tok:
                raise ValueError(f"manifest line {lineno}: token {tok!r} is not key=value")
            k, v = tok.split("=", 1)
            kv[k] = v
        try:
            preset = kv.pop("preset")
            noise_seed = int(kv.pop("noise_seed"))
        except KeyError as exc:
            raise ValueError(f"manifest line {lineno}: missing {exc.args[0]}") from None
        noisy, clean = kv.pop("noisy", ""), kv.pop("clean", "")
        try:
            spec = _decode_spec(kv)
        except ValueError as exc:
            raise ValueError(f"manifest line {lineno}: {exc}") from None
        get_preset(preset)
        entries.append(ManifestEntry(spec, preset, noise_seed, noisy, clean))
    if not entries:
        raise ValueError("manifest lists no pairs")
    return entries


def snr_ladder_psnr(spec, ladder=LASER_LADDER, seed=0):
    """Baseline PSNR of each degraded preset against the clean scene."""
    clean = generate_clean(spec)[0]
    return [
        (p.label, psnr(degrade(clean, p, seed, spec.attenuation_per_mm), clean))
        for p in ladder
    ]

