"""PSNR, global SSIM and multi-ROI CNR.

All statistics are population statistics (divide by the pixel count). SSIM is
the single-window global form computed over the whole image; it is not the
sliding-window SSIM found in most image libraries.
"""
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_I_MAX = 1.0
DEFAULT_K1 = 1e-4  # (0.01 * L)**2 with L = 1
DEFAULT_K2 = 9e-4  # (0.03 * L)**2


@dataclass(frozen=True)
class Roi:
    row: int
    col: int
    height: int
    width: int
    role: str = "object"

    def __post_init__(self):
        if self.role not in ("object", "background"):
            raise ValueError(f"ROI role must be 'object' or 'background', got {self.role!r}")
        if self.height < 1 or self.width < 1:
            raise ValueError(f"ROI must cover at least one pixel, got {self.height}x{self.width}")

    def check_bounds(self, shape):
        h, w = shape
        if self.row < 0 or self.col < 0 or self.row + self.height > h or self.col + self.width > w:
            raise ValueError(f"ROI {self} is outside a {h}x{w} image")

    def extract(self, pixels):
        self.check_bounds(pixels.shape)
        return pixels[self.row : self.row + self.height, self.col : self.col + self.width]


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(output, ground_truth, i_max=DEFAULT_I_MAX):
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are identical."""
    out, gt = _pair(output, ground_truth)
    mse = np.mean((gt - out) ** 2)
    if mse == 0:
        return math.inf
    return 20.0 * math.log10(i_max / math.sqrt(mse))


def ssim(output, ground_truth, k1=DEFAULT_K1, k2=DEFAULT_K2):
    out, gt = _pair(output, ground_truth)
    mu_o, mu_g = out.mean(), gt.mean()
    var_o = np.mean((out - mu_o) ** 2)
    var_g = np.mean((gt - mu_g) ** 2)
    cov = np.mean((gt - mu_g) * (out - mu_o))
    num = (2 * mu_g * mu_o + k1) * (2 * cov + k2)
    den = (mu_g**2 + mu_o**2 + k1) * (var_g + var_o + k2)
    return float(num / den)


def cnr(image, object_rois, background_rois):
    """Contrast-to-noise ratio in dB, or ``None`` when it is undefined.

    Object and background means are averages of per-ROI means; the background
    sigma is the average of the per-ROI population standard deviations.
    """
    if not object_rois or not background_rois:
        raise ValueError("cnr needs at least one object ROI and one background ROI")
    pix = np.asarray(image, dtype=np.float64)
    mu_obj = np.mean([r.extract(pix).mean() for r in object_rois])
    bg = [r.extract(pix) for r in background_rois]
    mu_bg = np.mean([p.mean() for p in bg])
    sigma_bg = np.mean([p.std() for p in bg])
    contrast = mu_obj - mu_bg
    if contrast <= 0 or sigma_bg == 0:
        return None
    return 20.0 * math.log10(contrast / sigma_bg)


def rois_from_physical(image, centers_mm, size_mm, role):
    """Convert (row, col) centres and a (h, w) size in mm into pixel ROIs."""
    spacing = getattr(image, "pixel_spacing_mm", None)
    if spacing is None or not spacing > 0:
        raise ValueError("image must carry a positive pixel_spacing_mm")
    shape = np.asarray(image).shape
    h = max(1, int(round(size_mm[0] / spacing)))
    w = max(1, int(round(size_mm[1] / spacing)))
    rois = []
    for center in centers_mm:
        cr, cc = center[0] / spacing, center[1] / spacing
        # centre of the ROI lands on the pixel nearest the physical centre
        row = int(round(cr - h / 2))
        col = int(round(cc - w / 2))
        roi = Roi(row, col, h, w, role)
        try:
            roi.check_bounds(shape)
        except ValueError:
            raise ValueError(
                f"ROI centred at {tuple(center)} mm ({h}x{w} px) falls outside the "
                f"{shape[0]}x{shape[1]} image"
            ) from None
        rois.append(roi)
    return rois


def read_roi_spec(path, image):
    with open(path) as f:
        return parse_roi_spec(f.read(), image)


def parse_roi_spec(text, image):
    """Parse ROI lines ``role, center_row_mm, center_col_mm, h_mm, w_mm``.

    Returns ``(object_rois, background_rois)``; ``#`` starts a comment.
    """
    objects, backgrounds = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [x.strip() for x in line.split(",")]
        if len(fields) != 5:
            raise ValueError(f"ROI spec line {lineno}: expected 5 fields, got {len(fields)}")
        role = fields[0]
        try:
            r, c, h, w = (float(x) for x in fields[1:])
        except ValueError:
            raise ValueError(f"ROI spec line {lineno}: non-numeric field") from None
        (roi,) = rois_from_physical(image, [(r, c)], (h, w), role)
        (objects if role == "object" else backgrounds).append(roi)
    return objects, backgrounds


@dataclass
class MetricReport:
    name: str
    psnr_db: float = None
    ssim: float = None
    cnr_db: float = None
    i_max: float = DEFAULT_I_MAX
    k1: float = DEFAULT_K1
    k2: float = DEFAULT_K2
    rois: list = field(default_factory=list)


def evaluate_pair(name, output, ground_truth, i_max=DEFAULT_I_MAX, k1=DEFAULT_K1, k2=DEFAULT_K2):
    """Paired metrics on an output clipped to [0, 1]."""
    out = np.clip(np.asarray(output, dtype=np.float64), 0.0, 1.0)
    return MetricReport(
        name,
        psnr_db=psnr(out, ground_truth, i_max),
        ssim=ssim(out, ground_truth, k1, k2),
        i_max=i_max,
        k1=k1,
        k2=k2,
    )


def evaluate_regions(output, ground_truth, regions, **kw):
    """Paired metrics restricted to labelled sub-regions, e.g. one per letter."""
    out, gt = np.asarray(output), np.asarray(ground_truth)
    return [evaluate_pair(label, roi.extract(out), roi.extract(gt), **kw) for label, roi in regions]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return repr(float(value))


def reports_to_csv(reports):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["name", "psnr_db", "ssim", "cnr_db", "i_max", "k1", "k2", "rois"])
    for r in reports:
        cnr_field = _fmt(r.cnr_db) if r.cnr_db is not None or not r.rois else "undefined"
        rois = ";".join(f"{x.role}:{x.row}:{x.col}:{x.height}x{x.width}" for x in r.rois)
        wr.writerow([r.name, _fmt(r.psnr_db), _fmt(r.ssim), cnr_field, r.i_max, r.k1, r.k2, rois])
    return buf.getvalue()


def reports_to_table(reports):
    lines = [f"{'name':<24} {'PSNR [dB]':>10} {'SSIM':>8} {'CNR [dB]':>10}"]
    for r in reports:
        p = "-" if r.psnr_db is None else ("inf" if math.isinf(r.psnr_db) else f"{r.psnr_db:.3f}")
        s = "-" if r.ssim is None else f"{r.ssim:.4f}"
        if r.cnr_db is not None:
            c = f"{r.cnr_db:.3f}"
        else:
            c = "undefined" if r.rois else "-"
        lines.append(f"{r.name:<24} {p:>10} {s:>8} {c:>10}")
    return "\n".join(lines)
