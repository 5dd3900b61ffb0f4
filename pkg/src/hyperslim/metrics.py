"""PSNR/bpp metrics, RD reports, diagnostics, and comparison tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import pad_to_multiple
from .network import Network, count_parameters, forward_eval
from .tensor import ShapeError

PSNR_CLAMP_DB = 100.0
CSV_HEADER = "model,psnr_db,bpp,bpp_y,bpp_z,params_total,params_hyper"


def psnr(x: np.ndarray, x_hat: np.ndarray) -> float:
    """10*log10(255^2 / mse) with inputs in [0, 1]; zero mse clamps to 100 dB."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"psnr shape mismatch {x.shape} vs {x_hat.shape}")
    mse = float((((x - x_hat) * 255.0) ** 2).mean())
    return psnr_from_mse(mse)


def psnr_from_mse(mse_255: float) -> float:
    if mse_255 <= 0.0:
        return PSNR_CLAMP_DB
    return min(PSNR_CLAMP_DB, 10.0 * np.log10(255.0 ** 2 / mse_255))


def bpp(total_bits: float, width: int, height: int) -> float:
    if width * height <= 0:
        raise ValueError("width*height must be positive")
    return total_bits / (width * height)


@dataclass
class RDReport:
    model: str
    psnr_db: float
    bpp_total: float
    bpp_y: float
    bpp_z: float
    params_total: int
    params_hyper: int
    per_image: list = field(default_factory=list)

    def csv_row(self) -> str:
        return (f"{self.model},{self.psnr_db:.6f},{self.bpp_total:.6f},"
                f"{self.bpp_y:.6f},{self.bpp_z:.6f},{self.params_total},{self.params_hyper}")

    @classmethod
    def from_csv_row(cls, row: str) -> "RDReport":
        parts = row.strip().split(",")
        if len(parts) != 7:
            raise ValueError(f"bad RDReport row: {row!r}")
        return cls(parts[0], float(parts[1]), float(parts[2]), float(parts[3]),
                   float(parts[4]), int(parts[5]), int(parts[6]))


def write_report_csv(reports: list[RDReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")


def read_report_csv(path) -> list[RDReport]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing RDReport header")
    return [RDReport.from_csv_row(ln) for ln in lines[1:]]


def evaluate_model(net: Network, images: list[np.ndarray], tag: str = "model") -> RDReport:
    """Per-image eval with reflect padding; distortion on the unpadded region.

    bpp is measured against the original pixel count (padded pixels are a
    cost of the fixed downsampling grid, as in a real coder).
    """
    factor = net.downsampling_factor()
    rows = []
    for img in images:
        padded, (h, w) = pad_to_multiple(img, factor)
        out = forward_eval(net, padded[None])
        x_hat = out["x_hat"][0][:, :h, :w]
        p = psnr(img, x_hat)
        by = bpp(out["rate_y_bits"], w, h)
        bz = bpp(out["rate_z_bits"], w, h)
        rows.append({"psnr_db": p, "bpp_y": by, "bpp_z": bz, "bpp": by + bz})
    return RDReport(
        model=tag,
        psnr_db=float(np.mean([r["psnr_db"] for r in rows])),
        bpp_total=float(np.mean([r["bpp"] for r in rows])),
        bpp_y=float(np.mean([r["bpp_y"] for r in rows])),
        bpp_z=float(np.mean([r["bpp_z"] for r in rows])),
        params_total=count_parameters(net, "total"),
        params_hyper=count_parameters(net, "hyper-path"),
        per_image=rows,
    )


def ratio_report(net: Network, eval_images: list[np.ndarray] | None = None) -> dict:
    """Hyper-path parameter share vs the z share of the bit rate."""
    total = count_parameters(net, "total")
    hyper = count_parameters(net, "hyper-path")
    out = {"hyper_param_ratio": hyper / total if total else 0.0}
    if eval_images is not None:
        rep = evaluate_model(net, eval_images)
        out["z_rate_ratio"] = rep.bpp_z / rep.bpp_total if rep.bpp_total else 0.0
    return out


def compare_models(reports: list[RDReport]) -> tuple[str, str]:
    """Baseline-relative comparison; returns (csv_text, aligned_text)."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    base = reports[0]
    header = ["model", "psnr_db", "bpp", "params_total",
              "d_psnr_db", "d_bpp", "params_vs_base"]
    csv_lines = [",".join(header)]
    rows = []
    for r in reports:
        dp = r.psnr_db - base.psnr_db
        db = r.bpp_total - base.bpp_total
        if r.params_total <= base.params_total and base.params_total:
            drop = 100.0 * (1.0 - r.params_total / base.params_total)
            ptxt = f"{_fmt_m(r.params_total)}/{_fmt_m(base.params_total)}({drop:.1f}%↓)"
        else:
            ptxt = _fmt_m(r.params_total)
        cells = [r.model, f"{r.psnr_db:.6f}", f"{r.bpp_total:.6f}",
                 str(r.params_total), f"{dp:.6f}", f"{db:.6f}", ptxt]
        csv_lines.append(",".join(cells))
        rows.append(cells)
    widths = [max(len(row[i]) for row in rows + [header]) for i in range(len(header))]
    text_lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    for row in rows:
        text_lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)))
    return "\n".join(csv_lines) + "\n", "\n".join(text_lines) + "\n"


def _fmt_m(params: int) -> str:
    return f"{params / 1e6:.3f}M"
