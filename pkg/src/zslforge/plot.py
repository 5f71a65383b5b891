"""2-D PCA embedding of synthesized features, written as CSV and SVG."""

from __future__ import annotations

from pathlib import Path

import numpy as np

# colour-blind friendly qualitative palette, cycled
PALETTE = ["#0072B2", "#E69F00", "#009E73", "#CC79A7", "#56B4E9", "#D55E00", "#F0E442", "#000000"]


def pca_2d(x: np.ndarray) -> np.ndarray:
    """Project rows onto the two leading eigenvectors of their covariance.

    Eigenvector signs are fixed so the largest-magnitude loading is
    positive, which makes the output independent of the eigensolver's sign
    choice.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError(f"need at least two rows to project, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (len(x) - 1)
    vals, vecs = np.linalg.eigh(cov)
    top = vecs[:, np.argsort(vals)[::-1][:2]]
    if top.shape[1] < 2:
        top = np.pad(top, ((0, 0), (0, 2 - top.shape[1])))
    flip = np.sign(top[np.abs(top).argmax(axis=0), [0, 1]])
    flip[flip == 0] = 1.0
    return centered @ (top * flip)


def write_csv(coords: np.ndarray, labels, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("x,y,class\n")
        for (px, py), c in zip(coords, labels):
            fh.write(f"{px!r},{py!r},{int(c)}\n")


def write_svg(coords: np.ndarray, labels, path, size: int = 480, title: str = "") -> None:
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    pad = 30
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    scaled = pad + (coords - lo) / span * (size - 2 * pad)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20 * len(classes)}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{pad}" y="18" font-family="sans-serif" font-size="13">{title}</text>')
    for (px, py), c in zip(scaled, labels):
        color = PALETTE[classes.index(c) % len(PALETTE)]
        # flip y so larger values point up
        out.append(f'<circle cx="{px:.2f}" cy="{size - py:.2f}" r="2.5" fill="{color}" fill-opacity="0.7"/>')
    for i, c in enumerate(classes):
        y = size + 14 + 20 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<circle cx="{pad}" cy="{y - 4}" r="5" fill="{color}"/>')
        out.append(f'<text x="{pad + 12}" y="{y}" font-family="sans-serif" font-size="12">class {c}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def plot_embedding(features: np.ndarray, labels, out_dir, stem: str = "embedding", title: str = "") -> np.ndarray:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    coords = pca_2d(features)
    write_csv(coords, labels, out_dir / f"{stem}.csv")
    write_svg(coords, labels, out_dir / f"{stem}.svg", title=title)
    return coords
