"""Phase portrait of a few orbits of the twist map, written as an SVG scatter."""
import sys

import numpy as np

from fermi_twist.core_map import MapParams, Point, iterate


def portrait_svg(orbits, y_range, size=(600, 400)):
    w, h = size
    y0, y1 = y_range
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>']
    for i, pts in enumerate(orbits):
        x = np.mod(pts[:, 0], 2 * np.pi) / (2 * np.pi) * w
        y = h - (pts[:, 1] - y0) / (y1 - y0) * h
        keep = (y >= 0) & (y <= h)
        for a, b in zip(x[keep], y[keep]):
            parts.append(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="0.6" fill="{colors[i % len(colors)]}"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def main(path="phase_portrait.svg", gamma=0.5, A=1.0):
    params = MapParams(A=A, gamma=gamma)
    starts = [Point(x, 60.0 + 3 * i) for i, x in enumerate(np.linspace(0.3, 5.9, 6))]
    orbits = [iterate(p, 3000, params).points for p in starts]
    ys = np.concatenate([o[:, 1] for o in orbits])
    with open(path, "w") as fh:
        fh.write(portrait_svg(orbits, (ys.min(), ys.max())))
    print(f"wrote {path}: {len(starts)} orbits, heights {ys.min():.1f} to {ys.max():.1f}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
