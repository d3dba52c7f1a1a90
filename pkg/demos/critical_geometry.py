"""Render the nested critical strips around x = 0 for gamma = 3."""
import sys

from fermi_twist.cli_io import render_critical_geometry
from fermi_twist.core_map import MapParams
from fermi_twist.critical_sets import default_critical_params


def main(path="critical_geometry.svg"):
    params = MapParams(A=1.0, gamma=3.0)
    r = render_critical_geometry(params, default_critical_params(params), (200.0, 2000.0),
                                 x_window=(-0.05, 0.05), width=300, height=200)
    with open(path, "w") as fh:
        fh.write(r.svg)
    print(f"wrote {path}; pixel counts {r.counts}")
    print(f"C1 row widths from bottom to top: {r.c1_widths[0]} ... {r.c1_widths[-1]}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
