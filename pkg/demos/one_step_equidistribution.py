"""One-step equidistribution error of cos(x) over reference pairs at growing heights."""
import numpy as np

from fermi_twist.equidistribution import Observable, one_step_error_scan


def main():
    heights = np.geomspace(1e3, 1e5, 5)
    scan = one_step_error_scan(3.0, 1.0, heights, Observable.cos(1), phases=2)
    print(f"{'y_hat':>10} {'error':>12} {'envelope':>12}")
    for y, e, b in zip(scan.y_grid, scan.error, scan.bound):
        print(f"{y:10.0f} {e:12.3e} {b:12.3e}")
    print(f"log-log slope {scan.slope:.3f} +- {scan.stderr:.3f}")


if __name__ == "__main__":
    main()
