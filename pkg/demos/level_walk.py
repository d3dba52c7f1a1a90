"""Level-crossing outcomes on a master pair, next to the biased reference walk."""
from fermi_twist.core_map import MapParams
from fermi_twist.critical_sets import default_critical_params
from fermi_twist.walk_escape import control_walk, drift_estimate, tau_tail


def main(y_hat=200.0, n=2000):
    params = MapParams(A=1.0, gamma=3.0)
    s = drift_estimate(params, default_critical_params(params), y_hat, n_samples=n, seed=0)
    p, lo, hi, m = s.drift()
    print(f"P(xi = -1) at y_hat={y_hat:g}: {p:.3f} [{lo:.3f}, {hi:.3f}] from {m} samples")
    fit = tau_tail(s)
    print(f"stopped-time tail: log theta {fit.slope:.1f}, R2 {fit.r2:.3f}")
    c = control_walk(p_up=0.4, horizon=8)
    print(f"reference walk return probability {c.frac_returned:.4f} vs closed form {c.exact:.4f}")


if __name__ == "__main__":
    main()
