"""Smoke test for the pyseirdfit extension module.

Build and install first, for example:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/pyseirdfit-*.whl
"""

import math

import pyseirdfit as sf


def main():
    params = sf.ParameterVector.reference()
    assert params.in_support()
    assert len(params.alpha) == 6
    assert all(s > 0 for s in params.partial_sums())

    schedule = sf.InterventionSchedule.qatar()
    assert schedule.change_days == [12, 24, 28, 40, 59]
    init = sf.StateVector.qatar()

    traj = sf.integrate(params, schedule, init, 63)
    assert len(traj) == 64
    total = init.total()
    assert all(abs(sum(row) - total) <= 1e-6 * total for row in traj)

    try:
        sf.InterventionSchedule([24, 12], 12)
    except ValueError:
        pass
    else:
        raise AssertionError("unsorted change days accepted")

    model = sf.Model()
    assert model.train_len == 63
    lp = model.log_posterior(params)
    assert math.isfinite(lp)
    bad = sf.ParameterVector([1e-7, -2e-7, 0, 0, 0, 0], 0.5, 0.01, 0.01, 0.01)
    assert not bad.in_support()
    assert model.log_posterior(bad) == float("-inf")

    samples = model.fit(n_samples=500, n_burnin=200, seed=7)
    assert len(samples) == 500
    assert samples.names == params.names()
    assert 0.0 < samples.accept_rate < 1.0
    summary = samples.summarize()
    for name in samples.names:
        row = summary[name]
        assert row["q025"] <= row["q500"] <= row["q975"]
    print("log-posterior at reference: %.2f" % lp)
    print("acceptance %.3f, beta mean %.4g" % (samples.accept_rate, summary["beta"]["mean"]))
    print("ok")


if __name__ == "__main__":
    main()
