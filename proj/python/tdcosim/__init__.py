"""Transmission and distribution frequency co-simulation."""

from ._core import (
    ConfigError,
    RunResults,
    Scenario,
    derive_seed,
    emit_outputs,
    feeder_headroom,
    generate_load_series,
    load_scenario,
    render_plots,
    run,
    solve_feeder,
)

__all__ = [
    "ConfigError",
    "RunResults",
    "Scenario",
    "derive_seed",
    "emit_outputs",
    "feeder_headroom",
    "generate_load_series",
    "load_scenario",
    "render_plots",
    "run",
    "run_file",
    "solve_feeder",
]


def run_file(path, out=None, seed=None, stop_time=None, agc=True, plots=True):
    """Loads a scenario, runs it and optionally writes the output directory."""
    s = load_scenario(path)
    s.apply_overrides(seed=seed, stop_time=stop_time, no_agc=not agc)
    r = run(s)
    if out is not None:
        emit_outputs(r, out)
        if plots:
            render_plots(out)
    return r
