import io

import numpy as np
import pytest

from scalebench.workload import (WORKLOAD_NAMES, Trace, WorkloadKind,
                                 WorkloadSpec, default_spec, generate_trace,
                                 write_trace_csv)

SEEDS = (42, 123, 456, 789, 1024)


def test_six_kinds():
    assert WORKLOAD_NAMES == ("constant", "periodic", "variable", "bursty",
                              "ramp", "flash")


@pytest.mark.parametrize("kind", WORKLOAD_NAMES)
@pytest.mark.parametrize("seed", SEEDS)
def test_determinism(kind, seed):
    spec = default_spec(kind)
    a = generate_trace(spec, seed, 240)
    b = generate_trace(spec, seed, 240)
    assert a.rates == b.rates
    assert a.steps == 240


def test_constant_envelope_and_mean():
    spec = default_spec("constant")
    trace = generate_trace(spec, 42, 240)
    rates = np.array(trace.rates)
    assert len(rates) == 240
    assert rates.min() >= 90.0
    assert rates.max() <= 110.0
    assert 95.0 <= rates.mean() <= 105.0


def test_ramp_noise_free_is_exact_and_monotone():
    spec = default_spec("ramp")
    assert spec.noise_sd == 0.0
    for seed in (0, 42, 7):
        trace = generate_trace(spec, seed, 240)
        assert trace.rates[0] == 50.0
        assert trace.rates[239] == 250.0
        assert all(b >= a for a, b in zip(trace.rates, trace.rates[1:]))


def test_flash_window_levels():
    spec = default_spec("flash")
    trace = generate_trace(spec, 42, 240)
    rates = np.array(trace.rates)
    window = slice(spec.flash_start, spec.flash_start + spec.flash_duration)
    assert np.all(rates[window] == 240.0)
    outside = np.concatenate([rates[:spec.flash_start],
                              rates[spec.flash_start + spec.flash_duration:]])
    assert np.all(outside == 80.0)
    assert rates.max() / spec.base_rate == 3.0


def test_flash_custom_window():
    spec = WorkloadSpec(WorkloadKind.FLASH, base_rate=80.0, flash_start=80,
                        flash_duration=40)
    rates = np.array(generate_trace(spec, 0, 240).rates)
    assert np.all(rates[80:120] == 240.0)
    assert np.all(rates[:80] == 80.0) and np.all(rates[120:] == 80.0)


def test_periodic_range_and_cycle_count():
    trace = generate_trace(default_spec("periodic"), 42, 240)
    rates = np.array(trace.rates)
    assert rates.min() == pytest.approx(50.0, abs=1e-9)
    assert rates.max() == pytest.approx(200.0, abs=1e-9)
    # FFT oracle: 240 steps at a 40-step period put the spectral peak at
    # exactly 6 cycles per episode.
    spectrum = np.abs(np.fft.rfft(rates - rates.mean()))
    assert int(np.argmax(spectrum)) == 6


def test_variable_walk_stays_in_bounds():
    spec = default_spec("variable")
    for seed in SEEDS:
        rates = np.array(generate_trace(spec, seed, 240).rates)
        assert rates.min() >= 30.0
        assert rates.max() <= 250.0
        moves = np.abs(np.diff(rates))
        # one reflected step can move at most 2 * walk_step
        assert moves.max() <= 2 * spec.walk_step


def test_bursty_range_and_spikes():
    spec = default_spec("bursty")
    seen_spike = False
    for seed in SEEDS:
        rates = np.array(generate_trace(spec, seed, 240).rates)
        assert rates.min() >= 50.0
        assert rates.max() <= 300.0
        seen_spike = seen_spike or rates.max() > spec.base_rate
    assert seen_spike


@pytest.mark.parametrize("kind", ["constant", "variable", "bursty"])
def test_noisy_kinds_are_seed_sensitive(kind):
    spec = default_spec(kind)
    a = generate_trace(spec, 42, 240)
    b = generate_trace(spec, 43, 240)
    assert a.rates != b.rates


def test_rate_floor():
    spec = WorkloadSpec(WorkloadKind.CONSTANT, base_rate=5.0, noise_sd=5.0,
                        rate_floor=3.0)
    rates = generate_trace(spec, 1, 500).rates
    assert min(rates) >= 3.0


def test_invalid_specs_name_the_field():
    with pytest.raises(ValueError, match="base_rate"):
        WorkloadSpec(WorkloadKind.CONSTANT, base_rate=-1.0)
    with pytest.raises(ValueError, match="period_steps"):
        WorkloadSpec(WorkloadKind.PERIODIC, period_steps=1)
    with pytest.raises(ValueError, match="noise_sd"):
        WorkloadSpec(WorkloadKind.CONSTANT, noise_sd=-0.1)
    with pytest.raises(ValueError, match="min_rate"):
        WorkloadSpec(WorkloadKind.VARIABLE, min_rate=100.0, max_rate=50.0)
    with pytest.raises(ValueError, match="steps"):
        generate_trace(default_spec("constant"), 0, 0)


def test_trace_csv_format():
    trace = generate_trace(default_spec("constant"), 42, 5)
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "step,rate_req_per_min"
    assert len(lines) == 6
    step, rate = lines[1].split(",")
    assert step == "0"
    assert len(rate.split(".")[1]) == 6
    # byte-identical on regeneration
    buf2 = io.StringIO()
    write_trace_csv(generate_trace(default_spec("constant"), 42, 5), buf2)
    assert buf.getvalue() == buf2.getvalue()


def test_trace_is_immutable():
    trace = generate_trace(default_spec("constant"), 42, 10)
    assert isinstance(trace, Trace)
    with pytest.raises(Exception):
        trace.seed = 1
    assert isinstance(trace.rates, tuple)
