import dataclasses

import numpy as np
import pytest

from conftest import load_example
from gridgame.dynamics import (
    Scheme,
    SchemeConfig,
    check_conditions,
    contraction_diagnostic,
    fit_geometric_rate,
    mean_error_profile,
    measured_aggregate,
    run,
    run_sweep,
    step_iua,
    step_pda,
    step_rua,
)
from gridgame.errors import DimensionMismatch, GameError, InfeasibleInitial
from gridgame.game import GameSpec, Market, PlayerParams, PriceBasis, game_arrays, solve_ne_direct
from gridgame.grid import Branch, Bus, BusKind, Network


def test_scheme_config_validation():
    assert SchemeConfig("iua").scheme is Scheme.IUA
    with pytest.raises(GameError):
        SchemeConfig("iua", tau=(0.5,))
    with pytest.raises(GameError):
        SchemeConfig("rua")
    with pytest.raises(GameError):
        SchemeConfig("pda", tau=(0.5, 1.0))
    with pytest.raises(GameError):
        SchemeConfig("iua", delta=0.0)
    with pytest.raises(GameError):
        SchemeConfig("iua", max_steps=-1)
    with pytest.raises(GameError):
        SchemeConfig("iua", seed=2**64)
    with pytest.raises(ValueError):
        SchemeConfig("gauss-seidel")


def test_three_bus_conditions_not_met(three_bus):
    report = check_conditions(three_bus, SchemeConfig("rua", tau=(0.5, 0.5)))
    assert report.ratio_max == pytest.approx(1.0)
    assert report.c1 == pytest.approx(1.0)
    assert not report.iua_condition_met
    assert report.c2 == pytest.approx(1.0)
    assert not report.rua_condition_met
    assert not report.condition_met(Scheme.PDA)


def test_ieee14_conditions_met(ieee14):
    report = check_conditions(ieee14.spec, SchemeConfig("rua", tau=(0.6, 0.6, 0.6)))
    assert report.ratio_max == pytest.approx(0.382, abs=0.002)
    assert report.c1 == pytest.approx(0.764, abs=0.004)
    assert (report.tau_max, report.tau_min) == (0.6, 0.6)
    assert report.c1 == pytest.approx(2 * report.ratio_max)
    assert report.c2 == pytest.approx(0.6 * report.c1 + 0.4)
    assert report.iua_condition_met and report.rua_condition_met
    assert check_conditions(ieee14.spec, ieee14.config).c2 is None


def test_conditions_tau_arity(ieee14):
    with pytest.raises(DimensionMismatch):
        check_conditions(ieee14.spec, SchemeConfig("rua", tau=(0.6, 0.6)))


def test_single_player_condition_is_trivial():
    net = Network(buses=(Bus(1, BusKind.MICROGRID, p_load=0.5), Bus(2, BusKind.SLACK)), branches=(Branch(1, 2, 5.0),))
    spec = GameSpec.build(net, [PlayerParams(1, 1.0, 10.0, 0.5, 2.0)], Market(2.0, PriceBasis.PU))
    report = check_conditions(spec, SchemeConfig("iua"))
    assert report.c1 == 0.0 and report.iua_condition_met

    traj = run(spec, SchemeConfig("iua", delta=1e-12))
    eq = solve_ne_direct(spec)
    np.testing.assert_allclose(traj.records[1].p_gen, eq.p_gen, atol=1e-12)
    assert traj.status.converged and traj.status.step == 2


def test_measured_aggregate():
    assert measured_aggregate(0.2, 0.5, 1.0) == pytest.approx(0.3)


def test_equilibrium_is_fixed_point_of_every_scheme(random_spec, rng):
    for _ in range(20):
        spec = random_spec(rng)
        eq = solve_ne_direct(spec)
        tau = np.full(spec.n_players, 0.5)
        np.testing.assert_allclose(step_iua(spec, eq.p_net), eq.p_net, atol=1e-12)
        np.testing.assert_allclose(step_rua(spec, eq.p_net, rng, tau), eq.p_net, atol=1e-12)
        np.testing.assert_allclose(step_pda(spec, eq.p_net, rng, tau), eq.p_net, atol=1e-12)


def test_random_steps_hold_or_respond(random_spec, rng):
    spec = random_spec(rng)
    arrays = game_arrays(spec)
    state = rng.uniform(arrays.p_min, arrays.p_max)
    m = spec.n_players
    np.testing.assert_array_equal(step_rua(spec, state, rng, np.zeros(m)), state)
    np.testing.assert_array_equal(step_pda(spec, state, rng, np.zeros(m)), state)
    np.testing.assert_array_equal(step_rua(spec, state, rng, np.ones(m)), step_iua(spec, state))


def test_pda_matches_rua_bit_for_bit(ieee14):
    tau = (0.65, 0.7, 0.8)
    for seed in range(5):
        rua = run(ieee14.spec, SchemeConfig("rua", tau=tau, delta=1e-4, max_steps=200, seed=seed))
        pda = run(ieee14.spec, SchemeConfig("pda", tau=tau, delta=1e-4, max_steps=200, seed=seed))
        np.testing.assert_array_equal(pda.p_gen_matrix(), rua.p_gen_matrix())
        assert pda.status == rua.status


def test_iua_converges_on_ieee14(ieee14):
    spec, cfg = ieee14.spec, ieee14.config
    traj = run(spec, cfg)
    assert traj.status.converged
    assert traj.final.step_change <= cfg.delta
    report = check_conditions(spec, cfg)
    assert all(r <= report.c1 + 1e-9 for r in contraction_diagnostic(traj).step_ratios)

    eq = solve_ne_direct(spec)
    tight = run(spec, dataclasses.replace(cfg, delta=1e-12, max_steps=2000), reference=eq)
    assert tight.status.converged
    assert tight.final.error <= 1e-9
    assert tight.records[0].step_change == 0.0
    assert tight.records[0].error == pytest.approx(np.max(eq.p_gen))


def test_iua_settles_on_ieee14_in_fourteen_steps(ieee14):
    spec, cfg = ieee14.spec, ieee14.config
    assert cfg.delta == pytest.approx(1e-4)
    traj = run(spec, cfg)
    assert traj.status.converged
    # contraction rate of the player block is about 0.49 per step
    assert traj.status.step == 14
    target = [55.1, 34.7, 27.9]
    np.testing.assert_allclose(100.0 * traj.final.p_gen, target, atol=0.2)
    np.testing.assert_allclose(100.0 * traj.records[8].p_gen, target, atol=0.2)


def test_iua_reaches_the_same_equilibrium_from_any_start(ieee14, rng):
    spec = ieee14.spec
    eq = solve_ne_direct(spec)
    cfg = dataclasses.replace(ieee14.config, delta=1e-9, max_steps=500)
    for _ in range(50):
        traj = run(spec, cfg, initial=rng.uniform(0.0, 1.0, size=3))
        assert traj.status.converged
        np.testing.assert_allclose(traj.final.p_gen, eq.p_gen, atol=1e-5)


@pytest.mark.parametrize("scheme, tau", [("rua", (0.6, 0.6, 0.6)), ("pda", (0.65, 0.7, 0.8))])
def test_random_schemes_settle_within_fifty_steps(ieee14, scheme, tau):
    eq = solve_ne_direct(ieee14.spec)
    cfg = SchemeConfig(scheme, tau=tau, delta=1e-4, max_steps=50)
    trajectories = run_sweep(ieee14.spec, cfg, range(100))
    for traj in trajectories:
        assert traj.status.converged
        np.testing.assert_allclose(traj.final.p_gen, eq.p_gen, atol=1e-4)
    median = np.median([traj.status.step for traj in trajectories])
    assert 5 <= median <= 40


def test_iua_error_decays_geometrically(ieee14):
    spec = ieee14.spec
    eq = solve_ne_direct(spec)
    traj = run(spec, dataclasses.replace(ieee14.config, delta=1e-4), reference=eq)
    c1 = check_conditions(spec, ieee14.config).c1
    errors = [rec.error for rec in traj.records]
    for n in range(len(errors) - 1):
        assert errors[n + 1] <= c1 * errors[n] + 1e-12


def test_iua_converges_on_stable_random_specs(stable_specs, rng):
    for spec in stable_specs(rng, 10):
        eq = solve_ne_direct(spec)
        traj = run(spec, SchemeConfig("iua", delta=1e-12, max_steps=100_000), reference=eq)
        assert traj.status.converged
        assert traj.final.error <= 1e-8


def test_pda_converges_on_stable_random_specs(stable_specs, rng):
    for spec in stable_specs(rng, 10):
        eq = solve_ne_direct(spec)
        cfg = SchemeConfig("pda", tau=(0.5,) * spec.n_players, delta=1e-12, max_steps=100_000, seed=7)
        traj = run(spec, cfg, reference=eq)
        assert traj.status.converged
        assert traj.final.error <= 1e-8


def test_rua_seed_sweep_converges():
    scenario = load_example("ieee14_rua.json")
    eq = solve_ne_direct(scenario.spec)
    cfg = dataclasses.replace(scenario.config, delta=1e-9, max_steps=2000)
    trajectories = run_sweep(scenario.spec, cfg, range(20))
    assert [t.seed for t in trajectories] == list(range(20))
    for traj in trajectories:
        assert traj.status.converged
        np.testing.assert_allclose(traj.final.p_gen, eq.p_gen, atol=1e-7)
    single = run(scenario.spec, dataclasses.replace(cfg, seed=3))
    np.testing.assert_array_equal(trajectories[3].p_gen_matrix(), single.p_gen_matrix())


def test_stop_waits_for_every_player():
    scenario = load_example("ieee14_rua.json")
    cfg = scenario.config
    for seed in range(30):
        traj = run(scenario.spec, dataclasses.replace(cfg, seed=seed))
        assert traj.status.converged
        changes = traj.step_changes()
        last_big = max((n for n, c in enumerate(changes) if c > cfg.delta), default=0)
        seen = np.zeros(len(traj.buses), dtype=bool)
        for rec in traj.records[last_big + 1 :]:
            seen |= np.array(rec.updated)
        assert seen.all()


def test_records_are_deterministic(ieee14):
    cfg = SchemeConfig("pda", tau=(0.65, 0.7, 0.8), delta=1e-4, max_steps=200, seed=42)
    first, second = run(ieee14.spec, cfg), run(ieee14.spec, cfg)
    np.testing.assert_array_equal(first.p_gen_matrix(), second.p_gen_matrix())
    np.testing.assert_array_equal(first.theta_matrix(), second.theta_matrix())
    assert first.seed == 42


def test_max_steps_stop(ieee14):
    traj = run(ieee14.spec, dataclasses.replace(ieee14.config, max_steps=1))
    assert not traj.status.converged
    assert traj.status.step == 1
    assert len(traj.records) == 2
    assert str(traj.status) == "max steps (1) reached"

    idle = run(ieee14.spec, dataclasses.replace(ieee14.config, max_steps=0))
    assert len(idle.records) == 1 and not idle.status.converged


def test_infeasible_initial(ieee14):
    with pytest.raises(InfeasibleInitial):
        run(ieee14.spec, ieee14.config, initial=[-0.1, 0.0, 0.0])
    with pytest.raises(InfeasibleInitial):
        run(ieee14.spec, ieee14.config, initial=[0.0, 1.5, 0.0])
    with pytest.raises(InfeasibleInitial):
        run(ieee14.spec, ieee14.config, initial=[0.0, 0.0])


def test_start_at_equilibrium_stops_immediately(ieee14):
    eq = solve_ne_direct(ieee14.spec)
    traj = run(ieee14.spec, ieee14.config, initial=np.clip(eq.p_gen, 0.0, 1.0))
    assert traj.status.converged and traj.status.step == 1
    assert contraction_diagnostic(traj).step_ratios == ()


def test_rua_mean_error_rate_is_below_bound():
    scenario = load_example("ieee14_rua.json")
    spec, cfg = scenario.spec, scenario.config
    eq = solve_ne_direct(spec)
    profile = mean_error_profile(spec, cfg, eq, seeds=range(200), n_steps=40)
    assert profile[0] == pytest.approx(np.max(np.abs(eq.p_gen)))
    assert np.all(np.diff(profile) <= 1e-12)
    assert fit_geometric_rate(profile) <= check_conditions(spec, cfg).c2


def test_fit_geometric_rate():
    assert fit_geometric_rate(0.5 ** np.arange(10)) == pytest.approx(0.5)
    assert fit_geometric_rate([1.0, 0.1, 0.01, 0.0, 0.0]) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        fit_geometric_rate([])
    with pytest.raises(ValueError):
        fit_geometric_rate([1.0, 0.0])
