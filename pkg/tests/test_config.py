"""Configuration parsing, validation diagnostics, and round-trips."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from penflow.config import (CI_MAX_CYLINDER_T, CI_MAX_LEVEL, ConfigError,
                            SimulationConfig, default_convergence_config,
                            default_cylinder_config, parse_config,
                            serialize_config)
from penflow.sampling import PerturbationSpec


def test_dataclass_defaults():
    cfg = SimulationConfig()
    assert cfg.experiment == "custom"
    assert cfg.profile == "ci"
    assert cfg.threads == 1
    assert cfg.T == 1.0 and cfg.nu == 1.0
    assert cfg.dt0 is None and cfg.eps is None
    assert cfg.members == 2
    assert cfg.cfl_form == "theoretical" and cfg.cfl_constant == 1.0
    assert cfg.perturbation is None


def test_default_convergence_config():
    cfg = default_convergence_config()
    assert cfg.experiment == "converge"
    assert cfg.levels == (27, 41, 61)
    assert cfg.T == 1.0 and cfg.nu == 1.0 and cfg.members == 2
    assert cfg.perturbation.magnitudes == (1e-3, -1e-3)
    full = default_convergence_config(profile="full")
    assert full.levels == (27, 41, 61, 91, 137)


def test_default_cylinder_config():
    cfg = default_cylinder_config()
    assert cfg.experiment == "cylinder"
    assert cfg.lc == 0.1 and cfg.T == 10.0
    assert cfg.nu == pytest.approx(1.0 / 150.0)
    assert cfg.cfl_form == "experimental" and cfg.cfl_constant == 1200.0
    assert cfg.perturbation.kind == "bump-ic"
    assert cfg.perturbation.magnitudes == (0.1, -0.1)
    full = default_cylinder_config(profile="full")
    assert full.lc == 0.05 and full.T == 100.0


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def test_parse_minimal():
    cfg = parse_config("""
[run]
experiment = converge

[mesh]
levels = 27, 41
""")
    assert cfg.experiment == "converge"
    assert cfg.levels == (27, 41)
    assert cfg.T == 1.0 and cfg.nu == 1.0  # defaults survive


def test_parse_comments_and_blank_lines():
    cfg = parse_config("# leading comment\n\n[time]\nT = 2.5  # inline\n")
    assert cfg.T == 2.5


def test_parse_negative_eps_names_key_and_line():
    with pytest.raises(ConfigError) as err:
        parse_config("[time]\neps = -0.1\n")
    assert "time.eps" in str(err.value)
    assert "line 2" in str(err.value)


def test_parse_duplicate_key_reports_both_lines():
    with pytest.raises(ConfigError) as err:
        parse_config("[time]\nT = 1.0\ndt0 = 0.1\nT = 2.0\n")
    msg = str(err.value)
    assert "line 4" in msg and "line 2" in msg and "time.T" in msg


def test_parse_unknown_key():
    with pytest.raises(ConfigError, match=r"line 2.*time\.horizon"):
        parse_config("[time]\nhorizon = 1.0\n")


def test_parse_unknown_section():
    with pytest.raises(ConfigError, match=r"line 1.*\[timing\]"):
        parse_config("[timing]\nT = 1.0\n")


def test_parse_type_mismatch():
    with pytest.raises(ConfigError, match="line 2.*expected a number"):
        parse_config("[time]\nT = fast\n")
    with pytest.raises(ConfigError, match="line 2.*integer list"):
        parse_config("[mesh]\nlevels = 27, fine\n")


def test_parse_structural_errors():
    with pytest.raises(ConfigError, match="line 1.*section"):
        parse_config("[time\nT = 1.0\n")
    with pytest.raises(ConfigError, match="line 1.*outside"):
        parse_config("T = 1.0\n")
    with pytest.raises(ConfigError, match="line 2.*key = value"):
        parse_config("[time]\njust words\n")
    with pytest.raises(ConfigError, match="line 2.*empty value"):
        parse_config("[time]\nT =\n")


def test_parse_perturbation_requires_kind():
    with pytest.raises(ConfigError, match="perturbation.kind"):
        parse_config("[perturbation]\nseed = 3\n")


def test_parse_perturbation_magnitude_bound():
    text = "[perturbation]\nkind = multiplicative-ic\nmagnitudes = 1.5, 0\n"
    with pytest.raises(ConfigError, match="perturbation"):
        parse_config(text)


def test_parse_perturbation_count_mismatch():
    text = ("[ensemble]\nmembers = 3\n"
            "[perturbation]\nkind = bump-ic\nmagnitudes = 0.1, -0.1\n")
    with pytest.raises(ConfigError, match="perturbation.magnitudes"):
        parse_config(text)


def test_ci_profile_caps():
    with pytest.raises(ConfigError, match=r"mesh\.levels.*profile = full"):
        parse_config("[run]\nexperiment = converge\n"
                     f"[mesh]\nlevels = 27, {CI_MAX_LEVEL + 1}\n")
    with pytest.raises(ConfigError, match=r"time\.T.*profile = full"):
        parse_config("[run]\nexperiment = cylinder\n"
                     f"[time]\nT = {CI_MAX_CYLINDER_T + 1}\n")
    # the full profile lifts both caps
    cfg = parse_config("[run]\nexperiment = cylinder\nprofile = full\n"
                       "[time]\nT = 100\n")
    assert cfg.T == 100.0


def test_constraint_violations_name_keys():
    cases = [
        ("[run]\nthreads = 0\n", "run.threads"),
        ("[physics]\nnu = -1\n", "physics.nu"),
        ("[physics]\nforcing = gravity\n", "physics.forcing"),
        ("[ensemble]\nmembers = 0\n", "ensemble.members"),
        ("[stability]\nform = empirical\n", "stability.form"),
        ("[mesh]\nm = 0\n", "mesh.m"),
    ]
    for text, key in cases:
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            parse_config(text)


# ---------------------------------------------------------------------------
# Round-trips
# ---------------------------------------------------------------------------


def test_serialize_defaults_round_trip():
    for cfg in (SimulationConfig(), default_convergence_config(),
                default_cylinder_config(),
                default_cylinder_config(profile="full")):
        assert parse_config(serialize_config(cfg)) == cfg


_names = st.sampled_from(["out", "results", "run_3", "data/series-a"])
_pos_floats = st.floats(1e-3, 1e3, allow_nan=False)


@st.composite
def _configs(draw):
    experiment = draw(st.sampled_from(("converge", "cylinder", "custom")))
    members = draw(st.integers(1, 5))
    pert_choice = draw(st.integers(0, 2))
    if pert_choice == 0:
        pert = None
    elif pert_choice == 1:
        kind = draw(st.sampled_from(("multiplicative-ic", "bump-ic",
                                     "forcing-scale")))
        mags = tuple(draw(st.lists(st.floats(-0.99, 0.99, allow_nan=False),
                                   min_size=members, max_size=members)))
        pert = PerturbationSpec(kind, magnitudes=mags,
                                seed=draw(st.integers(0, 2 ** 31)))
    else:
        pert = PerturbationSpec(
            draw(st.sampled_from(("bump-ic", "forcing-scale"))),
            distribution=draw(st.sampled_from(("uniform", "normal"))),
            scale=draw(st.floats(0, 10, allow_nan=False)),
            seed=draw(st.integers(0, 2 ** 31)))
    return SimulationConfig(
        experiment=experiment,
        profile=draw(st.sampled_from(("ci", "full"))),
        threads=draw(st.integers(1, 8)),
        mode=draw(st.sampled_from(("consistent", "ic_only"))),
        levels=tuple(draw(st.lists(st.integers(1, 61), max_size=4))),
        mesh_m=draw(st.none() | st.integers(1, 64)),
        mesh_file=draw(st.none() | _names),
        lc=draw(st.none() | _pos_floats),
        T=draw(st.floats(0.01, 10.0, allow_nan=False)),
        dt0=draw(st.none() | _pos_floats),
        dt_min=draw(st.none() | _pos_floats),
        eps=draw(st.none() | _pos_floats),
        nu=draw(_pos_floats),
        forcing=draw(st.sampled_from(("rotational", "none"))),
        members=members,
        cfl_form=draw(st.sampled_from(("theoretical", "experimental"))),
        cfl_constant=draw(_pos_floats),
        perturbation=pert,
        outdir=draw(_names),
        snapshot_every=draw(st.integers(0, 50)))


@given(cfg=_configs())
@settings(max_examples=100, deadline=None)
def test_random_config_round_trip(cfg):
    assert parse_config(serialize_config(cfg)) == cfg
