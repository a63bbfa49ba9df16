import math

import pytest
import yaml

from thermomech.config import (ConfigError, build_controller, build_problem, load_mesh,
                               parse_config, read_config)
from thermomech.io import write_mesh
from thermomech.mesh import build_box_mesh

MINIMAL = """
mesh: cube.tfmesh
materials:
  regions:
    0: {alpha: 1.2e-5, E: 2.1e11, kappa: 45.0, cv: 450.0, rho: 7850.0, nu: 0.3}
boundary:
  - {tag: 1, kind: robin, beta: 100.0, T_bc: 500.0}
  - {tag: 2, kind: displacement, u: [0.0, 0.0, 0.0]}
"""


@pytest.fixture
def workdir(tmp_path):
    write_mesh(build_box_mesh(2, 2, 2), tmp_path / "cube.tfmesh")
    return tmp_path


def write_cfg(workdir, text, name="run.yaml"):
    p = workdir / name
    p.write_text(text)
    return p


def with_changes(**changes):
    data = yaml.safe_load(MINIMAL)
    for key, value in changes.items():
        node = data
        *parents, last = key.split("__")
        for k in parents:
            node = node.setdefault(k, {})
        node[last] = value
    return yaml.safe_dump(data)


def test_minimal_config_defaults(workdir):
    cfg = read_config(write_cfg(workdir, MINIMAL))
    echo = yaml.safe_load(cfg.echo())
    assert echo["time"]["theta"] == 1.0
    assert echo["time"]["dT_max"] == 10.0
    assert echo["initial_temperature"] == 293.0
    assert echo["steady"]["initial_guess"] == 400.0
    assert echo["solver"]["newton_rtol"] == 1e-9
    assert echo["solver"]["elastic_rtol"] == 1e-6
    assert echo["time"]["t_end"] == math.inf
    assert echo["mesh"]["path"] == str(workdir / "cube.tfmesh")
    text = cfg.echo()
    assert "theta: 1.0" in text and "newton_rtol: 1.0e-09" in text


def test_echo_is_deterministic(workdir):
    a = read_config(write_cfg(workdir, MINIMAL)).echo()
    b = read_config(write_cfg(workdir, MINIMAL)).echo()
    assert a == b


def test_echo_round_trips(workdir):
    cfg = read_config(write_cfg(workdir, MINIMAL))
    again = parse_config(yaml.safe_load(cfg.echo()), str(workdir))
    assert again.to_dict() == cfg.to_dict()


def test_missing_tag(workdir):
    text = MINIMAL.replace("tag: 1, kind: robin", "tag: 7, kind: robin")
    with pytest.raises(ConfigError, match=r"boundary\[0\]\.tag: tag 7 does not exist"):
        read_config(write_cfg(workdir, text))


def test_theta_out_of_range(workdir):
    with pytest.raises(ConfigError, match=r"time\.theta: value 1\.5 out of range \[0, 1\]"):
        read_config(write_cfg(workdir, with_changes(time__theta=1.5)))


def test_unknown_keys(workdir):
    with pytest.raises(ConfigError, match="^foo: unknown key"):
        read_config(write_cfg(workdir, with_changes(foo=1)))
    with pytest.raises(ConfigError, match=r"^solver\.tolerance"):
        read_config(write_cfg(workdir, with_changes(solver__tolerance=1e-3)))


def test_missing_mesh(workdir):
    with pytest.raises(ConfigError, match="mesh.path: mesh file .* does not exist"):
        read_config(write_cfg(workdir, MINIMAL.replace("cube.tfmesh", "nope.tfmesh")))
    data = yaml.safe_load(MINIMAL)
    del data["mesh"]
    with pytest.raises(ConfigError, match="^mesh: missing mesh"):
        parse_config(data)


def test_missing_region_material(workdir):
    text = MINIMAL.replace("    0: {", "    4: {")
    with pytest.raises(ConfigError, match=r"no material for mesh region\(s\) \[0\]"):
        read_config(write_cfg(workdir, text))


@pytest.mark.parametrize("changes,path", [
    (dict(degree=3), "degree"),
    (dict(time__dt=0.0), "time.dt"),
    (dict(time__eps=0.0), "time.eps"),
    (dict(solver__rotations="yes"), "solver.rotations"),
    (dict(solver__thermal_krylov="gmres"), "solver.thermal_krylov"),
    (dict(robin_convention="up"), "robin_convention"),
    (dict(output__every=0), "output.every"),
])
def test_value_errors_name_key(workdir, changes, path):
    with pytest.raises(ConfigError) as err:
        read_config(write_cfg(workdir, with_changes(**changes)))
    assert str(err.value).startswith(path)


def test_material_errors(workdir):
    text = MINIMAL.replace("kappa: 45.0", "kappa: -1.0")
    with pytest.raises(ConfigError, match=r"materials\.regions\.0\.kappa"):
        read_config(write_cfg(workdir, text))
    text = MINIMAL.replace("alpha: 1.2e-5, ", "")
    with pytest.raises(ConfigError, match=r"materials\.regions\.0\.alpha: missing"):
        read_config(write_cfg(workdir, text))


def test_box_mesh_and_refine(tmp_path):
    text = MINIMAL.replace("mesh: cube.tfmesh",
                           "mesh: {box: {cells: [2, 1, 1], extents: [[0, 0, 0], [2, 1, 1]]}, refine: 1}")
    cfg = read_config(write_cfg(tmp_path, text))
    mesh = load_mesh(cfg)
    assert mesh.n_cells == 2 * 6 * 8


def test_malformed_yaml_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="malformed YAML"):
        read_config(write_cfg(tmp_path, "mesh: [unclosed"))
    with pytest.raises(ConfigError, match="does not exist"):
        read_config(tmp_path / "absent.yaml")


def test_numeric_strings_and_time_tables(workdir):
    text = MINIMAL.replace("E: 2.1e11", "E: 2.10e11").replace(
        "beta: 100.0", "beta: [[0, 10.0], [60, 100.0]]")
    cfg = read_config(write_cfg(workdir, text))
    pr = build_problem(cfg)
    assert pr.materials.region(0).E[0] == 2.1e11
    bc = pr.schedule.of_kind("robin")[0]
    assert bc.beta(30.0) == pytest.approx(55.0)


def test_build_problem_and_controller(workdir):
    text = with_changes(degree=2, source=1000.0, time__dt=0.5, time__t_end=10.0,
                        solver__thermal_amg="sa")
    cfg = read_config(write_cfg(workdir, text))
    pr = build_problem(cfg, overrides={"rotations": False})
    assert pr.degree == 2
    assert pr.settings.thermal_amg == "sa" and pr.settings.rotations is False
    ctrl = build_controller(cfg)
    assert (ctrl.theta, ctrl.dt, ctrl.t_end) == (1.0, 0.5, 10.0)
