"""
Tests for configuration loading and schema validation.
"""

from pathlib import Path

import pytest

from sweepctl.config import Config, _parse_bool, _parse_int, load_config
from sweepctl.crowd import CorridorConfig
from sweepctl.exceptions import ConfigError

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def write_yaml(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.yaml"
    path.write_text(text)
    return path


class TestEnvParsing:
    """Tests for environment value parsing."""

    @pytest.mark.parametrize("value", ["true", "1", "YES", "on"])
    def test_truthy(self, value):
        assert _parse_bool(value) is True

    def test_default_when_unset(self):
        assert _parse_bool(None, default=True) is True
        assert _parse_int(None, 7) == 7

    def test_bad_integer_falls_back(self):
        """A non-integer setting is ignored with a warning."""
        assert _parse_int("many", 3) == 3
        assert _parse_int("12", 3) == 12


class TestLoadConfig:
    """Tests for load_config."""

    def test_shipped_corridor_config(self):
        """The corridor config validates with its crowd block."""
        cfg = load_config(CONFIG_DIR / "corridor_tau1.yaml")
        assert cfg.crowd.tau == 1.0
        assert cfg.run.k == 500
        assert cfg.problem is None

    def test_shipped_halfspace_config(self):
        """The half-space config validates with its problem block."""
        cfg = load_config(CONFIG_DIR / "halfspace.yaml")
        assert cfg.problem.dimension == 2
        assert cfg.problem.controls_a.kind == "box"
        assert cfg.run.control_blocks == 4

    def test_missing_file(self, tmp_path):
        """A missing file is a ConfigError carrying the path."""
        with pytest.raises(ConfigError, match="not found") as exc:
            load_config(tmp_path / "absent.yaml")
        assert exc.value.path.endswith("absent.yaml")

    def test_yaml_syntax_error(self, tmp_path):
        """Unparseable YAML is a ConfigError."""
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(write_yaml(tmp_path, "run: [1, 2\n"))

    def test_top_level_must_be_mapping(self, tmp_path):
        with pytest.raises(ConfigError, match="mapping"):
            load_config(write_yaml(tmp_path, "- 1\n- 2\n"))

    def test_schema_violation_names_the_field(self, tmp_path):
        """The error path is the dotted location of the bad field."""
        with pytest.raises(ConfigError) as exc:
            load_config(write_yaml(tmp_path, "crowd:\n  L1: -3.0\n"))
        assert exc.value.path == "crowd.L1"

    def test_reversed_control_bounds(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            load_config(write_yaml(tmp_path, "crowd:\n  control_bounds: [1.5, 0.5]\n"))
        assert exc.value.path == "crowd.control_bounds"

    def test_control_bounds_reach_the_corridor(self, tmp_path):
        """A YAML pair becomes the box A_i = [lower, upper]."""
        cfg = load_config(write_yaml(tmp_path, "crowd:\n  control_bounds: [0.5, 1.5]\n"))
        corridor = CorridorConfig.from_block(cfg.crowd)
        assert corridor.control_bounds == (0.5, 1.5)
        assert corridor.control_set().kind == "box"

    def test_unknown_keys_rejected(self, tmp_path):
        """Typos in a block are not silently ignored."""
        with pytest.raises(ConfigError) as exc:
            load_config(write_yaml(tmp_path, "run:\n  kk: 5\n"))
        assert exc.value.path == "run.kk"

    def test_default_mesh_from_environment(self, tmp_path):
        """Without run.k the process default applies."""
        cfg = load_config(write_yaml(tmp_path, "crowd: {tau: 2.0}\n"))
        assert cfg.run.k == Config.DEFAULT_K
        assert cfg.crowd.tau == 2.0

    def test_empty_file_gives_defaults(self, tmp_path):
        cfg = load_config(write_yaml(tmp_path, ""))
        assert cfg.problem is None and cfg.crowd is None

    def test_problem_dimension_checked(self, tmp_path):
        """x0 must match the declared dimension."""
        text = (
            "problem:\n"
            "  dimension: 2\n"
            "  constraints: [{kind: affine, a: [1.0, 0.0]}]\n"
            "  x0: [1.0]\n"
            "  horizon: 1.0\n"
        )
        with pytest.raises(ConfigError, match="x0"):
            load_config(write_yaml(tmp_path, text))

    def test_constraint_kind_fields(self, tmp_path):
        """A sphere gap without a radius is refused."""
        text = (
            "problem:\n"
            "  dimension: 2\n"
            "  constraints: [{kind: sphere_gap, q: [0.0, 0.0]}]\n"
            "  x0: [1.0, 1.0]\n"
            "  horizon: 1.0\n"
        )
        with pytest.raises(ConfigError, match="r"):
            load_config(write_yaml(tmp_path, text))

    def test_effective_config_fills_defaults(self):
        cfg = load_config(CONFIG_DIR / "corridor_tau1.yaml")
        effective = cfg.effective()
        assert effective["run"]["sign"] == 1
        assert effective["crowd"]["x_dest"] == 0.0
