"""Key-value config parsing and formatting."""

import pytest

from rssa.config import format_kv, parse_kv_file, parse_kv_text


class TestParseKvText:
    def test_basic_types(self):
        text = "\n".join([
            "# comment line",
            "robot = scara",
            "seed = 7",
            "dt = 0.004",
            "certified = true",
            "flag = False",
            "",
        ])
        out = parse_kv_text(text)
        assert out == {"robot": "scara", "seed": 7, "dt": 0.004,
                       "certified": True, "flag": False}
        assert isinstance(out["seed"], int)
        assert isinstance(out["dt"], float)

    def test_inline_comment_and_whitespace(self):
        out = parse_kv_text("  alpha   =  1.5   # tuned by hand\n")
        assert out == {"alpha": 1.5}

    def test_scientific_notation(self):
        out = parse_kv_text("tol = 1e-6\n")
        assert out["tol"] == pytest.approx(1e-6)

    def test_error_includes_line_number(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_kv_text("a = 1\nnot a pair\n")

    def test_duplicate_key_last_wins(self):
        out = parse_kv_text("a = 1\na = 2\n")
        assert out["a"] == 2


class TestRoundTrip:
    def test_format_then_parse(self, tmp_path):
        original = {"robot": "segway", "seed": 3, "dt": 0.002,
                    "gamma_slope": 3.0, "verbose": True}
        path = tmp_path / "run.cfg"
        path.write_text(format_kv(original))
        assert parse_kv_file(path) == original

    def test_float_repr_preserves_value(self, tmp_path):
        original = {"x": 0.1 + 0.2}
        path = tmp_path / "x.cfg"
        path.write_text(format_kv(original))
        assert parse_kv_file(path)["x"] == original["x"]

    def test_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            parse_kv_file(tmp_path / "does_not_exist.cfg")
