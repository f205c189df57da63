import pytest
import yaml

from pemant.synthetic import write_fixture


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Twenty synthetic households plus a config pointing at them."""
    out = tmp_path_factory.mktemp("fixture")
    write_fixture(out, 20, seed=3)
    cfg = {"data": {"persons": "persons.csv", "households": "households.csv"},
           "split": {"test_fraction": 0.5, "seed": 3},
           "backend": {"kind": "scripted", "seed": 0}}
    (out / "config.yaml").write_text(yaml.safe_dump(cfg))
    return out


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
