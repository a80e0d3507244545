import pathlib
import subprocess
import sys

import pytest

scripts = list(pathlib.Path(__file__).with_name("examples").resolve().glob("*.py"))


@pytest.mark.parametrize("script", scripts, ids=lambda x: x.name)
def test_all(script):
    done = subprocess.run(
        [sys.executable, str(script)], check=True, timeout=120, capture_output=True, text=True
    )
    assert done.stdout.strip()
