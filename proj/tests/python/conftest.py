import os
import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[2]
BUILD = pathlib.Path(os.environ.get("METATUNE_BUILD_DIR", ROOT / "build"))


def _extension_dir():
    hits = sorted(BUILD.glob("_metatune*.so")) + sorted(BUILD.glob("**/_metatune*.so"))
    return hits[0].parent if hits else None


ext_dir = _extension_dir()
if ext_dir is not None and str(ext_dir) not in sys.path:
    sys.path.insert(0, str(ext_dir))
if str(ROOT / "python") not in sys.path:
    sys.path.insert(0, str(ROOT / "python"))


@pytest.fixture(scope="session")
def cli_path():
    path = BUILD / "metatune"
    if not path.exists():
        pytest.skip("metatune CLI binary not built")
    return path
