import pathlib

import pytest

DATA_DIR = pathlib.Path(__file__).parent / "data"


@pytest.fixture
def fixture_path():
    return DATA_DIR / "finefoods_fixture.txt"


@pytest.fixture
def fixture_reviews(fixture_path):
    from reviewrec.dataset import parse_reviews

    return parse_reviews(fixture_path, on_error="raise")
