import os
from pathlib import Path

import pytest


def ucihar_root():
    """Locate a real UCI-HAR archive, or None if the machine has none.

    Checked in order: $FEDPBS_UCIHAR_DIR, then data/UCI HAR Dataset and
    data/ucihar under the repo root.
    """
    candidates = []
    env = os.environ.get("FEDPBS_UCIHAR_DIR")
    if env:
        candidates.append(Path(env))
    repo = Path(__file__).resolve().parent.parent
    candidates.append(repo / "data" / "UCI HAR Dataset")
    candidates.append(repo / "data" / "ucihar")
    for cand in candidates:
        if (cand / "train" / "X_train.txt").is_file():
            return cand
    return None


@pytest.fixture(scope="session")
def ucihar_dir():
    root = ucihar_root()
    if root is None:
        pytest.skip(
            "UCI-HAR dataset not available: set FEDPBS_UCIHAR_DIR or unpack the "
            "archive under data/ (this sandbox has no internet access to fetch it)"
        )
    return root


# Official UCI-HAR train-split label histogram (classes 1..6). Used to
# exercise the partitioner on the real label distribution without the
# feature files.
UCIHAR_TRAIN_CLASS_COUNTS = (1226, 1073, 986, 1286, 1374, 1407)
