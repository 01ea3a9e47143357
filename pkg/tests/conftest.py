import numpy as np
import pytest

from eegssm.ingest import manifest as Mf
from eegssm.ingest.synth import synth_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Two training patients and one test patient, 60 s each, preprocessed."""
    root = tmp_path_factory.mktemp("small_corpus")
    synth_corpus(root / "raw", train_patients=2, test_patients=1, seed=5, duration=60.0)
    pre = Mf.preprocess_manifest(Mf.load_manifest(root / "raw" / "manifest.json"), root / "pre")
    labels = [w.label for w in Mf.load_split_windows(pre, "train")]
    assert 0 < np.mean(labels) < 1, "fixture corpus needs both classes in train"
    return root, pre


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
