import numpy as np
import pytest

import desk


def test_cifar_source_needs_env(monkeypatch):
    monkeypatch.delenv(desk.CIFAR_ENV, raising=False)
    with pytest.raises(desk.DataUnavailable):
        desk.load_sets("cifar", desk.Recipe())


def test_runs_are_cached_and_reloaded(tmp_path):
    recipe = desk.Recipe(per_class=2, test_per_class=1, epochs=1)
    first = desk.Desk("synth", tmp_path, recipe, log=lambda m: None)
    run = first.run(0, 0.1)
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and "at-lam0.1-seed0" in files[0].name

    logged = []
    again = desk.Desk("synth", tmp_path, recipe, log=logged.append).run(0, 0.1)
    assert not logged  # nothing retrained
    assert again.seconds == run.seconds
    for a, b in zip(run.params.tensors(), again.params.tensors()):
        np.testing.assert_array_equal(a, b)


def test_kernel_trend_reports_every_seed(tmp_path):
    recipe = desk.Recipe(per_class=1, test_per_class=1, epochs=1)
    ok, detail = desk.Desk("synth", tmp_path, recipe, log=lambda m: None).kernel_trend()
    assert isinstance(ok, bool) and detail.startswith(("0/3", "1/3", "2/3", "3/3"))
    assert all(f"seed {s}" in detail for s in desk.SEEDS)
