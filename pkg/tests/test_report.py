import numpy as np
import pytest

from meshrefine.optimize import METRIC_COLUMNS, RunLog, read_metrics
from meshrefine.report import loss_figure, moving_average


def fake_log(n=250):
    rows = []
    for i in range(n):
        r = {c: 0 for c in METRIC_COLUMNS}
        r.update(iteration=i, total=10.0 / (i + 1), normal=5.0 / (i + 1), gradient=3.0 / (i + 1),
                 silhouette=2.0 / (i + 1), n_vertices=100 + i)
        rows.append(r)
    return RunLog(rows)


def test_moving_average():
    np.testing.assert_allclose(moving_average(np.arange(5.0), 2), [0.5, 1.5, 2.5, 3.5])
    np.testing.assert_array_equal(moving_average([1.0, 2.0], 100), [1.0, 2.0])


@pytest.mark.parametrize("n", [1, 250])
def test_loss_figure_from_runlog_and_csv(tmp_path, n):
    log = fake_log(n)
    out = loss_figure(log, tmp_path / "a.png")
    assert (tmp_path / "a.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    log.write_csv(tmp_path / "m.csv")
    loss_figure(read_metrics(tmp_path / "m.csv"), tmp_path / "b.png")
    assert (tmp_path / "b.png").stat().st_size > 1000
    assert not list(tmp_path.glob("*.tmp*"))
    assert str(out).endswith("a.png")
