import numpy as np
import pytest

from icvspikes.errors import InputError
from icvspikes.panel import PricePanel, read_panel, write_panel_bin, write_panel_csv


def test_roundtrip_both_formats(tmp_path, rng):
    panel = PricePanel(rng.standard_normal((11, 3)), ("A", "B", "C"))
    write_panel_csv(panel, tmp_path / "p.csv")
    write_panel_bin(panel, tmp_path / "p.bin")
    a = read_panel(tmp_path / "p.csv")
    b = read_panel(tmp_path / "p.bin")
    assert np.array_equal(a.values, panel.values)
    assert np.array_equal(b.values, panel.values)
    assert a.symbols == ("A", "B", "C")
    assert (b.p, b.n) == (3, 10)


def test_truncated_binary(tmp_path, rng):
    write_panel_bin(PricePanel(rng.standard_normal((5, 2))), tmp_path / "p.bin")
    raw = (tmp_path / "p.bin").read_bytes()
    (tmp_path / "q.bin").write_bytes(raw[:-8])
    with pytest.raises(InputError):
        read_panel(tmp_path / "q.bin")


def test_shape_and_symbol_validation():
    with pytest.raises(InputError):
        PricePanel(np.zeros((1, 3)))
    with pytest.raises(InputError):
        PricePanel(np.zeros((3, 2)), ("A",))
    with pytest.raises(InputError):
        PricePanel(np.array([[0.0], [np.inf]]))
