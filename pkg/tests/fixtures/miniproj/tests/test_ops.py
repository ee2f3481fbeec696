from mathutils.ops import add, clamp, safe_div


def test_add():
    assert add(2, 3) == 5


def test_clamp_low():
    assert clamp(-1, 0, 10) == 0


def test_clamp_inside():
    assert clamp(5, 0, 10) == 5


def test_safe_div():
    assert safe_div(6, 3) == 2
