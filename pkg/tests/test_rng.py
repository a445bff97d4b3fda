import numpy as np

from ywlab.rng import Stream, generator, tag_id


def test_same_key_same_stream():
    a = generator(5, "prm", 3, 1).standard_normal(8)
    b = generator(5, "prm", 3, 1).standard_normal(8)
    assert np.array_equal(a, b)


def test_distinct_keys_distinct_streams():
    base = generator(5, "prm", 3, 1).standard_normal(8)
    for other in (generator(6, "prm", 3, 1), generator(5, "wiener", 3, 1), generator(5, "prm", 4, 1)):
        assert not np.array_equal(base, other.standard_normal(8))


def test_stream_child_is_path_index():
    s = Stream(11, 0)
    assert s.child(4) == Stream(11, 4)
    assert np.array_equal(s.child(4).generator("x").random(3), Stream(11, 4).generator("x").random(3))


def test_tag_id_is_stable():
    assert tag_id("wiener") == tag_id("wiener")
    assert tag_id("wiener") != tag_id("prm")
