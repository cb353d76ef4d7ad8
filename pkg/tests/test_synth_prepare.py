from __future__ import annotations

import json

import numpy as np
import pytest

from streetsynth.errors import FormatError
from streetsynth.graph import Priority
from streetsynth.osm import build_graph, parse_overpass
from streetsynth.prepare import load_prepared, prepare_region, resample_nearest, save_prepared
from streetsynth.raster import rasterize
from streetsynth.synth import synth_city, to_overpass


def test_synth_city_is_deterministic():
    a, b = synth_city(3, 16), synth_city(3, 16)
    assert np.array_equal(a.graph.vertices, b.graph.vertices)
    assert np.array_equal(a.graph.edges, b.graph.edges)
    assert np.array_equal(a.land, b.land)
    assert not np.array_equal(a.graph.vertices, synth_city(4, 16).graph.vertices[:len(a.graph.vertices)])


def test_synth_city_contents():
    c = synth_city(1, 32, coast=True)
    c.graph.check()
    assert c.land.shape == (512, 512)
    assert 0.3 < c.land.mean() < 0.99
    pr = set(c.graph.priorities.tolist())
    assert pr == {Priority.P1, Priority.P2}
    dry = synth_city(1, 32, water=False)
    assert dry.land.all()


def test_overpass_round_trip_drops_the_footway():
    c = synth_city(0, 16)
    data = parse_overpass(to_overpass(c).encode())
    g = build_graph(data, c.region)
    assert g.n_edges == c.graph.n_edges


def test_resample_nearest():
    m = np.arange(4).reshape(2, 2)
    up = resample_nearest(m, (4, 4))
    assert np.array_equal(up, np.repeat(np.repeat(m, 2, 0), 2, 1))
    assert np.array_equal(resample_nearest(up, (2, 2)), m)


def test_prepare_fields(tmp_path):
    c = synth_city(0, 16)
    pr = prepare_region(c.graph, c.region, c.land)
    for f, p in ((pr.p1_field, Priority.P1), (pr.p2_field, Priority.P2)):
        assert f.shape == (256, 256) and f.min() >= 0 and f.max() <= 1
        on = rasterize(c.graph, c.region, [p]) != 0
        assert (f[on] == 0).all() and (f[~on] > 0).all()
    path = save_prepared(pr, tmp_path)
    back = load_prepared(path)
    assert np.array_equal(back.p2_field, pr.p2_field)
    assert np.array_equal(back.land, pr.land)
    assert np.allclose(back.cell_density(), pr.cell_density())


def test_manifest_version_checked(tmp_path):
    c = synth_city(0, 16)
    path = save_prepared(prepare_region(c.graph, c.region), tmp_path)
    m = json.loads(path.read_text())
    m["version"] = 99
    path.write_text(json.dumps(m))
    with pytest.raises(FormatError):
        load_prepared(path)
