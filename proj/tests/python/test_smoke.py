import math

import numpy as np
import pytest

nb = pytest.importorskip("nbslam")


def test_attractor_step_moves_heading():
    cfg = nb.attractor.AttractorConfig()
    state = nb.attractor.NetworkState.initial(cfg)
    res = nb.attractor.step(state, cfg, nb.PlanarVelocity(0.5, 0.0, 1.0))
    assert abs(abs(res.hd_estimate) - 0.5) < 1e-9
    assert not res.loop_closed


def test_inhibition_conserves_energy():
    inte, cali = nb.attractor.global_inhibition(3.0, 1.0, 2.0)
    assert inte + cali == pytest.approx(2.0)


def test_descriptor_and_match():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, size=(32, 96)).astype(np.float32)
    d = nb.local_view.build_descriptor(img)
    assert d.values.shape == (16, 48)
    assert abs(d.values.mean()) < 1e-9
    store = nb.local_view.TemplateStore()
    assert store.learn(d, 0.0, (0.0, 0.0), 0) == 0
    m = nb.local_view.match(d, store, 6, 0.07)
    assert m is not None and m.template_id == 0 and m.shift == 0
    with pytest.raises(ValueError):
        nb.local_view.build_descriptor(np.zeros(5, dtype=np.float32))


def test_map_graph_loop():
    g = nb.experience_map.MapGraph()
    prev = None
    for i in range(11):
        prev = g.add_experience(nb.experience_map.PlanarPose(0.5 * i, 0.0, 0.0), float(i), prev)
    assert g.close_loop(10, 0)
    r = g.optimize()
    assert r.final_cost <= r.initial_cost
    last, first = g.experiences[10], g.experiences[0]
    assert math.hypot(last.x - first.x, last.y - first.y) < 0.5


def test_square_trace_run():
    spec = nb.WorldSpec()
    spec.side = 10.0
    trace, poses = nb.trajectory_trace(spec)
    assert len(trace) == len(poses)
    out = nb.run_trace(nb.RunConfig(), trace)
    assert out.summary.loop_closures == 1
    assert len(out.map.experiences) == out.summary.experiences
    rm = nb.firing_rate_map(out.phases, "hd:0")
    assert rm.rate.shape == rm.occupancy.shape
    assert np.nanmax(rm.rate) <= 1.0


def test_config_round_trip():
    cfg = nb.RunConfig.from_string("seed = 4\nattractor.delta_cali = 0.2\n")
    assert cfg.seed == 4
    assert cfg.attractor.delta_cali == pytest.approx(0.2)
    again = nb.RunConfig.from_string(cfg.to_string())
    assert again.seed == 4
    with pytest.raises(RuntimeError):
        nb.RunConfig.from_string("bogus = 1\n")


def test_synthesized_photometric_world(tmp_path):
    spec = nb.WorldSpec()
    spec.kind = "photometric"
    spec.frames = 2
    nb.synthesize_world(spec, 3, tmp_path)
    img = nb.read_image(tmp_path / "image_0" / "000000.pgm")
    assert img.shape == (240, 320)
    assert img.dtype == np.float32
    assert 0.0 <= img.min() and img.max() <= 255.0
