import numpy as np
import pytest

from arnav.frames import Frame
from arnav.geometry import DirectionAngle, Position, bearing
from arnav.model import DirectionModel, FrameClassifier, ModelConfig
from arnav.navigators import (
    ClassifyNavigator,
    MatchNavigator,
    ModelNavigator,
    OracleNavigator,
)
from arnav.world import CameraModel, GridClassMap, WorldMap, render


WORLD = WorldMap(seed=17, extent_north=2000.0, extent_east=1500.0)
CAM = CameraModel(resolution=8)


def tiny_config():
    return ModelConfig(
        history_len=3, d_img=8, d_pos=4, d_model=8, depth=1, heads=2,
        d_ffn=16, dropout=0.0, num_classes=4, image_side=8,
    )


def frames_at(positions, rng):
    return [Frame(rng.random((3, 8, 8)), p) for p in positions]


def rendered_frame(p, altitude=80.0):
    return Frame(render(WORLD, CAM, p, altitude), p)


# -- oracle ---------------------------------------------------------------


def test_oracle_requires_tap_write():
    nav = OracleNavigator()
    rng = np.random.default_rng(0)
    frames = frames_at([Position(100.0, 100.0)], rng)
    end = frames_at([Position(900.0, 900.0)], rng)[0]
    with pytest.raises(RuntimeError):
        nav.next_angle(frames, end)
    nav.true_position_tap.position = Position(900.0, 100.0)
    ang = nav.next_angle(frames, end)
    assert ang.degrees == pytest.approx(
        bearing(Position(900.0, 100.0), Position(900.0, 900.0)).degrees
    )


def test_only_oracle_exposes_tap():
    clf = FrameClassifier(tiny_config())
    grid = GridClassMap(2, 2, WORLD.extent_north, WORLD.extent_east)
    model_nav = ModelNavigator(DirectionModel(tiny_config()))
    classify_nav = ClassifyNavigator(clf, grid)
    for nav in (model_nav, classify_nav):
        assert not hasattr(nav, "true_position_tap")


# -- storage declarations -------------------------------------------------


def test_storage_declarations():
    clf = FrameClassifier(tiny_config())
    grid = GridClassMap(2, 2, WORLD.extent_north, WORLD.extent_east)
    assert ModelNavigator(DirectionModel(tiny_config())).declared_storage_bytes() == 0
    assert ClassifyNavigator(clf, grid).declared_storage_bytes() == 0
    assert OracleNavigator().declared_storage_bytes() == 0


def test_match_storage_linear_in_candidates():
    clf = FrameClassifier(tiny_config())
    start, goal = Position(200.0, 200.0), Position(1800.0, 1300.0)
    sizes = {}
    for n in (9, 17, 25, 33, 41):
        nav = MatchNavigator(clf, WORLD, CAM, start, goal, candidates=n)
        sizes[n] = nav.declared_storage_bytes()
        assert sizes[n] == n * clf.config.d_img * 8
    assert sizes[33] * 25 == sizes[25] * 33  # exact linear scaling


def test_match_rejects_too_few_candidates():
    clf = FrameClassifier(tiny_config())
    with pytest.raises(ValueError):
        MatchNavigator(clf, WORLD, CAM, Position(0, 0), Position(100, 100), candidates=1)


# -- behavior -------------------------------------------------------------


def test_classify_commands_bearing_from_cell_center():
    clf = FrameClassifier(tiny_config())
    grid = GridClassMap(2, 2, WORLD.extent_north, WORLD.extent_east)
    nav = ClassifyNavigator(clf, grid)
    rng = np.random.default_rng(1)
    window = frames_at([Position(300.0, 300.0)], rng)
    end = frames_at([Position(1700.0, 1200.0)], rng)[0]
    pred = clf.predict_class(window[-1].image)
    expect = bearing(grid.cell_center(pred), end.position).degrees
    assert nav.next_angle(window, end).degrees == pytest.approx(expect)


def test_match_exact_candidate_wins():
    clf = FrameClassifier(tiny_config())
    start, goal = Position(200.0, 200.0), Position(1800.0, 1300.0)
    nav = MatchNavigator(clf, WORLD, CAM, start, goal, candidates=9)
    # query with the clean render at candidate 3 itself
    cand = nav.points[3]
    window = [Frame(render(WORLD, CAM, cand, 80.0), Position(500.0, 500.0))]
    ang = nav.next_angle(window, rendered_frame(goal))
    assert ang.degrees == pytest.approx(bearing(cand, goal).degrees)


def test_match_goal_candidate_holds_last_command():
    clf = FrameClassifier(tiny_config())
    start, goal = Position(200.0, 200.0), Position(1800.0, 1300.0)
    nav = MatchNavigator(clf, WORLD, CAM, start, goal, candidates=9)
    rng = np.random.default_rng(7)
    # first command from a mid-chord candidate establishes a heading
    cand = nav.points[4]
    w1 = [Frame(render(WORLD, CAM, cand, 80.0), Position(500.0, 500.0))]
    first = nav.next_angle(w1, rendered_frame(goal))
    assert first.degrees == pytest.approx(bearing(cand, goal).degrees)
    # matching the goal candidate carries no direction: the last command is
    # repeated rather than dead-reckoned from the believed position
    w2 = w1 + [Frame(render(WORLD, CAM, goal, 80.0), Position(1700.0, 1300.0))]
    held = nav.next_angle(w2, rendered_frame(goal))
    assert held.degrees == first.degrees
    assert held.degrees != pytest.approx(
        bearing(Position(1700.0, 1300.0), goal).degrees
    )


def test_match_goal_candidate_on_first_step_flies_the_chord():
    clf = FrameClassifier(tiny_config())
    start, goal = Position(200.0, 200.0), Position(1800.0, 1300.0)
    nav = MatchNavigator(clf, WORLD, CAM, start, goal, candidates=9)
    window = [Frame(render(WORLD, CAM, goal, 80.0), Position(1700.0, 1300.0))]
    ang = nav.next_angle(window, rendered_frame(goal))
    assert ang.degrees == pytest.approx(
        bearing(Position(1700.0, 1300.0), goal).degrees
    )


def test_model_navigator_uses_trailing_window():
    model = DirectionModel(tiny_config())
    nav = ModelNavigator(model)
    rng = np.random.default_rng(2)
    positions = [Position(100.0 + 30 * i, 100.0 + 10 * i) for i in range(5)]
    frames = frames_at(positions, rng)
    end = frames_at([Position(1500.0, 1200.0)], rng)[0]
    # a window longer than K must be trimmed to the most recent K frames
    full = nav.next_angle(frames, end)
    trimmed = nav.next_angle(frames[-3:], end)
    assert full.degrees == trimmed.degrees


def test_all_navigators_emit_valid_angles():
    clf = FrameClassifier(tiny_config())
    grid = GridClassMap(2, 2, WORLD.extent_north, WORLD.extent_east)
    start, goal = Position(200.0, 200.0), Position(1800.0, 1300.0)
    navs = [
        ModelNavigator(DirectionModel(tiny_config())),
        ClassifyNavigator(clf, grid),
        MatchNavigator(clf, WORLD, CAM, start, goal, candidates=9),
    ]
    rng = np.random.default_rng(3)
    for trial in range(5):
        pos = Position(rng.uniform(100, 1900), rng.uniform(100, 1400))
        window = [rendered_frame(pos)]
        end = rendered_frame(goal)
        for nav in navs:
            ang = nav.next_angle(window, end)
            assert isinstance(ang, DirectionAngle)
            assert -180.0 < ang.degrees <= 180.0
